#include "vcl/regularizer.hpp"

#include <stdexcept>
#include <string>

#include "vcl/moments.hpp"

namespace vcl::loss {

void VclConfig::validate(std::size_t batch_size) const {
  if (n < 2) throw std::invalid_argument("vcl subset size n must be >= 2");
  if (!(gamma >= 0.0)) throw std::invalid_argument("vcl gamma must be non-negative");
  if (!(beta_init > 0.0)) throw std::invalid_argument("vcl beta_init must be positive");
  if (2 * static_cast<std::size_t>(n) > batch_size)
    throw std::invalid_argument("vcl needs 2n <= batch size (n = " + std::to_string(n) +
                                ", batch size = " + std::to_string(batch_size) + ")");
}

VclUnitState::VclUnitState(std::size_t units, double beta_init)
    : beta(ad::Tensor::full({units}, beta_init, true)) {}

std::pair<ad::Tensor, ad::Tensor> split_minibatch(const ad::Tensor& pre_act, int n) {
  if (n < 2) throw std::invalid_argument("vcl subset size n must be >= 2");
  if (pre_act.rank() != 2) throw std::invalid_argument("split_minibatch expects a matrix");
  const auto un = static_cast<std::size_t>(n);
  if (pre_act.rows() < 2 * un)
    throw std::invalid_argument("batch of " + std::to_string(pre_act.rows()) + " rows cannot hold two subsets of " +
                                std::to_string(n));
  return {ad::slice_rows(pre_act, 0, un), ad::slice_rows(pre_act, un, 2 * un)};
}

ad::Tensor vcl_unit_loss(const ad::Tensor& s1, const ad::Tensor& s2, const ad::Tensor& beta) {
  if (s1.rank() != 2 || s2.rank() != 2 || s1.cols() != s2.cols())
    throw std::invalid_argument("vcl subsets must be matrices with equal column counts");
  if (beta.size() != s1.cols()) throw std::invalid_argument("beta needs one entry per neuron");
  const ad::Tensor denom = ad::batch_variance(s2, true) + beta;
  for (double d : denom.data())
    if (!(d > kDenominatorFloor))
      throw std::domain_error("vcl denominator var(s2) + beta fell to " + std::to_string(d));
  return ad::square(1.0 - ad::batch_variance(s1, true) / denom);
}

ad::Tensor vcl_layer_loss(const ad::Tensor& pre_act, const VclUnitState& state, const VclConfig& cfg) {
  auto [s1, s2] = split_minibatch(pre_act, cfg.n);
  return ad::mean(vcl_unit_loss(s1, s2, state.beta));
}

ad::Tensor vcl_total_loss(std::span<const ad::Tensor> layer_losses, double gamma) {
  if (layer_losses.empty()) throw std::invalid_argument("vcl_total_loss needs at least one layer");
  ad::Tensor total = layer_losses[0];
  for (std::size_t i = 1; i < layer_losses.size(); ++i) total = total + layer_losses[i];
  return total * gamma;
}

double population_vcl(double kappa, int n) {
  if (!(kappa >= 1.0 - 1e-12)) throw std::invalid_argument("kurtosis must be >= 1");
  return stats::normalized_var_of_sample_variance(kappa, n);
}

}  // namespace vcl::loss
