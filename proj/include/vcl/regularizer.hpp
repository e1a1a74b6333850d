#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "vcl/tensor.hpp"

namespace vcl::loss {

/// Hyperparameters of the variance constancy loss.
struct VclConfig {
  int n = 2;               // subset size
  double gamma = 0.01;     // weight on the summed per-layer terms
  double beta_init = 1.0;  // initial per-neuron beta

  /// Throws std::invalid_argument unless n >= 2, gamma >= 0, beta_init > 0
  /// and 2n <= batch_size.
  void validate(std::size_t batch_size) const;
};

/// One learnable beta per neuron of a layer.
struct VclUnitState {
  ad::Tensor beta;

  VclUnitState() = default;
  VclUnitState(std::size_t units, double beta_init);
  [[nodiscard]] std::size_t units() const { return beta.size(); }
};

/// Denominators sigma^2_{s2} + beta at or below this are a diagnostic error.
inline constexpr double kDenominatorFloor = 1e-8;

/// Rows [0, n) and [n, 2n) of the batch. Throws if the batch has fewer than 2n rows.
[[nodiscard]] std::pair<ad::Tensor, ad::Tensor> split_minibatch(const ad::Tensor& pre_act, int n);

/// Per neuron: (1 - var(s1) / (var(s2) + beta))^2 with unbiased variances.
/// Throws std::domain_error if a denominator falls to kDenominatorFloor.
[[nodiscard]] ad::Tensor vcl_unit_loss(const ad::Tensor& s1, const ad::Tensor& s2, const ad::Tensor& beta);

/// Mean over the layer's neurons of vcl_unit_loss on the split batch.
[[nodiscard]] ad::Tensor vcl_layer_loss(const ad::Tensor& pre_act, const VclUnitState& state, const VclConfig& cfg);

/// gamma * sum of per-layer losses.
[[nodiscard]] ad::Tensor vcl_total_loss(std::span<const ad::Tensor> layer_losses, double gamma);

/// E[(1 - sigma_s^2 / sigma^2)^2] = kappa/n - (n-3)/(n(n-1)) for a law with
/// kurtosis kappa.
[[nodiscard]] double population_vcl(double kappa, int n);

}  // namespace vcl::loss
