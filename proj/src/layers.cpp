#include "vcl/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace vcl::nn {

Activation parse_activation(const std::string& name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu" || name == "lrelu") return Activation::leaky_relu;
  if (name == "elu") return Activation::elu;
  if (name == "selu") return Activation::selu;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::elu: return "elu";
    case Activation::selu: return "selu";
  }
  return "?";
}

Normalizer parse_normalizer(const std::string& name) {
  if (name == "none") return Normalizer::none;
  if (name == "batchnorm" || name == "bn") return Normalizer::batchnorm;
  if (name == "layernorm" || name == "ln") return Normalizer::layernorm;
  if (name == "vcl") return Normalizer::vcl;
  throw std::invalid_argument("unknown normalizer: " + name);
}

std::string to_string(Normalizer n) {
  switch (n) {
    case Normalizer::none: return "none";
    case Normalizer::batchnorm: return "batchnorm";
    case Normalizer::layernorm: return "layernorm";
    case Normalizer::vcl: return "vcl";
  }
  return "?";
}

DropoutKind parse_dropout_kind(const std::string& name) {
  if (name == "standard") return DropoutKind::standard;
  if (name == "alpha") return DropoutKind::alpha;
  throw std::invalid_argument("unknown dropout kind: " + name);
}

std::string to_string(DropoutKind k) { return k == DropoutKind::alpha ? "alpha" : "standard"; }

DropoutPlacement parse_dropout_placement(const std::string& name) {
  if (name == "none") return DropoutPlacement::none;
  if (name == "last_hidden") return DropoutPlacement::last_hidden;
  if (name == "all_hidden") return DropoutPlacement::all_hidden;
  throw std::invalid_argument("unknown dropout placement: " + name);
}

std::string to_string(DropoutPlacement p) {
  switch (p) {
    case DropoutPlacement::none: return "none";
    case DropoutPlacement::last_hidden: return "last_hidden";
    case DropoutPlacement::all_hidden: return "all_hidden";
  }
  return "?";
}

ad::Tensor activate(const ad::Tensor& x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return ad::relu(x);
    case Activation::leaky_relu: return ad::leaky_relu(x, 0.2);
    case Activation::elu: return ad::elu(x, 1.0);
    case Activation::selu: return ad::selu(x);
  }
  throw std::invalid_argument("bad activation tag");
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation act)
    : weight(ad::Tensor::zeros({in, out}, true)), bias(ad::Tensor::zeros({out}, true)), activation(act) {}

DenseLayer DenseLayer::init(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  DenseLayer layer(in, out, act);
  const bool he = act == Activation::relu || act == Activation::leaky_relu || act == Activation::elu;
  const double stddev = std::sqrt((he ? 2.0 : 1.0) / static_cast<double>(in));
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& w : layer.weight.mutable_data()) w = normal(rng);
  return layer;
}

ad::Tensor DenseLayer::affine(const ad::Tensor& x) {
  if (x.rank() != 2 || x.cols() != inputs())
    throw std::invalid_argument("dense layer expects [N x " + std::to_string(inputs()) + "], got " +
                                ad::shape_string(x.shape()));
  pre_activation = ad::matmul(x, weight) + bias;
  return pre_activation;
}

ad::Tensor DenseLayer::forward(const ad::Tensor& x) { return activate(affine(x), activation); }

ad::Tensor dense_forward(DenseLayer& layer, const ad::Tensor& x) { return layer.forward(x); }

BatchNormLayer::BatchNormLayer(std::size_t units, double momentum_, double eps_)
    : gamma(ad::Tensor::full({units}, 1.0, true)),
      beta_shift(ad::Tensor::zeros({units}, true)),
      running_mean(units, 0.0),
      running_var(units, 1.0),
      momentum(momentum_),
      eps(eps_) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw std::invalid_argument("batchnorm momentum must lie in (0, 1)");
  if (!(eps >= 0.0)) throw std::invalid_argument("batchnorm eps must be non-negative");
}

ad::Tensor BatchNormLayer::forward(const ad::Tensor& x) {
  if (x.rank() != 2 || x.cols() != units())
    throw std::invalid_argument("batchnorm expects [N x " + std::to_string(units()) + "], got " +
                                ad::shape_string(x.shape()));
  if (mode == Mode::eval) {
    std::vector<double> inv_std(units());
    for (std::size_t j = 0; j < units(); ++j) inv_std[j] = 1.0 / std::sqrt(running_var[j] + eps);
    const auto mu = ad::Tensor::from({units()}, running_mean);
    const auto is = ad::Tensor::from({units()}, std::move(inv_std));
    return (x - mu) * is * gamma + beta_shift;
  }
  const std::size_t n = x.rows();
  if (n < 2) throw std::invalid_argument("batchnorm in train mode needs a batch of at least 2");
  const ad::Tensor mu = ad::mean_rows(x);
  const ad::Tensor centered = x - mu;
  const ad::Tensor var = ad::batch_variance(x, false);
  const ad::Tensor normalized = centered / ad::sqrt(var + eps);

  const double correction = static_cast<double>(n) / static_cast<double>(n - 1);
  for (std::size_t j = 0; j < units(); ++j) {
    running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mu.at(j);
    running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var.at(j) * correction;
  }
  return normalized * gamma + beta_shift;
}

ad::Tensor batchnorm_forward(BatchNormLayer& layer, const ad::Tensor& x) { return layer.forward(x); }

ad::Tensor layernorm_forward(const ad::Tensor& x, const ad::Tensor& gamma, const ad::Tensor& shift, double eps) {
  if (x.rank() != 2) throw std::invalid_argument("layernorm expects a matrix");
  if (x.cols() < 2) throw std::invalid_argument("layernorm needs at least 2 features");
  const ad::Tensor mu = ad::mean_cols(x);
  const ad::Tensor centered = x - mu;
  const ad::Tensor var = ad::mean_cols(ad::square(centered));
  return centered / ad::sqrt(var + eps) * gamma + shift;
}

LayerNormLayer::LayerNormLayer(std::size_t units, double eps_)
    : gamma(ad::Tensor::full({units}, 1.0, true)), shift(ad::Tensor::zeros({units}, true)), eps(eps_) {}

ad::Tensor dropout(const ad::Tensor& x, double rate, Mode mode, DropoutKind kind, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution keep_draw(keep);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = keep_draw(rng) ? 1.0 : 0.0;
  if (kind == DropoutKind::standard) {
    for (double& m : mask) m /= keep;
    return x * ad::Tensor::from(x.shape(), std::move(mask));
  }
  // Alpha dropout: y = a * (x * m + alpha' * (1 - m)) + b.
  const double alpha_p = -ad::kSeluLambda * ad::kSeluAlpha;
  const double a = 1.0 / std::sqrt(keep * (1.0 + rate * alpha_p * alpha_p));
  const double b = -a * alpha_p * rate;
  std::vector<double> offset(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    offset[i] = a * alpha_p * (1.0 - mask[i]) + b;
    mask[i] *= a;
  }
  return x * ad::Tensor::from(x.shape(), std::move(mask)) + ad::Tensor::from(x.shape(), std::move(offset));
}

ad::Tensor dropout(const ad::Tensor& x, double rate, Mode mode, DropoutKind kind, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return dropout(x, rate, mode, kind, rng);
}

Mlp::Mlp(const MlpSpec& spec, Rng& rng) : spec_(spec) {
  if (spec.inputs == 0 || spec.outputs == 0) throw std::invalid_argument("model needs inputs and outputs");
  std::size_t in = spec.inputs;
  for (std::size_t width : spec.hidden) {
    if (width == 0) throw std::invalid_argument("hidden width must be positive");
    hidden_.push_back(DenseLayer::init(in, width, spec.activation, rng));
    if (spec.normalizer == Normalizer::batchnorm) batchnorms_.emplace_back(width, spec.bn_momentum, spec.norm_eps);
    if (spec.normalizer == Normalizer::layernorm) layernorms_.emplace_back(width, spec.norm_eps);
    in = width;
  }
  output_ = DenseLayer::init(in, spec.outputs, Activation::identity, rng);
}

ad::Tensor Mlp::forward(const ad::Tensor& x, Mode mode, Rng* dropout_rng) {
  post_.clear();
  ad::Tensor h = x;
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    ad::Tensor z = hidden_[l].affine(h);
    if (spec_.normalizer == Normalizer::batchnorm) {
      batchnorms_[l].mode = mode;
      z = batchnorms_[l].forward(z);
    } else if (spec_.normalizer == Normalizer::layernorm) {
      z = layernorms_[l].forward(z);
    }
    h = activate(z, spec_.activation);
    const bool drop_here = spec_.dropout_rate > 0.0 &&
                           (spec_.dropout_placement == DropoutPlacement::all_hidden ||
                            (spec_.dropout_placement == DropoutPlacement::last_hidden && l + 1 == hidden_.size()));
    if (drop_here && mode == Mode::train) {
      if (dropout_rng == nullptr) throw std::invalid_argument("training with dropout needs a generator");
      h = dropout(h, spec_.dropout_rate, mode, spec_.dropout_kind, *dropout_rng);
    }
    post_.push_back(h);
  }
  return output_.affine(h);
}

std::vector<ad::Tensor> Mlp::hidden_pre_activations() const {
  std::vector<ad::Tensor> out;
  out.reserve(hidden_.size());
  for (const auto& layer : hidden_) out.push_back(layer.pre_activation);
  return out;
}

std::vector<ParamGroup> Mlp::param_groups() {
  std::vector<ParamGroup> groups;
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    ParamGroup g{"hidden" + std::to_string(l), {hidden_[l].weight, hidden_[l].bias}};
    if (spec_.normalizer == Normalizer::batchnorm) {
      g.params.push_back(batchnorms_[l].gamma);
      g.params.push_back(batchnorms_[l].beta_shift);
    } else if (spec_.normalizer == Normalizer::layernorm) {
      g.params.push_back(layernorms_[l].gamma);
      g.params.push_back(layernorms_[l].shift);
    }
    groups.push_back(std::move(g));
  }
  groups.push_back({"output", {output_.weight, output_.bias}});
  return groups;
}

std::vector<ad::Tensor> Mlp::parameters() {
  std::vector<ad::Tensor> out;
  for (auto& g : param_groups())
    for (auto& p : g.params) out.push_back(p);
  return out;
}

std::vector<double> Mlp::state_vector() const {
  std::vector<double> out;
  auto append = [&out](std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); };
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    append(hidden_[l].weight.data());
    append(hidden_[l].bias.data());
    if (!batchnorms_.empty()) {
      append(batchnorms_[l].gamma.data());
      append(batchnorms_[l].beta_shift.data());
      append(batchnorms_[l].running_mean);
      append(batchnorms_[l].running_var);
    }
    if (!layernorms_.empty()) {
      append(layernorms_[l].gamma.data());
      append(layernorms_[l].shift.data());
    }
  }
  append(output_.weight.data());
  append(output_.bias.data());
  return out;
}

}  // namespace vcl::nn
