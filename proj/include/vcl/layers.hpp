#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vcl/rng.hpp"
#include "vcl/tensor.hpp"

namespace vcl::nn {

enum class Activation : std::uint32_t { identity = 0, relu = 1, leaky_relu = 2, elu = 3, selu = 4 };
enum class Mode { train, eval };
enum class Normalizer : std::uint32_t { none = 0, batchnorm = 1, layernorm = 2, vcl = 3 };
enum class DropoutKind : std::uint32_t { standard = 0, alpha = 1 };
enum class DropoutPlacement : std::uint32_t { none = 0, last_hidden = 1, all_hidden = 2 };

[[nodiscard]] Activation parse_activation(const std::string& name);
[[nodiscard]] std::string to_string(Activation a);
[[nodiscard]] Normalizer parse_normalizer(const std::string& name);
[[nodiscard]] std::string to_string(Normalizer n);
[[nodiscard]] DropoutKind parse_dropout_kind(const std::string& name);
[[nodiscard]] std::string to_string(DropoutKind k);
[[nodiscard]] DropoutPlacement parse_dropout_placement(const std::string& name);
[[nodiscard]] std::string to_string(DropoutPlacement p);

/// Leaky ReLU uses slope 0.2; SeLU uses the published lambda/alpha.
[[nodiscard]] ad::Tensor activate(const ad::Tensor& x, Activation a);

/// Fully connected layer. forward() caches the pre-activation x*W + b as a
/// live graph node so losses built on it reach W and b.
struct DenseLayer {
  ad::Tensor weight;  // [in x out]
  ad::Tensor bias;    // [out]
  Activation activation = Activation::identity;
  ad::Tensor pre_activation;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act);

  /// He-normal for ReLU-family activations, LeCun-normal for SeLU and identity.
  static DenseLayer init(std::size_t in, std::size_t out, Activation act, Rng& rng);

  [[nodiscard]] std::size_t inputs() const { return weight.shape().at(0); }
  [[nodiscard]] std::size_t outputs() const { return weight.shape().at(1); }

  /// x*W + b, cached.
  ad::Tensor affine(const ad::Tensor& x);
  /// activation(affine(x)).
  ad::Tensor forward(const ad::Tensor& x);
};

ad::Tensor dense_forward(DenseLayer& layer, const ad::Tensor& x);

/// Train mode normalizes with the batch mean and biased batch variance and
/// updates running statistics (running variance uses the unbiased estimate).
/// Eval mode reads only the running statistics.
struct BatchNormLayer {
  ad::Tensor gamma;       // [u], trainable
  ad::Tensor beta_shift;  // [u], trainable
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  Mode mode = Mode::train;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t units, double momentum = 0.1, double eps = 1e-5);

  [[nodiscard]] std::size_t units() const { return running_mean.size(); }
  ad::Tensor forward(const ad::Tensor& x);
};

ad::Tensor batchnorm_forward(BatchNormLayer& layer, const ad::Tensor& x);

/// Per-row normalization across features, then per-feature scale and shift.
ad::Tensor layernorm_forward(const ad::Tensor& x, const ad::Tensor& gamma, const ad::Tensor& shift, double eps);

struct LayerNormLayer {
  ad::Tensor gamma;
  ad::Tensor shift;
  double eps = 1e-5;

  LayerNormLayer() = default;
  explicit LayerNormLayer(std::size_t units, double eps = 1e-5);
  ad::Tensor forward(const ad::Tensor& x) const { return layernorm_forward(x, gamma, shift, eps); }
};

/// Standard: inverted dropout. Alpha: SeLU-compatible alpha dropout, dropped
/// units saturate at -lambda*alpha and an affine correction keeps mean and
/// variance. Identity in eval mode or at rate 0.
ad::Tensor dropout(const ad::Tensor& x, double rate, Mode mode, DropoutKind kind, Rng& rng);
ad::Tensor dropout(const ad::Tensor& x, double rate, Mode mode, DropoutKind kind, std::uint64_t seed);

/// Architecture of a fully connected classifier.
struct MlpSpec {
  std::size_t inputs = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t outputs = 2;
  Activation activation = Activation::relu;
  Normalizer normalizer = Normalizer::none;
  double dropout_rate = 0.0;
  DropoutKind dropout_kind = DropoutKind::standard;
  DropoutPlacement dropout_placement = DropoutPlacement::last_hidden;
  double bn_momentum = 0.1;
  double norm_eps = 1e-5;
};

/// Trainable tensors owned by one layer; the unit of per-layer clipping.
struct ParamGroup {
  std::string name;
  std::vector<ad::Tensor> params;
};

/// Hidden blocks are dense -> [batchnorm | layernorm] -> activation -> [dropout].
/// The output layer is linear. Hidden pre-activations (before any
/// normalizer) are cached per forward pass.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpSpec& spec, Rng& rng);

  ad::Tensor forward(const ad::Tensor& x, Mode mode, Rng* dropout_rng = nullptr);

  [[nodiscard]] const MlpSpec& spec() const { return spec_; }
  [[nodiscard]] std::size_t hidden_count() const { return hidden_.size(); }
  [[nodiscard]] std::vector<DenseLayer>& hidden() { return hidden_; }
  [[nodiscard]] const std::vector<DenseLayer>& hidden() const { return hidden_; }
  [[nodiscard]] DenseLayer& output() { return output_; }
  [[nodiscard]] const DenseLayer& output() const { return output_; }
  [[nodiscard]] std::vector<BatchNormLayer>& batchnorms() { return batchnorms_; }
  [[nodiscard]] const std::vector<BatchNormLayer>& batchnorms() const { return batchnorms_; }
  [[nodiscard]] std::vector<LayerNormLayer>& layernorms() { return layernorms_; }
  [[nodiscard]] const std::vector<LayerNormLayer>& layernorms() const { return layernorms_; }

  /// Pre-activations of each hidden layer from the last forward call.
  [[nodiscard]] std::vector<ad::Tensor> hidden_pre_activations() const;
  /// Post-activation outputs of each hidden layer from the last forward call.
  [[nodiscard]] const std::vector<ad::Tensor>& hidden_post_activations() const { return post_; }

  /// One group per hidden layer (weights, bias, normalizer params) plus the output layer.
  [[nodiscard]] std::vector<ParamGroup> param_groups();
  [[nodiscard]] std::vector<ad::Tensor> parameters();

  /// Flat copy of every parameter value and running statistic, for comparisons.
  [[nodiscard]] std::vector<double> state_vector() const;

 private:
  MlpSpec spec_;
  std::vector<DenseLayer> hidden_;
  DenseLayer output_;
  std::vector<BatchNormLayer> batchnorms_;
  std::vector<LayerNormLayer> layernorms_;
  std::vector<ad::Tensor> post_;
};

/// Little-endian binary container:
///   "VCLM" | u32 version | u32 hidden layer count | u32 activation |
///   u32 normalizer | u32 dropout kind | u32 dropout placement |
///   f64 dropout rate | f64 bn momentum | f64 norm eps |
///   per dense layer (hidden..., output): u32 in | u32 out
/// followed by row-major f64 arrays in order: per hidden layer W, b, then
/// [gamma, shift, running_mean, running_var] for batchnorm or [gamma, shift]
/// for layernorm; finally output W, b.
void save_model(const Mlp& model, const std::string& path);
[[nodiscard]] Mlp load_model(const std::string& path);

}  // namespace vcl::nn
