#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vcl/data.hpp"
#include "vcl/layers.hpp"
#include "vcl/regularizer.hpp"

namespace vcl::train {

struct LrBreakpoint {
  int epoch = 0;
  double rate = 0.01;
};

struct TrainConfig {
  std::size_t batch_size = 20;
  int epochs = 500;
  std::vector<LrBreakpoint> lr_schedule{{0, 0.01}, {200, 0.001}};
  double momentum = 0.9;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::optional<loss::VclConfig> vcl;
  nn::Normalizer normalizer = nn::Normalizer::none;
  /// Mean hidden pre-activation kurtosis over the training set, per epoch.
  bool record_kurtosis = true;

  void validate() const;
};

/// Rate of the last breakpoint whose epoch is <= `epoch`.
[[nodiscard]] double lr_at(std::span<const LrBreakpoint> schedule, int epoch);

struct ClipReport {
  std::vector<double> norms;  // pre-clip L2 norm per group
  std::size_t clipped = 0;    // groups rescaled
};

/// Rescales each group whose concatenated gradient norm exceeds max_norm to
/// exactly max_norm. Groups under the threshold are untouched.
ClipReport clip_gradients_per_layer(std::span<nn::ParamGroup> groups, double max_norm);

/// Classical momentum with decay coupled into the gradient:
///   v <- momentum * v + (grad + weight_decay * param);  param <- param - lr * v
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
              double momentum, double weight_decay);

/// Momentum buffers keyed by parameter order.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ad::Tensor> params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();
  [[nodiscard]] const std::vector<ad::Tensor>& params() const { return params_; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_err = 0.0;
  double val_err = 0.0;
  double test_err = 0.0;  // NaN when no test set is given
  double mean_kurtosis = 0.0;
  double seconds = 0.0;
  std::size_t clip_events = 0;
  double vcl_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  /// Tab-separated with header; `seconds` is the only non-deterministic column.
  [[nodiscard]] std::string to_tsv() const;
  [[nodiscard]] std::vector<double> val_errors() const;
  [[nodiscard]] std::size_t total_clip_events() const;
};

/// Thrown when the loss becomes non-finite. Carries the offending position
/// and the history up to it.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, int epoch, std::size_t batch, TrainHistory history)
      : std::runtime_error(what), epoch_(epoch), batch_(batch), history_(std::move(history)) {}
  [[nodiscard]] int epoch() const { return epoch_; }
  [[nodiscard]] std::size_t batch() const { return batch_; }
  [[nodiscard]] const TrainHistory& history() const { return history_; }

 private:
  int epoch_;
  std::size_t batch_;
  TrainHistory history_;
};

/// Everything that changes during training besides the model weights.
struct TrainState {
  std::vector<loss::VclUnitState> vcl;  // one per hidden layer when VCL is on
};

/// Minibatch SGD on softmax cross-entropy (+ VCL when configured). Per epoch:
/// seeded shuffle, forward/backward, per-layer clipping, momentum step, then
/// train/val error and hidden kurtosis in eval mode. A trailing batch smaller
/// than 2n contributes only the task loss when VCL is on.
TrainHistory train(nn::Mlp& model, const data::Dataset& train_set, const data::Dataset& val_set,
                   const TrainConfig& cfg, TrainState* state = nullptr, const data::Dataset* test_set = nullptr);

struct Selection {
  std::size_t epoch = 0;
  double smoothed = 0.0;
};

/// Trailing moving average with window min(mask, epochs so far); returns the
/// earliest argmin.
[[nodiscard]] Selection smoothed_validation_selection(std::span<const double> val_errors, std::size_t mask = 10);

/// Eval-mode misclassification rate.
[[nodiscard]] double classification_error(nn::Mlp& model, const data::Dataset& ds);

/// Eval-mode forward of the whole dataset; fills the model's caches.
ad::Tensor forward_eval(nn::Mlp& model, const data::Dataset& ds);

/// Mean over hidden units with defined kurtosis of the pre-activation
/// kurtosis on `ds` (eval mode).
[[nodiscard]] double mean_hidden_kurtosis(nn::Mlp& model, const data::Dataset& ds);

}  // namespace vcl::train
