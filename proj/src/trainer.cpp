#include "vcl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "vcl/moments.hpp"

namespace vcl::train {
namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool uses_batch_statistics(nn::Normalizer n) { return n == nn::Normalizer::batchnorm; }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (lr_schedule.empty()) throw std::invalid_argument("learning-rate schedule is empty");
  if (lr_schedule.front().epoch != 0) throw std::invalid_argument("learning-rate schedule must start at epoch 0");
  for (std::size_t i = 1; i < lr_schedule.size(); ++i)
    if (lr_schedule[i].epoch <= lr_schedule[i - 1].epoch)
      throw std::invalid_argument("learning-rate breakpoints must be strictly increasing");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  if (normalizer == nn::Normalizer::vcl) vcl.value_or(loss::VclConfig{}).validate(batch_size);
}

double lr_at(std::span<const LrBreakpoint> schedule, int epoch) {
  if (schedule.empty()) throw std::invalid_argument("learning-rate schedule is empty");
  double rate = schedule.front().rate;
  for (const auto& bp : schedule) {
    if (bp.epoch > epoch) break;
    rate = bp.rate;
  }
  return rate;
}

ClipReport clip_gradients_per_layer(std::span<nn::ParamGroup> groups, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  ClipReport report;
  for (auto& group : groups) {
    double sq = 0.0;
    for (auto& p : group.params)
      for (double g : p.mutable_grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    report.norms.push_back(norm);
    if (norm > max_norm) {
      const double factor = max_norm / norm;
      for (auto& p : group.params)
        for (double& g : p.mutable_grad()) g *= factor;
      ++report.clipped;
    }
  }
  return report;
}

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
              double momentum, double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw std::invalid_argument("sgd_step buffers differ in size");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(std::vector<ad::Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void SgdOptimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto g = p.mutable_grad();
    sgd_step(p.mutable_data(), g, velocity_[i], lr, momentum_, weight_decay_);
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::string TrainHistory::to_tsv() const {
  std::ostringstream os;
  os << "epoch\ttrain_loss\ttrain_err\tval_err\ttest_err\tmean_kurtosis\tseconds\tclip_events\tvcl_loss\n";
  for (const auto& r : epochs) {
    os << r.epoch << '\t' << format_double(r.train_loss) << '\t' << format_double(r.train_err) << '\t'
       << format_double(r.val_err) << '\t' << format_double(r.test_err) << '\t' << format_double(r.mean_kurtosis) << '\t' << format_double(r.seconds)
       << '\t' << r.clip_events << '\t' << format_double(r.vcl_loss) << '\n';
  }
  return os.str();
}

std::vector<double> TrainHistory::val_errors() const {
  std::vector<double> out;
  out.reserve(epochs.size());
  for (const auto& r : epochs) out.push_back(r.val_err);
  return out;
}

std::size_t TrainHistory::total_clip_events() const {
  std::size_t n = 0;
  for (const auto& r : epochs) n += r.clip_events;
  return n;
}

ad::Tensor forward_eval(nn::Mlp& model, const data::Dataset& ds) {
  ad::NoGradGuard no_grad;
  return model.forward(ds.feature_tensor(), nn::Mode::eval);
}

double classification_error(nn::Mlp& model, const data::Dataset& ds) {
  if (ds.rows == 0) throw std::invalid_argument("classification error of an empty dataset");
  const ad::Tensor logits = forward_eval(model, ds);
  const std::size_t k = logits.cols();
  const auto v = logits.data();
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < ds.rows; ++i) {
    const auto row = v.subspan(i * k, k);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != ds.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(ds.rows);
}

double mean_hidden_kurtosis(nn::Mlp& model, const data::Dataset& ds) {
  (void)forward_eval(model, ds);
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> column(ds.rows);
  for (const auto& pre : model.hidden_pre_activations()) {
    const std::size_t u = pre.cols();
    const auto v = pre.data();
    for (std::size_t j = 0; j < u; ++j) {
      for (std::size_t i = 0; i < ds.rows; ++i) column[i] = v[i * u + j];
      const auto m = stats::compute_moments(column);
      if (m.kurtosis) {
        total += *m.kurtosis;
        ++count;
      }
    }
  }
  return count ? total / static_cast<double>(count) : std::nan("");
}

TrainHistory train(nn::Mlp& model, const data::Dataset& train_set, const data::Dataset& val_set,
                   const TrainConfig& cfg, TrainState* state, const data::Dataset* test_set) {
  cfg.validate();
  train_set.validate();
  if (train_set.rows == 0) throw std::invalid_argument("training set is empty");
  if (train_set.dim != model.spec().inputs) throw std::invalid_argument("dataset width does not match the model");
  const nn::Normalizer model_norm = model.spec().normalizer;
  const bool layer_norm_cfg = cfg.normalizer == nn::Normalizer::batchnorm || cfg.normalizer == nn::Normalizer::layernorm;
  if ((layer_norm_cfg && model_norm != cfg.normalizer) ||
      (!layer_norm_cfg && model_norm != nn::Normalizer::none && model_norm != nn::Normalizer::vcl))
    throw std::invalid_argument("model normalizer " + nn::to_string(model_norm) + " does not match config " +
                                nn::to_string(cfg.normalizer));

  const bool use_vcl = cfg.normalizer == nn::Normalizer::vcl;
  const loss::VclConfig vcl_cfg = cfg.vcl.value_or(loss::VclConfig{});
  TrainState local_state;
  TrainState& st = state ? *state : local_state;
  st.vcl.clear();

  std::vector<nn::ParamGroup> groups = model.param_groups();
  if (use_vcl) {
    for (std::size_t l = 0; l < model.hidden_count(); ++l) {
      st.vcl.emplace_back(model.hidden()[l].outputs(), vcl_cfg.beta_init);
      groups[l].params.push_back(st.vcl.back().beta);
    }
  }
  std::vector<ad::Tensor> params;
  for (auto& g : groups)
    for (auto& p : g.params) params.push_back(p);
  SgdOptimizer optimizer(params, cfg.momentum, cfg.weight_decay);

  Rng shuffle_rng = make_rng(cfg.seed, 1);
  Rng dropout_rng = make_rng(cfg.seed, 2);
  std::vector<std::size_t> order(train_set.rows);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t vcl_rows = 2 * static_cast<std::size_t>(vcl_cfg.n);

  TrainHistory history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(cfg.lr_schedule, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    double vcl_sum = 0.0;
    std::size_t seen = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < train_set.rows; begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(begin + cfg.batch_size, train_set.rows);
      const std::size_t rows = end - begin;
      if (rows < 2 && uses_batch_statistics(cfg.normalizer)) continue;
      const data::Dataset batch = train_set.subset(std::span(order).subspan(begin, rows));

      const ad::Tensor logits = model.forward(batch.feature_tensor(), nn::Mode::train, &dropout_rng);
      ad::Tensor total = ad::softmax_cross_entropy(logits, batch.labels);
      if (use_vcl && rows >= vcl_rows) {
        std::vector<ad::Tensor> layer_losses;
        const auto pre = model.hidden_pre_activations();
        for (std::size_t l = 0; l < pre.size(); ++l)
          layer_losses.push_back(loss::vcl_layer_loss(pre[l], st.vcl[l], vcl_cfg));
        const ad::Tensor reg = loss::vcl_total_loss(layer_losses, vcl_cfg.gamma);
        vcl_sum += reg.item() * static_cast<double>(rows);
        total = total + reg;
      }
      const double value = total.item();
      if (!std::isfinite(value)) {
        history.epochs.push_back(rec);
        throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index),
                              epoch, batch_index, history);
      }
      loss_sum += value * static_cast<double>(rows);
      seen += rows;

      optimizer.zero_grad();
      total.backward();
      rec.clip_events += clip_gradients_per_layer(groups, cfg.clip_norm).clipped;
      optimizer.step(lr);
    }
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.vcl_loss = seen ? vcl_sum / static_cast<double>(seen) : 0.0;
    rec.train_err = classification_error(model, train_set);
    rec.val_err = val_set.rows ? classification_error(model, val_set) : std::nan("");
    rec.test_err = test_set && test_set->rows ? classification_error(model, *test_set) : std::nan("");
    rec.mean_kurtosis = cfg.record_kurtosis ? mean_hidden_kurtosis(model, train_set) : std::nan("");
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(rec);
  }
  return history;
}

Selection smoothed_validation_selection(std::span<const double> val_errors, std::size_t mask) {
  if (val_errors.empty()) throw std::invalid_argument("no validation errors to select from");
  if (mask == 0) throw std::invalid_argument("mask size must be positive");
  Selection best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t t = 0; t < val_errors.size(); ++t) {
    const std::size_t width = std::min(mask, t + 1);
    double exact = 0.0;
    for (std::size_t k = t + 1 - width; k <= t; ++k) exact += val_errors[k];
    const double smoothed = exact / static_cast<double>(width);
    if (smoothed < best.smoothed) best = {t, smoothed};
  }
  return best;
}

}  // namespace vcl::train
