#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vcl/rng.hpp"

namespace vcl::stats {

/// Sample statistics of a 1-D sample. All moments are computed two-pass
/// (mean first).
///
/// `kurtosis` is m4 / var_biased^2 where var_biased uses divisor n, so a
/// symmetric two-point sample of even length gives exactly 1. It is empty
/// when the sample has zero variance.
struct SampleMoments {
  std::size_t n = 0;
  double mean = 0.0;
  double var_unbiased = 0.0;
  double var_biased = 0.0;
  double m4_central = 0.0;
  std::optional<double> kurtosis;

  [[nodiscard]] bool kurtosis_defined() const noexcept { return kurtosis.has_value(); }
};

/// rho = a * z + b with z ~ Bernoulli(1/2): the minimum-kurtosis law.
struct TwoPointDist {
  double a = 2.0;
  double b = 0.0;

  [[nodiscard]] double mean() const noexcept { return b + a / 2.0; }
  [[nodiscard]] double variance() const noexcept { return a * a / 4.0; }
  [[nodiscard]] double m4() const noexcept { return a * a * a * a / 16.0; }
  [[nodiscard]] double kurtosis() const noexcept { return 1.0; }
};

/// Source of i.i.d. real draws. Samplers are immutable; all randomness comes
/// from the generator passed to draw(), so equal seeds give equal sequences.
class DistSampler {
 public:
  virtual ~DistSampler() = default;

  virtual double draw(Rng& rng) const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::optional<double> population_variance() const { return std::nullopt; }
  [[nodiscard]] virtual std::optional<double> population_m4() const { return std::nullopt; }

  [[nodiscard]] std::optional<double> population_kurtosis() const;
  void fill(Rng& rng, std::span<double> out) const;
};

class GaussianSampler final : public DistSampler {
 public:
  GaussianSampler(double mean, double stddev);
  double draw(Rng& rng) const override;
  [[nodiscard]] std::string name() const override { return "gaussian"; }
  [[nodiscard]] std::optional<double> population_variance() const override;
  [[nodiscard]] std::optional<double> population_m4() const override;

 private:
  double mean_;
  double stddev_;
};

class UniformSampler final : public DistSampler {
 public:
  UniformSampler(double lo, double hi);
  double draw(Rng& rng) const override;
  [[nodiscard]] std::string name() const override { return "uniform"; }
  [[nodiscard]] std::optional<double> population_variance() const override;
  [[nodiscard]] std::optional<double> population_m4() const override;

 private:
  double lo_;
  double hi_;
};

class LaplaceSampler final : public DistSampler {
 public:
  LaplaceSampler(double location, double scale);
  double draw(Rng& rng) const override;
  [[nodiscard]] std::string name() const override { return "laplace"; }
  [[nodiscard]] std::optional<double> population_variance() const override;
  [[nodiscard]] std::optional<double> population_m4() const override;

 private:
  double location_;
  double scale_;
};

class TwoPointSampler final : public DistSampler {
 public:
  explicit TwoPointSampler(TwoPointDist dist);
  double draw(Rng& rng) const override;
  [[nodiscard]] std::string name() const override { return "two_point"; }
  [[nodiscard]] std::optional<double> population_variance() const override;
  [[nodiscard]] std::optional<double> population_m4() const override;

 private:
  TwoPointDist dist_;
};

class ConstantSampler final : public DistSampler {
 public:
  explicit ConstantSampler(double value) : value_(value) {}
  double draw(Rng&) const override { return value_; }
  [[nodiscard]] std::string name() const override { return "constant"; }
  [[nodiscard]] std::optional<double> population_variance() const override { return 0.0; }
  [[nodiscard]] std::optional<double> population_m4() const override { return 0.0; }

 private:
  double value_;
};

/// Builds a zero-mean sampler with the requested variance.
/// Known names: gaussian, uniform, laplace, two_point, constant.
[[nodiscard]] std::unique_ptr<DistSampler> make_sampler(const std::string& name, double variance = 1.0);

[[nodiscard]] double mean(std::span<const double> sample);

/// Unbiased (divisor n-1) sample variance. Throws std::invalid_argument for n < 2.
[[nodiscard]] double sample_variance_unbiased(std::span<const double> sample);

[[nodiscard]] SampleMoments compute_moments(std::span<const double> sample);

/// Var(sigma_s^2) = m4/n - sigma^4 (n-3) / (n(n-1)).
[[nodiscard]] double var_of_sample_variance(double m4, double sigma2, int n);

/// Probability lower bound for the two-sample ratio event
/// 4e^2/(1+e)^2 <= (1 - s1/s2)^2 <= 4e^2/(1-e)^2, clamped at 0.
[[nodiscard]] double chebyshev_bound_rhs(double kappa, int n, double eps);

/// Single-sample bound Pr(1/sqrt(1+e) <= sigma/sigma_s <= 1/sqrt(1-e)),
/// i.e. the batchnorm stability bound, clamped at 0.
[[nodiscard]] double batchnorm_stability_bound(double kappa, int n, double eps);

/// Normalized variance of the sample variance for a law with kurtosis kappa.
/// Equals E[(1 - sigma_s^2/sigma^2)^2].
[[nodiscard]] double normalized_var_of_sample_variance(double kappa, int n);

struct MonteCarloOptions {
  std::uint64_t seed = 0;
  /// 0 picks std::thread::hardware_concurrency(). Results do not depend on it.
  unsigned workers = 0;
};

/// Empirical variance of `trials` unbiased sample variances of size-n samples.
[[nodiscard]] double mc_var_of_sample_variance(const DistSampler& dist, int n, std::size_t trials,
                                               MonteCarloOptions opts = {});

/// Which event mc_ratio_coverage counts.
///
/// ratio_interval: (1-e)/(1+e) <= s1/s2 <= (1+e)/(1-e), the event the
/// Chebyshev argument bounds. squared_band: 4e^2/(1+e)^2 <= (1 - s1/s2)^2 <=
/// 4e^2/(1-e)^2, the squared-deviation band. The band's lower edge is not
/// implied by the interval, so the bound does not hold for it in general.
enum class RatioEvent { ratio_interval, squared_band };

/// Fraction of independent (s1, s2) pairs for which `event` holds.
/// Pairs with sigma_{s2}^2 = 0 count as violations.
[[nodiscard]] double mc_ratio_coverage(const DistSampler& dist, int n, double eps, std::size_t trials,
                                       MonteCarloOptions opts = {},
                                       RatioEvent event = RatioEvent::ratio_interval);

/// Moments of `count` draws.
[[nodiscard]] SampleMoments mc_moments(const DistSampler& dist, std::size_t count, MonteCarloOptions opts = {});

}  // namespace vcl::stats
