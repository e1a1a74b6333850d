#include "vcl/moments.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vcl/parallel.hpp"

namespace vcl::stats {
namespace {

constexpr std::size_t kChunks = 64;

struct ChunkRange {
  std::size_t begin;
  std::size_t end;
};

ChunkRange chunk_range(std::size_t total, std::size_t chunk) {
  return {total * chunk / kChunks, total * (chunk + 1) / kChunks};
}

void require_n(int n) {
  if (n < 2) throw std::invalid_argument("sample size n must be >= 2");
}

void require_eps(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("eps must lie in (0, 1)");
}

}  // namespace

std::optional<double> DistSampler::population_kurtosis() const {
  auto var = population_variance();
  auto m4 = population_m4();
  if (!var || !m4 || *var <= 0.0) return std::nullopt;
  return *m4 / (*var * *var);
}

void DistSampler::fill(Rng& rng, std::span<double> out) const {
  for (double& x : out) x = draw(rng);
}

GaussianSampler::GaussianSampler(double mean, double stddev) : mean_(mean), stddev_(stddev) {
  if (!(stddev >= 0.0)) throw std::invalid_argument("stddev must be non-negative");
}

double GaussianSampler::draw(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  return mean_ + stddev_ * normal(rng);
}

std::optional<double> GaussianSampler::population_variance() const { return stddev_ * stddev_; }
std::optional<double> GaussianSampler::population_m4() const {
  const double v = stddev_ * stddev_;
  return 3.0 * v * v;
}

UniformSampler::UniformSampler(double lo, double hi) : lo_(lo), hi_(hi) {
  if (!(hi >= lo)) throw std::invalid_argument("uniform sampler needs lo <= hi");
}

double UniformSampler::draw(Rng& rng) const {
  return lo_ + (hi_ - lo_) * std::generate_canonical<double, 53>(rng);
}

std::optional<double> UniformSampler::population_variance() const {
  const double w = hi_ - lo_;
  return w * w / 12.0;
}

std::optional<double> UniformSampler::population_m4() const {
  const double h = (hi_ - lo_) / 2.0;
  return h * h * h * h / 5.0;
}

LaplaceSampler::LaplaceSampler(double location, double scale) : location_(location), scale_(scale) {
  if (!(scale >= 0.0)) throw std::invalid_argument("laplace scale must be non-negative");
}

double LaplaceSampler::draw(Rng& rng) const {
  // Inverse CDF on u in (-1/2, 1/2).
  double u = std::generate_canonical<double, 53>(rng) - 0.5;
  while (u == -0.5) u = std::generate_canonical<double, 53>(rng) - 0.5;
  const double mag = -scale_ * std::log1p(-2.0 * std::abs(u));
  return u < 0.0 ? location_ - mag : location_ + mag;
}

std::optional<double> LaplaceSampler::population_variance() const { return 2.0 * scale_ * scale_; }
std::optional<double> LaplaceSampler::population_m4() const {
  const double b2 = scale_ * scale_;
  return 24.0 * b2 * b2;
}

TwoPointSampler::TwoPointSampler(TwoPointDist dist) : dist_(dist) {
  if (dist.a == 0.0) throw std::invalid_argument("two-point scale a must be nonzero");
}

double TwoPointSampler::draw(Rng& rng) const {
  // One bit per draw; the top bit of a 64-bit word is unbiased.
  return (rng() >> 63) ? dist_.a + dist_.b : dist_.b;
}

std::optional<double> TwoPointSampler::population_variance() const { return dist_.variance(); }
std::optional<double> TwoPointSampler::population_m4() const { return dist_.m4(); }

std::unique_ptr<DistSampler> make_sampler(const std::string& name, double variance) {
  if (!(variance >= 0.0)) throw std::invalid_argument("variance must be non-negative");
  const double sd = std::sqrt(variance);
  if (name == "gaussian" || name == "normal") return std::make_unique<GaussianSampler>(0.0, sd);
  if (name == "uniform") {
    const double h = std::sqrt(3.0) * sd;
    return std::make_unique<UniformSampler>(-h, h);
  }
  if (name == "laplace") return std::make_unique<LaplaceSampler>(0.0, sd / std::numbers::sqrt2);
  if (name == "two_point") {
    if (variance == 0.0) return std::make_unique<ConstantSampler>(0.0);
    return std::make_unique<TwoPointSampler>(TwoPointDist{2.0 * sd, -sd});
  }
  if (name == "constant") return std::make_unique<ConstantSampler>(0.0);
  throw std::invalid_argument("unknown distribution: " + name);
}

double mean(std::span<const double> sample) {
  if (sample.empty()) throw std::invalid_argument("mean of an empty sample");
  double s = 0.0;
  for (double x : sample) s += x;
  return s / static_cast<double>(sample.size());
}

double sample_variance_unbiased(std::span<const double> sample) {
  if (sample.size() < 2) throw std::invalid_argument("sample variance needs n >= 2");
  const double m = mean(sample);
  double ss = 0.0;
  double comp = 0.0;
  for (double x : sample) {
    const double d = x - m;
    ss += d * d;
    comp += d;
  }
  // Corrected two-pass: subtracts the rounding residue of the mean.
  const auto n = static_cast<double>(sample.size());
  return (ss - comp * comp / n) / (n - 1.0);
}

SampleMoments compute_moments(std::span<const double> sample) {
  if (sample.size() < 2) throw std::invalid_argument("moments need n >= 2");
  SampleMoments out;
  out.n = sample.size();
  out.mean = mean(sample);
  const auto n = static_cast<double>(out.n);
  double s2 = 0.0;
  double s4 = 0.0;
  double comp = 0.0;
  for (double x : sample) {
    const double d = x - out.mean;
    const double d2 = d * d;
    s2 += d2;
    s4 += d2 * d2;
    comp += d;
  }
  s2 -= comp * comp / n;
  if (s2 < 0.0) s2 = 0.0;
  out.var_unbiased = s2 / (n - 1.0);
  out.var_biased = s2 / n;
  out.m4_central = s4 / n;
  if (out.var_biased > 0.0) out.kurtosis = out.m4_central / (out.var_biased * out.var_biased);
  return out;
}

double var_of_sample_variance(double m4, double sigma2, int n) {
  require_n(n);
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("sigma2 must be non-negative");
  const double s4 = sigma2 * sigma2;
  // Relative slack for values that are equal up to rounding (two-point laws).
  if (m4 < s4 * (1.0 - 1e-12)) throw std::invalid_argument("m4 < sigma^4 violates the moment inequality");
  const double dn = n;
  return m4 / dn - s4 * (dn - 3.0) / (dn * (dn - 1.0));
}

double normalized_var_of_sample_variance(double kappa, int n) {
  require_n(n);
  const double dn = n;
  return kappa / dn - (dn - 3.0) / (dn * (dn - 1.0));
}

double chebyshev_bound_rhs(double kappa, int n, double eps) {
  require_n(n);
  require_eps(eps);
  if (!(kappa >= 1.0 - 1e-12)) throw std::invalid_argument("kurtosis must be >= 1");
  const double inner = 1.0 - normalized_var_of_sample_variance(kappa, n) / (eps * eps);
  return inner <= 0.0 ? 0.0 : inner * inner;
}

double batchnorm_stability_bound(double kappa, int n, double eps) {
  require_n(n);
  require_eps(eps);
  if (!(kappa >= 1.0 - 1e-12)) throw std::invalid_argument("kurtosis must be >= 1");
  const double b = 1.0 - normalized_var_of_sample_variance(kappa, n) / (eps * eps);
  return b <= 0.0 ? 0.0 : b;
}

double mc_var_of_sample_variance(const DistSampler& dist, int n, std::size_t trials, MonteCarloOptions opts) {
  require_n(n);
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::vector<double> variances(trials);
  detail::for_each_chunk(kChunks, opts.workers, [&](std::size_t chunk) {
    Rng rng = make_rng(opts.seed, chunk);
    std::vector<double> buf(static_cast<std::size_t>(n));
    const auto [begin, end] = chunk_range(trials, chunk);
    for (std::size_t t = begin; t < end; ++t) {
      dist.fill(rng, buf);
      variances[t] = sample_variance_unbiased(buf);
    }
  });
  if (trials == 1) return 0.0;
  return sample_variance_unbiased(variances);
}

double mc_ratio_coverage(const DistSampler& dist, int n, double eps, std::size_t trials, MonteCarloOptions opts,
                         RatioEvent event) {
  require_n(n);
  require_eps(eps);
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  const bool band = event == RatioEvent::squared_band;
  const double lo = band ? 4.0 * eps * eps / ((1.0 + eps) * (1.0 + eps)) : (1.0 - eps) / (1.0 + eps);
  const double hi = band ? 4.0 * eps * eps / ((1.0 - eps) * (1.0 - eps)) : (1.0 + eps) / (1.0 - eps);
  std::vector<std::size_t> hits(kChunks, 0);
  detail::for_each_chunk(kChunks, opts.workers, [&](std::size_t chunk) {
    Rng rng = make_rng(opts.seed, chunk);
    std::vector<double> s1(static_cast<std::size_t>(n));
    std::vector<double> s2(static_cast<std::size_t>(n));
    const auto [begin, end] = chunk_range(trials, chunk);
    std::size_t local = 0;
    for (std::size_t t = begin; t < end; ++t) {
      dist.fill(rng, s1);
      dist.fill(rng, s2);
      const double v2 = sample_variance_unbiased(s2);
      if (v2 <= 0.0) continue;
      const double r = sample_variance_unbiased(s1) / v2;
      const double stat = band ? (1.0 - r) * (1.0 - r) : r;
      if (stat >= lo && stat <= hi) ++local;
    }
    hits[chunk] = local;
  });
  std::size_t total = 0;
  for (auto h : hits) total += h;
  return static_cast<double>(total) / static_cast<double>(trials);
}

SampleMoments mc_moments(const DistSampler& dist, std::size_t count, MonteCarloOptions opts) {
  if (count < 2) throw std::invalid_argument("need at least two draws");
  std::vector<double> draws(count);
  detail::for_each_chunk(kChunks, opts.workers, [&](std::size_t chunk) {
    Rng rng = make_rng(opts.seed, chunk);
    const auto [begin, end] = chunk_range(count, chunk);
    dist.fill(rng, std::span<double>(draws).subspan(begin, end - begin));
  });
  return compute_moments(draws);
}

}  // namespace vcl::stats
