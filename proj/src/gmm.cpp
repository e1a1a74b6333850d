#include "vcl/gmm.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "vcl/moments.hpp"
#include "vcl/trainer.hpp"

namespace vcl::gmm {
namespace {

void check_covariance(const Eigen::MatrixXd& s, std::size_t d, const char* name) {
  if (static_cast<std::size_t>(s.rows()) != d || static_cast<std::size_t>(s.cols()) != d)
    throw std::invalid_argument(std::string(name) + " must be " + std::to_string(d) + "x" + std::to_string(d));
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument(std::string(name) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-12 * scale)
    throw std::invalid_argument(std::string(name) + " is not positive semidefinite");
}

// Lower-triangular factor L with L L' = s. Falls back to a symmetric square
// root for singular PSD matrices, which Cholesky rejects.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& s) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -1e-12 * scale)
    throw std::invalid_argument("Cholesky factorization failed: covariance is not positive semidefinite");
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

struct Quadratics {
  double between;
  double within;
};

Quadratics quadratics(const ScatterPair& sp, const Eigen::VectorXd& theta) {
  return {theta.dot(sp.sigma_b * theta), theta.dot(sp.sigma_w * theta)};
}

double rayleigh(const ScatterPair& sp, const Eigen::VectorXd& theta) {
  const auto q = quadratics(sp, theta);
  return q.between / q.within;
}

}  // namespace

void Gmm2::validate() const {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("mixture prior p must lie in (0, 1)");
  const std::size_t d = dim();
  if (d == 0) throw std::invalid_argument("mixture dimension must be positive");
  if (static_cast<std::size_t>(mu2.size()) != d) throw std::invalid_argument("mu1 and mu2 differ in size");
  check_covariance(sigma1, d, "sigma1");
  check_covariance(sigma2, d, "sigma2");
}

Gmm2 Gmm2::isotropic(double p, double separation, std::size_t dim) {
  Gmm2 g;
  g.p = p;
  g.mu1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  g.mu2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  g.mu1(0) = separation / 2.0;
  g.mu2(0) = -separation / 2.0;
  g.sigma1 = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  g.sigma2 = g.sigma1;
  return g;
}

ScatterPair scatter_matrices(const Gmm2& g) {
  g.validate();
  const Eigen::VectorXd gap = g.mu1 - g.mu2;
  return {g.p * g.sigma1 + (1.0 - g.p) * g.sigma2, gap * gap.transpose()};
}

double projection_kurtosis(const Gmm2& g, const Eigen::VectorXd& theta) {
  const ScatterPair sp = scatter_matrices(g);
  if (theta.size() != sp.sigma_w.rows()) throw std::invalid_argument("theta has the wrong dimension");
  const double a = g.alpha();
  const auto [b, w] = quadratics(sp, theta);
  const double denom = a * b + w;
  if (!(denom > 0.0)) throw std::invalid_argument("projection has zero variance");
  return 3.0 + a * (1.0 - 6.0 * a) * b * b / (denom * denom);
}

Eigen::VectorXd projection_kurtosis_gradient(const Gmm2& g, const Eigen::VectorXd& theta) {
  const ScatterPair sp = scatter_matrices(g);
  const double a = g.alpha();
  const double c = a * (1.0 - 6.0 * a);
  const auto [b, w] = quadratics(sp, theta);
  const double denom = a * b + w;
  if (!(denom > 0.0)) throw std::invalid_argument("projection has zero variance");
  const double d3 = denom * denom * denom;
  const double dk_db = 2.0 * c * b * w / d3;
  const double dk_dw = -2.0 * c * b * b / d3;
  return 2.0 * dk_db * (sp.sigma_b * theta) + 2.0 * dk_dw * (sp.sigma_w * theta);
}

double projection_kurtosis_exact(const Gmm2& g, const Eigen::VectorXd& theta) {
  g.validate();
  const double m1 = g.mu1.dot(theta);
  const double m2 = g.mu2.dot(theta);
  const double v1 = theta.dot(g.sigma1 * theta);
  const double v2 = theta.dot(g.sigma2 * theta);
  const double mu = g.p * m1 + (1.0 - g.p) * m2;
  const double d1 = m1 - mu;
  const double d2 = m2 - mu;
  const double var = g.p * (v1 + d1 * d1) + (1.0 - g.p) * (v2 + d2 * d2);
  if (!(var > 0.0)) throw std::invalid_argument("projection has zero variance");
  auto central4 = [](double d, double v) { return d * d * d * d + 6.0 * d * d * v + 3.0 * v * v; };
  const double m4 = g.p * central4(d1, v1) + (1.0 - g.p) * central4(d2, v2);
  return m4 / (var * var);
}

std::string to_string(Regime r) { return r == Regime::separate ? "separate" : "merge"; }

double phase_boundary_low() { return (1.0 - std::sqrt(1.0 / 3.0)) / 2.0; }
double phase_boundary_high() { return (1.0 + std::sqrt(1.0 / 3.0)) / 2.0; }

Regime phase_regime(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("mixture prior p must lie in (0, 1)");
  return (p >= phase_boundary_low() && p <= phase_boundary_high()) ? Regime::separate : Regime::merge;
}

Eigen::VectorXd canonical_direction(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("direction of a zero vector");
  Eigen::VectorXd u = v / norm;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (std::abs(u(i)) > 1e-12) {
      if (u(i) < 0.0) u = -u;
      break;
    }
  }
  return u;
}

namespace {

Eigen::VectorXd generalized_extreme(const ScatterPair& sp, bool largest) {
  Eigen::LLT<Eigen::MatrixXd> llt(sp.sigma_w);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("within-class scatter is singular");
  if (sp.sigma_b.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("between-class scatter is zero");
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(sp.sigma_b, sp.sigma_w);
  if (ges.info() != Eigen::Success) throw std::runtime_error("generalized eigen solver failed");
  const Eigen::Index k = largest ? ges.eigenvalues().size() - 1 : 0;
  return canonical_direction(ges.eigenvectors().col(k));
}

}  // namespace

Eigen::VectorXd lda_direction(const ScatterPair& sp) { return generalized_extreme(sp, true); }

Eigen::VectorXd merge_direction(const ScatterPair& sp) { return generalized_extreme(sp, false); }

Eigen::VectorXd grid_rayleigh_direction(const ScatterPair& sp, bool maximize, double step_deg) {
  if (sp.sigma_w.rows() != 2) throw std::invalid_argument("grid search is two-dimensional only");
  if (!(step_deg > 0.0)) throw std::invalid_argument("grid step must be positive");
  Eigen::Vector2d best(1.0, 0.0);
  double best_value = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  for (double deg = 0.0; deg < 180.0; deg += step_deg) {
    const double rad = deg * std::numbers::pi / 180.0;
    const Eigen::Vector2d t(std::cos(rad), std::sin(rad));
    const double v = rayleigh(sp, t);
    if (maximize ? v > best_value : v < best_value) {
      best_value = v;
      best = t;
    }
  }
  return canonical_direction(best);
}

double axial_angle_deg(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return std::acos(std::min(1.0, c)) * 180.0 / std::numbers::pi;
}

double axial_circular_variance(const std::vector<Eigen::VectorXd>& directions) {
  if (directions.empty()) throw std::invalid_argument("no directions");
  std::complex<double> acc{0.0, 0.0};
  for (const auto& d : directions) {
    if (d.size() != 2) throw std::invalid_argument("circular variance is two-dimensional only");
    const double phi = std::atan2(d(1), d(0));
    acc += std::polar(1.0, 2.0 * phi);
  }
  return 1.0 - std::abs(acc) / static_cast<double>(directions.size());
}

KurtosisDescent minimize_projection_kurtosis(const Gmm2& g, const Eigen::VectorXd& theta0, int steps, double lr,
                                             int record_every) {
  if (!(theta0.norm() > 0.0)) throw std::invalid_argument("theta0 must be nonzero");
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  record_every = std::max(1, record_every);
  KurtosisDescent out;
  Eigen::VectorXd theta = theta0 / theta0.norm();
  out.trajectory.push_back({0, theta, projection_kurtosis(g, theta)});
  double kappa = out.trajectory.front().kurtosis;
  for (int s = 1; s <= steps; ++s) {
    const Eigen::VectorXd grad = projection_kurtosis_gradient(g, theta);
    double rate = lr;
    for (int halving = 0; halving < 40; ++halving, rate *= 0.5) {
      Eigen::VectorXd candidate = theta - rate * grad;
      const double norm = candidate.norm();
      if (!std::isfinite(norm) || norm == 0.0) continue;
      candidate /= norm;
      const double k = projection_kurtosis(g, candidate);
      if (k <= kappa) {
        theta = candidate;
        kappa = k;
        break;
      }
    }
    if (s % record_every == 0 || s == steps)
      out.trajectory.push_back({static_cast<std::size_t>(s), theta, projection_kurtosis(g, theta)});
  }
  out.direction = canonical_direction(theta);
  return out;
}

SingleUnitResult train_single_unit_vcl(const Eigen::MatrixXd& samples, const SingleUnitOptions& opts,
                                       std::uint64_t seed) {
  const auto rows = static_cast<std::size_t>(samples.rows());
  const auto d = static_cast<std::size_t>(samples.cols());
  if (d == 0 || rows == 0) throw std::invalid_argument("empty sample matrix");
  opts.vcl.validate(opts.batch_size);
  if (rows < opts.batch_size) throw std::invalid_argument("fewer samples than one minibatch");

  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> init(d);
  double norm = 0.0;
  for (double& v : init) {
    v = normal(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : init) v /= norm;

  ad::Tensor theta = ad::Tensor::from({d, 1}, init, true);
  loss::VclUnitState state(1, opts.vcl.beta_init);
  std::vector<nn::ParamGroup> groups{{"unit", {theta, state.beta}}};
  train::SgdOptimizer optimizer({theta, state.beta}, opts.momentum, 0.0);

  // Row-major copy for fast minibatch assembly.
  std::vector<double> flat(rows * d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) flat[r * d + c] = samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));

  auto record = [&](std::size_t epoch, SingleUnitResult& out) {
    Eigen::VectorXd t(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) t(static_cast<Eigen::Index>(i)) = theta.at(i);
    const Eigen::VectorXd proj = samples * t;
    const auto m = stats::compute_moments(std::span<const double>(proj.data(), rows));
    out.trajectory.push_back({epoch, t, m.kurtosis.value_or(std::nan(""))});
  };

  SingleUnitResult out;
  record(0, out);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches = rows / opts.batch_size;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    const double progress = opts.epochs > 1 ? static_cast<double>(epoch - 1) / (opts.epochs - 1) : 1.0;
    const double lr = opts.lr + (opts.lr_final - opts.lr) * progress;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<double> batch(opts.batch_size * d);
      for (std::size_t i = 0; i < opts.batch_size; ++i) {
        const std::size_t r = order[b * opts.batch_size + i];
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(r * d), d, batch.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
      const ad::Tensor x = ad::Tensor::from({opts.batch_size, d}, std::move(batch));
      const ad::Tensor pre = ad::matmul(x, theta);
      const ad::Tensor l = loss::vcl_layer_loss(pre, state, opts.vcl) * opts.vcl.gamma;
      optimizer.zero_grad();
      l.backward();
      train::clip_gradients_per_layer(groups, opts.clip_norm);
      optimizer.step(lr);
    }
    record(static_cast<std::size_t>(epoch), out);
  }
  out.theta = out.trajectory.back().theta;
  out.direction = canonical_direction(out.theta);
  out.beta = state.beta.at(0);
  return out;
}

void sample_gmm2(const Gmm2& g, std::size_t count, std::uint64_t seed, Eigen::MatrixXd& samples,
                 std::vector<int>& labels) {
  g.validate();
  const auto d = static_cast<Eigen::Index>(g.dim());
  const Eigen::MatrixXd l1 = covariance_factor(g.sigma1);
  const Eigen::MatrixXd l2 = covariance_factor(g.sigma2);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution first(g.p);
  samples.resize(static_cast<Eigen::Index>(count), d);
  labels.resize(count);
  Eigen::VectorXd z(d);
  for (std::size_t i = 0; i < count; ++i) {
    const bool c1 = first(rng);
    for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
    samples.row(static_cast<Eigen::Index>(i)) = (c1 ? g.mu1 + l1 * z : g.mu2 + l2 * z).transpose();
    labels[i] = c1 ? 0 : 1;
  }
}

}  // namespace vcl::gmm
