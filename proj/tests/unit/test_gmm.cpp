#include <doctest.h>

#include <cmath>
#include <vector>

#include "vcl/gmm.hpp"
#include "vcl/moments.hpp"

using namespace vcl;
using namespace vcl::gmm;

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

Gmm2 skewed_mixture() {
  Gmm2 g;
  g.p = 0.3;
  g.mu1 = vec2(1.0, 2.0);
  g.mu2 = vec2(-1.5, 0.5);
  g.sigma1.resize(2, 2);
  g.sigma1 << 1.0, 0.4, 0.4, 0.8;
  g.sigma2 = g.sigma1;
  return g;
}

}  // namespace

TEST_CASE("projection kurtosis hand values") {
  const auto g = Gmm2::isotropic(0.5, 2.0);
  CHECK(projection_kurtosis(g, vec2(1, 0)) == 2.5);
  CHECK(projection_kurtosis(g, vec2(0, 1)) == 3.0);
  CHECK(projection_kurtosis(g, vec2(-3, 0)) == doctest::Approx(2.5));
  // Very wide separation approaches the two-point law.
  CHECK(projection_kurtosis(Gmm2::isotropic(0.5, 1e4), vec2(1, 0)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("closed form agrees with the exact moment computation for shared covariances") {
  const auto g = skewed_mixture();
  for (double angle = 0.0; angle < 180.0; angle += 17.0) {
    const double r = angle * M_PI / 180.0;
    const auto t = vec2(std::cos(r), std::sin(r));
    CHECK(projection_kurtosis(g, t) == doctest::Approx(projection_kurtosis_exact(g, t)).epsilon(1e-12));
  }
}

TEST_CASE("exact kurtosis with unequal covariances against sampling") {
  Gmm2 g = skewed_mixture();
  g.sigma2.resize(2, 2);
  g.sigma2 << 3.0, -0.5, -0.5, 0.5;
  const auto t = vec2(0.6, -0.8);
  Eigen::MatrixXd x;
  std::vector<int> labels;
  sample_gmm2(g, 1000000, 5, x, labels);
  const Eigen::VectorXd proj = x * t;
  const auto m = stats::compute_moments(std::span<const double>(proj.data(), static_cast<std::size_t>(proj.size())));
  CHECK(*m.kurtosis == doctest::Approx(projection_kurtosis_exact(g, t)).epsilon(0.02));
}

TEST_CASE("kurtosis gradient against central differences") {
  const auto g = skewed_mixture();
  const auto t = vec2(0.3, -1.1);
  const Eigen::VectorXd grad = projection_kurtosis_gradient(g, t);
  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd hi = t, lo = t;
    hi(i) += 1e-6;
    lo(i) -= 1e-6;
    const double fd = (projection_kurtosis(g, hi) - projection_kurtosis(g, lo)) / 2e-6;
    CHECK(grad(i) == doctest::Approx(fd).epsilon(1e-6));
  }
  // Scale invariance: the gradient is orthogonal to theta.
  CHECK(std::abs(grad.dot(t)) < 1e-12);
}

TEST_CASE("phase band edges") {
  CHECK(phase_boundary_low() == doctest::Approx((1.0 - std::sqrt(1.0 / 3.0)) / 2.0));
  CHECK(phase_boundary_high() == doctest::Approx((1.0 + std::sqrt(1.0 / 3.0)) / 2.0));
  CHECK(phase_regime(0.1) == Regime::merge);
  CHECK(phase_regime(0.25) == Regime::separate);
  CHECK(phase_regime(0.5) == Regime::separate);
  CHECK(phase_regime(0.9) == Regime::merge);
  CHECK(phase_regime(phase_boundary_low()) == Regime::separate);
  CHECK(to_string(Regime::merge) == "merge");
}

TEST_CASE("mixture validation") {
  auto g = Gmm2::isotropic(0.5, 1.0);
  g.p = 1.0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = Gmm2::isotropic(0.5, 1.0);
  g.sigma1(0, 1) = 5.0;
  g.sigma1(1, 0) = 5.0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = Gmm2::isotropic(0.5, 1.0);
  g.mu2 = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("LDA and merge directions of the isotropic mixture") {
  const auto sp = scatter_matrices(Gmm2::isotropic(0.25, 4.0));
  CHECK(axial_angle_deg(lda_direction(sp), vec2(1, 0)) < 1e-9);
  CHECK(axial_angle_deg(merge_direction(sp), vec2(0, 1)) < 1e-9);
  CHECK(axial_angle_deg(grid_rayleigh_direction(sp, true), vec2(1, 0)) < 1e-9);
  CHECK(axial_angle_deg(grid_rayleigh_direction(sp, false), vec2(0, 1)) < 1e-9);
}

TEST_CASE("grid search agrees with the generalized eigenvector") {
  const auto sp = scatter_matrices(skewed_mixture());
  CHECK(axial_angle_deg(grid_rayleigh_direction(sp, true, 0.1), lda_direction(sp)) < 0.1);
}

TEST_CASE("axial angles and circular variance") {
  CHECK(axial_angle_deg(vec2(1, 0), vec2(-2, 0)) == doctest::Approx(0.0));
  CHECK(axial_angle_deg(vec2(1, 0), vec2(1, 1)) == doctest::Approx(45.0));
  CHECK(axial_angle_deg(vec2(1, 0), vec2(0, -1)) == doctest::Approx(90.0));
  CHECK(axial_circular_variance({vec2(1, 0), vec2(-1, 0), vec2(3, 0)}) == doctest::Approx(0.0));
  CHECK(axial_circular_variance({vec2(1, 0), vec2(1, 1), vec2(0, 1), vec2(-1, 1)}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  const auto c = canonical_direction(vec2(-1, 2));
  CHECK(c(0) > 0.0);
}

TEST_CASE("kurtosis descent finds the regime's target direction") {
  for (double p : {0.1, 0.25}) {
    const auto g = Gmm2::isotropic(p, 4.0);
    const auto sp = scatter_matrices(g);
    const Eigen::VectorXd target =
        phase_regime(p) == Regime::merge ? grid_rayleigh_direction(sp, false) : lda_direction(sp);
    const auto res = minimize_projection_kurtosis(g, vec2(0.7, 0.7), 2000, 0.5);
    CAPTURE(p);
    CHECK(axial_angle_deg(res.direction, target) < 8.0);
    CHECK(res.trajectory.front().kurtosis >= res.trajectory.back().kurtosis);
    for (std::size_t i = 1; i < res.trajectory.size(); ++i)
      CHECK(res.trajectory[i].kurtosis <= res.trajectory[i - 1].kurtosis + 1e-15);
  }
  CHECK_THROWS_AS((void)minimize_projection_kurtosis(Gmm2::isotropic(0.3, 1.0), vec2(0, 0), 10, 0.1),
                  std::invalid_argument);
}

TEST_CASE("sampling follows the prior and is seeded") {
  const auto g = Gmm2::isotropic(0.2, 4.0);
  Eigen::MatrixXd a, b;
  std::vector<int> la, lb;
  sample_gmm2(g, 50000, 3, a, la);
  sample_gmm2(g, 50000, 3, b, lb);
  CHECK(a == b);
  CHECK(la == lb);
  double first = 0.0;
  for (int y : la) first += y == 0;
  CHECK(first / 50000.0 == doctest::Approx(0.2).epsilon(0.03));
}

TEST_CASE("single-unit VCL on an isotropic Gaussian has no preferred direction") {
  const auto g = Gmm2::isotropic(0.5, 0.0);
  SingleUnitOptions opts;
  opts.vcl = loss::VclConfig{16, 1.0, 0.5};
  opts.batch_size = 32;
  opts.epochs = 3;
  std::vector<Eigen::VectorXd> dirs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Eigen::MatrixXd x;
    std::vector<int> labels;
    sample_gmm2(g, 4000, derive_seed(seed, 1), x, labels);
    const auto res = train_single_unit_vcl(x, opts, derive_seed(seed, 2));
    CHECK(std::abs(res.direction.norm() - 1.0) < 1e-12);
    CHECK(res.trajectory.size() == 4);
    dirs.push_back(res.direction);
  }
  CHECK(axial_circular_variance(dirs) > 0.5);
}

TEST_CASE("single-unit VCL is reproducible") {
  const auto g = Gmm2::isotropic(0.25, 4.0);
  Eigen::MatrixXd x;
  std::vector<int> labels;
  sample_gmm2(g, 4000, 11, x, labels);
  SingleUnitOptions opts;
  opts.vcl = loss::VclConfig{8, 1.0, 0.5};
  opts.batch_size = 16;
  opts.epochs = 2;
  const auto a = train_single_unit_vcl(x, opts, 5);
  const auto b = train_single_unit_vcl(x, opts, 5);
  CHECK(a.theta == b.theta);
  CHECK(a.beta == b.beta);
  opts.batch_size = 10;
  CHECK_THROWS_AS((void)train_single_unit_vcl(x, opts, 5), std::invalid_argument);
}
