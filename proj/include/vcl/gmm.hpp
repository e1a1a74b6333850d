#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vcl/regularizer.hpp"
#include "vcl/rng.hpp"

namespace vcl::gmm {

/// x ~ p N(mu1, sigma1) + (1 - p) N(mu2, sigma2).
struct Gmm2 {
  double p = 0.5;
  Eigen::VectorXd mu1;
  Eigen::VectorXd mu2;
  Eigen::MatrixXd sigma1;
  Eigen::MatrixXd sigma2;

  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(mu1.size()); }
  [[nodiscard]] double alpha() const { return p * (1.0 - p); }
  /// Throws std::invalid_argument on bad prior, mismatched sizes, or
  /// non-symmetric / non-PSD covariances.
  void validate() const;

  /// Shared identity covariance, means (+-separation/2, 0, ...) along x.
  static Gmm2 isotropic(double p, double separation, std::size_t dim = 2);
};

/// Within-class scatter p*S1 + (1-p)*S2 and between-class (mu1-mu2)(mu1-mu2)^T.
struct ScatterPair {
  Eigen::MatrixXd sigma_w;
  Eigen::MatrixXd sigma_b;
};

[[nodiscard]] ScatterPair scatter_matrices(const Gmm2& g);

/// 3 + a(1-6a) B^2 / (aB + W)^2 with B = t'S_b t, W = t'S_w t, a = p(1-p).
/// Exact for shared covariances.
[[nodiscard]] double projection_kurtosis(const Gmm2& g, const Eigen::VectorXd& theta);

/// Gradient of projection_kurtosis with respect to theta.
[[nodiscard]] Eigen::VectorXd projection_kurtosis_gradient(const Gmm2& g, const Eigen::VectorXd& theta);

/// Kurtosis of x'theta from per-component Gaussian moments; exact for any
/// pair of covariances.
[[nodiscard]] double projection_kurtosis_exact(const Gmm2& g, const Eigen::VectorXd& theta);

enum class Regime { separate, merge };

[[nodiscard]] std::string to_string(Regime r);

/// (1 - sqrt(1/3)) / 2, the lower edge of the separating band.
[[nodiscard]] double phase_boundary_low();
[[nodiscard]] double phase_boundary_high();

/// Separate when p lies in the closed band [(1-sqrt(1/3))/2, (1+sqrt(1/3))/2].
[[nodiscard]] Regime phase_regime(double p);

/// Sign convention for directions: first non-negligible component positive.
[[nodiscard]] Eigen::VectorXd canonical_direction(const Eigen::VectorXd& v);

/// Unit vector maximizing t'S_b t / t'S_w t (generalized eigenvector).
/// Throws for singular S_w or zero S_b.
[[nodiscard]] Eigen::VectorXd lda_direction(const ScatterPair& sp);

/// Unit vector minimizing t'S_b t / t'S_w t.
[[nodiscard]] Eigen::VectorXd merge_direction(const ScatterPair& sp);

/// Brute-force 2-D search over angles in [0, 180) with the given step in
/// degrees; returns the unit direction maximizing (or minimizing) the
/// Rayleigh quotient t'S_b t / t'S_w t.
[[nodiscard]] Eigen::VectorXd grid_rayleigh_direction(const ScatterPair& sp, bool maximize, double step_deg = 1.0);

/// Angle in degrees between two lines (sign of either vector ignored), in [0, 90].
[[nodiscard]] double axial_angle_deg(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// 1 - |mean(exp(2i phi))| over 2-D axial directions: 0 when all agree, near 1 when spread.
[[nodiscard]] double axial_circular_variance(const std::vector<Eigen::VectorXd>& directions);

struct TrajectoryRow {
  std::size_t step = 0;
  Eigen::VectorXd theta;
  double kurtosis = 0.0;
};

struct KurtosisDescent {
  Eigen::VectorXd direction;
  std::vector<TrajectoryRow> trajectory;
};

/// Gradient descent on projection_kurtosis with theta renormalized to unit
/// length after every step. A step that raises the kurtosis is retried with
/// half the rate (the objective is quartic around merge optima, so a fixed
/// rate can cycle). Records every `record_every` steps.
[[nodiscard]] KurtosisDescent minimize_projection_kurtosis(const Gmm2& g, const Eigen::VectorXd& theta0, int steps,
                                                           double lr, int record_every = 10);

struct SingleUnitOptions {
  loss::VclConfig vcl{128, 1.0, 0.5};
  std::size_t batch_size = 256;
  int epochs = 40;
  double lr = 0.004;
  /// Rate for the last epoch; the rate decays linearly from lr to lr_final.
  double lr_final = 1e-4;
  double momentum = 0.9;
  double clip_norm = 1.0;
};

struct SingleUnitResult {
  Eigen::VectorXd direction;  // canonical unit direction after training
  Eigen::VectorXd theta;      // raw weights
  double beta = 0.0;
  /// One row per epoch (row 0 = initialization); kurtosis is the sample
  /// kurtosis of the unit's activations over all samples.
  std::vector<TrajectoryRow> trajectory;
};

/// Trains one linear unit rho = x'theta using only the VCL term over shuffled
/// minibatches, with per-neuron beta learned jointly and the unit's gradient
/// (theta and beta together) clipped at clip_norm. theta starts as a random
/// unit vector.
[[nodiscard]] SingleUnitResult train_single_unit_vcl(const Eigen::MatrixXd& samples, const SingleUnitOptions& opts,
                                                     std::uint64_t seed);

/// Draws `count` rows; labels[i] = 0 for component 1, 1 for component 2.
void sample_gmm2(const Gmm2& g, std::size_t count, std::uint64_t seed, Eigen::MatrixXd& samples,
                 std::vector<int>& labels);

}  // namespace vcl::gmm
