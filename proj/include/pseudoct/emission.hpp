#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Cholesky>

#include "pseudoct/types.hpp"

namespace pseudoct {

// Jitter schedule used whenever a covariance fails to factorize: add
// eps * mean(diag) * I with eps = 1e-8, 1e-7, ..., 1e-2.
inline constexpr double kJitterStart = 1e-8;
inline constexpr double kJitterMax = 1e-2;

// Minimum total responsibility a class needs to be re-estimated.
inline constexpr double kMinClassWeight = 1e-8;

// Joint Gaussian of (Y, X1..Xm) for one latent class, with the block
// partition mu = (mu_Y, mu_X), Sigma = [[S_Y, S_YX], [S_XY, S_X]].
class GaussianComponent {
 public:
  // Validates symmetry (1e-10 relative), symmetrizes, and factorizes,
  // escalating jitter if needed. Throws DegenerateClassError when even the
  // largest jitter fails.
  GaussianComponent(Vector mu, Matrix sigma);

  std::size_t dim() const { return static_cast<std::size_t>(mu_.size()); }
  std::size_t covariate_dim() const { return dim() - 1; }

  const Vector& mu() const { return mu_; }
  const Matrix& sigma() const { return sigma_; }
  double mu_y() const { return mu_(0); }
  // Jitter that was added to the diagonal during construction (0 if none).
  double jitter() const { return jitter_; }

  double log_density(std::span<const double> obs) const;
  double log_density_x(std::span<const double> x) const;

  // E[Y | X = x] for this class: mu_Y + S_YX S_X^-1 (x - mu_X).
  double conditional_mean_y(std::span<const double> x) const;
  // S_X^-1 S_XY; the slope of conditional_mean_y in x.
  const Vector& regression_slope() const { return slope_; }

 private:
  Vector mu_;
  Matrix sigma_;
  double jitter_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> joint_llt_;
  Eigen::LLT<Eigen::MatrixXd> x_llt_;
  double joint_log_norm_ = 0.0;  // -0.5 (d log 2pi + log det S)
  double x_log_norm_ = 0.0;
  Vector slope_;
};

// Weighted mean and covariance (normalized by the total weight). Throws
// DegenerateClassError when the total weight is below kMinClassWeight.
GaussianComponent weighted_mle(const Matrix& observations, std::span<const double> weights);
GaussianComponent weighted_mle(const Matrix& observations, const Eigen::Ref<const Vector>& weights);

// n x K table of per-row log densities under each component.
Matrix log_emissions(std::span<const GaussianComponent> components, const Eigen::Ref<const Matrix>& observations,
                     EmissionMode mode, unsigned workers = 1);

// Per-row conditional means E[Y | x, class k], n x K.
Matrix conditional_means(std::span<const GaussianComponent> components, const Eigen::Ref<const Matrix>& x_observations);

// sCT_t = sum_k w_tk * mu~_k(x_t).
std::vector<double> combine_predictions(const Matrix& weights, std::span<const GaussianComponent> components,
                                        const Eigen::Ref<const Matrix>& x_observations);

// Row-wise log-sum-exp.
Vector log_sum_exp_rows(const Matrix& m);

}  // namespace pseudoct
