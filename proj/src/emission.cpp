#include "pseudoct/emission.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "pseudoct/errors.hpp"
#include "pseudoct/parallel.hpp"

namespace pseudoct {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_norm(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto n = llt.matrixLLT().rows();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) log_det += std::log(llt.matrixLLT()(i, i));
  return -0.5 * (static_cast<double>(n) * kLog2Pi) - log_det;
}

bool factorizes(const Eigen::MatrixXd& m, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(m);
  if (llt.info() != Eigen::Success) return false;
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) return false;
  }
  return true;
}

}  // namespace

GaussianComponent::GaussianComponent(Vector mu, Matrix sigma) : mu_(std::move(mu)), sigma_(std::move(sigma)) {
  const auto d = mu_.size();
  if (d < 1) throw DataError("Gaussian component needs dimension >= 1");
  if (sigma_.rows() != d || sigma_.cols() != d)
    throw DataError("covariance shape does not match mean of length " + std::to_string(d));
  if (!mu_.allFinite() || !sigma_.allFinite())
    throw DegenerateClassError(DegenerateClassError::kUnknownClass, "non-finite Gaussian parameters");

  const double scale_abs = sigma_.cwiseAbs().maxCoeff();
  const double asym = (sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(scale_abs, 1e-300))
    throw DataError("covariance is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  sigma_ = (0.5 * (sigma_ + sigma_.transpose())).eval();

  Eigen::MatrixXd joint = sigma_;
  if (!factorizes(joint, joint_llt_)) {
    double scale = sigma_.diagonal().mean();
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
    bool ok = false;
    for (double eps = kJitterStart; eps <= kJitterMax * (1.0 + 1e-9); eps *= 10.0) {
      Eigen::MatrixXd trial = joint;
      trial.diagonal().array() += eps * scale;
      if (factorizes(trial, joint_llt_)) {
        jitter_ = eps * scale;
        sigma_.diagonal().array() += jitter_;
        ok = true;
        break;
      }
    }
    if (!ok)
      throw DegenerateClassError(DegenerateClassError::kUnknownClass,
                                 "covariance is not positive definite even after jitter");
  }
  joint_log_norm_ = log_norm(joint_llt_);

  const auto m = d - 1;
  slope_ = Vector::Zero(m);
  if (m > 0) {
    const Eigen::MatrixXd sx = sigma_.bottomRightCorner(m, m);
    if (!factorizes(sx, x_llt_))
      throw DegenerateClassError(DegenerateClassError::kUnknownClass, "covariate block is not positive definite");
    x_log_norm_ = log_norm(x_llt_);
    const Eigen::VectorXd sxy = sigma_.bottomLeftCorner(m, 1);
    slope_ = x_llt_.solve(sxy);
  }
}

double GaussianComponent::log_density(std::span<const double> obs) const {
  if (obs.size() != dim())
    throw DataError("observation length " + std::to_string(obs.size()) + " does not match component dimension " +
                    std::to_string(dim()));
  const Eigen::VectorXd diff = Eigen::Map<const Eigen::VectorXd>(obs.data(), mu_.size()) - mu_;
  const double maha = joint_llt_.matrixL().solve(diff).squaredNorm();
  return joint_log_norm_ - 0.5 * maha;
}

double GaussianComponent::log_density_x(std::span<const double> x) const {
  const auto m = static_cast<Eigen::Index>(covariate_dim());
  if (x.size() != covariate_dim())
    throw DataError("covariate length " + std::to_string(x.size()) + " does not match component covariate dimension " +
                    std::to_string(m));
  if (m == 0) return 0.0;
  const Eigen::VectorXd diff = Eigen::Map<const Eigen::VectorXd>(x.data(), m) - mu_.tail(m);
  const double maha = x_llt_.matrixL().solve(diff).squaredNorm();
  return x_log_norm_ - 0.5 * maha;
}

double GaussianComponent::conditional_mean_y(std::span<const double> x) const {
  const auto m = static_cast<Eigen::Index>(covariate_dim());
  if (x.size() != covariate_dim())
    throw DataError("covariate length " + std::to_string(x.size()) + " does not match component covariate dimension " +
                    std::to_string(m));
  if (m == 0) return mu_y();
  const Eigen::VectorXd diff = Eigen::Map<const Eigen::VectorXd>(x.data(), m) - mu_.tail(m);
  return mu_y() + slope_.dot(diff);
}

GaussianComponent weighted_mle(const Matrix& observations, const Eigen::Ref<const Vector>& weights) {
  if (weights.size() != observations.rows()) throw DataError("weights length does not match observation count");
  if ((weights.array() < 0.0).any()) throw DataError("weights must be non-negative");
  const double total = weights.sum();
  if (!(total >= kMinClassWeight))
    throw DegenerateClassError(DegenerateClassError::kUnknownClass,
                               "total responsibility " + std::to_string(total) + " below threshold");
  const Vector mean = (observations.transpose() * weights) / total;
  const Matrix centered = observations.rowwise() - mean.transpose();
  Matrix cov = (centered.array().colwise() * weights.array()).matrix().transpose() * centered;
  cov /= total;
  return GaussianComponent(mean, cov);
}

GaussianComponent weighted_mle(const Matrix& observations, std::span<const double> weights) {
  return weighted_mle(observations, Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size())));
}

Matrix log_emissions(std::span<const GaussianComponent> components, const Eigen::Ref<const Matrix>& observations, EmissionMode mode,
                     unsigned workers) {
  const auto n = observations.rows();
  const auto k_count = static_cast<Eigen::Index>(components.size());
  Matrix out(n, k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& c = components[static_cast<std::size_t>(k)];
    const auto width = static_cast<Eigen::Index>(mode == EmissionMode::joint ? c.dim() : c.covariate_dim());
    if (observations.cols() != width)
      throw DataError("observation table has " + std::to_string(observations.cols()) + " columns, component expects " +
                      std::to_string(width));
  }
  const std::size_t chunks = chunk_count(static_cast<std::size_t>(n));
  parallel_for(chunks, workers, [&](std::size_t chunk) {
    const auto begin = static_cast<Eigen::Index>(chunk * kChunkSize);
    const auto rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(kChunkSize), n - begin);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto& c = components[static_cast<std::size_t>(k)];
      for (Eigen::Index i = begin; i < begin + rows; ++i) {
        const std::span<const double> row(observations.row(i).data(), static_cast<std::size_t>(observations.cols()));
        out(i, k) = mode == EmissionMode::joint ? c.log_density(row) : c.log_density_x(row);
      }
    }
  });
  if (!out.allFinite()) throw NumericalError("non-finite emission log-density");
  return out;
}

Matrix conditional_means(std::span<const GaussianComponent> components, const Eigen::Ref<const Matrix>& x_observations) {
  Matrix out(x_observations.rows(), static_cast<Eigen::Index>(components.size()));
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    if (static_cast<std::size_t>(x_observations.cols()) != c.covariate_dim())
      throw DataError("covariate table width does not match component");
    for (Eigen::Index i = 0; i < x_observations.rows(); ++i) {
      out(i, static_cast<Eigen::Index>(k)) = c.conditional_mean_y(
          std::span<const double>(x_observations.row(i).data(), static_cast<std::size_t>(x_observations.cols())));
    }
  }
  return out;
}

std::vector<double> combine_predictions(const Matrix& weights, std::span<const GaussianComponent> components,
                                        const Eigen::Ref<const Matrix>& x_observations) {
  if (weights.rows() != x_observations.rows() || weights.cols() != static_cast<Eigen::Index>(components.size()))
    throw DataError("posterior weights do not match observations/components");
  const Matrix means = conditional_means(components, x_observations);
  std::vector<double> out(static_cast<std::size_t>(weights.rows()));
  for (Eigen::Index i = 0; i < weights.rows(); ++i) out[static_cast<std::size_t>(i)] = weights.row(i).dot(means.row(i));
  return out;
}

Vector log_sum_exp_rows(const Matrix& m) {
  Vector out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out(i) = mx;
      continue;
    }
    out(i) = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace pseudoct
