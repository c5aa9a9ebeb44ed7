#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/linalg.hpp"
#include "statfem/mesh.hpp"
#include "statfem/rng.hpp"

namespace statfem {

/// k(x, x') = sigma^2 exp(-|x - x'|^2 / (2 ell^2)).
///
/// sigma = 0 is accepted and yields the zero kernel (deterministic fields and
/// the mismatch-free generating model); ell must be positive.
struct SqExpKernel {
  double sigma = 1.0;
  double ell = 1.0;

  SqExpKernel() = default;
  SqExpKernel(double sigma_, double ell_) : sigma(sigma_), ell(ell_) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("SqExpKernel: sigma must be >= 0");
    if (!(ell > 0.0) || !std::isfinite(ell)) throw InvalidArgument("SqExpKernel: ell must be > 0");
  }

  [[nodiscard]] double variance() const { return sigma * sigma; }

  [[nodiscard]] double operator()(const Point& x, const Point& x2) const {
    return sigma * sigma * std::exp(-(x - x2).squaredNorm() / (2.0 * ell * ell));
  }
};

inline double kernel_eval(const SqExpKernel& k, const Point& x, const Point& x2) { return k(x, x2); }

using MeanFunction = std::function<double(const Point&)>;

inline MeanFunction constant_mean(double c) {
  return [c](const Point&) { return c; };
}

/// Gaussian-process field: mean function plus squared-exponential kernel.
struct RandomFieldSpec {
  MeanFunction mean_fn = constant_mean(0.0);
  SqExpKernel kernel;

  [[nodiscard]] Eigen::VectorXd mean_at(std::span<const Point> pts) const {
    Eigen::VectorXd m(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) m[static_cast<Eigen::Index>(i)] = mean_fn(pts[i]);
    return m;
  }
};

/// Multivariate normal N(mean, cov).
struct GaussianDensity {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  [[nodiscard]] Eigen::Index size() const { return mean.size(); }
  [[nodiscard]] Eigen::VectorXd stddev() const { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }

  static GaussianDensity deterministic(Eigen::VectorXd m) {
    const Eigen::Index n = m.size();
    return {std::move(m), Eigen::MatrixXd::Zero(n, n)};
  }
};

/// Gram matrix [k(a_i, b_j)].
inline Eigen::MatrixXd cross_cov(std::span<const Point> a, std::span<const Point> b, const SqExpKernel& k) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = k(a[i], b[j]);
  return m;
}

/// Symmetric Gram matrix; the upper triangle is mirrored so symmetry is exact.
inline Eigen::MatrixXd cov_matrix(std::span<const Point> points, const SqExpKernel& k) {
  if (points.empty()) throw InvalidArgument("cov_matrix: no points");
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = k.variance();
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = m(j, i) = k(points[i], points[j]);
  }
  return m;
}

/// Density of the target block given exact values at the anchor block:
/// mean_c + K_ca K_aa^-1 (values - mean_a), K_cc - K_ca K_aa^-1 K_ac.
inline GaussianDensity gp_condition(const Eigen::VectorXd& prior_mean_a, const Eigen::VectorXd& prior_mean_c,
                                    const Eigen::MatrixXd& K_aa, const Eigen::MatrixXd& K_ac,
                                    const Eigen::MatrixXd& K_cc, const Eigen::VectorXd& anchor_values) {
  const Eigen::Index na = K_aa.rows();
  const Eigen::Index nc = K_cc.rows();
  if (K_aa.cols() != na || prior_mean_a.size() != na || anchor_values.size() != na || K_ac.rows() != na ||
      K_ac.cols() != nc || K_cc.cols() != nc || prior_mean_c.size() != nc)
    throw InvalidArgument("gp_condition: inconsistent dimensions");
  const JitteredCholesky chol(K_aa, "gp_condition: K_aa");
  if (chol.is_zero()) throw NumericalError("gp_condition: K_aa is zero");
  // W = L^-1 K_ac, so K_ca K_aa^-1 K_ac = W^T W.
  const Eigen::MatrixXd W = chol.L().triangularView<Eigen::Lower>().solve(K_ac);
  const Eigen::VectorXd r = chol.L().triangularView<Eigen::Lower>().solve(anchor_values - prior_mean_a);
  GaussianDensity out;
  out.mean = prior_mean_c + W.transpose() * r;
  out.cov = K_cc - W.transpose() * W;
  symmetrize(out.cov);
  return out;
}

/// Conditions the field `spec` at `targets` on exact values at `anchors`.
inline GaussianDensity gp_condition(const RandomFieldSpec& spec, std::span<const Point> anchors,
                                    const Eigen::VectorXd& anchor_values, std::span<const Point> targets) {
  return gp_condition(spec.mean_at(anchors), spec.mean_at(targets), cov_matrix(anchors, spec.kernel),
                      cross_cov(anchors, targets, spec.kernel), cov_matrix(targets, spec.kernel), anchor_values);
}

/// Draws from one Gaussian density repeatedly with a single factorisation.
class GaussianSampler {
 public:
  explicit GaussianSampler(GaussianDensity d) : density_(std::move(d)), chol_(density_.cov, "gp_sample: cov") {
    if (density_.cov.rows() != density_.mean.size()) throw InvalidArgument("gp_sample: mean/cov size mismatch");
  }

  /// mean + L e with L L^T = cov + jitter I and e ~ N(0, I).
  [[nodiscard]] Eigen::VectorXd draw(Rng& rng) const {
    std::normal_distribution<double> normal;
    Eigen::VectorXd e(density_.mean.size());
    for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = normal(rng);
    if (chol_.is_zero()) return density_.mean;
    return density_.mean + chol_.L().triangularView<Eigen::Lower>() * e;
  }

  /// n draws as columns.
  [[nodiscard]] Eigen::MatrixXd draw(Rng& rng, int n) const {
    Eigen::MatrixXd out(density_.mean.size(), n);
    for (int j = 0; j < n; ++j) out.col(j) = draw(rng);
    return out;
  }

  [[nodiscard]] const GaussianDensity& density() const { return density_; }

 private:
  GaussianDensity density_;
  JitteredCholesky chol_;
};

inline Eigen::VectorXd gp_sample(const GaussianDensity& d, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return GaussianSampler(d).draw(rng);
}

/// Rows are the interpolating weights psi(x_q)^T = k(x_q, X_a) K_aa^-1 of a
/// zero-mean GP conditioned on anchor values, one row per query point.
inline Eigen::MatrixXd anchor_basis(std::span<const Point> anchors, const SqExpKernel& k,
                                    std::span<const Point> queries) {
  if (anchors.empty()) throw InvalidArgument("anchor_basis: no anchors");
  if (!(k.sigma > 0.0)) throw NumericalError("anchor_basis: zero kernel");
  for (std::size_t i = 0; i < anchors.size(); ++i)
    for (std::size_t j = i + 1; j < anchors.size(); ++j)
      if ((anchors[i] - anchors[j]).norm() <= 1e-12 * k.ell)
        throw NumericalError("anchor_basis: coincident anchors " + std::to_string(i) + " and " + std::to_string(j));
  const JitteredCholesky chol(cov_matrix(anchors, k), "anchor_basis: K_aa");
  return chol.solve(cross_cov(anchors, queries, k)).transpose();
}

inline Eigen::VectorXd anchor_basis(std::span<const Point> anchors, const SqExpKernel& k, const Point& query) {
  const Point q[1] = {query};
  return anchor_basis(anchors, k, std::span<const Point>(q, 1)).row(0).transpose();
}

}  // namespace statfem
