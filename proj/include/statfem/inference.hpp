#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/gp_kernels.hpp"
#include "statfem/linalg.hpp"
#include "statfem/mesh.hpp"
#include "statfem/rng.hpp"

namespace statfem {

/// Basis functions of the unknowns evaluated at observation points,
/// n_y x n_u.
struct ProjectionMatrix {
  Eigen::MatrixXd P;

  [[nodiscard]] Eigen::Index rows() const { return P.rows(); }
  [[nodiscard]] Eigen::Index cols() const { return P.cols(); }
};

inline ProjectionMatrix projection_matrix(const Mesh& mesh, std::span<const Point> points) {
  ProjectionMatrix out{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), mesh.num_dofs())};
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto loc = locate(mesh, points[k], 1e-10);
    if (!loc) throw InvalidArgument("projection_matrix: point " + std::to_string(k) + " lies outside the mesh");
    const Element& el = mesh.element(loc->element);
    for (int a = 0; a < mesh.verts_per_element(); ++a)
      if (const int d = mesh.dof(el[a]); d >= 0) out.P(static_cast<Eigen::Index>(k), d) += loc->shape[a];
  }
  return out;
}

/// y = rho P u + d + e with d ~ GP(0, k_d) and e ~ N(0, sigma_e^2 I).
struct GeneratingModel {
  double rho = 1.0;
  SqExpKernel mismatch{0.0, 1.0};
  double noise_sigma = 1.0;
  std::vector<Point> obs_points;

  void validate() const {
    if (!(rho > 0.0) || !std::isfinite(rho)) throw InvalidArgument("GeneratingModel: rho must be > 0");
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma))
      throw InvalidArgument("GeneratingModel: noise sigma must be > 0");
    if (obs_points.empty()) throw InvalidArgument("GeneratingModel: no observation points");
  }
};

struct MismatchCovariance {
  Eigen::MatrixXd C_d;
  Eigen::MatrixXd C_e;

  [[nodiscard]] Eigen::MatrixXd total() const { return C_d + C_e; }
};

inline MismatchCovariance mismatch_cov(const GeneratingModel& model) {
  const auto n = static_cast<Eigen::Index>(model.obs_points.size());
  MismatchCovariance out;
  out.C_d = cov_matrix(model.obs_points, model.mismatch);
  out.C_e = model.noise_sigma * model.noise_sigma * Eigen::MatrixXd::Identity(n, n);
  return out;
}

/// Sensor locations and readings Y (n_y x n_o, one column per reading).
struct ObservationSet {
  std::vector<Point> points;
  Eigen::MatrixXd readings;

  [[nodiscard]] Eigen::Index n_y() const { return readings.rows(); }
  [[nodiscard]] Eigen::Index n_o() const { return readings.cols(); }
  [[nodiscard]] Eigen::VectorXd reading_sum() const { return readings.rowwise().sum(); }

  /// First n readings.
  [[nodiscard]] ObservationSet head(Eigen::Index n) const { return {points, readings.leftCols(n)}; }
};

namespace detail {

inline void check_inference_dims(const GaussianDensity& prior, const GeneratingModel& model,
                                 const ProjectionMatrix& P, Eigen::Index n_y_obs) {
  model.validate();
  const auto n_y = static_cast<Eigen::Index>(model.obs_points.size());
  if (prior.cov.rows() != prior.mean.size() || prior.cov.cols() != prior.mean.size())
    throw InvalidArgument("inference: prior mean/cov size mismatch");
  if (P.cols() != prior.mean.size()) throw InvalidArgument("inference: projection columns must match the prior");
  if (P.rows() != n_y) throw InvalidArgument("inference: projection rows must match the observation points");
  if (n_y_obs >= 0 && n_y_obs != n_y) throw InvalidArgument("inference: readings must have one row per observation point");
}

}  // namespace detail

enum class PosteriorPath { Auto, Direct, Woodbury };

/// C_u - C_u P^T (Sigma / (rho^2 n_o) + P C_u P^T)^-1 P C_u with Sigma = C_d + C_e.
inline Eigen::MatrixXd woodbury_posterior_cov(const Eigen::MatrixXd& prior_cov, const GeneratingModel& model,
                                              const ProjectionMatrix& P, Eigen::Index n_o = 1) {
  if (n_o <= 0) return prior_cov;
  const Eigen::MatrixXd CPt = prior_cov * P.P.transpose();
  Eigen::MatrixXd inner = mismatch_cov(model).total() / (model.rho * model.rho * static_cast<double>(n_o));
  inner.noalias() += P.P * CPt;
  symmetrize(inner);
  const Eigen::LLT<Eigen::MatrixXd> llt = factor_spd(inner, "woodbury_posterior_cov: inner matrix");
  Eigen::MatrixXd out = prior_cov - CPt * llt.solve(CPt.transpose());
  symmetrize(out);
  return out;
}

/// (rho^2 n_o P^T Sigma^-1 P + C_u^-1)^-1, the inverse-sum form.
inline Eigen::MatrixXd direct_posterior_cov(const Eigen::MatrixXd& prior_cov, const GeneratingModel& model,
                                            const ProjectionMatrix& P, Eigen::Index n_o = 1) {
  if (n_o <= 0) return prior_cov;
  const JitteredCholesky prior_chol(prior_cov, "direct_posterior_cov: prior covariance");
  if (prior_chol.is_zero()) throw NumericalError("direct_posterior_cov: prior covariance is zero");
  const Eigen::LLT<Eigen::MatrixXd> sigma = factor_spd(mismatch_cov(model).total(), "direct_posterior_cov: C_d + C_e");
  const auto n = prior_cov.rows();
  Eigen::MatrixXd precision = prior_chol.solve(Eigen::MatrixXd::Identity(n, n));
  precision.noalias() += model.rho * model.rho * static_cast<double>(n_o) * P.P.transpose() * sigma.solve(P.P);
  symmetrize(precision);
  const Eigen::LLT<Eigen::MatrixXd> llt = factor_spd(precision, "direct_posterior_cov: posterior precision");
  Eigen::MatrixXd out = llt.solve(Eigen::MatrixXd::Identity(n, n));
  symmetrize(out);
  return out;
}

/// Posterior of the FE coefficients given all readings:
///   C_{u|Y} = (rho^2 n_o P^T Sigma^-1 P + C_u^-1)^-1
///   mean    = C_{u|Y} (rho P^T Sigma^-1 sum_i y_i + C_u^-1 ubar)
/// Auto uses the Woodbury covariance when n_y < n_u. n_o = 0 returns the prior.
inline GaussianDensity posterior_u(const GaussianDensity& prior, const GeneratingModel& model, const ProjectionMatrix& P,
                                   const ObservationSet& obs, PosteriorPath path = PosteriorPath::Auto) {
  detail::check_inference_dims(prior, model, P, obs.n_o() > 0 ? obs.n_y() : -1);
  if (obs.n_o() == 0) return prior;
  if (path == PosteriorPath::Auto) path = P.rows() < P.cols() ? PosteriorPath::Woodbury : PosteriorPath::Direct;
  GaussianDensity out;
  out.cov = path == PosteriorPath::Woodbury ? woodbury_posterior_cov(prior.cov, model, P, obs.n_o())
                                            : direct_posterior_cov(prior.cov, model, P, obs.n_o());
  const Eigen::LLT<Eigen::MatrixXd> sigma = factor_spd(mismatch_cov(model).total(), "posterior_u: C_d + C_e");
  const JitteredCholesky prior_chol(prior.cov, "posterior_u: prior covariance");
  if (prior_chol.is_zero()) throw NumericalError("posterior_u: prior covariance is zero");
  const Eigen::VectorXd rhs =
      model.rho * P.P.transpose() * sigma.solve(obs.reading_sum()) + prior_chol.solve(prior.mean);
  out.mean = out.cov * rhs;
  return out;
}

/// Posterior mean from the joint density of (u, ybar):
///   ubar + rho C_u P^T (rho^2 P C_u P^T + Sigma / n_o)^-1 (ybar - rho P ubar).
inline Eigen::VectorXd joint_density_posterior_mean(const GaussianDensity& prior, const GeneratingModel& model,
                                                    const ProjectionMatrix& P, const ObservationSet& obs) {
  detail::check_inference_dims(prior, model, P, obs.n_o() > 0 ? obs.n_y() : -1);
  if (obs.n_o() == 0) return prior.mean;
  const double n_o = static_cast<double>(obs.n_o());
  const Eigen::MatrixXd CPt = prior.cov * P.P.transpose();
  Eigen::MatrixXd S = model.rho * model.rho * P.P * CPt + mismatch_cov(model).total() / n_o;
  symmetrize(S);
  const Eigen::VectorXd innovation = obs.reading_sum() / n_o - model.rho * P.P * prior.mean;
  return prior.mean + model.rho * CPt * factor_spd(S, "joint_density_posterior_mean").solve(innovation);
}

/// Marginal covariance of a single reading: C_d + C_e + rho^2 P C_u P^T.
inline Eigen::MatrixXd marginal_observation_cov(const GaussianDensity& prior, const GeneratingModel& model,
                                                const ProjectionMatrix& P) {
  Eigen::MatrixXd S = mismatch_cov(model).total();
  S.noalias() += model.rho * model.rho * P.P * prior.cov * P.P.transpose();
  symmetrize(S);
  return S;
}

namespace detail {

/// sum_i log N(y_i | m, S) from one Cholesky factor of S and the reading
/// scatter about the reading mean.
inline double gaussian_log_likelihood(const Eigen::MatrixXd& S, const Eigen::VectorXd& m,
                                      const Eigen::VectorXd& reading_mean, const Eigen::MatrixXd& scatter,
                                      Eigen::Index n_o) {
  const Eigen::LLT<Eigen::MatrixXd> llt = factor_spd(S, "log_marginal_likelihood: marginal covariance");
  const Eigen::MatrixXd L = llt.matrixL();
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  const double n = static_cast<double>(n_o);
  const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(reading_mean - m);
  const Eigen::MatrixXd W = L.triangularView<Eigen::Lower>().solve(scatter);
  const Eigen::MatrixXd V = L.triangularView<Eigen::Lower>().solve(W.transpose());
  const double quad = V.trace() + n * z.squaredNorm();
  return -0.5 * (n * (static_cast<double>(S.rows()) * kLog2Pi + log_det) + quad);
}

}  // namespace detail

/// sum_i log N(y_i | rho P ubar, C_d + C_e + rho^2 P C_u P^T).
inline double log_marginal_likelihood(const GaussianDensity& prior, const GeneratingModel& model,
                                      const ProjectionMatrix& P, const ObservationSet& obs) {
  detail::check_inference_dims(prior, model, P, obs.n_o() > 0 ? obs.n_y() : -1);
  if (obs.n_o() == 0) return 0.0;
  const Eigen::MatrixXd S = marginal_observation_cov(prior, model, P);
  const Eigen::VectorXd m = model.rho * P.P * prior.mean;
  const Eigen::LLT<Eigen::MatrixXd> llt = factor_spd(S, "log_marginal_likelihood: marginal covariance");
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::MatrixXd Z = L.triangularView<Eigen::Lower>().solve(obs.readings.colwise() - m);
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  const double n_o = static_cast<double>(obs.n_o());
  return -0.5 * (n_o * (static_cast<double>(S.rows()) * kLog2Pi + log_det) + Z.squaredNorm());
}

/// Log marginal likelihood as a function of (rho, k_d, sigma_e) for a fixed
/// prior, projection and data set. P ubar, P C_u P^T and the reading
/// statistics are computed once.
class MarginalLikelihoodEvaluator {
 public:
  MarginalLikelihoodEvaluator(const GaussianDensity& prior, const ProjectionMatrix& P, const ObservationSet& obs)
      : points_(obs.points), n_o_(obs.n_o()) {
    if (P.cols() != prior.mean.size()) throw InvalidArgument("MarginalLikelihoodEvaluator: projection/prior mismatch");
    if (n_o_ > 0 && obs.n_y() != P.rows()) throw InvalidArgument("MarginalLikelihoodEvaluator: readings/projection mismatch");
    Pu_ = P.P * prior.mean;
    PCPt_ = P.P * prior.cov * P.P.transpose();
    symmetrize(PCPt_);
    if (n_o_ > 0) {
      mean_ = obs.readings.rowwise().mean();
      const Eigen::MatrixXd centred = obs.readings.colwise() - mean_;
      scatter_ = centred * centred.transpose();
    }
  }

  [[nodiscard]] double operator()(double rho, const SqExpKernel& mismatch, double noise_sigma) const {
    if (n_o_ == 0) return 0.0;
    Eigen::MatrixXd S = cov_matrix(points_, mismatch);
    S.diagonal().array() += noise_sigma * noise_sigma;
    S.noalias() += rho * rho * PCPt_;
    return detail::gaussian_log_likelihood(S, rho * Pu_, mean_, scatter_, n_o_);
  }

  [[nodiscard]] double operator()(const GeneratingModel& model) const {
    model.validate();
    return (*this)(model.rho, model.mismatch, model.noise_sigma);
  }

 private:
  std::vector<Point> points_;
  Eigen::Index n_o_;
  Eigen::VectorXd Pu_;
  Eigen::MatrixXd PCPt_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd scatter_;
};

/// True response at the sensors: N(rho P ubar_{|Y}, rho^2 P C_{u|Y} P^T + C_d).
inline GaussianDensity posterior_z(const GaussianDensity& post_u, const GeneratingModel& model, const ProjectionMatrix& P) {
  detail::check_inference_dims(post_u, model, P, -1);
  GaussianDensity out;
  out.mean = model.rho * P.P * post_u.mean;
  out.cov = model.rho * model.rho * P.P * post_u.cov * P.P.transpose() + mismatch_cov(model).C_d;
  symmetrize(out.cov);
  return out;
}

/// Density of a new reading at `new_points`:
/// N(rho P ubar_{|Y}, C_d + C_e + rho^2 P C_{u|Y} P^T), all built at the new points.
inline GaussianDensity predictive_density(const GaussianDensity& post_u, const GeneratingModel& model, const Mesh& mesh,
                                          std::span<const Point> new_points) {
  GeneratingModel at_new = model;
  at_new.obs_points.assign(new_points.begin(), new_points.end());
  const ProjectionMatrix P = projection_matrix(mesh, new_points);
  detail::check_inference_dims(post_u, at_new, P, -1);
  GaussianDensity out;
  out.mean = at_new.rho * P.P * post_u.mean;
  out.cov = mismatch_cov(at_new).total() + at_new.rho * at_new.rho * P.P * post_u.cov * P.P.transpose();
  symmetrize(out.cov);
  return out;
}

/// Draws n_o readings from the marginal N(rho P ubar, C_d + C_e + rho^2 P C_u P^T).
inline ObservationSet sample_marginal_observations(const GaussianDensity& prior, const GeneratingModel& model,
                                                   const ProjectionMatrix& P, int n_o, Rng& rng) {
  detail::check_inference_dims(prior, model, P, -1);
  if (n_o < 1) throw InvalidArgument("sample_marginal_observations: n_o must be >= 1");
  const GaussianSampler sampler(GaussianDensity{model.rho * P.P * prior.mean, marginal_observation_cov(prior, model, P)});
  return {model.obs_points, sampler.draw(rng, n_o)};
}

}  // namespace statfem
