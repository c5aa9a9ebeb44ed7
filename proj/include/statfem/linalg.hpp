#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "statfem/errors.hpp"

namespace statfem {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Relative diagonal jitter for Gram-type matrices, and the single retry level.
inline constexpr double kJitter = 1e-10;
inline constexpr double kJitterRetry = 1e-8;

inline void symmetrize(MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

/// Cholesky factor of a symmetric PSD matrix after adding
/// kJitter * trace/n to the diagonal (one retry at kJitterRetry).
///
/// A zero matrix factors to L = 0; callers sampling from a degenerate
/// density get the mean back exactly.
class JitteredCholesky {
 public:
  JitteredCholesky() = default;

  explicit JitteredCholesky(const MatrixXd& m, const char* what = "matrix") { compute(m, what); }

  void compute(const MatrixXd& m, const char* what = "matrix") {
    if (m.rows() != m.cols()) throw InvalidArgument(std::string(what) + ": not square");
    n_ = m.rows();
    const double scale = n_ > 0 ? m.trace() / static_cast<double>(n_) : 0.0;
    if (!std::isfinite(scale)) throw NumericalError(std::string(what) + ": non-finite entries");
    if (scale == 0.0 && m.cwiseAbs().maxCoeff() == 0.0) {
      zero_ = true;
      jitter_ = 0.0;
      L_ = MatrixXd::Zero(n_, n_);
      return;
    }
    if (scale < 0.0) throw NumericalError(std::string(what) + ": negative trace, not PSD");
    zero_ = false;
    for (double rel : {kJitter, kJitterRetry}) {
      jitter_ = rel * scale;
      MatrixXd shifted = m;
      shifted.diagonal().array() += jitter_;
      llt_.compute(shifted);
      if (llt_.info() == Eigen::Success) {
        L_ = llt_.matrixL();
        return;
      }
    }
    throw NumericalError(std::string(what) + ": Cholesky failed after jitter");
  }

  [[nodiscard]] const MatrixXd& L() const { return L_; }
  [[nodiscard]] double jitter() const { return jitter_; }
  [[nodiscard]] bool is_zero() const { return zero_; }
  [[nodiscard]] Eigen::Index size() const { return n_; }

  /// Solves (M + jitter I) x = b. Undefined for the zero matrix.
  template <typename Rhs>
  [[nodiscard]] MatrixXd solve(const Eigen::MatrixBase<Rhs>& b) const {
    if (zero_) throw NumericalError("JitteredCholesky: solve with a zero matrix");
    return llt_.solve(b);
  }

  [[nodiscard]] double log_det() const {
    if (zero_) return -std::numeric_limits<double>::infinity();
    return 2.0 * L_.diagonal().array().log().sum();
  }

 private:
  Eigen::LLT<MatrixXd> llt_;
  MatrixXd L_;
  double jitter_ = 0.0;
  bool zero_ = false;
  Eigen::Index n_ = 0;
};

/// Plain Cholesky of an SPD matrix that should not need jitter (marginal
/// covariances carrying a noise term). Falls back to the jittered factor.
inline Eigen::LLT<MatrixXd> factor_spd(const MatrixXd& m, const char* what = "matrix") {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = m.trace() / static_cast<double>(m.rows());
  for (double rel : {kJitter, kJitterRetry}) {
    MatrixXd shifted = m;
    shifted.diagonal().array() += rel * scale;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError(std::string(what) + ": not positive definite");
}

inline double relative_frobenius(const MatrixXd& a, const MatrixXd& reference) {
  const double denom = reference.norm();
  return denom > 0.0 ? (a - reference).norm() / denom : (a - reference).norm();
}

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

}  // namespace statfem
