#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/gp_kernels.hpp"
#include "statfem/inference.hpp"
#include "statfem/rng.hpp"

namespace statfem {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Named, strictly positive hyperparameters in a fixed order.
struct HyperParamVector {
  std::vector<std::string> names;
  Eigen::VectorXd values;

  HyperParamVector() = default;
  HyperParamVector(std::vector<std::string> n, Eigen::VectorXd v) : names(std::move(n)), values(std::move(v)) {
    if (static_cast<Eigen::Index>(names.size()) != values.size())
      throw InvalidArgument("HyperParamVector: one name per value required");
    std::unordered_set<std::string> seen;
    for (const auto& s : names)
      if (!seen.insert(s).second) throw InvalidArgument("HyperParamVector: duplicate name '" + s + "'");
    for (Eigen::Index i = 0; i < values.size(); ++i)
      if (!(values[i] > 0.0) || !std::isfinite(values[i]))
        throw InvalidArgument("HyperParamVector: '" + names[i] + "' must be positive");
  }

  [[nodiscard]] Eigen::Index size() const { return values.size(); }

  [[nodiscard]] Eigen::Index index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<Eigen::Index>(i);
    return -1;
  }

  [[nodiscard]] double get(const std::string& name, double fallback) const {
    const Eigen::Index i = index(name);
    return i < 0 ? fallback : values[i];
  }
};

/// Prior of one hyperparameter. Flat is flat on the original scale, on
/// (0, upper]. LogGaussian is Gaussian in log w (density carries the 1/w factor).
struct Prior {
  enum class Kind { Flat, Gaussian, LogGaussian };
  Kind kind = Kind::Flat;
  double mean = 0.0;
  double variance = 1.0;
  double upper = std::numeric_limits<double>::infinity();

  static Prior flat() { return {}; }
  static Prior flat(double upper_bound) {
    if (!(upper_bound > 0.0)) throw InvalidArgument("Prior: flat upper bound must be positive");
    Prior p;
    p.upper = upper_bound;
    return p;
  }
  static Prior gaussian(double m, double v) { return make(Kind::Gaussian, m, v); }
  static Prior log_gaussian(double m, double v) { return make(Kind::LogGaussian, m, v); }

  [[nodiscard]] double log_density(double w) const {
    switch (kind) {
      case Kind::Flat:
        return w <= upper ? 0.0 : kNegInf;
      case Kind::Gaussian:
        return -0.5 * (kLog2Pi + std::log(variance) + (w - mean) * (w - mean) / variance);
      case Kind::LogGaussian: {
        if (!(w > 0.0)) return kNegInf;
        const double z = std::log(w) - mean;
        return -0.5 * (kLog2Pi + std::log(variance) + z * z / variance) - std::log(w);
      }
    }
    return 0.0;
  }

 private:
  static Prior make(Kind k, double m, double v) {
    if (!(v > 0.0) || !std::isfinite(v) || !std::isfinite(m)) throw InvalidArgument("Prior: variance must be positive");
    Prior p;
    p.kind = k;
    p.mean = m;
    p.variance = v;
    return p;
  }
};

/// Per-parameter priors; an empty spec is flat in every coordinate.
struct PriorSpec {
  std::vector<Prior> priors;

  [[nodiscard]] double log_density(const Eigen::VectorXd& w) const {
    if (priors.empty()) return 0.0;
    if (static_cast<Eigen::Index>(priors.size()) != w.size()) throw InvalidArgument("PriorSpec: one prior per parameter");
    double s = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) s += priors[i].log_density(w[i]);
    return s;
  }
};

/// Everything the marginal likelihood needs at one hyperparameter value.
struct BuiltModel {
  GaussianDensity prior;
  GeneratingModel model;
  ProjectionMatrix P;
};

using ModelBuilder = std::function<BuiltModel(const HyperParamVector&)>;
using LogTarget = std::function<double(const Eigen::VectorXd&)>;

/// log p(Y | w) + log p(w). Builder failures and non-PSD covariances give -inf.
inline double log_posterior_w(const HyperParamVector& w, const ObservationSet& obs, const ModelBuilder& builder,
                              const PriorSpec& prior) {
  const double lp = prior.log_density(w.values);
  if (!std::isfinite(lp)) return kNegInf;
  try {
    const BuiltModel m = builder(w);
    const double ll = log_marginal_likelihood(m.prior, m.model, m.P, obs);
    return std::isfinite(ll) ? ll + lp : kNegInf;
  } catch (const NumericalError&) {
    return kNegInf;
  } catch (const InvalidArgument&) {
    return kNegInf;
  }
}

/// Log posterior over a subset of (rho, sigma_d, ell_d, sigma_e) with the
/// forward prior fixed. Parameters not in `names` keep their value in `fixed`.
class GeneratingModelPosterior {
 public:
  GeneratingModelPosterior(const GaussianDensity& prior, const ProjectionMatrix& P, const ObservationSet& obs,
                           std::vector<std::string> names, GeneratingModel fixed, PriorSpec priors = {})
      : eval_(prior, P, obs), names_(std::move(names)), fixed_(std::move(fixed)), priors_(std::move(priors)) {
    for (const auto& n : names_)
      if (n != "rho" && n != "sigma_d" && n != "ell_d" && n != "sigma_e")
        throw InvalidArgument("GeneratingModelPosterior: unknown parameter '" + n + "'");
  }

  [[nodiscard]] double operator()(const Eigen::VectorXd& w) const {
    if (w.size() != static_cast<Eigen::Index>(names_.size())) throw InvalidArgument("GeneratingModelPosterior: size mismatch");
    const double lp = priors_.log_density(w);
    if (!std::isfinite(lp)) return kNegInf;
    double rho = fixed_.rho;
    double sigma_d = fixed_.mismatch.sigma;
    double ell_d = fixed_.mismatch.ell;
    double sigma_e = fixed_.noise_sigma;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const double v = w[static_cast<Eigen::Index>(i)];
      if (!(v > 0.0) || !std::isfinite(v)) return kNegInf;
      if (names_[i] == "rho") rho = v;
      else if (names_[i] == "sigma_d") sigma_d = v;
      else if (names_[i] == "ell_d") ell_d = v;
      else sigma_e = v;
    }
    try {
      const double ll = eval_(rho, SqExpKernel(sigma_d, ell_d), sigma_e);
      return std::isfinite(ll) ? ll + lp : kNegInf;
    } catch (const NumericalError&) {
      return kNegInf;
    }
  }

  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }

 private:
  MarginalLikelihoodEvaluator eval_;
  std::vector<std::string> names_;
  GeneratingModel fixed_;
  PriorSpec priors_;
};

/// Metropolis chain on the original scale.
struct Chain {
  std::vector<std::string> names;
  Eigen::MatrixXd samples;  // N x n_w
  Eigen::VectorXd log_posts;
  std::vector<std::uint8_t> accepted;
  double acceptance_ratio = 0.0;
  double burn_in_fraction = 0.3;
  double proposal_sigma = 0.0;
  std::uint64_t seed = 0;

  [[nodiscard]] Eigen::Index size() const { return samples.rows(); }
};

/// Random-walk Metropolis in theta = log w with proposal N(theta, sigma_q^2 I).
/// Accepts when log u < lt(w') + sum theta' - lt(w) - sum theta, the sums
/// being the log-Jacobian of w = exp(theta).
inline Chain metropolis_sample(const LogTarget& log_target, const Eigen::VectorXd& init, int n_iter, double proposal_sigma,
                               std::uint64_t rng_seed, double burn_in_fraction = 0.3) {
  if (n_iter < 1) throw InvalidArgument("metropolis_sample: n_iter must be >= 1");
  if (!(proposal_sigma > 0.0) || !std::isfinite(proposal_sigma))
    throw InvalidArgument("metropolis_sample: proposal sigma must be > 0");
  if (init.size() == 0 || !(init.array() > 0.0).all() || !init.allFinite())
    throw InvalidArgument("metropolis_sample: initial point must be positive");
  double current_lp = log_target(init);
  if (!std::isfinite(current_lp)) throw InvalidArgument("metropolis_sample: log target is not finite at the initial point");

  Rng rng(rng_seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  const Eigen::Index d = init.size();
  Eigen::VectorXd theta = init.array().log().matrix();
  Eigen::VectorXd w = init;

  Chain chain;
  chain.samples.resize(n_iter, d);
  chain.log_posts.resize(n_iter);
  chain.accepted.assign(n_iter, 0);
  chain.burn_in_fraction = burn_in_fraction;
  chain.proposal_sigma = proposal_sigma;
  chain.seed = rng_seed;
  long n_accepted = 0;
  Eigen::VectorXd theta_new(d);
  for (int it = 0; it < n_iter; ++it) {
    for (Eigen::Index j = 0; j < d; ++j) theta_new[j] = theta[j] + proposal_sigma * normal(rng);
    const double log_u = std::log(uniform(rng));
    const Eigen::VectorXd w_new = theta_new.array().exp().matrix();
    if ((w_new.array() > 0.0).all() && w_new.allFinite()) {
      const double lp_new = log_target(w_new);
      if (std::isfinite(lp_new)) {
        const double alpha = std::min(0.0, lp_new + theta_new.sum() - current_lp - theta.sum());
        if (log_u < alpha) {
          theta = theta_new;
          w = w_new;
          current_lp = lp_new;
          chain.accepted[it] = 1;
          ++n_accepted;
        }
      }
    }
    chain.samples.row(it) = w.transpose();
    chain.log_posts[it] = current_lp;
  }
  chain.acceptance_ratio = static_cast<double>(n_accepted) / n_iter;
  return chain;
}

struct TuneResult {
  double sigma = 0.0;
  double acceptance = 0.0;
  bool converged = false;
  int rounds = 0;
  /// Last state of the final pilot chain; a good start for the main chain.
  Eigen::VectorXd last_state;
};

/// Pilot chains of 500 iterations, scaling sigma_q by 1.5 above
/// target + 0.1 and by 0.6 below target - 0.1, for at most 20 rounds.
/// Each pilot starts where the previous one ended.
inline TuneResult tune_proposal(const LogTarget& log_target, const Eigen::VectorXd& init, double target_acceptance,
                                std::uint64_t rng_seed, double initial_sigma = 0.1, int pilot_iterations = 500,
                                int max_rounds = 20) {
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
    throw InvalidArgument("tune_proposal: target acceptance must lie in (0, 1)");
  TuneResult r;
  r.sigma = initial_sigma;
  r.last_state = init;
  for (int round = 0; round < max_rounds; ++round) {
    const Chain pilot = metropolis_sample(log_target, r.last_state, pilot_iterations, r.sigma,
                                          substream_seed(rng_seed, static_cast<std::uint64_t>(round)));
    r.rounds = round + 1;
    r.acceptance = pilot.acceptance_ratio;
    r.last_state = pilot.samples.row(pilot.size() - 1).transpose();
    if (r.acceptance > target_acceptance + 0.1) {
      r.sigma *= 1.5;
    } else if (r.acceptance < target_acceptance - 0.1) {
      r.sigma *= 0.6;
    } else {
      r.converged = true;
      return r;
    }
  }
  return r;
}

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long> counts;

  /// Normalised so the histogram integrates to one.
  [[nodiscard]] std::vector<double> density() const {
    long total = 0;
    for (long c : counts) total += c;
    std::vector<double> d(counts.size(), 0.0);
    for (std::size_t i = 0; i < counts.size(); ++i)
      d[i] = total > 0 ? static_cast<double>(counts[i]) / (static_cast<double>(total) * (edges[i + 1] - edges[i])) : 0.0;
    return d;
  }
};

inline Histogram make_histogram(const Eigen::VectorXd& x, int bins = 50) {
  if (bins < 1) throw InvalidArgument("make_histogram: bins must be >= 1");
  if (x.size() == 0) throw InvalidArgument("make_histogram: no samples");
  double lo = x.minCoeff();
  double hi = x.maxCoeff();
  if (hi <= lo) {
    const double pad = lo != 0.0 ? 0.5 * std::abs(lo) * 1e-6 : 0.5;
    lo -= pad;
    hi += pad;
  }
  Histogram h;
  h.edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * i / bins;
  h.counts.assign(bins, 0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    int b = static_cast<int>((x[i] - lo) / (hi - lo) * bins);
    ++h.counts[std::clamp(b, 0, bins - 1)];
  }
  return h;
}

struct ChainSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
  std::vector<Histogram> histograms;
  Eigen::Index kept = 0;
};

/// Mean, standard deviation (n - 1 divisor, 0 for a single sample) and
/// histograms after dropping the first burn-in fraction of the chain.
inline ChainSummary chain_summary(const Chain& chain, double burn_in_fraction, int bins = 50) {
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
    throw InvalidArgument("chain_summary: burn-in fraction must lie in [0, 1)");
  const auto n = chain.size();
  const auto skip = static_cast<Eigen::Index>(std::floor(burn_in_fraction * static_cast<double>(n)));
  const Eigen::Index kept = n - skip;
  if (kept <= 0) throw InvalidArgument("chain_summary: burn-in removes every sample");
  const Eigen::MatrixXd s = chain.samples.bottomRows(kept);
  ChainSummary out;
  out.kept = kept;
  // Shifted by the first kept sample so a constant chain gives its value back exactly.
  const Eigen::RowVectorXd shift = s.row(0);
  const Eigen::MatrixXd shifted = s.rowwise() - shift;
  const Eigen::RowVectorXd offset = shifted.colwise().mean();
  out.mean = (shift + offset).transpose();
  out.stddev = Eigen::VectorXd::Zero(s.cols());
  if (kept > 1) {
    const Eigen::MatrixXd c = shifted.rowwise() - offset;
    out.stddev = (c.colwise().squaredNorm() / static_cast<double>(kept - 1)).cwiseSqrt().transpose();
  }
  for (Eigen::Index j = 0; j < s.cols(); ++j) out.histograms.push_back(make_histogram(s.col(j), bins));
  return out;
}

inline ChainSummary chain_summary(const Chain& chain) { return chain_summary(chain, chain.burn_in_fraction); }

}  // namespace statfem
