#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/forward.hpp"
#include "statfem/inference.hpp"
#include "statfem/mesh.hpp"
#include "statfem/rng.hpp"

namespace statfem {

/// A finite element model to be compared: mesh plus forward fields. The
/// forward prior is solved on construction.
class ModelCandidate {
 public:
  ModelCandidate(std::string label, Mesh mesh, DiffusionField kappa, SourceField source, double log_prior = 0.0,
                 ForwardOptions opts = {})
      : label_(std::move(label)),
        mesh_(std::move(mesh)),
        kappa_(std::move(kappa)),
        source_(std::move(source)),
        log_prior_(log_prior),
        forward_(perturbation_forward(mesh_, kappa_, source_, opts)) {
    if (!std::isfinite(log_prior_)) throw InvalidArgument("ModelCandidate: log prior must be finite");
  }

  [[nodiscard]] const std::string& label() const { return label_; }
  [[nodiscard]] const Mesh& mesh() const { return mesh_; }
  [[nodiscard]] const DiffusionField& kappa() const { return kappa_; }
  [[nodiscard]] const SourceField& source() const { return source_; }
  [[nodiscard]] double log_prior() const { return log_prior_; }
  [[nodiscard]] const ForwardSolution& forward() const { return forward_; }
  [[nodiscard]] const GaussianDensity& prior() const { return forward_.density; }

  void set_log_prior(double v) { log_prior_ = v; }

 private:
  std::string label_;
  Mesh mesh_;
  DiffusionField kappa_;
  SourceField source_;
  double log_prior_;
  ForwardSolution forward_;
};

/// log p(Y | M) + log p(M), unnormalised over models.
inline double log_model_posterior(const ModelCandidate& c, const GeneratingModel& model, const ObservationSet& obs) {
  const ProjectionMatrix P = projection_matrix(c.mesh(), model.obs_points);
  return log_marginal_likelihood(c.prior(), model, P, obs) + c.log_prior();
}

struct BayesFactor {
  double factor = 1.0;
  double log_factor = 0.0;
};

/// p(M1 | Y) / p(M2 | Y); `factor` overflows to inf for large log ratios.
inline BayesFactor bayes_factor(const ModelCandidate& c1, const ModelCandidate& c2, const GeneratingModel& model,
                                const ObservationSet& obs) {
  BayesFactor b;
  b.log_factor = log_model_posterior(c1, model, obs) - log_model_posterior(c2, model, obs);
  b.factor = std::exp(b.log_factor);
  return b;
}

struct RankEntry {
  std::string candidate;
  double log_post_mean = 0.0;
  double log_post_std = 0.0;
  int rank = 0;
  std::vector<double> values;
};

using ObservationSampler = std::function<ObservationSet(Rng&)>;

inline constexpr double kRankTieTolerance = 1e-9;

/// Orders candidates by mean log posterior, best first. Means within
/// kRankTieTolerance count as tied and go to the coarser mesh (larger h).
inline void assign_ranks(std::vector<RankEntry>& entries, const std::vector<double>& mesh_sizes) {
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double da = entries[a].log_post_mean;
    const double db = entries[b].log_post_mean;
    if (std::abs(da - db) <= kRankTieTolerance) return mesh_sizes[a] > mesh_sizes[b];
    return da > db;
  });
  for (std::size_t r = 0; r < order.size(); ++r) entries[order[r]].rank = static_cast<int>(r) + 1;
}

/// Evaluates every candidate on `repeats` freshly sampled data sets. Each
/// candidate may carry its own (pre-learned) generating model. Entries are
/// returned in input order with mean, sample std (0 for one repeat) and rank.
inline std::vector<RankEntry> rank_models(const std::vector<ModelCandidate>& candidates,
                                          const std::vector<GeneratingModel>& models, const ObservationSampler& sampler,
                                          int repeats, std::uint64_t rng_seed) {
  if (repeats < 1) throw InvalidArgument("rank_models: repeats must be >= 1");
  if (candidates.empty()) throw InvalidArgument("rank_models: no candidates");
  if (models.size() != candidates.size() && models.size() != 1)
    throw InvalidArgument("rank_models: need one generating model, or one per candidate");
  std::vector<ProjectionMatrix> projections;
  for (std::size_t c = 0; c < candidates.size(); ++c)
    projections.push_back(projection_matrix(candidates[c].mesh(), models[models.size() == 1 ? 0 : c].obs_points));

  std::vector<RankEntry> entries(candidates.size());
  Rng rng(rng_seed);
  for (int r = 0; r < repeats; ++r) {
    const ObservationSet obs = sampler(rng);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const GeneratingModel& m = models[models.size() == 1 ? 0 : c];
      entries[c].values.push_back(log_marginal_likelihood(candidates[c].prior(), m, projections[c], obs) +
                                  candidates[c].log_prior());
    }
  }
  std::vector<double> h;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    RankEntry& e = entries[c];
    e.candidate = candidates[c].label();
    const Eigen::Map<const Eigen::VectorXd> v(e.values.data(), static_cast<Eigen::Index>(e.values.size()));
    e.log_post_mean = v.mean();
    e.log_post_std = repeats > 1 ? std::sqrt((v.array() - e.log_post_mean).square().sum() / (repeats - 1)) : 0.0;
    h.push_back(candidates[c].mesh().h());
  }
  assign_ranks(entries, h);
  return entries;
}

inline std::vector<RankEntry> rank_models(const std::vector<ModelCandidate>& candidates, const GeneratingModel& model,
                                          const ObservationSampler& sampler, int repeats, std::uint64_t rng_seed) {
  return rank_models(candidates, std::vector<GeneratingModel>{model}, sampler, repeats, rng_seed);
}

}  // namespace statfem
