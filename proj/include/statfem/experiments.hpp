#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "statfem/errors.hpp"
#include "statfem/forward.hpp"
#include "statfem/gp_kernels.hpp"
#include "statfem/hyperlearn.hpp"
#include "statfem/inference.hpp"
#include "statfem/io.hpp"
#include "statfem/layouts.hpp"
#include "statfem/mesh.hpp"
#include "statfem/model_selection.hpp"
#include "statfem/rng.hpp"
#include "statfem/truth.hpp"

namespace statfem {

inline constexpr std::uint64_t kDefaultSeed = 20210301;
inline constexpr double kDefaultEllDMax = 10.0;

enum class Scale { Desk, Paper };

inline Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::Desk;
  if (s == "paper") return Scale::Paper;
  throw InvalidArgument("unknown scale '" + s + "' (expected desk or paper)");
}

inline std::string to_string(Scale s) { return s == Scale::Desk ? "desk" : "paper"; }

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids{"convergence", "random-source", "random-diffusivity",
                                            "inversion",   "mesh-selection", "plate"};
  return ids;
}

/// Default parameters of every experiment; desk scale only shrinks n_o,
/// chain lengths, repeats and the plate truth refinement.
inline Json default_params(const std::string& id, Scale scale) {
  const bool desk = scale == Scale::Desk;
  Json p;
  if (id == "convergence") {
    p["n_e"] = {8, 16, 32, 64, 128};
    p["ell_f"] = {0.25, 0.5, 1.0};
    p["sigma_f"] = 0.2;
    p["quad_points"] = 10;
    p["greens_quad"] = 24;
    p["stabilise"] = false;
  } else if (id == "random-source") {
    p["n_e"] = 32;
    p["sigma_f"] = 0.3;
    p["ell_f"] = 0.25;
    p["n_y"] = desk ? Json{4, 33} : Json{4, 11, 33};
    p["n_o"] = desk ? Json{1, 10, 100} : Json{1, 10, 100, 1000};
    p["iterations"] = desk ? 5000 : 20000;
    p["burn_in"] = 0.3;
    p["ell_d_max"] = kDefaultEllDMax;
    p["truth_elements"] = 512;
  } else if (id == "random-diffusivity") {
    p["n_e"] = 32;
    p["kappa_mean"] = 1.0;
    p["sigma_kappa"] = 0.15;
    p["ell_kappa"] = 0.25;
    p["kappa_known_x"] = {11.0 / 64.0, 23.0 / 64.0};
    p["kappa_known_value"] = 1.0;
    p["n_y"] = {4, 33};
    p["n_o"] = desk ? Json{1, 10, 100} : Json{1, 10, 100, 1000};
    p["iterations"] = desk ? 5000 : 20000;
    p["burn_in"] = 0.3;
    p["ell_d_max"] = kDefaultEllDMax;
    p["truth_elements"] = 512;
  } else if (id == "inversion") {
    p["n_e"] = 32;
    p["anchors"] = {0.0, 0.25, 0.5, 0.75, 1.0};
    p["anchor_sigma"] = 1.0;
    p["anchor_ell"] = 0.32;
    p["kappa_true"] = {std::log(0.7), std::log(1.0), std::log(0.7), std::log(0.4), std::log(0.7)};
    p["kappa_prior_mean"] = {std::log(0.8), std::log(1.1), std::log(0.8), std::log(0.5), std::log(0.8)};
    p["kappa_prior_var"] = 0.0025;
    p["sigma_e_true"] = 0.01;
    p["sigma_e_prior_mean"] = 0.0075;
    p["sigma_e_prior_var"] = 4e-6;
    p["n_o"] = {1, 5, 25, 50};
    p["iterations"] = desk ? 10000 : 50000;
    p["burn_in"] = 0.3;
  } else if (id == "mesh-selection") {
    p["n_e"] = {4, 8, 16, 32};
    p["sigma_f"] = 0.2;
    p["ell_f"] = 0.25;
    p["rho"] = 0.8;
    p["sigma_d"] = 0.005;
    p["ell_d"] = 0.3;
    p["sigma_e"] = 0.005;
    p["n_y"] = desk ? Json{33} : Json{11, 33};
    p["n_o"] = 100;
    p["repeats"] = desk ? 20 : 50;
    p["learn_hyperparameters"] = true;
    p["iterations"] = desk ? 2000 : 10000;
    p["burn_in"] = 0.3;
    p["ell_d_max"] = kDefaultEllDMax;
  } else if (id == "plate") {
    p["refinement"] = 0;
    p["sigma_f"] = 0.3;
    p["ell_f"] = 0.15;
    p["truth_refinement"] = desk ? 2 : 4;
    p["n_y"] = desk ? Json{64} : Json{32, 64, 125};
    p["n_o"] = desk ? Json{1, 10, 100} : Json{1, 10, 100, 1000};
    p["iterations"] = desk ? 10000 : 50000;
    p["burn_in"] = 0.3;
    p["ell_d_max"] = kDefaultEllDMax;
  } else {
    throw InvalidArgument("unknown experiment '" + id + "'");
  }
  return p;
}

struct ExperimentConfig {
  std::string id;
  Scale scale = Scale::Paper;
  std::uint64_t seed = kDefaultSeed;
  std::filesystem::path out_dir = "out";
  Json params;
};

/// Seed precedence: explicit value, then STATFEM_SEED, then the config file,
/// then kDefaultSeed.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> cli, const Json& file_config) {
  if (cli) return *cli;
  if (const char* env = std::getenv("STATFEM_SEED"); env && *env) {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(env, &pos);
      if (pos == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw InvalidArgument(std::string("STATFEM_SEED is not an unsigned integer: ") + env);
  }
  if (file_config.contains("seed")) return file_config.at("seed").get<std::uint64_t>();
  return kDefaultSeed;
}

/// Merges a config document ({"scale": ..., "seed": ..., "params": {...}})
/// over the experiment defaults.
inline ExperimentConfig make_config(const std::string& id, const Json& file_config, std::optional<Scale> scale,
                                    std::optional<std::uint64_t> seed, std::filesystem::path out_dir) {
  ExperimentConfig c;
  c.id = id;
  if (file_config.contains("experiment") && file_config.at("experiment").get<std::string>() != id)
    throw InvalidArgument("config is for experiment '" + file_config.at("experiment").get<std::string>() + "'");
  c.scale = scale ? *scale : file_config.contains("scale") ? parse_scale(file_config.at("scale").get<std::string>()) : Scale::Paper;
  c.seed = resolve_seed(seed, file_config);
  c.out_dir = std::move(out_dir);
  c.params = default_params(id, c.scale);
  if (file_config.contains("params")) {
    for (const auto& [key, value] : file_config.at("params").items()) {
      if (!c.params.contains(key)) throw InvalidArgument("unknown parameter '" + key + "' for experiment " + id);
      c.params[key] = value;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Shared pieces

inline double source_mean_sine_mix(const Point& x) {
  const double pi = std::numbers::pi;
  return pi * pi / 5.0 * std::sin(pi * x.x()) + 49.0 * pi * pi / 50.0 * std::sin(7.0 * pi * x.x());
}

inline Json points_json(std::span<const Point> pts, int dim) {
  Json a = Json::array();
  for (const Point& p : pts) a.push_back(dim == 1 ? Json(p.x()) : Json{p.x(), p.y()});
  return a;
}

/// Compass search on log_target(exp(theta)) + sum theta: a starting point
/// for the chain near the posterior mode in the sampling coordinates.
inline Eigen::VectorXd pattern_search_start(const LogTarget& log_target, const Eigen::VectorXd& init, int max_evals = 4000) {
  Eigen::VectorXd theta = init.array().log().matrix();
  auto f = [&](const Eigen::VectorXd& t) {
    const double v = log_target(t.array().exp().matrix());
    return std::isfinite(v) ? v + t.sum() : kNegInf;
  };
  double best = f(theta);
  if (!std::isfinite(best)) return init;
  int evals = 1;
  for (double step = 0.5; step > 1e-4 && evals < max_evals; step *= 0.5) {
    bool improved = true;
    while (improved && evals < max_evals) {
      improved = false;
      for (Eigen::Index j = 0; j < theta.size(); ++j)
        for (double dir : {1.0, -1.0}) {
          Eigen::VectorXd t = theta;
          t[j] += dir * step;
          const double v = f(t);
          ++evals;
          if (v > best) {
            best = v;
            theta = t;
            improved = true;
          }
        }
    }
  }
  return theta.array().exp().matrix();
}

struct LearnResult {
  Chain chain;
  ChainSummary summary;
  TuneResult tune;
};

/// Start search, proposal tuning and the main chain for one posterior.
inline LearnResult learn(const LogTarget& target, const std::vector<std::string>& names, const Eigen::VectorXd& init,
                         int iterations, double burn_in, std::uint64_t seed) {
  LearnResult r;
  const Eigen::VectorXd start = pattern_search_start(target, init);
  r.tune = tune_proposal(target, start, 0.25, substream_seed(seed, "tune"), 0.1);
  r.chain = metropolis_sample(target, r.tune.last_state, iterations, r.tune.sigma, substream_seed(seed, "main"), burn_in);
  r.chain.names = names;
  r.summary = chain_summary(r.chain, burn_in);
  return r;
}

inline Json learn_json(const LearnResult& r, std::uint64_t seed) {
  Json j = chain_summary_json(r.chain, r.summary, seed, r.chain.burn_in_fraction);
  j["proposal_sigma"] = r.tune.sigma;
  j["tune_converged"] = r.tune.converged;
  j["tune_rounds"] = r.tune.rounds;
  return j;
}

inline const std::vector<std::string>& generating_model_names() {
  static const std::vector<std::string> n{"rho", "sigma_d", "ell_d"};
  return n;
}

/// Learns (rho, sigma_d, ell_d) under a flat prior with sigma_e fixed;
/// ell_d is flat on (0, ell_d_max].
inline LearnResult learn_generating_model(const GaussianDensity& prior, const ProjectionMatrix& P, const ObservationSet& obs,
                                          double sigma_e, int iterations, double burn_in, std::uint64_t seed,
                                          double ell_d_max = kDefaultEllDMax) {
  GeneratingModel fixed;
  fixed.rho = 1.0;
  fixed.noise_sigma = sigma_e;
  fixed.obs_points = obs.points;
  const GeneratingModelPosterior post(prior, P, obs, generating_model_names(), fixed,
                                      PriorSpec{{Prior::flat(), Prior::flat(), Prior::flat(ell_d_max)}});
  Eigen::VectorXd init(3);
  init << 1.0, 0.05, 0.2;
  return learn([&post](const Eigen::VectorXd& w) { return post(w); }, generating_model_names(), init, iterations, burn_in,
               seed);
}

inline GeneratingModel model_from_estimate(const Eigen::VectorXd& w, double sigma_e, std::vector<Point> points) {
  GeneratingModel m;
  m.rho = w[0];
  m.mismatch = SqExpKernel(w[1], w[2]);
  m.noise_sigma = sigma_e;
  m.obs_points = std::move(points);
  return m;
}

/// Row indices of `subset` within `full` (exact coordinate matches).
inline std::vector<int> subset_rows(std::span<const Point> full, std::span<const Point> subset) {
  std::vector<int> rows;
  for (const Point& p : subset) {
    int found = -1;
    for (std::size_t i = 0; i < full.size(); ++i)
      if ((full[i] - p).norm() < 1e-12) found = static_cast<int>(i);
    if (found < 0) throw InvalidArgument("subset_rows: layouts are not nested");
    rows.push_back(found);
  }
  return rows;
}

inline ObservationSet select(const ObservationSet& obs, const std::vector<int>& rows, Eigen::Index n_o) {
  ObservationSet out;
  out.readings.resize(static_cast<Eigen::Index>(rows.size()), n_o);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.points.push_back(obs.points[rows[r]]);
    out.readings.row(static_cast<Eigen::Index>(r)) = obs.readings.row(rows[r]).leftCols(n_o);
  }
  return out;
}

inline std::vector<Point> uniform_grid_1d(int n) {
  std::vector<Point> pts;
  for (int i = 0; i <= n; ++i) pts.push_back(point1d(static_cast<double>(i) / n));
  return pts;
}

/// Records outputs and results while a driver runs.
class RunContext {
 public:
  explicit RunContext(const ExperimentConfig& c) : config(c) {
    manifest["experiment"] = c.id;
    manifest["scale"] = to_string(c.scale);
    manifest["seed"] = c.seed;
    manifest["params"] = c.params;
    manifest["status"] = "running";
    manifest["outputs"] = Json::array();
    manifest["results"] = Json::object();
  }

  std::filesystem::path file(const std::string& name) {
    manifest["outputs"].push_back(name);
    return config.out_dir / name;
  }

  [[nodiscard]] std::uint64_t seed(const std::string& stream) const { return substream_seed(config.seed, stream); }

  const ExperimentConfig& config;
  Json manifest;
};

// ---------------------------------------------------------------------------
// Drivers

/// Relative L2 error of the FE variance c_uh(x, x) against the Green's
/// function variance, 4 Gauss points per element.
inline double variance_error_1d(const Mesh& mesh, const Eigen::MatrixXd& C_u, const SourceField& f, int greens_quad) {
  const GaussRule rule = gauss_legendre(4);
  double err = 0.0;
  double norm = 0.0;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const Element& el = mesh.element(e);
    const double x0 = mesh.node(el[0]).x();
    const double x1 = mesh.node(el[1]).x();
    const int d0 = mesh.dof(el[0]);
    const int d1 = mesh.dof(el[1]);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double t = 0.5 * (rule.nodes[q] + 1.0);
      const double x = x0 + t * (x1 - x0);
      const double w = 0.5 * rule.weights[q] * (x1 - x0);
      const double p0 = 1.0 - t;
      const double p1 = t;
      double v = 0.0;
      if (d0 >= 0) v += p0 * p0 * C_u(d0, d0);
      if (d1 >= 0) v += p1 * p1 * C_u(d1, d1);
      if (d0 >= 0 && d1 >= 0) v += 2.0 * p0 * p1 * C_u(d0, d1);
      const double exact = greens_variance_1d(x, f, greens_quad);
      err += w * (v - exact) * (v - exact);
      norm += w * exact * exact;
    }
  }
  return std::sqrt(err / norm);
}

inline double loglog_slope(const std::vector<double>& h, const std::vector<double>& err) {
  const auto n = static_cast<Eigen::Index>(h.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = std::log(h[i]);
    y[i] = std::log(err[i]);
  }
  return X.colPivHouseholderQr().solve(y)[1];
}

inline void run_convergence(RunContext& ctx) {
  const Json& p = ctx.config.params;
  const auto n_es = p.at("n_e").get<std::vector<int>>();
  const auto ells = p.at("ell_f").get<std::vector<double>>();
  const double sigma_f = p.at("sigma_f").get<double>();
  const int quad = p.at("quad_points").get<int>();
  const int greens_quad = p.at("greens_quad").get<int>();
  std::vector<ConvergenceRow> rows;
  Json slopes = Json::object();
  for (double ell : ells) {
    const SourceField f{RandomFieldSpec{constant_mean(1.0), SqExpKernel(sigma_f, ell)}};
    for (auto mode : {SourceCovariance::Exact, SourceCovariance::Lumped}) {
      std::ostringstream name;
      name << (mode == SourceCovariance::Exact ? "exact" : "lumped") << "_ell" << ell;
      std::vector<double> hs;
      std::vector<double> errs;
      for (int n_e : n_es) {
        const Mesh mesh = build_interval_mesh(n_e);
        ForwardOptions opts;
        opts.source_cov = mode;
        opts.exact_quad_points = quad;
        opts.stabilise = p.at("stabilise").get<bool>();
        const ForwardSolution sol = perturbation_forward(mesh, DiffusionField::unit(), f, opts);
        hs.push_back(mesh.h());
        errs.push_back(variance_error_1d(mesh, sol.density.cov, f, greens_quad));
        rows.push_back({name.str(), hs.back(), errs.back()});
        if (mode == SourceCovariance::Lumped && n_e == n_es.back()) {
          std::ostringstream fname;
          fname << "field_prior_ell" << ell << ".csv";
          write_nodal_field_csv(ctx.file(fname.str()), mesh, sol.density);
        }
      }
      slopes[name.str()] = loglog_slope(hs, errs);
    }
  }
  write_convergence_csv(ctx.file("convergence.csv"), rows);
  ctx.manifest["results"]["slopes"] = slopes;
}

/// Hyperparameter learning and posterior fields for the 1D random-source
/// and random-diffusivity problems, which share the data and the driver.
inline void run_1d_posterior_study(RunContext& ctx, const Mesh& mesh, const ForwardSolution& prior, const Json& extra) {
  const Json& p = ctx.config.params;
  const auto n_ys = p.at("n_y").get<std::vector<int>>();
  const auto n_os = p.at("n_o").get<std::vector<int>>();
  const int iterations = p.at("iterations").get<int>();
  const double burn_in = p.at("burn_in").get<double>();
  TrueProcess truth = TrueProcess::greens_gp_1d();
  truth.fine_elements_1d = p.at("truth_elements").get<int>();

  const std::vector<Point> full = observation_layout_1d(33);
  const int max_no = *std::max_element(n_os.begin(), n_os.end());
  const ObservationSet data = sample_observations(truth, full, max_no, ctx.seed("data"));

  const std::vector<Point> grid = uniform_grid_1d(128);
  write_nodal_field_csv(ctx.file("field_prior_u.csv"), mesh, prior.density);
  write_field_csv(ctx.file("field_truth_z.csv"), 1, grid, true_response_density(truth, grid));
  write_json(ctx.file("density_prior_u.json"), density_json(prior.density, extra));

  Json results = Json::object();
  for (int n_y : n_ys) {
    const std::vector<Point> pts = observation_layout_1d(n_y);
    const std::vector<int> rows = subset_rows(full, pts);
    const ProjectionMatrix P = projection_matrix(mesh, pts);
    for (int n_o : n_os) {
      const ObservationSet obs = select(data, rows, n_o);
      const std::string tag = "ny" + std::to_string(n_y) + "_no" + std::to_string(n_o);
      const std::uint64_t seed = substream_seed(ctx.seed("chain"), tag);
      const LearnResult r = learn_generating_model(prior.density, P, obs, truth.noise_sigma, iterations, burn_in, seed,
                                                   p.at("ell_d_max").get<double>());
      write_chain_csv(ctx.file("chain_" + tag + ".csv"), r.chain);
      const Json summary = learn_json(r, seed);
      write_json(ctx.file("chain_" + tag + "_summary.json"), summary);
      results[tag] = summary;

      const GeneratingModel model = model_from_estimate(r.summary.mean, truth.noise_sigma, pts);
      const GaussianDensity post = posterior_u(prior.density, model, P, obs);
      write_nodal_field_csv(ctx.file("field_posterior_u_" + tag + ".csv"), mesh, post);
      GeneratingModel on_grid = model;
      on_grid.obs_points = grid;
      write_field_csv(ctx.file("field_posterior_z_" + tag + ".csv"), 1, grid,
                      posterior_z(post, on_grid, projection_matrix(mesh, grid)));
      Json prov{{"rho", model.rho},     {"sigma_d", model.mismatch.sigma}, {"ell_d", model.mismatch.ell},
                {"sigma_e", model.noise_sigma}, {"n_y", n_y},                   {"n_o", n_o}};
      write_json(ctx.file("density_posterior_u_" + tag + ".json"), density_json(post, prov));
    }
  }
  ctx.manifest["results"]["chains"] = results;
}

inline void run_random_source(RunContext& ctx) {
  const Json& p = ctx.config.params;
  const Mesh mesh = build_interval_mesh(p.at("n_e").get<int>());
  const double pi = std::numbers::pi;
  const SourceField f{RandomFieldSpec{constant_mean(pi * pi / 5.0),
                                      SqExpKernel(p.at("sigma_f").get<double>(), p.at("ell_f").get<double>())}};
  const ForwardSolution prior = perturbation_forward(mesh, DiffusionField::unit(), f);
  ctx.manifest["layouts"] = {{"33", points_json(observation_layout_1d(33), 1)},
                             {"11", points_json(observation_layout_1d(11), 1)},
                             {"4", points_json(observation_layout_1d(4), 1)}};
  run_1d_posterior_study(ctx, mesh, prior, Json{{"mesh", "interval n_e=" + std::to_string(mesh.num_elements())}});
}

/// kappa density at element centres conditioned on known values.
inline GaussianDensity conditioned_kappa(const Mesh& mesh, const RandomFieldSpec& spec, const std::vector<double>& known_x,
                                         double known_value) {
  std::vector<Point> anchors;
  for (double x : known_x) anchors.push_back(point1d(x));
  return gp_condition(spec, anchors, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(anchors.size()), known_value),
                      barycentres(mesh).points());
}

inline void run_random_diffusivity(RunContext& ctx) {
  const Json& p = ctx.config.params;
  const Mesh mesh = build_interval_mesh(p.at("n_e").get<int>());
  const double pi = std::numbers::pi;
  const RandomFieldSpec kspec{constant_mean(p.at("kappa_mean").get<double>()),
                              SqExpKernel(p.at("sigma_kappa").get<double>(), p.at("ell_kappa").get<double>())};
  const GaussianDensity kappa =
      conditioned_kappa(mesh, kspec, p.at("kappa_known_x").get<std::vector<double>>(), p.at("kappa_known_value").get<double>());
  const SourceField f{RandomFieldSpec{constant_mean(pi * pi / 5.0), SqExpKernel(0.0, 1.0)}};
  const GaussianDensity source = source_density(mesh, f);
  const ForwardSolution prior = perturbation_forward(mesh, kappa, source, kspec.kernel.variance());
  write_field_csv(ctx.file("field_kappa.csv"), 1, barycentres(mesh).points(), kappa);

  // Five kappa samples and their solutions.
  Rng rng(ctx.seed("kappa-samples"));
  const GaussianSampler sampler(kappa);
  auto samples = detail::open_out(ctx.file("kappa_samples.csv"));
  samples << "sample,x,kappa,u\n";
  for (int s = 0; s < 5; ++s) {
    const Eigen::VectorXd k = sampler.draw(rng);
    const Eigen::VectorXd u = forward_fixed_kappa(assemble_system(mesh, k), source).mean;
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const double xc = 0.5 * (mesh.node(mesh.element(e)[0]).x() + mesh.node(mesh.element(e)[1]).x());
      const int right = mesh.dof(mesh.element(e)[1]);
      samples << s << ',' << xc << ',' << k[e] << ',' << (right >= 0 ? u[right] : 0.0) << '\n';
    }
  }
  ctx.manifest["layouts"] = {{"33", points_json(observation_layout_1d(33), 1)},
                             {"4", points_json(observation_layout_1d(4), 1)}};
  const double max_known_var = [&] {
    double v = 0.0;
    const auto centres = barycentres(mesh).points();
    for (double x : p.at("kappa_known_x").get<std::vector<double>>())
      for (std::size_t e = 0; e < centres.size(); ++e)
        if (std::abs(centres[e].x() - x) < 1e-12) v = std::max(v, kappa.cov(e, e));
    return v;
  }();
  ctx.manifest["results"]["kappa_variance_at_known_points"] = max_known_var;
  run_1d_posterior_study(ctx, mesh, prior, Json{{"mesh", "interval n_e=" + std::to_string(mesh.num_elements())}});
}

/// Log target over w = (mu_a, sigma_e) for the anchor-parameterised inverse
/// problem, with y = P A(kappa)^-1 f + e.
class InversionPosterior {
 public:
  InversionPosterior(Mesh mesh, std::vector<Point> anchors, SqExpKernel anchor_kernel, ObservationSet obs, PriorSpec priors)
      : mesh_(std::move(mesh)), obs_(std::move(obs)), priors_(std::move(priors)) {
    basis_ = anchor_basis(anchors, anchor_kernel, barycentres(mesh_).points());
    P_ = projection_matrix(mesh_, obs_.points);
    load_ = basis_integrals(mesh_);
  }

  [[nodiscard]] BuiltModel build(const HyperParamVector& w) const {
    const auto na = basis_.cols();
    const Eigen::VectorXd kappa = basis_ * w.values.head(na).array().log().matrix();
    BuiltModel m;
    m.prior = forward_fixed_kappa(assemble_system(mesh_, kappa), GaussianDensity::deterministic(load_));
    m.model.rho = 1.0;
    m.model.mismatch = SqExpKernel(0.0, 1.0);
    m.model.noise_sigma = w.values[na];
    m.model.obs_points = obs_.points;
    m.P = P_;
    return m;
  }

  [[nodiscard]] double operator()(const Eigen::VectorXd& w) const {
    std::vector<std::string> names;
    for (Eigen::Index i = 0; i < w.size(); ++i) names.push_back("w" + std::to_string(i));
    return log_posterior_w(HyperParamVector(names, w), obs_, [this](const HyperParamVector& v) { return build(v); },
                           priors_);
  }

  [[nodiscard]] const Mesh& mesh() const { return mesh_; }
  [[nodiscard]] const Eigen::MatrixXd& basis() const { return basis_; }

 private:
  Mesh mesh_;
  ObservationSet obs_;
  PriorSpec priors_;
  Eigen::MatrixXd basis_;
  ProjectionMatrix P_;
  Eigen::VectorXd load_;
};

inline void run_inversion(RunContext& ctx) {
  const Json& p = ctx.config.params;
  const int n_e = p.at("n_e").get<int>();
  const Mesh mesh = build_interval_mesh(n_e);
  TrueProcess truth = TrueProcess::anchor_dirac();
  truth.anchor_mesh_elements = n_e;
  truth.anchors.clear();
  for (double a : p.at("anchors").get<std::vector<double>>()) truth.anchors.push_back(point1d(a));
  const auto k_true = p.at("kappa_true").get<std::vector<double>>();
  truth.anchor_values = Eigen::Map<const Eigen::VectorXd>(k_true.data(), static_cast<Eigen::Index>(k_true.size()));
  truth.anchor_kernel = SqExpKernel(p.at("anchor_sigma").get<double>(), p.at("anchor_ell").get<double>());
  truth.noise_sigma = p.at("sigma_e_true").get<double>();
  const auto na = static_cast<Eigen::Index>(truth.anchors.size());

  const auto prior_mean = p.at("kappa_prior_mean").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(prior_mean.size()) != na) throw InvalidArgument("inversion: one prior mean per anchor");
  PriorSpec priors;
  std::vector<std::string> names;
  for (Eigen::Index a = 0; a < na; ++a) {
    priors.priors.push_back(Prior::log_gaussian(prior_mean[a], p.at("kappa_prior_var").get<double>()));
    names.push_back("mu_a" + std::to_string(a));
  }
  priors.priors.push_back(Prior::gaussian(p.at("sigma_e_prior_mean").get<double>(), p.at("sigma_e_prior_var").get<double>()));
  names.emplace_back("sigma_e");

  const auto n_os = p.at("n_o").get<std::vector<int>>();
  const int max_no = *std::max_element(n_os.begin(), n_os.end());
  const std::vector<Point> pts = mesh.nodes();
  const ObservationSet data = sample_observations(truth, pts, max_no, ctx.seed("data"));
  ctx.manifest["layouts"] = {{"33", points_json(pts, 1)}};

  const std::vector<Point> grid = uniform_grid_1d(128);
  const Eigen::MatrixXd grid_basis = anchor_basis(truth.anchors, truth.anchor_kernel, grid);
  {
    const Eigen::VectorXd mu = (grid_basis * truth.anchor_values).array().exp().matrix();
    write_field_csv(ctx.file("field_mu_true.csv"), 1, grid, mu, Eigen::VectorXd::Zero(mu.size()));
  }
  Json results = Json::object();
  for (int n_o : n_os) {
    const std::string tag = "no" + std::to_string(n_o);
    const InversionPosterior target(mesh, truth.anchors, truth.anchor_kernel, data.head(n_o), priors);
    Eigen::VectorXd init(na + 1);
    for (Eigen::Index a = 0; a < na; ++a) init[a] = std::exp(prior_mean[a]);
    init[na] = p.at("sigma_e_prior_mean").get<double>();
    const std::uint64_t seed = substream_seed(ctx.seed("chain"), tag);
    const LearnResult r = learn([&target](const Eigen::VectorXd& w) { return target(w); }, names, init,
                                p.at("iterations").get<int>(), p.at("burn_in").get<double>(), seed);
    write_chain_csv(ctx.file("chain_" + tag + ".csv"), r.chain);
    Json summary = learn_json(r, seed);
    // Posterior of the log-coefficients kappa_a = log mu_a.
    const Eigen::Index kept = r.summary.kept;
    const Eigen::MatrixXd logs = r.chain.samples.bottomRows(kept).leftCols(na).array().log().matrix();
    const Eigen::VectorXd k_mean = logs.colwise().mean().transpose();
    summary["kappa_mean"] = to_json(k_mean);
    summary["kappa_true"] = to_json(truth.anchor_values);
    summary["kappa_abs_error"] = to_json((k_mean - truth.anchor_values).cwiseAbs());
    write_json(ctx.file("chain_" + tag + "_summary.json"), summary);
    results[tag] = summary;
    // mu(x) band from the post-burn-in samples.
    const Eigen::MatrixXd mu = (grid_basis * logs.transpose()).array().exp().matrix();  // grid x kept
    const Eigen::VectorXd mean = mu.rowwise().mean();
    const Eigen::VectorXd sd =
        kept > 1 ? Eigen::VectorXd(((mu.colwise() - mean).array().square().rowwise().sum() / static_cast<double>(kept - 1)).sqrt())
                 : Eigen::VectorXd::Zero(mean.size());
    write_field_csv(ctx.file("field_mu_" + tag + ".csv"), 1, grid, mean, sd);
  }
  ctx.manifest["results"]["chains"] = results;
}

inline std::string mesh_label(int n_e) { return "h=1/" + std::to_string(n_e); }

inline void run_mesh_selection(RunContext& ctx) {
  const Json& p = ctx.config.params;
  const auto n_es = p.at("n_e").get<std::vector<int>>();
  const SourceField f{RandomFieldSpec{source_mean_sine_mix, SqExpKernel(p.at("sigma_f").get<double>(), p.at("ell_f").get<double>())}};
  std::vector<ModelCandidate> candidates;
  for (int n_e : n_es) candidates.emplace_back(mesh_label(n_e), build_interval_mesh(n_e), DiffusionField::unit(), f);
  const int n_o = p.at("n_o").get<int>();
  const int repeats = p.at("repeats").get<int>();
  const bool learn_w = p.at("learn_hyperparameters").get<bool>();

  Json results = Json::object();
  for (int n_y : p.at("n_y").get<std::vector<int>>()) {
    GeneratingModel truth_model;
    truth_model.rho = p.at("rho").get<double>();
    truth_model.mismatch = SqExpKernel(p.at("sigma_d").get<double>(), p.at("ell_d").get<double>());
    truth_model.noise_sigma = p.at("sigma_e").get<double>();
    truth_model.obs_points = observation_layout_1d(n_y);
    Json per_ny = Json::object();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const ModelCandidate& gen = candidates[i];
      const ProjectionMatrix Pgen = projection_matrix(gen.mesh(), truth_model.obs_points);
      const ObservationSampler sampler = [&](Rng& rng) {
        return sample_marginal_observations(gen.prior(), truth_model, Pgen, n_o, rng);
      };
      const std::string data_tag = "ny" + std::to_string(n_y) + "_Y" + std::to_string(i + 1);
      std::vector<GeneratingModel> models;
      Json learned = Json::array();
      if (learn_w) {
        Rng rng(substream_seed(ctx.seed("data"), data_tag + "/learn"));
        const ObservationSet learn_data = sampler(rng);
        for (std::size_t j = 0; j < candidates.size(); ++j) {
          const ProjectionMatrix P = projection_matrix(candidates[j].mesh(), truth_model.obs_points);
          const std::uint64_t seed = substream_seed(ctx.seed("chain"), data_tag + "/" + candidates[j].label());
          const LearnResult r = learn_generating_model(candidates[j].prior(), P, learn_data, truth_model.noise_sigma,
                                                       p.at("iterations").get<int>(), p.at("burn_in").get<double>(), seed,
                                                       p.at("ell_d_max").get<double>());
          models.push_back(model_from_estimate(r.summary.mean, truth_model.noise_sigma, truth_model.obs_points));
          learned.push_back({{"candidate", candidates[j].label()}, {"w", to_json(r.summary.mean)}, {"w_std", to_json(r.summary.stddev)},
                             {"acceptance_ratio", r.chain.acceptance_ratio}});
        }
      } else {
        models.push_back(truth_model);
      }
      const auto ranking = rank_models(candidates, models, sampler, repeats, substream_seed(ctx.seed("data"), data_tag));
      write_ranking_csv(ctx.file("ranking_" + data_tag + ".csv"), ranking);
      Json r;
      r["generating_mesh"] = gen.label();
      r["learned"] = learned;
      for (const auto& e : ranking)
        r["ranking"].push_back({{"candidate", e.candidate}, {"log_post_mean", e.log_post_mean}, {"log_post_std", e.log_post_std}, {"rank", e.rank}});
      r["winner"] = std::find_if(ranking.begin(), ranking.end(), [](const RankEntry& e) { return e.rank == 1; })->candidate;
      per_ny[data_tag] = r;
    }
    results["ny" + std::to_string(n_y)] = per_ny;
  }
  ctx.manifest["results"]["rankings"] = results;
}

inline void run_plate(RunContext& ctx) {
  const Json& p = ctx.config.params;
  const Mesh mesh = build_plate_with_hole(p.at("refinement").get<int>());
  const SourceField f{RandomFieldSpec{constant_mean(1.0), SqExpKernel(p.at("sigma_f").get<double>(), p.at("ell_f").get<double>())}};
  const ForwardSolution prior = perturbation_forward(mesh, DiffusionField::unit(), f);
  const TrueProcess truth = TrueProcess::plate_fine_mesh(p.at("truth_refinement").get<int>());

  const auto n_ys = p.at("n_y").get<std::vector<int>>();
  const auto n_os = p.at("n_o").get<std::vector<int>>();
  const int max_ny = *std::max_element(n_ys.begin(), n_ys.end());
  const int max_no = *std::max_element(n_os.begin(), n_os.end());
  const std::vector<Point> full = observation_layout_2d(mesh, max_ny);
  const ObservationSet data = sample_observations(truth, full, max_no, ctx.seed("data"));
  ctx.manifest["layouts"] = {{std::to_string(max_ny), points_json(full, 2)}};

  write_nodal_field_csv(ctx.file("field_prior_u.csv"), mesh, prior.density);
  std::vector<Point> diagonal;
  for (int i = 0; i <= 64; ++i) {
    const Point q(i / 64.0, i / 64.0);
    if (locate(mesh, q)) diagonal.push_back(q);
  }
  write_field_csv(ctx.file("field_truth_z_diagonal.csv"), 2, diagonal, true_response_density(truth, diagonal));
  {
    const ProjectionMatrix Pd = projection_matrix(mesh, diagonal);
    write_field_csv(ctx.file("field_prior_u_diagonal.csv"), 2, diagonal,
                    GaussianDensity{Pd.P * prior.density.mean, Pd.P * prior.density.cov * Pd.P.transpose()});
  }

  Json results = Json::object();
  for (int n_y : n_ys) {
    std::vector<int> rows(n_y);
    for (int i = 0; i < n_y; ++i) rows[i] = i;
    const std::vector<Point> pts(full.begin(), full.begin() + n_y);
    const ProjectionMatrix P = projection_matrix(mesh, pts);
    for (int n_o : n_os) {
      const ObservationSet obs = select(data, rows, n_o);
      const std::string tag = "ny" + std::to_string(n_y) + "_no" + std::to_string(n_o);
      const std::uint64_t seed = substream_seed(ctx.seed("chain"), tag);
      const LearnResult r = learn_generating_model(prior.density, P, obs, truth.noise_sigma, p.at("iterations").get<int>(),
                                                   p.at("burn_in").get<double>(), seed, p.at("ell_d_max").get<double>());
      write_chain_csv(ctx.file("chain_" + tag + ".csv"), r.chain);
      const Json summary = learn_json(r, seed);
      write_json(ctx.file("chain_" + tag + "_summary.json"), summary);
      results[tag] = summary;
      const GeneratingModel model = model_from_estimate(r.summary.mean, truth.noise_sigma, pts);
      const GaussianDensity post = posterior_u(prior.density, model, P, obs);
      write_nodal_field_csv(ctx.file("field_posterior_u_" + tag + ".csv"), mesh, post);
      GeneratingModel on_diag = model;
      on_diag.obs_points = diagonal;
      write_field_csv(ctx.file("field_posterior_z_diagonal_" + tag + ".csv"), 2, diagonal,
                      posterior_z(post, on_diag, projection_matrix(mesh, diagonal)));
    }
  }
  ctx.manifest["results"]["chains"] = results;
}

/// Runs one experiment, writing its files and manifest.json into
/// config.out_dir. On failure the manifest records the error and the
/// exception is rethrown.
inline Json run_experiment(const ExperimentConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  RunContext ctx(config);
  const auto t0 = std::chrono::steady_clock::now();
  static const std::map<std::string, std::function<void(RunContext&)>> drivers{
      {"convergence", run_convergence},       {"random-source", run_random_source},
      {"random-diffusivity", run_random_diffusivity}, {"inversion", run_inversion},
      {"mesh-selection", run_mesh_selection}, {"plate", run_plate}};
  try {
    const auto it = drivers.find(config.id);
    if (it == drivers.end()) throw InvalidArgument("unknown experiment '" + config.id + "'");
    it->second(ctx);
    ctx.manifest["status"] = "ok";
  } catch (const std::exception& e) {
    ctx.manifest["status"] = "error";
    ctx.manifest["error"] = e.what();
    ctx.manifest["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(config.out_dir / "manifest.json", ctx.manifest);
    throw;
  }
  ctx.manifest["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(config.out_dir / "manifest.json", ctx.manifest);
  return ctx.manifest;
}

}  // namespace statfem
