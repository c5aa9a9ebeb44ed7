#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "statfem/statfem.hpp"

using namespace statfem;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "statfem_unit" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) setenv("STATFEM_SEED", value, 1);
    else unsetenv("STATFEM_SEED");
  }
  ~EnvGuard() { unsetenv("STATFEM_SEED"); }
};

}  // namespace

TEST(ChainCsv, RoundTrip) {
  const LogTarget lt = [](const Eigen::VectorXd& w) { return -w.squaredNorm(); };
  Chain c = metropolis_sample(lt, Eigen::Vector2d(0.5, 0.7), 200, 0.3, 8);
  c.names = {"rho", "sigma_d"};
  const fs::path p = scratch("chain") / "chain.csv";
  write_chain_csv(p, c);
  const Chain r = read_chain_csv(p);
  EXPECT_EQ(r.names, c.names);
  ASSERT_EQ(r.size(), c.size());
  EXPECT_LT((r.samples - c.samples).cwiseAbs().maxCoeff(), 1e-5 * c.samples.cwiseAbs().maxCoeff());
  EXPECT_EQ(r.accepted, c.accepted);
  EXPECT_DOUBLE_EQ(r.acceptance_ratio, c.acceptance_ratio);
}

TEST(ChainCsv, ErrorsCarryLineNumbers) {
  const fs::path p = scratch("chain_bad") / "chain.csv";
  std::ofstream(p) << "iter,rho,log_post,accepted\n0,1.0,-2.0,1\n1,oops,-2.0,0\n";
  try {
    read_chain_csv(p);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  std::ofstream(p) << "rho,log_post\n";
  EXPECT_THROW(read_chain_csv(p), IoError);
  EXPECT_THROW(read_chain_csv(p.parent_path() / "missing.csv"), IoError);
}

TEST(DensityJson, RoundTrip) {
  const GaussianDensity d{Eigen::Vector3d(1, 2, 3), Eigen::Matrix3d{{2, 0.5, 0}, {0.5, 1, 0.1}, {0, 0.1, 3}}};
  const GaussianDensity r = density_from_json(Json::parse(density_json(d).dump()));
  EXPECT_EQ(r.mean, d.mean);
  EXPECT_EQ(r.cov, d.cov);
  Json bad = density_json(d);
  bad["cov"] = std::vector<double>{1.0, 2.0};
  EXPECT_THROW(density_from_json(bad), IoError);
}

TEST(FieldCsv, BandIsSymmetric) {
  const fs::path p = scratch("field") / "f.csv";
  const std::vector<Point> pts{point1d(0.1), point1d(0.2)};
  write_field_csv(p, 1, pts, Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d(0.5, 0.0));
  std::ifstream in(p);
  std::string header;
  std::string row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "x,mean,lo95,hi95");
  double x, mean, lo, hi;
  char c;
  std::istringstream(row) >> x >> c >> mean >> c >> lo >> c >> hi;
  EXPECT_DOUBLE_EQ(x, 0.1);
  EXPECT_NEAR(mean - lo, 1.96 * 0.5, 1e-14);
  EXPECT_NEAR(hi - mean, 1.96 * 0.5, 1e-14);
}

TEST(Config, MergesOverDefaults) {
  EnvGuard env(nullptr);
  const Json file = Json::parse(R"({"experiment": "random-source", "scale": "desk", "seed": 5, "params": {"n_e": 16}})");
  const ExperimentConfig c = make_config("random-source", file, std::nullopt, std::nullopt, "out");
  EXPECT_EQ(c.scale, Scale::Desk);
  EXPECT_EQ(c.seed, 5U);
  EXPECT_EQ(c.params["n_e"], 16);
  EXPECT_EQ(c.params["sigma_f"], default_params("random-source", Scale::Desk)["sigma_f"]);
}

TEST(Config, RejectsUnknownKeysAndMismatchedExperiment) {
  EnvGuard env(nullptr);
  EXPECT_THROW(make_config("plate", Json::parse(R"({"params": {"bogus": 1}})"), std::nullopt, std::nullopt, "out"),
               InvalidArgument);
  EXPECT_THROW(make_config("plate", Json::parse(R"({"experiment": "inversion"})"), std::nullopt, std::nullopt, "out"),
               InvalidArgument);
  EXPECT_THROW(make_config("nope", Json::object(), std::nullopt, std::nullopt, "out"), InvalidArgument);
  EXPECT_THROW(parse_scale("huge"), InvalidArgument);
}

TEST(Config, DefaultScaleIsPaper) {
  EnvGuard env(nullptr);
  EXPECT_EQ(make_config("plate", Json::object(), std::nullopt, std::nullopt, "out").scale, Scale::Paper);
}

TEST(Config, EveryExperimentHasDefaults) {
  for (const auto& id : experiment_ids())
    for (Scale s : {Scale::Desk, Scale::Paper}) EXPECT_FALSE(default_params(id, s).empty()) << id;
}

TEST(Seeds, Precedence) {
  const Json file = Json::parse(R"({"seed": 7})");
  {
    EnvGuard env(nullptr);
    EXPECT_EQ(resolve_seed(std::nullopt, Json::object()), kDefaultSeed);
    EXPECT_EQ(resolve_seed(std::nullopt, file), 7U);
    EXPECT_EQ(resolve_seed(3, file), 3U);
  }
  {
    EnvGuard env("11");
    EXPECT_EQ(resolve_seed(std::nullopt, file), 11U);
    EXPECT_EQ(resolve_seed(3, file), 3U);
  }
  {
    EnvGuard env("eleven");
    EXPECT_THROW(resolve_seed(std::nullopt, file), InvalidArgument);
  }
}

TEST(Seeds, SubstreamsDifferAndRepeat) {
  EXPECT_EQ(substream_seed(1, "data"), substream_seed(1, "data"));
  EXPECT_NE(substream_seed(1, "data"), substream_seed(1, "chain"));
  EXPECT_NE(substream_seed(1, "data"), substream_seed(2, "data"));
}

TEST(Manifest, WrittenOnFailure) {
  EnvGuard env(nullptr);
  const fs::path out = scratch("failing");
  const Json file = Json::parse(R"({"params": {"n_y": [5]}})");
  const ExperimentConfig c = make_config("random-source", file, Scale::Desk, 1, out);
  EXPECT_THROW(run_experiment(c), InvalidArgument);
  const Json m = read_json(out / "manifest.json");
  EXPECT_EQ(m["status"], "error");
  EXPECT_NE(m["error"].get<std::string>().find("n_y"), std::string::npos);
  EXPECT_EQ(m["seed"], 1);
}

TEST(Manifest, ConvergenceRunListsOutputs) {
  EnvGuard env(nullptr);
  const fs::path out = scratch("convergence");
  const Json file = Json::parse(R"({"params": {"n_e": [8, 16]}})");
  const Json m = run_experiment(make_config("convergence", file, Scale::Desk, 2, out));
  EXPECT_EQ(m["status"], "ok");
  for (const auto& f : m["outputs"]) EXPECT_TRUE(fs::exists(out / f.get<std::string>())) << f;
  EXPECT_TRUE(fs::exists(out / "convergence.csv"));
}

TEST(Layouts, OneDimensionalNestedAndSymmetric) {
  const auto l4 = observation_layout_1d(4);
  const auto l11 = observation_layout_1d(11);
  const auto l33 = observation_layout_1d(33);
  auto contains = [](const std::vector<Point>& big, const Point& p) {
    for (const Point& q : big)
      if (std::abs(q.x() - p.x()) < 1e-15) return true;
    return false;
  };
  for (const Point& p : l4) EXPECT_TRUE(contains(l11, p) && contains(l33, p));
  for (const Point& p : l11) EXPECT_TRUE(contains(l33, p));
  for (const auto* l : {&l4, &l11, &l33})
    for (const Point& p : *l) {
      EXPECT_TRUE(contains(*l, point1d(1.0 - p.x())));
      EXPECT_GT(p.x(), 0.0);
      EXPECT_LT(p.x(), 1.0);
    }
  EXPECT_THROW(observation_layout_1d(5), InvalidArgument);
}

TEST(Layouts, TwoDimensionalAreNestedMeshNodes) {
  const Mesh m = build_plate_with_hole(0);
  const auto small = observation_layout_2d(m, 32);
  const auto big = observation_layout_2d(m, 64);
  for (std::size_t i = 0; i < small.size(); ++i) EXPECT_EQ(small[i], big[i]);
  for (const Point& p : big) {
    bool node = false;
    for (int i = 0; i < m.num_nodes() && !node; ++i) node = m.node(i) == p;
    EXPECT_TRUE(node);
  }
  EXPECT_EQ(observation_layout_2d(m, 125).size(), 125U);
  EXPECT_THROW(observation_layout_2d(m, 126), InvalidArgument);
}

TEST(Truth, ObservationsReproducible) {
  const TrueProcess t = TrueProcess::greens_gp_1d();
  const auto pts = observation_layout_1d(4);
  EXPECT_EQ(sample_observations(t, pts, 3, 5).readings, sample_observations(t, pts, 3, 5).readings);
  EXPECT_NE(sample_observations(t, pts, 3, 5).readings, sample_observations(t, pts, 3, 6).readings);
}
