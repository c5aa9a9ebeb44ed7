#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "statfem/errors.hpp"
#include "statfem/gp_kernels.hpp"
#include "statfem/hyperlearn.hpp"
#include "statfem/mesh.hpp"
#include "statfem/model_selection.hpp"

namespace statfem {

using Json = nlohmann::ordered_json;

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail

/// x [, y], mean, lo95, hi95 with the band at mean -/+ 1.96 sd.
inline void write_field_csv(const std::filesystem::path& path, int dim, std::span<const Point> points,
                            const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
  if (mean.size() != static_cast<Eigen::Index>(points.size()) || sd.size() != mean.size())
    throw InvalidArgument("write_field_csv: size mismatch");
  auto out = detail::open_out(path);
  out << (dim == 1 ? "x," : "x,y,") << "mean,lo95,hi95\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out << points[i].x() << ',';
    if (dim == 2) out << points[i].y() << ',';
    out << mean[k] << ',' << mean[k] - 1.96 * sd[k] << ',' << mean[k] + 1.96 * sd[k] << '\n';
  }
}

inline void write_field_csv(const std::filesystem::path& path, int dim, std::span<const Point> points,
                            const GaussianDensity& d) {
  write_field_csv(path, dim, points, d.mean, d.stddev());
}

/// Nodal field over all mesh nodes; Dirichlet nodes are deterministic zeros.
inline void write_nodal_field_csv(const std::filesystem::path& path, const Mesh& mesh, const GaussianDensity& d) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(mesh.num_nodes());
  Eigen::VectorXd sd = Eigen::VectorXd::Zero(mesh.num_nodes());
  const Eigen::VectorXd s = d.stddev();
  for (int i = 0; i < mesh.num_dofs(); ++i) {
    mean[mesh.free_nodes()[i]] = d.mean[i];
    sd[mesh.free_nodes()[i]] = s[i];
  }
  write_field_csv(path, mesh.dim(), mesh.nodes(), mean, sd);
}

/// iter,<names...>,log_post,accepted
inline void write_chain_csv(const std::filesystem::path& path, const Chain& chain) {
  auto out = detail::open_out(path);
  out << "iter";
  for (const auto& n : chain.names) out << ',' << n;
  out << ",log_post,accepted\n";
  for (Eigen::Index i = 0; i < chain.size(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < chain.samples.cols(); ++j) out << ',' << chain.samples(i, j);
    out << ',' << chain.log_posts[i] << ',' << static_cast<int>(chain.accepted[i]) << '\n';
  }
}

inline Chain read_chain_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty chain file");
  const auto header = detail::split_csv(line);
  if (header.size() < 4 || header.front() != "iter" || header[header.size() - 2] != "log_post" || header.back() != "accepted")
    throw IoError(path.string() + ":1: expected header iter,<names>,log_post,accepted");
  Chain chain;
  chain.names.assign(header.begin() + 1, header.end() - 2);
  const auto d = static_cast<Eigen::Index>(chain.names.size());
  std::vector<double> values;
  std::vector<double> lps;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size())
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": wrong number of columns");
    try {
      for (Eigen::Index j = 0; j < d; ++j) values.push_back(std::stod(cells[1 + j]));
      lps.push_back(std::stod(cells[cells.size() - 2]));
      chain.accepted.push_back(static_cast<std::uint8_t>(std::stoi(cells.back()) != 0));
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": not a number");
    }
  }
  const auto n = static_cast<Eigen::Index>(lps.size());
  if (n == 0) throw IoError(path.string() + ": chain has no samples");
  chain.samples = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), n, d);
  chain.log_posts = Eigen::Map<Eigen::VectorXd>(lps.data(), n);
  long acc = 0;
  for (auto a : chain.accepted) acc += a;
  chain.acceptance_ratio = static_cast<double>(acc) / static_cast<double>(n);
  return chain;
}

inline Json to_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

/// mean, std, acceptance_ratio, burn_in_fraction, seed (null when unknown).
inline Json chain_summary_json(const Chain& chain, const ChainSummary& s, std::optional<std::uint64_t> seed,
                               double burn_in_fraction) {
  Json j;
  j["names"] = chain.names;
  j["mean"] = Json::object();
  j["std"] = Json::object();
  for (std::size_t i = 0; i < chain.names.size(); ++i) {
    j["mean"][chain.names[i]] = s.mean[static_cast<Eigen::Index>(i)];
    j["std"][chain.names[i]] = s.stddev[static_cast<Eigen::Index>(i)];
  }
  j["acceptance_ratio"] = chain.acceptance_ratio;
  j["burn_in_fraction"] = burn_in_fraction;
  j["seed"] = seed ? Json(*seed) : Json(nullptr);
  j["iterations"] = chain.size();
  j["kept"] = s.kept;
  return j;
}

inline void write_ranking_csv(const std::filesystem::path& path, const std::vector<RankEntry>& entries) {
  auto out = detail::open_out(path);
  out << "candidate,log_post_mean,log_post_std,rank\n";
  for (const auto& e : entries) out << e.candidate << ',' << e.log_post_mean << ',' << e.log_post_std << ',' << e.rank << '\n';
}

struct ConvergenceRow {
  std::string series;
  double h = 0.0;
  double error = 0.0;
};

inline void write_convergence_csv(const std::filesystem::path& path, const std::vector<ConvergenceRow>& rows) {
  auto out = detail::open_out(path);
  out << "series,h,error\n";
  for (const auto& r : rows) out << r.series << ',' << r.h << ',' << r.error << '\n';
}

/// {"mean": [...], "cov": [row-major], "size": n, "provenance": {...}}
inline Json density_json(const GaussianDensity& d, Json provenance = Json::object()) {
  Json j;
  j["size"] = d.size();
  j["mean"] = to_json(d.mean);
  std::vector<double> cov;
  cov.reserve(static_cast<std::size_t>(d.cov.size()));
  for (Eigen::Index i = 0; i < d.cov.rows(); ++i)
    for (Eigen::Index k = 0; k < d.cov.cols(); ++k) cov.push_back(d.cov(i, k));
  j["cov"] = cov;
  j["provenance"] = std::move(provenance);
  return j;
}

inline GaussianDensity density_from_json(const Json& j) {
  GaussianDensity d;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto cov = j.at("cov").get<std::vector<double>>();
  const auto n = static_cast<Eigen::Index>(mean.size());
  if (static_cast<Eigen::Index>(cov.size()) != n * n) throw IoError("density json: covariance must have n^2 entries");
  d.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), n);
  d.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(cov.data(), n, n);
  return d;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace statfem
