#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "statfem/statfem.hpp"

using namespace statfem;

namespace {

int cmd_run(const std::string& id, const std::string& config_path, const std::string& scale, std::optional<std::uint64_t> seed,
            const std::string& out) {
  const Json file_config = config_path.empty() ? Json::object() : read_json(config_path);
  std::optional<Scale> s;
  if (!scale.empty()) s = parse_scale(scale);
  const ExperimentConfig config = make_config(id, file_config, s, seed, out);
  std::cerr << "running " << id << " (" << to_string(config.scale) << ", seed " << config.seed << ") -> " << out << '\n';
  const Json manifest = run_experiment(config);
  std::cout << manifest.at("results").dump(2) << '\n';
  return 0;
}

int cmd_mesh_info(const std::string& path) {
  const Mesh mesh = read_mesh(path);
  int n_dirichlet = 0;
  for (bool d : mesh.dirichlet()) n_dirichlet += d;
  Json j;
  j["dim"] = mesh.dim();
  j["nodes"] = mesh.num_nodes();
  j["elements"] = mesh.num_elements();
  j["dirichlet_nodes"] = n_dirichlet;
  j["dofs"] = mesh.num_dofs();
  j["h"] = mesh.h();
  j["measure"] = mesh.total_measure();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_chain_summarize(const std::string& path, double burn_in, std::optional<std::uint64_t> seed) {
  const Chain chain = read_chain_csv(path);
  std::cout << chain_summary_json(chain, chain_summary(chain, burn_in), seed, burn_in).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"statistical finite element experiments"};
  app.require_subcommand(1);

  std::string id;
  std::string config_path;
  std::string scale;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  auto* run = app.add_subcommand("run", "run an experiment");
  run->add_option("id", id, "experiment id")->required()->check(CLI::IsMember(experiment_ids()));
  run->add_option("--config", config_path, "JSON config")->check(CLI::ExistingFile);
  run->add_option("--scale", scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  run->add_option("--seed", seed, "root seed");
  run->add_option("--out", out, "output directory");

  std::string mesh_path;
  auto* mesh = app.add_subcommand("mesh", "mesh utilities");
  mesh->require_subcommand(1);
  auto* info = mesh->add_subcommand("info", "print mesh statistics");
  info->add_option("file", mesh_path, "mesh file")->required()->check(CLI::ExistingFile);

  std::string chain_path;
  double burn_in = 0.3;
  std::optional<std::uint64_t> chain_seed;
  auto* chain = app.add_subcommand("chain", "chain utilities");
  chain->require_subcommand(1);
  auto* summarize = chain->add_subcommand("summarize", "posterior mean and std of a chain CSV");
  summarize->add_option("csv", chain_path, "chain file")->required()->check(CLI::ExistingFile);
  summarize->add_option("--burn-in", burn_in, "discarded fraction")->check(CLI::Range(0.0, 0.999));
  summarize->add_option("--seed", chain_seed, "seed recorded with the chain");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(id, config_path, scale, seed, out);
    if (*info) return cmd_mesh_info(mesh_path);
    if (*summarize) return cmd_chain_summarize(chain_path, burn_in, chain_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
