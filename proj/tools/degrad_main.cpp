#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "degrad/errors.hpp"
#include "degrad/experiment.hpp"

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw degrad::ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw degrad::ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  degrad::apply_thread_cap();

  CLI::App app{"decentralized gradient descent laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed_override = 0;
  bool have_seed_override = false;

  auto* cmd_run = app.add_subcommand("run", "run one experiment from a JSON config");
  cmd_run->add_option("--config", config_path, "config JSON path")->required();
  cmd_run->add_option("--out", out_dir, "output directory");
  cmd_run->add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { have_seed_override = true; });

  auto* cmd_sweep = app.add_subcommand("sweep", "grid sweep; writes summary.csv");
  cmd_sweep->add_option("--config", config_path, "config JSON path with a 'sweep' object")
      ->required();
  cmd_sweep->add_option("--out", out_dir, "output directory");

  std::string demo_name;
  auto* cmd_demo = app.add_subcommand("demo", "curated reproductions with fixed seeds");
  cmd_demo->add_option("name", demo_name, "one of the named demos")->required();

  auto* cmd_validate = app.add_subcommand("validate-topology", "diagnose a weight matrix");
  cmd_validate->add_option("--config", config_path, "topology JSON path")->required();

  auto* cmd_spectrum = app.add_subcommand("spectrum", "print the eigenvalues of a weight matrix");
  cmd_spectrum->add_option("--config", config_path, "topology JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : degrad::kExitUsage;
  }

  try {
    if (cmd_run->parsed()) {
      nlohmann::json j = load_json(config_path);
      if (have_seed_override) j["seed"] = seed_override;
      const degrad::ExperimentConfig cfg = degrad::parse_config(j);
      const degrad::RunArtifacts art = degrad::run_experiment(cfg, out_dir);
      std::cout << (art.exit_code == degrad::kExitPass ? "pass" : art.message) << "\n";
      return art.exit_code;
    }
    if (cmd_sweep->parsed()) {
      return degrad::run_sweep(load_json(config_path), out_dir, std::cout);
    }
    if (cmd_demo->parsed()) {
      return degrad::run_demo(demo_name, std::cout);
    }
    if (cmd_validate->parsed()) {
      const degrad::Topology t = degrad::topology_from_json(load_json(config_path));
      const degrad::ValidityReport rep = degrad::validate(t);
      nlohmann::json j{{"is_symmetric", rep.is_symmetric},
                       {"rows_sum_to_one", rep.rows_sum_to_one},
                       {"is_connected", rep.is_connected},
                       {"satisfies_eig_condition", rep.satisfies_eig_condition},
                       {"is_nonnegative", rep.is_nonnegative},
                       {"is_bipartite", rep.is_bipartite},
                       {"messages", rep.messages}};
      std::cout << j.dump(2) << "\n";
      return degrad::kExitPass;
    }
    if (cmd_spectrum->parsed()) {
      const degrad::Topology t = degrad::topology_from_json(load_json(config_path));
      const auto& sp = t.spectrum();
      nlohmann::json j{{"eigenvalues", sp.eigenvalues},
                       {"lambda2", sp.lambda2},
                       {"lambdaN", sp.lambdaN}};
      std::cout << j.dump(2) << "\n";
      return degrad::kExitPass;
    }
  } catch (...) {
    try {
      throw;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
    } catch (...) {
      std::cerr << "error: unknown failure\n";
    }
    return degrad::exit_code_for_current_exception();
  }
  return degrad::kExitUsage;
}
