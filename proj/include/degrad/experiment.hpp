#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "degrad/bounds.hpp"
#include "degrad/dynamics.hpp"
#include "degrad/objectives.hpp"
#include "degrad/topology.hpp"

namespace degrad {

// Config schema identifier; configs must carry "schema": "degrad/1".
inline constexpr const char* kSchemaId = "degrad/1";

// ---- JSON serialization of domain objects ----
nlohmann::json topology_to_json(const Topology& t);
// {"n": int, "weights": [[row-major reals]]}
Topology topology_from_json(const nlohmann::json& j);
// {"n": int, "edges": [[i, j], ...]} with 0-based indices
Mat adjacency_from_json(const nlohmann::json& j);
nlohmann::json ensemble_to_json(const ObjectiveEnsemble& e);
ObjectiveEnsemble ensemble_from_json(const nlohmann::json& j);

struct ExperimentConfig {
  std::optional<Topology> topology;
  std::optional<ObjectiveEnsemble> ensemble;
  AlgorithmConfig algorithm;
  NoiseConfig noise;
  long n_iters = 0;
  long mc_paths = 1;
  std::uint64_t seed = 0;
  Mat x0;  // resolved initial iterate

  std::string trace_csv = "trace.csv";
  std::string bounds_json = "bounds.json";
  std::string comparison_json = "comparison.json";
  std::string iterates_json;  // empty: no full-iterate dump
};

// Throws ConfigError on schema violations (missing seed, bad fields).
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Exit codes shared by the library entry points and the CLI.
inline constexpr int kExitPass = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDominance = 2;
inline constexpr int kExitRegime = 3;

struct RunArtifacts {
  int exit_code = kExitPass;
  std::string message;
  nlohmann::json bound_report;
  nlohmann::json comparison;
};

// Runs the configured experiment (Monte Carlo over mc_paths with derived
// seeds), evaluates the theoretical envelopes, writes trace CSV plus bound
// and comparison JSON into out_dir, and reports the dominance verdict.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// Grid sweep over eta / gamma / local_updates / topology cells; writes
// summary.csv into out_dir. Returns kExitPass, or kExitUsage for a bad grid.
int run_sweep(const nlohmann::json& config, const std::string& out_dir, std::ostream& log);

// Curated reproductions with fixed seeds. Prints one pass/fail line per
// check; returns kExitPass or kExitDominance.
int run_demo(const std::string& name, std::ostream& out);
std::vector<std::string> demo_names();

// Maps an in-flight exception to the CLI exit code contract.
int exit_code_for_current_exception();

}  // namespace degrad
