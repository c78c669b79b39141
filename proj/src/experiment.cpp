#include "degrad/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>

#include "degrad/errors.hpp"

namespace degrad {

using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(std::string("config: missing field '") + key + "'");
  return *it;
}

double num_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number()) throw ConfigError(std::string("config: field '") + key + "' must be a number");
  return v.get<double>();
}

double num_or(const json& j, const char* key, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) throw ConfigError(std::string("config: field '") + key + "' must be a number");
  return it->get<double>();
}

std::string str_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_string()) throw ConfigError(std::string("config: field '") + key + "' must be a string");
  return v.get<std::string>();
}

Mat mat_from_json(const json& rows, const char* what) {
  if (!rows.is_array() || rows.empty())
    throw ConfigError(std::string("config: ") + what + " must be a nonempty array of rows");
  const int r = static_cast<int>(rows.size());
  if (!rows[0].is_array()) throw ConfigError(std::string("config: ") + what + " rows must be arrays");
  const int c = static_cast<int>(rows[0].size());
  Mat m(r, c);
  for (int i = 0; i < r; ++i) {
    if (!rows[i].is_array() || static_cast<int>(rows[i].size()) != c)
      throw ConfigError(std::string("config: ") + what + " rows have inconsistent lengths");
    for (int j = 0; j < c; ++j) {
      if (!rows[i][j].is_number())
        throw ConfigError(std::string("config: ") + what + " entries must be numbers");
      m(i, j) = rows[i][j].get<double>();
    }
  }
  return m;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

json topology_to_json(const Topology& t) {
  return json{{"n", t.n_agents()}, {"weights", mat_to_json(t.weights())}};
}

Topology topology_from_json(const json& j) {
  const int n = static_cast<int>(num_field(j, "n"));
  Mat w = mat_from_json(field(j, "weights"), "weights");
  if (w.rows() != n || w.cols() != n)
    throw ConfigError("topology json: weights shape disagrees with n");
  return Topology::from_weights(std::move(w));
}

Mat adjacency_from_json(const json& j) {
  const int n = static_cast<int>(num_field(j, "n"));
  if (n < 2) throw ConfigError("adjacency json: n must be >= 2");
  const json& edges = field(j, "edges");
  if (!edges.is_array()) throw ConfigError("adjacency json: edges must be an array");
  Mat adj(n, n, 0.0);
  for (const auto& e : edges) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
      throw ConfigError("adjacency json: each edge must be [i, j]");
    const int i = e[0].get<int>();
    const int k = e[1].get<int>();
    if (i < 0 || k < 0 || i >= n || k >= n || i == k)
      throw ConfigError("adjacency json: edge endpoints out of range");
    adj(i, k) = adj(k, i) = 1.0;
  }
  return adj;
}

json ensemble_to_json(const ObjectiveEnsemble& e) {
  json agents = json::array();
  bool linreg = true;
  for (int n = 0; n < e.n_agents(); ++n)
    linreg = linreg && dynamic_cast<const RegressionObjective*>(&e.local(n)) != nullptr;
  if (linreg) {
    double ridge = 0.0;
    for (int n = 0; n < e.n_agents(); ++n) {
      const auto* r = dynamic_cast<const RegressionObjective*>(&e.local(n));
      ridge = r->ridge();
      json rows = json::array();
      for (const auto& p : r->data()) {
        json row = json::array();
        for (double f : p.feature) row.push_back(f);
        row.push_back(p.target);
        rows.push_back(row);
      }
      agents.push_back(json{{"rows", rows}});
    }
    return json{{"kind", "linreg"}, {"ridge", ridge}, {"agents", agents}};
  }
  for (int n = 0; n < e.n_agents(); ++n) {
    const auto* q = dynamic_cast<const QuadraticObjective*>(&e.local(n));
    if (!q) throw ConfigError("ensemble json: only quadratic and linreg ensembles serialize");
    json lin = json::array();
    for (double v : q->linear()) lin.push_back(v);
    agents.push_back(json{{"curvature", mat_to_json(q->curvature())}, {"linear", lin}});
  }
  return json{{"kind", "quadratic"}, {"agents", agents}};
}

ObjectiveEnsemble ensemble_from_json(const json& j) {
  const std::string kind = str_field(j, "kind");
  const json& agents = field(j, "agents");
  if (!agents.is_array() || agents.empty())
    throw ConfigError("ensemble json: agents must be a nonempty array");

  if (kind == "quadratic") {
    std::vector<Mat> curvatures;
    std::vector<Vec> linears;
    for (const auto& a : agents) {
      const json& lin = field(a, "linear");
      Vec l;
      for (const auto& v : lin) l.push_back(v.get<double>());
      const json& c = field(a, "curvature");
      if (c.is_number()) {
        const int d = static_cast<int>(l.size());
        Mat cm(d, d, 0.0);
        for (int i = 0; i < d; ++i) cm(i, i) = c.get<double>();
        curvatures.push_back(std::move(cm));
      } else {
        curvatures.push_back(mat_from_json(c, "curvature"));
      }
      linears.push_back(std::move(l));
    }
    return make_quadratic(curvatures, linears);
  }
  if (kind == "linreg") {
    const double ridge = num_or(j, "ridge", 0.0);
    std::vector<std::vector<RegressionObjective::DataPoint>> data;
    for (const auto& a : agents) {
      std::vector<RegressionObjective::DataPoint> rows;
      for (const auto& row : field(a, "rows")) {
        if (!row.is_array() || row.size() < 2)
          throw ConfigError("ensemble json: each data row is [feature..., target]");
        RegressionObjective::DataPoint p;
        for (std::size_t i = 0; i + 1 < row.size(); ++i) p.feature.push_back(row[i].get<double>());
        p.target = row.back().get<double>();
        rows.push_back(std::move(p));
      }
      data.push_back(std::move(rows));
    }
    return make_linear_regression(data, ridge);
  }
  throw ConfigError("ensemble json: kind must be 'quadratic' or 'linreg'");
}

namespace {

Topology topology_spec_from_json(const json& j) {
  const std::string kind = str_field(j, "kind");
  if (kind == "weights") return topology_from_json(j);
  if (kind == "laplacian") return from_laplacian(adjacency_from_json(j), num_field(j, "epsilon"));
  const int n = static_cast<int>(num_field(j, "n"));
  const double eps = num_or(j, "epsilon", 0.0);
  if (kind == "complete") return build_toy(ToyKind::Complete, n, eps > 0.0 ? eps : 1.0);
  if (kind == "star") return build_toy(ToyKind::Star, n, eps);
  if (kind == "line") return build_toy(ToyKind::Line, n, eps);
  if (kind == "ring") return build_toy(ToyKind::Ring, n, eps);
  throw ConfigError("config: unknown topology kind '" + kind + "'");
}

Variant variant_from_string(const std::string& s) {
  if (s == "gd") return Variant::GD;
  if (s == "dgd") return Variant::DGD;
  if (s == "diffusion-atc") return Variant::DiffusionATC;
  if (s == "diffusion-cta") return Variant::DiffusionCTA;
  if (s == "federated") return Variant::Federated;
  throw ConfigError("config: unknown variant '" + s + "'");
}

const char* variant_to_string(Variant v) {
  switch (v) {
    case Variant::GD: return "gd";
    case Variant::DGD: return "dgd";
    case Variant::DiffusionATC: return "diffusion-atc";
    case Variant::DiffusionCTA: return "diffusion-cta";
    case Variant::Federated: return "federated";
  }
  return "?";
}

AlgorithmConfig algorithm_from_json(const json& j) {
  AlgorithmConfig cfg;
  cfg.variant = variant_from_string(str_field(j, "variant"));
  const json& st = field(j, "step");
  const std::string sk = str_field(st, "kind");
  if (sk == "constant") {
    cfg.step = StepSchedule::constant(num_field(st, "eta"));
  } else if (sk == "inverse-time") {
    cfg.step = StepSchedule::inverse_time(num_field(st, "eta0"), num_field(st, "tau"));
  } else {
    throw ConfigError("config: step kind must be 'constant' or 'inverse-time'");
  }
  cfg.local_updates = static_cast<int>(num_or(j, "local_updates", 1));
  cfg.consensus_gamma = num_or(j, "consensus_gamma", 1.0);
  if (auto it = j.find("consensus_rounds"); it != j.end()) {
    Vec alphas;
    for (const auto& v : *it) alphas.push_back(v.get<double>());
    cfg.consensus_rounds = std::move(alphas);
  }
  return cfg;
}

NoiseDistribution distribution_from_json(const json& j) {
  const std::string d = j.value("distribution", "gaussian");
  if (d == "gaussian") return NoiseDistribution::Gaussian;
  if (d == "two-point") return NoiseDistribution::TwoPoint;
  throw ConfigError("config: distribution must be 'gaussian' or 'two-point'");
}

NoiseConfig noise_from_json(const json& j, const std::optional<Topology>& topo) {
  if (j.is_null()) return NoiseConfig::none();
  const std::string kind = str_field(j, "kind");
  if (kind == "none") return NoiseConfig::none();
  if (kind == "gradient-sampling") {
    const std::string source = j.value("source", "synthetic");
    if (source == "ensemble") return NoiseConfig::ensemble_gradient();
    if (source != "synthetic") throw ConfigError("config: noise source must be 'synthetic' or 'ensemble'");
    return NoiseConfig::synthetic_gradient(num_field(j, "sigma"), num_field(j, "omega"),
                                           distribution_from_json(j));
  }
  if (kind == "communication") {
    return NoiseConfig::communication(num_field(j, "sigma"), num_field(j, "omega"),
                                      distribution_from_json(j));
  }
  if (kind == "link-failure") {
    if (!topo) throw ConfigError("config: link-failure noise needs a topology");
    const std::string mode_s = str_field(j, "mode");
    LinkFailureModel::Mode mode;
    if (mode_s == "known") {
      mode = LinkFailureModel::Mode::KnownProbs;
    } else if (mode_s == "unknown") {
      mode = LinkFailureModel::Mode::UnknownProbs;
    } else {
      throw ConfigError("config: link-failure mode must be 'known' or 'unknown'");
    }
    LinkFailureModel model;
    if (auto it = j.find("success_probs"); it != j.end()) {
      model.success_probs = mat_from_json(*it, "success_probs");
      model.mode = mode;
    } else {
      model = LinkFailureModel::uniform(*topo, num_field(j, "p"), mode);
    }
    return NoiseConfig::link_failure(std::move(model));
  }
  throw ConfigError("config: unknown noise kind '" + kind + "'");
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  if (j.value("schema", "") != kSchemaId)
    throw ConfigError(std::string("config: schema must be \"") + kSchemaId + "\"");

  ExperimentConfig cfg;
  {
    const json& s = field(j, "seed");
    if (!s.is_number_integer() || s.get<long long>() < 0)
      throw ConfigError("config: seed is mandatory and must be a nonnegative integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  cfg.n_iters = static_cast<long>(num_field(j, "n_iters"));
  if (cfg.n_iters < 0) throw ConfigError("config: n_iters must be nonnegative");
  cfg.mc_paths = static_cast<long>(num_or(j, "mc_paths", 1));
  if (cfg.mc_paths < 1) throw ConfigError("config: mc_paths must be >= 1");

  cfg.ensemble = ensemble_from_json(field(j, "ensemble"));
  cfg.algorithm = algorithm_from_json(field(j, "algorithm"));

  if (auto it = j.find("topology"); it != j.end() && !it->is_null())
    cfg.topology = topology_spec_from_json(*it);
  const bool needs_topology =
      cfg.algorithm.variant != Variant::GD && cfg.algorithm.variant != Variant::Federated;
  if (needs_topology && !cfg.topology)
    throw ConfigError("config: this variant needs a topology");
  if (cfg.topology && cfg.topology->n_agents() != cfg.ensemble->n_agents())
    throw ConfigError("config: topology and ensemble agent counts differ");

  cfg.noise = noise_from_json(j.contains("noise") ? j.at("noise") : json(), cfg.topology);

  const int n = cfg.ensemble->n_agents();
  const int d = cfg.ensemble->dim();
  cfg.x0 = Mat(n, d, 0.0);
  if (auto it = j.find("x0"); it != j.end() && !it->is_null()) {
    const std::string kind = str_field(*it, "kind");
    if (kind == "zeros") {
      // default
    } else if (kind == "matrix") {
      cfg.x0 = mat_from_json(field(*it, "values"), "x0 values");
      if (cfg.x0.rows() != n || cfg.x0.cols() != d)
        throw ConfigError("config: x0 shape must be n_agents x dim");
    } else if (kind == "gaussian") {
      const double s = num_or(*it, "scale", 1.0);
      Rng rng(cfg.seed ^ 0x5eedf00dULL);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) cfg.x0(i, k) = s * rng.normal();
    } else {
      throw ConfigError("config: x0 kind must be zeros|matrix|gaussian");
    }
  }

  if (auto it = j.find("output"); it != j.end() && !it->is_null()) {
    cfg.trace_csv = it->value("trace_csv", cfg.trace_csv);
    cfg.bounds_json = it->value("bounds_json", cfg.bounds_json);
    cfg.comparison_json = it->value("comparison_json", cfg.comparison_json);
    cfg.iterates_json = it->value("iterates_json", std::string());
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

namespace {

// Per-iteration aggregates over Monte Carlo paths, reduced in fixed block
// order so the result is independent of the thread count.
struct McAggregate {
  std::vector<double> rms_fixed;
  std::vector<double> rms_opt;
  std::vector<double> mean_consensus;
  long diverged_paths = 0;
};

McAggregate monte_carlo(const ExperimentConfig& cfg, const RunOptions& base_opts) {
  const long paths = cfg.mc_paths;
  const long t_len = cfg.n_iters + 1;
  const long block = 64;
  const long n_blocks = (paths + block - 1) / block;

  struct Partial {
    std::vector<double> sq_fixed, sq_opt, cons;
    long diverged = 0;
  };
  std::vector<Partial> partials(n_blocks);
  const Topology* topo = cfg.topology ? &*cfg.topology : nullptr;
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto work = [&](long b) {
    Partial& acc = partials[b];
    acc.sq_fixed.assign(t_len, 0.0);
    acc.sq_opt.assign(t_len, 0.0);
    acc.cons.assign(t_len, 0.0);
    const long lo = b * block;
    const long hi = std::min(paths, lo + block);
    for (long p = lo; p < hi; ++p) {
      RunOptions opts = base_opts;
      opts.record_iterates = false;
      const Trace tr = run(cfg.x0, cfg.n_iters, cfg.algorithm, topo, *cfg.ensemble, cfg.noise,
                           cfg.seed + static_cast<std::uint64_t>(p), opts);
      if (tr.diverged) {
        acc.diverged += 1;
        continue;
      }
      for (long t = 0; t < t_len; ++t) {
        acc.sq_fixed[t] += tr.dist_to_fixed[t] * tr.dist_to_fixed[t];
        acc.sq_opt[t] += tr.dist_to_opt[t] * tr.dist_to_opt[t];
        acc.cons[t] += tr.consensus_res[t];
      }
    }
  };

  // Exceptions cannot cross the parallel region; capture and rethrow.
  const auto guarded = [&](long b) {
    try {
      work(b);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
  for (long b = 0; b < n_blocks; ++b) guarded(b);
#else
  for (long b = 0; b < n_blocks; ++b) guarded(b);
#endif
  if (failure) std::rethrow_exception(failure);

  McAggregate agg;
  agg.rms_fixed.assign(t_len, 0.0);
  agg.rms_opt.assign(t_len, 0.0);
  agg.mean_consensus.assign(t_len, 0.0);
  long completed = 0;
  for (long b = 0; b < n_blocks; ++b) {
    agg.diverged_paths += partials[b].diverged;
    for (long t = 0; t < t_len; ++t) {
      agg.rms_fixed[t] += partials[b].sq_fixed[t];
      agg.rms_opt[t] += partials[b].sq_opt[t];
      agg.mean_consensus[t] += partials[b].cons[t];
    }
  }
  completed = paths - agg.diverged_paths;
  if (completed > 0) {
    for (long t = 0; t < t_len; ++t) {
      agg.rms_fixed[t] = std::sqrt(agg.rms_fixed[t] / completed);
      agg.rms_opt[t] = std::sqrt(agg.rms_opt[t] / completed);
      agg.mean_consensus[t] /= completed;
    }
  }
  return agg;
}

// Empirical (sigma, omega) envelope for an ensemble's own sampling noise:
// sigma from the RMS at the origin, omega from probe states of growing
// radius, with a modest safety margin. An estimate, not a certificate.
std::pair<double, double> estimate_noise_envelope(const ObjectiveEnsemble& ens,
                                                  const Mat& x_ref, std::uint64_t seed) {
  const int n = ens.n_agents();
  const int d = ens.dim();
  const int draws = 2000;
  Rng rng(seed ^ 0x0e571a7eULL);
  auto rms_at = [&](const Mat& x) {
    double acc = 0.0;
    for (int k = 0; k < draws; ++k) {
      const Mat noise = sample_stochastic_grad(ens, x, rng).second;
      acc += frob(noise) * frob(noise);
    }
    return std::sqrt(acc / draws);
  };
  const Mat zero(n, d, 0.0);
  const double sigma = rms_at(zero);
  double omega = 0.0;
  const double base = std::max(1.0, frob(x_ref));
  for (double radius : {1.0, 4.0, 16.0}) {
    for (int probe = 0; probe < 3; ++probe) {
      Mat x(n, d);
      double nrm = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          x(i, j) = rng.normal();
          nrm += x(i, j) * x(i, j);
        }
      nrm = std::sqrt(nrm);
      const double target = radius * base;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) *= target / nrm;
      const double r = rms_at(x);
      if (r > sigma) omega = std::max(omega, (r - sigma) / target);
    }
  }
  return {sigma * 1.05, omega * 1.25};
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  RunArtifacts art;
  const ObjectiveEnsemble& ens = *cfg.ensemble;
  const AlgorithmConfig& alg = cfg.algorithm;
  const Topology* topo = cfg.topology ? &*cfg.topology : nullptr;
  const double mu = ens.mu();
  const double l = ens.L();
  const int t_updates = alg.local_updates;
  const double eta = alg.step.eta0;  // inverse-time: the largest step
  const bool time_varying = alg.step.kind == StepSchedule::Kind::InverseTime;

  json notes = json::array();

  // Effective topology quantities. The contraction uses the post-rounds
  // spectrum plus the gamma map; gap bounds use the fully blended topology.
  double lam2_base = 0.0, lamN_base = 0.0;
  TopoQuantities q_eff{0.0, 0.0, 0.0};
  std::optional<Topology> t_eff;
  try {
    switch (alg.variant) {
      case Variant::GD:
        break;
      case Variant::Federated: {
        Topology complete = build_toy(ToyKind::Complete, ens.n_agents(), 1.0);
        lam2_base = complete.lambda2();
        lamN_base = complete.lambdaN();
        t_eff = alg.consensus_gamma < 1.0 ? scale_consensus(complete, alg.consensus_gamma)
                                          : complete;
        q_eff = topo_quantities(*t_eff);
        break;
      }
      default: {
        Topology base = *topo;
        if (cfg.noise.kind == NoiseKind::LinkFailure)
          base = Topology::from_weights(expected_q(*topo, *cfg.noise.link_model));
        if (alg.consensus_rounds) base = combine_rounds(base, *alg.consensus_rounds);
        lam2_base = base.lambda2();
        lamN_base = base.lambdaN();
        t_eff = alg.consensus_gamma < 1.0 ? scale_consensus(base, alg.consensus_gamma) : base;
        q_eff = topo_quantities(*t_eff);
        break;
      }
    }
  } catch (const Error& e) {
    art.exit_code = kExitUsage;
    art.message = e.what();
    return art;
  }

  ContractionSpec spec;
  GapBound gapb;
  OptimumReport opt;
  double grad_norm = 0.0;
  try {
    spec = contraction_factor(alg.variant, eta, mu, l, lam2_base, lamN_base, t_updates,
                              alg.consensus_gamma);
    if (!spec.valid) {
      std::ostringstream os;
      os << "regime error: eta = " << eta << " is not admissible (threshold " << spec.eta_max
         << ", lambdaN = " << lamN_base << ")";
      art.exit_code = kExitRegime;
      art.message = os.str();
      art.bound_report = json{{"valid", false},
                              {"eta", eta},
                              {"eta_max", spec.eta_max},
                              {"lambdaN", lamN_base},
                              {"message", art.message}};
      std::ofstream(fs::path(out_dir) / cfg.bounds_json) << art.bound_report.dump(2) << "\n";
      return art;
    }
    opt = solve_optimum(ens);
    grad_norm = frob(opt.grad_at_opt);
    gapb = fixed_point_gap_bound(alg.variant, eta, t_updates, mu, l, q_eff, grad_norm);
  } catch (const StepSizeError& e) {
    art.exit_code = kExitRegime;
    art.message = e.what();
    return art;
  }
  if (alg.variant == Variant::DiffusionCTA)
    notes.push_back("gap bound applies to the post-consensus state of the CTA iterate");

  // Fixed point of the noise-free mean dynamics (constant schedules only).
  bool have_fp = false;
  Mat x_hat;
  double gap_meas = 0.0, dist0 = 0.0, m_const = 0.0;
  if (!time_varying) {
    try {
      if (cfg.noise.kind == NoiseKind::LinkFailure) {
        const Topology mean_topo = Topology::from_weights(expected_q(*topo, *cfg.noise.link_model));
        x_hat = fixed_point(alg, &mean_topo, ens, 1e-13).x_hat;
      } else {
        x_hat = fixed_point(alg, topo, ens, 1e-13).x_hat;
      }
      have_fp = true;
    } catch (const StepSizeError& e) {
      art.exit_code = kExitRegime;
      art.message = e.what();
      return art;
    }
  }
  Mat x_star_mat(ens.n_agents(), ens.dim());
  for (int i = 0; i < ens.n_agents(); ++i)
    for (int j = 0; j < ens.dim(); ++j) x_star_mat(i, j) = opt.x_star[j];
  if (have_fp) {
    gap_meas = frob_dist(x_hat, x_star_mat);
    dist0 = frob_dist(cfg.x0, x_hat);
    m_const = frob(x_hat);
    if (t_updates > 1) {
      // Exact M: the fixed point pushed through the local sub-maps.
      Mat y = x_hat;
      for (int i = 0; i < t_updates - 1; ++i) {
        const Mat g = grad_stack(ens, y);
        y = sub(y, scale(eta, g));
        m_const = std::max(m_const, frob(y));
      }
    }
  }

  // Envelope selection.
  std::optional<ErrorEnvelope> env;
  std::optional<TimeVaryingEnvelope> tv_env;
  double sigma_used = 0.0, omega_used = 0.0;
  bool noise_estimated = false;
  try {
    if (time_varying) {
      if (cfg.noise.kind != NoiseKind::None) {
        notes.push_back("no envelope: time-varying steps with noise are not covered");
      } else {
        const double lambda_factor =
            alg.variant == Variant::GD
                ? 0.0
                : topology_factor(*t_eff, alg.variant == Variant::DGD ? FactorKind::DGD
                                                                      : FactorKind::Diffusion);
        tv_env.emplace(alg.variant, alg.step.eta0, alg.step.tau, mu, l, lambda_factor,
                       q_eff.lambdaN, grad_norm, frob_dist(cfg.x0, x_star_mat));
      }
    } else {
      EnvelopeParams p;
      p.contraction = spec.factor;
      p.maps_per_iteration = t_updates;
      p.dist0_to_fixed = dist0;
      p.gap = gap_meas;
      p.eta = eta;
      p.mu = mu;
      p.noise_m = m_const;
      p.gamma = alg.consensus_gamma;
      switch (cfg.noise.kind) {
        case NoiseKind::None:
          env = total_error_envelope(EnvelopeKind::NoiseFree, p);
          break;
        case NoiseKind::GradientSampling: {
          if (cfg.noise.use_ensemble_sampler) {
            auto est = estimate_noise_envelope(ens, x_hat, cfg.seed);
            sigma_used = est.first;
            omega_used = est.second;
            noise_estimated = true;
          } else {
            sigma_used = cfg.noise.sigma;
            omega_used = cfg.noise.omega;
          }
          p.sigma = sigma_used;
          p.omega = omega_used;
          env = total_error_envelope(
              t_updates > 1 ? EnvelopeKind::MultiTGradientNoise : EnvelopeKind::GradientNoise, p);
          break;
        }
        case NoiseKind::Communication:
          sigma_used = cfg.noise.sigma;
          omega_used = cfg.noise.omega;
          p.sigma = sigma_used;
          p.omega = omega_used;
          env = total_error_envelope(EnvelopeKind::CommNoise, p);
          break;
        case NoiseKind::LinkFailure: {
          // Effective mixing noise (Q - E[Q]) x with certified variance
          // bound: sigma = 0, omega^2 = tighter_sum.
          const LinkNoiseBound lb = link_noise_variance_bound(*topo, *cfg.noise.link_model);
          sigma_used = 0.0;
          omega_used = std::sqrt(lb.tighter_sum);
          p.sigma = sigma_used;
          p.omega = omega_used;
          env = total_error_envelope(EnvelopeKind::CommNoise, p);
          break;
        }
      }
    }
  } catch (const StepSizeError& e) {
    art.exit_code = kExitRegime;
    art.message = e.what();
    return art;
  }

  // Monte Carlo.
  RunOptions opts;
  opts.exec = Exec::Parallel;
  opts.compute_fixed_point = have_fp;
  if (have_fp) opts.fixed_point_hint = x_hat;
  opts.x_star_hint = opt.x_star;
  const McAggregate agg = monte_carlo(cfg, opts);

  // Comparison.
  const bool noisy = cfg.noise.kind != NoiseKind::None;
  const double slack = noisy ? 3.0 / std::sqrt(static_cast<double>(cfg.mc_paths)) : 1e-9;
  bool dominance_ok = agg.diverged_paths == 0;
  std::string violation;
  if (agg.diverged_paths > 0) violation = "divergence guard tripped";
  double tightness = 0.0;
  long worst_t = -1;

  std::vector<double> env_fixed(cfg.n_iters + 1,
                                std::numeric_limits<double>::quiet_NaN());
  std::vector<double> env_total(cfg.n_iters + 1,
                                std::numeric_limits<double>::quiet_NaN());
  for (long t = 0; t <= cfg.n_iters; ++t) {
    if (env) {
      env_fixed[t] = env->fixed_at(t);
      env_total[t] = env->at(t);
    } else if (tv_env) {
      env_total[t] = tv_env->at(t);
    }
  }
  // Deep geometric tails sink below the fixed-point solver accuracy; the
  // empirical metric floors there, so dominance carries an absolute floor.
  const double metric_floor = 1e-11 * std::max(1.0, dist0);
  if (dominance_ok && (env || tv_env)) {
    for (long t = 0; t <= cfg.n_iters; ++t) {
      double emp, bound;
      if (env && have_fp) {
        emp = agg.rms_fixed[t];
        bound = env_fixed[t];
      } else {
        emp = agg.rms_opt[t];
        bound = env_total[t];
      }
      if (bound > metric_floor) {
        const double ratio = emp / bound;
        if (ratio > tightness) {
          tightness = ratio;
          worst_t = t;
        }
        if (emp > bound * (1.0 + slack) + metric_floor) {
          dominance_ok = false;
          std::ostringstream os;
          os << "dominance violated at t = " << t << ": empirical " << emp << " > envelope "
             << bound;
          violation = os.str();
          break;
        }
      } else if (emp > 1e-9) {
        dominance_ok = false;
        violation = "dominance violated: zero envelope with nonzero empirical error";
        break;
      }
    }
  }
  // Fixed-point gap dominance (constant schedule; CTA tracks a shifted state).
  bool gap_checked = false;
  bool gap_ok = true;
  if (have_fp && alg.variant != Variant::DiffusionCTA && alg.variant != Variant::GD) {
    gap_checked = true;
    const double allowance = t_updates > 1
                                 ? gapb.value * (1.0 + 1e-9) + gapb.documented_slack
                                 : gapb.value * (1.0 + 1e-9) + metric_floor;
    gap_ok = gap_meas <= allowance;
    if (!gap_ok) {
      dominance_ok = false;
      std::ostringstream os;
      os << "fixed-point gap " << gap_meas << " exceeds bound " << allowance;
      violation = violation.empty() ? os.str() : violation + "; " + os.str();
    }
  }

  // ---- artifacts ----
  json bounds;
  bounds["schema"] = kSchemaId;
  bounds["variant"] = variant_to_string(alg.variant);
  bounds["eta"] = eta;
  bounds["c"] = spec.factor;
  bounds["regime"] = spec.regime == StepRegime::LowerStep ? "lower" : "upper";
  bounds["eta_max"] = spec.eta_max;
  bounds["eta_lower_max"] = spec.eta_lower_max;
  bounds["valid"] = spec.valid;
  bounds["local_updates"] = t_updates;
  bounds["outer_factor"] = spec.outer_factor();
  if (alg.variant != Variant::GD) {
    bounds["Lambda"] =
        alg.variant == Variant::DGD
            ? (q_eff.lambda2 < 1.0 ? 1.0 / (1.0 - q_eff.lambda2) : 0.0)
            : 2.0 * q_eff.pinv_w_norm;
    bounds["lambda2"] = q_eff.lambda2;
    bounds["lambdaN"] = q_eff.lambdaN;
  }
  bounds["grad_norm_at_opt"] = grad_norm;
  bounds["gap"] = gapb.value;
  bounds["gap_second_order_flag"] = gapb.second_order_flag;
  if (t_updates > 1) {
    bounds["gap_documented_slack"] = gapb.documented_slack;
    bounds["noise_m_estimate"] = norm2(opt.x_star) * (1.0 + eta * t_updates * l);
  }
  if (env) {
    bounds["dhat"] = env->dhat;
    bounds["rate"] = env->rate;
    if (noisy) {
      bounds["sigma"] = sigma_used;
      bounds["omega"] = omega_used;
      bounds["noise_estimated"] = noise_estimated;
      bounds["noise_m"] = m_const;
    }
  }
  if (tv_env) bounds["decay_class"] = tv_env->decay_class();
  if (have_fp) {
    bounds["gap_measured"] = gap_meas;
    bounds["dist0_to_fixed"] = dist0;
  }
  bounds["notes"] = notes;
  art.bound_report = bounds;

  json cmp;
  cmp["schema"] = kSchemaId;
  cmp["verdict"] = dominance_ok ? "pass" : "fail";
  cmp["slack"] = slack;
  cmp["mc_paths"] = cfg.mc_paths;
  cmp["diverged_paths"] = agg.diverged_paths;
  cmp["tightness_ratio"] = tightness;
  cmp["tightness_t"] = worst_t;
  cmp["gap_checked"] = gap_checked;
  cmp["gap_ok"] = gap_ok;
  cmp["envelope"] = env ? "constant-step" : (tv_env ? "time-varying" : "none");
  if (!violation.empty()) cmp["violation"] = violation;
  art.comparison = cmp;

  // trace CSV
  {
    std::ofstream out(fs::path(out_dir) / cfg.trace_csv);
    out << "t,dist_to_fixed,dist_to_opt,consensus_residual,envelope_fixed,envelope_total\n";
    for (long t = 0; t <= cfg.n_iters; ++t) {
      out << t << ',' << fmt17(agg.rms_fixed[t]) << ',' << fmt17(agg.rms_opt[t]) << ','
          << fmt17(agg.mean_consensus[t]) << ',' << fmt17(env_fixed[t]) << ','
          << fmt17(env_total[t]) << "\n";
    }
  }
  std::ofstream(fs::path(out_dir) / cfg.bounds_json) << art.bound_report.dump(2) << "\n";
  std::ofstream(fs::path(out_dir) / cfg.comparison_json) << art.comparison.dump(2) << "\n";
  if (!cfg.iterates_json.empty()) {
    RunOptions dump_opts = opts;
    dump_opts.record_iterates = true;
    const Trace tr = run(cfg.x0, cfg.n_iters, alg, topo, ens, cfg.noise, cfg.seed, dump_opts);
    json dump;
    dump["schema"] = kSchemaId;
    dump["seed"] = cfg.seed;
    json its = json::array();
    for (const auto& x : tr.iterates) its.push_back(mat_to_json(x));
    dump["iterates"] = its;
    std::ofstream(fs::path(out_dir) / cfg.iterates_json) << dump.dump() << "\n";
  }

  art.exit_code = dominance_ok ? kExitPass : kExitDominance;
  art.message = dominance_ok ? "pass" : violation;
  return art;
}

int run_sweep(const json& config, const std::string& out_dir, std::ostream& log) {
  namespace fs = std::filesystem;
  if (!config.is_object() || config.value("schema", "") != kSchemaId)
    throw ConfigError("sweep config: schema must be \"degrad/1\"");
  const json sweep = config.value("sweep", json::object());

  auto list_or_default = [&](const char* key, const json& fallback) {
    if (auto it = sweep.find(key); it != sweep.end()) {
      if (!it->is_array()) throw ConfigError(std::string("sweep: '") + key + "' must be an array");
      return *it;
    }
    return fallback;
  };

  json base = config;
  base.erase("sweep");

  const json variants = list_or_default(
      "variant", json::array({base.at("algorithm").at("variant")}));
  const json topologies =
      list_or_default("topology", base.contains("topology") ? json::array({base.at("topology")})
                                                            : json::array({json()}));
  const json etas = list_or_default("eta", json::array({base.at("algorithm").at("step").value(
                                               "eta", base.at("algorithm").at("step").value(
                                                          "eta0", 0.0))}));
  const json gammas = list_or_default(
      "gamma", json::array({base.at("algorithm").value("consensus_gamma", 1.0)}));
  const json t_lists = list_or_default(
      "local_updates", json::array({base.at("algorithm").value("local_updates", 1)}));

  const double cells_d = static_cast<double>(variants.size()) * topologies.size() * etas.size() *
                         gammas.size() * t_lists.size();
  if (cells_d > 1e6) throw ConfigError("sweep: grid exceeds 1e6 cells");

  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "summary.csv");
  out << "variant,topology,n,eta,gamma,local_updates,contraction,regime,valid,gap_bound,"
         "empirical_gap,empirical_asymptotic_error,verdict\n";

  long done = 0;
  for (const auto& variant : variants)
    for (const auto& topo_spec : topologies)
      for (const auto& eta_v : etas)
        for (const auto& gamma_v : gammas)
          for (const auto& t_v : t_lists) {
            json cell = base;
            cell["algorithm"]["variant"] = variant;
            cell["algorithm"]["step"] = json{{"kind", "constant"}, {"eta", eta_v}};
            cell["algorithm"]["consensus_gamma"] = gamma_v;
            cell["algorithm"]["local_updates"] = t_v;
            if (!topo_spec.is_null()) cell["topology"] = topo_spec;

            const ExperimentConfig ec = parse_config(cell);
            const std::string topo_kind =
                topo_spec.is_null() ? "none" : topo_spec.value("kind", "weights");
            const int n = ec.ensemble->n_agents();

            double lam2 = 0.0, lamN = 0.0;
            TopoQuantities q{0.0, 0.0, 0.0};
            if (ec.algorithm.variant == Variant::Federated) {
              const Topology complete = build_toy(ToyKind::Complete, n, 1.0);
              lam2 = complete.lambda2();
              lamN = complete.lambdaN();
              q = topo_quantities(ec.algorithm.consensus_gamma < 1.0
                                      ? scale_consensus(complete, ec.algorithm.consensus_gamma)
                                      : complete);
            } else if (ec.topology) {
              Topology base = ec.algorithm.consensus_rounds
                                  ? combine_rounds(*ec.topology, *ec.algorithm.consensus_rounds)
                                  : *ec.topology;
              lam2 = base.lambda2();
              lamN = base.lambdaN();
              q = topo_quantities(ec.algorithm.consensus_gamma < 1.0
                                      ? scale_consensus(base, ec.algorithm.consensus_gamma)
                                      : base);
            }
            const ContractionSpec spec =
                contraction_factor(ec.algorithm.variant, ec.algorithm.step.eta0, ec.ensemble->mu(),
                                   ec.ensemble->L(), lam2, lamN, ec.algorithm.local_updates,
                                   ec.algorithm.consensus_gamma);

            out << variant.get<std::string>() << ',' << topo_kind << ',' << n << ','
                << fmt17(ec.algorithm.step.eta0) << ',' << fmt17(ec.algorithm.consensus_gamma)
                << ',' << ec.algorithm.local_updates << ',' << fmt17(spec.factor) << ','
                << (spec.regime == StepRegime::LowerStep ? "lower" : "upper") << ','
                << (spec.valid ? "true" : "false") << ',';
            if (!spec.valid) {
              out << "nan,nan,nan,regime-invalid\n";
              ++done;
              continue;
            }

            const OptimumReport opt = solve_optimum(*ec.ensemble);
            double gap_bound = std::numeric_limits<double>::quiet_NaN();
            try {
              gap_bound = fixed_point_gap_bound(ec.algorithm.variant, ec.algorithm.step.eta0,
                                                ec.algorithm.local_updates, ec.ensemble->mu(),
                                                ec.ensemble->L(), q, frob(opt.grad_at_opt))
                              .value;
            } catch (const StepSizeError&) {
              out << "nan,nan,nan,regime-invalid\n";
              ++done;
              continue;
            }

            // Short verification run in-process.
            double emp_gap = std::numeric_limits<double>::quiet_NaN();
            std::string verdict = "pass";
            try {
              const Topology* tp = ec.topology ? &*ec.topology : nullptr;
              const FixedPoint fp = fixed_point(ec.algorithm, tp, *ec.ensemble, 1e-13);
              Mat x_star_mat(n, ec.ensemble->dim());
              for (int i = 0; i < n; ++i)
                for (int j = 0; j < ec.ensemble->dim(); ++j) x_star_mat(i, j) = opt.x_star[j];
              emp_gap = frob_dist(fp.x_hat, x_star_mat);
              RunOptions ro;
              ro.record_iterates = false;
              ro.fixed_point_hint = fp.x_hat;
              ro.x_star_hint = opt.x_star;
              const Trace tr = run(ec.x0, ec.n_iters, ec.algorithm, tp, *ec.ensemble, ec.noise,
                                   ec.seed, ro);
              const long t_len = static_cast<long>(tr.dist_to_opt.size());
              const long tail = std::max<long>(1, t_len / 10);
              double acc = 0.0;
              for (long t = t_len - tail; t < t_len; ++t)
                acc += tr.dist_to_opt[t] * tr.dist_to_opt[t];
              const double asym = std::sqrt(acc / tail);
              if (tr.diverged) verdict = "diverged";
              const double allowance =
                  ec.algorithm.local_updates > 1
                      ? gap_bound * (1.0 + 1e-9) +
                            10.0 * std::pow(ec.algorithm.step.eta0 * ec.algorithm.local_updates *
                                                ec.ensemble->L(),
                                            2.0) *
                                frob(opt.grad_at_opt) / ec.ensemble->mu()
                      : gap_bound * (1.0 + 1e-9) + 1e-12;
              if (ec.algorithm.variant != Variant::DiffusionCTA && emp_gap > allowance)
                verdict = "gap-violated";
              out << fmt17(gap_bound) << ',' << fmt17(emp_gap) << ',' << fmt17(asym) << ','
                  << verdict << "\n";
            } catch (const StepSizeError&) {
              out << fmt17(gap_bound) << ",nan,nan,regime-invalid\n";
            }
            ++done;
          }
  log << "sweep: wrote " << done << " cells to " << (fs::path(out_dir) / "summary.csv").string()
      << "\n";
  return kExitPass;
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const StepSizeError&) {
    return kExitRegime;
  } catch (const Error&) {
    return kExitUsage;
  } catch (const std::exception&) {
    return kExitUsage;
  }
}

}  // namespace degrad
