#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "degrad/linalg.hpp"
#include "degrad/objectives.hpp"
#include "degrad/rng.hpp"
#include "degrad/topology.hpp"

namespace degrad {

enum class Variant { GD, DGD, DiffusionATC, DiffusionCTA, Federated };

// Step-size schedule. The inverse-time schedule eta_t = eta0 / (t/tau + 1)
// is only supported with a single local update per iteration.
struct StepSchedule {
  enum class Kind { Constant, InverseTime };

  Kind kind = Kind::Constant;
  double eta0 = 0.0;
  double tau = 1.0;

  static StepSchedule constant(double eta);
  static StepSchedule inverse_time(double eta0, double tau);

  double at(long t) const {
    return kind == Kind::Constant ? eta0 : eta0 / (static_cast<double>(t) / tau + 1.0);
  }
};

struct AlgorithmConfig {
  Variant variant = Variant::DGD;
  StepSchedule step;
  int local_updates = 1;        // T
  double consensus_gamma = 1.0; // blends W' = (1-gamma) I + gamma W
  std::optional<Vec> consensus_rounds;  // alpha weights over W^k
};

enum class NoiseKind { None, GradientSampling, Communication, LinkFailure };
enum class NoiseDistribution { Gaussian, TwoPoint };

// Noise attached to a run. Gradient-sampling noise can come from the
// ensemble's own subsampling or from a synthetic source with conditional
// second moment exactly (sigma + omega ||x||)^2; communication noise enters
// once per outer iteration after the consensus application, scaled by gamma.
struct NoiseConfig {
  NoiseKind kind = NoiseKind::None;
  bool use_ensemble_sampler = false;
  double sigma = 0.0;
  double omega = 0.0;
  NoiseDistribution distribution = NoiseDistribution::Gaussian;
  std::optional<LinkFailureModel> link_model;

  static NoiseConfig none() { return NoiseConfig{}; }
  static NoiseConfig synthetic_gradient(double sigma, double omega,
                                        NoiseDistribution dist = NoiseDistribution::Gaussian);
  static NoiseConfig ensemble_gradient();
  static NoiseConfig communication(double sigma, double omega,
                                   NoiseDistribution dist = NoiseDistribution::Gaussian);
  static NoiseConfig link_failure(LinkFailureModel model);
};

// Entry magnitudes beyond this guard halt a run with the divergence flag.
inline constexpr double kOverflowGuard = 1e150;

struct Trace {
  std::vector<Mat> iterates;  // populated when record_iterates is set
  std::vector<double> dist_to_fixed;
  std::vector<double> dist_to_opt;
  std::vector<double> consensus_res;
  std::uint64_t seed = 0;
  AlgorithmConfig config;
  bool diverged = false;
  long diverged_at = -1;
};

struct RunOptions {
  bool record_iterates = true;
  bool compute_fixed_point = true;  // metrics fall back to NaN when impossible
  Exec exec = Exec::Serial;
  double fixed_point_tol = 1e-12;
  // Precomputed references let Monte Carlo callers skip the per-path
  // fixed-point iteration and optimum solve.
  std::optional<Mat> fixed_point_hint;
  std::optional<Vec> x_star_hint;
};

// Precompiled update operator for one (algorithm, topology, ensemble, noise)
// combination. All public free functions delegate here.
class Engine {
 public:
  Engine(const AlgorithmConfig& cfg, const Topology* topo, const ObjectiveEnsemble& ens,
         const NoiseConfig& noise, Exec exec = Exec::Serial);

  // One outer iteration: T-1 local gradient updates then the variant step.
  Mat step(const Mat& x, long t, Rng& rng) const;

  const Mat& effective_w() const { return w_eff_; }
  const AlgorithmConfig& config() const { return cfg_; }
  int n_agents() const { return n_; }
  int dim() const { return d_; }

 private:
  Mat consensus_apply(const Mat& x) const;
  Mat gradient_with_noise(const Mat& x, Rng& rng) const;
  Mat draw_scaled_noise(double scale_norm, Rng& rng) const;

  AlgorithmConfig cfg_;
  const Topology* base_topo_ = nullptr;
  const ObjectiveEnsemble* ens_ = nullptr;
  NoiseConfig noise_;
  Exec exec_ = Exec::Serial;
  Mat w_eff_;
  int n_ = 0;
  int d_ = 0;
};

// One outer iteration of the configured algorithm.
Mat step(const Mat& x, long t, const AlgorithmConfig& cfg, const Topology* topo,
         const ObjectiveEnsemble& ens, const NoiseConfig& noise, Rng& rng,
         Exec exec = Exec::Serial);

// Runs n_iters outer iterations from X0 and collects per-iteration metrics
// (entry 0 describes X0). Deterministic given the seed carried by rng_seed.
Trace run(const Mat& x0, long n_iters, const AlgorithmConfig& cfg, const Topology* topo,
          const ObjectiveEnsemble& ens, const NoiseConfig& noise, std::uint64_t rng_seed,
          const RunOptions& opts = RunOptions{});

struct FixedPoint {
  Mat x_hat;
  double residual;  // || phi(x_hat) - x_hat ||_F
};

// Fixed point of the noise-free update map, obtained by iterating from zero.
// Requires a constant step schedule inside the contraction regime.
FixedPoint fixed_point(const AlgorithmConfig& cfg, const Topology* topo,
                       const ObjectiveEnsemble& ens, double tol = 1e-12,
                       Exec exec = Exec::Serial);

// Scalar recursion x <- x/2 + eps with two-point noise of conditional second
// moment (1 + omega |x|)^2. At omega = sqrt(3)/2 the contraction-plus-noise
// condition holds with equality and the mean-square error grows without
// bound; smaller omega keeps it bounded. Returns Monte Carlo estimates of
// E[x_t^2] for t = 0..n_iters.
std::vector<double> nc3t_counterexample(long n_iters, long n_paths = 100000,
                                        double omega = 0.8660254037844386,
                                        std::uint64_t seed = 1);

}  // namespace degrad
