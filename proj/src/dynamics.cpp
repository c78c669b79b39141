#include "degrad/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "degrad/errors.hpp"

namespace degrad {

StepSchedule StepSchedule::constant(double eta) {
  if (!(eta > 0.0)) throw DomainError("step schedule: eta must be positive");
  StepSchedule s;
  s.kind = Kind::Constant;
  s.eta0 = eta;
  return s;
}

StepSchedule StepSchedule::inverse_time(double eta0, double tau) {
  if (!(eta0 > 0.0) || !(tau > 0.0))
    throw DomainError("step schedule: eta0 and tau must be positive");
  StepSchedule s;
  s.kind = Kind::InverseTime;
  s.eta0 = eta0;
  s.tau = tau;
  return s;
}

NoiseConfig NoiseConfig::synthetic_gradient(double sigma, double omega, NoiseDistribution dist) {
  if (sigma < 0.0 || omega < 0.0) throw DomainError("noise: sigma and omega must be nonnegative");
  NoiseConfig n;
  n.kind = NoiseKind::GradientSampling;
  n.sigma = sigma;
  n.omega = omega;
  n.distribution = dist;
  return n;
}

NoiseConfig NoiseConfig::ensemble_gradient() {
  NoiseConfig n;
  n.kind = NoiseKind::GradientSampling;
  n.use_ensemble_sampler = true;
  return n;
}

NoiseConfig NoiseConfig::communication(double sigma, double omega, NoiseDistribution dist) {
  if (sigma < 0.0 || omega < 0.0) throw DomainError("noise: sigma and omega must be nonnegative");
  NoiseConfig n;
  n.kind = NoiseKind::Communication;
  n.sigma = sigma;
  n.omega = omega;
  n.distribution = dist;
  return n;
}

NoiseConfig NoiseConfig::link_failure(LinkFailureModel model) {
  NoiseConfig n;
  n.kind = NoiseKind::LinkFailure;
  n.link_model = std::move(model);
  return n;
}

Engine::Engine(const AlgorithmConfig& cfg, const Topology* topo, const ObjectiveEnsemble& ens,
               const NoiseConfig& noise, Exec exec)
    : cfg_(cfg), base_topo_(topo), ens_(&ens), noise_(noise), exec_(exec) {
  n_ = ens.n_agents();
  d_ = ens.dim();
  if (cfg_.local_updates < 1) throw DomainError("algorithm: local_updates must be >= 1");
  if (!(cfg_.consensus_gamma > 0.0) || cfg_.consensus_gamma > 1.0)
    throw DomainError("algorithm: consensus_gamma must lie in (0, 1]");
  if (cfg_.step.kind == StepSchedule::Kind::InverseTime && cfg_.local_updates > 1)
    throw DomainError("algorithm: time-varying step sizes support a single local update only");
  if (!(cfg_.step.eta0 > 0.0)) throw DomainError("algorithm: step size must be positive");

  if (noise_.kind == NoiseKind::LinkFailure) {
    if (cfg_.variant != Variant::DGD)
      throw DomainError("link failure runs support the DGD variant only");
    if (cfg_.consensus_rounds)
      throw DomainError("link failure runs do not combine with multiple consensus rounds");
    if (!topo) throw DomainError("link failure runs need a base topology");
    if (!noise_.link_model) throw DomainError("link failure noise needs a model");
    check_link_model(*topo, *noise_.link_model);
    // Same admissibility rule as the sampler: nonnegative weights with
    // lambda2 < 1 and lambdaN > -1 (self-weights defeat support bipartiteness).
    const ValidityReport rep = validate(*topo);
    if (!rep.is_nonnegative || !rep.satisfies_eig_condition)
      throw DomainError(
          "link failure: base topology must be nonnegative and satisfy the eigenvalue "
          "condition");
  }

  if (cfg_.variant == Variant::Federated && n_ < 2)
    throw DomainError("federated runs need at least two agents");

  switch (cfg_.variant) {
    case Variant::GD:
      w_eff_ = Mat::identity(n_);
      break;
    case Variant::Federated: {
      Topology complete = build_toy(ToyKind::Complete, n_, 1.0);
      Topology eff = complete;
      if (cfg_.consensus_rounds) eff = combine_rounds(eff, *cfg_.consensus_rounds);
      if (cfg_.consensus_gamma < 1.0) eff = scale_consensus(eff, cfg_.consensus_gamma);
      w_eff_ = eff.weights();
      break;
    }
    default: {
      if (!topo) throw DomainError("algorithm: this variant needs a topology");
      if (topo->n_agents() != n_)
        throw DomainError("algorithm: topology and ensemble disagree on the agent count");
      if (noise_.kind == NoiseKind::LinkFailure) {
        w_eff_ = topo->weights();  // gamma blending happens around the sampled Q
      } else {
        Topology eff = *topo;
        if (cfg_.consensus_rounds) eff = combine_rounds(eff, *cfg_.consensus_rounds);
        if (cfg_.consensus_gamma < 1.0) eff = scale_consensus(eff, cfg_.consensus_gamma);
        w_eff_ = eff.weights();
      }
      break;
    }
  }
}

Mat Engine::consensus_apply(const Mat& x) const { return matmul(w_eff_, x, exec_); }

Mat Engine::draw_scaled_noise(double scale_norm, Rng& rng) const {
  // Conditional second moment equals scale_norm^2 exactly: entries are
  // scale/sqrt(m) times either standard normals or independent signs.
  Mat eps(n_, d_);
  const double per = scale_norm / std::sqrt(static_cast<double>(n_) * d_);
  if (noise_.distribution == NoiseDistribution::Gaussian) {
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < d_; ++j) eps(i, j) = per * rng.normal();
  } else {
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < d_; ++j) eps(i, j) = per * rng.sign();
  }
  return eps;
}

Mat Engine::gradient_with_noise(const Mat& x, Rng& rng) const {
  if (noise_.kind != NoiseKind::GradientSampling) return grad_stack(*ens_, x, exec_);
  if (noise_.use_ensemble_sampler) return sample_stochastic_grad(*ens_, x, rng).first;
  Mat g = grad_stack(*ens_, x, exec_);
  const Mat eps = draw_scaled_noise(noise_.sigma + noise_.omega * frob(x), rng);
  return add(g, eps);
}

Mat Engine::step(const Mat& x, long t, Rng& rng) const {
  if (x.rows() != n_ || x.cols() != d_) throw DomainError("step: iterate shape mismatch");
  const double eta = cfg_.step.at(t);
  Mat y = x;
  for (int i = 0; i < cfg_.local_updates - 1; ++i) {
    const Mat g = gradient_with_noise(y, rng);
    y = sub(y, scale(eta, g));
  }

  Mat result;
  switch (cfg_.variant) {
    case Variant::GD: {
      const Mat g = gradient_with_noise(y, rng);
      result = sub(y, scale(eta, g));
      break;
    }
    case Variant::DGD: {
      if (noise_.kind == NoiseKind::LinkFailure) {
        const double gamma = cfg_.consensus_gamma;
        const Mat q = sample_link_failure(*base_topo_, *noise_.link_model, rng);
        const Mat g = gradient_with_noise(y, rng);
        const Mat qy = matmul(q, y, exec_);
        result = Mat(n_, d_);
        for (int i = 0; i < n_; ++i)
          for (int j = 0; j < d_; ++j)
            result(i, j) = (1.0 - gamma) * y(i, j) + gamma * qy(i, j) - eta * g(i, j);
      } else {
        const Mat g = gradient_with_noise(y, rng);
        result = sub(consensus_apply(y), scale(eta, g));
      }
      break;
    }
    case Variant::DiffusionATC:
    case Variant::Federated: {
      const Mat g = gradient_with_noise(y, rng);
      result = consensus_apply(sub(y, scale(eta, g)));
      break;
    }
    case Variant::DiffusionCTA: {
      const Mat wy = consensus_apply(y);
      const Mat g = gradient_with_noise(wy, rng);
      result = sub(wy, scale(eta, g));
      break;
    }
  }

  if (noise_.kind == NoiseKind::Communication) {
    const double gamma = cfg_.consensus_gamma;
    const Mat eps = draw_scaled_noise(noise_.sigma + noise_.omega * frob(y), rng);
    result = add(result, scale(gamma, eps));
  }
  return result;
}

Mat step(const Mat& x, long t, const AlgorithmConfig& cfg, const Topology* topo,
         const ObjectiveEnsemble& ens, const NoiseConfig& noise, Rng& rng, Exec exec) {
  return Engine(cfg, topo, ens, noise, exec).step(x, t, rng);
}

namespace {

// Largest admissible constant step for the noise-free map: below it the
// update is a contraction with some factor < 1.
double eta_upper_threshold(Variant variant, double lambda_n_eff, double l) {
  switch (variant) {
    case Variant::GD:
    case Variant::DiffusionATC:
    case Variant::DiffusionCTA:
    case Variant::Federated:
      return 2.0 / l;
    case Variant::DGD:
      return (1.0 + lambda_n_eff) / l;
  }
  return 0.0;
}

}  // namespace

FixedPoint fixed_point(const AlgorithmConfig& cfg, const Topology* topo,
                       const ObjectiveEnsemble& ens, double tol, Exec exec) {
  if (cfg.step.kind != StepSchedule::Kind::Constant)
    throw StepSizeError("fixed_point: requires a constant step schedule");
  Engine engine(cfg, topo, ens, NoiseConfig::none(), exec);

  double lambda_n_eff = 1.0;
  if (cfg.variant == Variant::DGD) {
    const SymEig eig = sym_eig(engine.effective_w());
    lambda_n_eff = eig.values.back();
  }
  const double eta = cfg.step.eta0;
  const double threshold = eta_upper_threshold(cfg.variant, lambda_n_eff, ens.L());
  if (!(eta < threshold)) {
    std::ostringstream os;
    os << "fixed_point: step size " << eta << " is not below the contraction threshold "
       << threshold;
    throw StepSizeError(os.str());
  }

  Mat x(engine.n_agents(), engine.dim(), 0.0);
  Rng rng(0);  // noise-free map ignores it
  double best_resid = std::numeric_limits<double>::infinity();
  Mat best = x;
  int stalled = 0;
  const long cap = 10'000'000;
  for (long it = 0; it < cap; ++it) {
    Mat next = engine.step(x, 0, rng);
    const double resid = frob_dist(next, x);
    x = std::move(next);
    if (resid < best_resid) {
      best_resid = resid;
      best = x;
      stalled = 0;
    } else {
      ++stalled;
    }
    if (resid <= tol) return FixedPoint{x, resid};
    // Rounding floor: residuals stop improving near machine precision.
    if (stalled > 200 && best_resid <= std::max(tol * 1e3, 1e-10))
      return FixedPoint{best, best_resid};
  }
  throw ConvergenceError("fixed_point: iteration cap exceeded");
}

Trace run(const Mat& x0, long n_iters, const AlgorithmConfig& cfg, const Topology* topo,
          const ObjectiveEnsemble& ens, const NoiseConfig& noise, std::uint64_t rng_seed,
          const RunOptions& opts) {
  Engine engine(cfg, topo, ens, noise, opts.exec);
  const int n = engine.n_agents();
  const int d = engine.dim();
  if (x0.rows() != n || x0.cols() != d) throw DomainError("run: x0 shape mismatch");

  Trace trace;
  trace.seed = rng_seed;
  trace.config = cfg;

  // Reference points: the fixed point of the noise-free mean dynamics and
  // the global optimum.
  bool have_fixed = false;
  Mat x_hat;
  if (opts.fixed_point_hint) {
    x_hat = *opts.fixed_point_hint;
    have_fixed = true;
  } else if (opts.compute_fixed_point) {
    try {
      if (noise.kind == NoiseKind::LinkFailure) {
        const Topology mean_topo =
            Topology::from_weights(expected_q(*topo, *noise.link_model));
        x_hat = fixed_point(cfg, &mean_topo, ens, opts.fixed_point_tol, opts.exec).x_hat;
      } else {
        x_hat = fixed_point(cfg, topo, ens, opts.fixed_point_tol, opts.exec).x_hat;
      }
      have_fixed = true;
    } catch (const StepSizeError&) {
      have_fixed = false;  // outside the contraction regime; metric becomes NaN
    }
  }
  const Vec x_star = opts.x_star_hint ? *opts.x_star_hint : solve_optimum(ens).x_star;
  Mat x_star_mat(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x_star_mat(i, j) = x_star[j];

  const double nan = std::numeric_limits<double>::quiet_NaN();
  Rng rng(rng_seed);
  Mat x = x0;
  for (long t = 0;; ++t) {
    if (opts.record_iterates) trace.iterates.push_back(x);
    trace.dist_to_fixed.push_back(have_fixed ? frob_dist(x, x_hat) : nan);
    trace.dist_to_opt.push_back(frob_dist(x, x_star_mat));
    trace.consensus_res.push_back(consensus_residual(x));
    if (t == n_iters) break;
    x = engine.step(x, t, rng);
    if (max_abs(x) > kOverflowGuard) {
      trace.diverged = true;
      trace.diverged_at = t + 1;
      break;
    }
  }
  return trace;
}

std::vector<double> nc3t_counterexample(long n_iters, long n_paths, double omega,
                                        std::uint64_t seed) {
  if (n_iters < 0 || n_paths < 1) throw DomainError("nc3t_counterexample: bad sizes");
  // Fixed-size blocks make the reduction order independent of the thread
  // count, so results depend only on the seed.
  const long block = 1024;
  const long n_blocks = (n_paths + block - 1) / block;
  std::vector<std::vector<double>> partial(n_blocks, std::vector<double>(n_iters + 1, 0.0));

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long b = 0; b < n_blocks; ++b) {
    const long lo = b * block;
    const long hi = std::min(n_paths, lo + block);
    auto& acc = partial[b];
    for (long p = lo; p < hi; ++p) {
      Rng rng(seed + static_cast<std::uint64_t>(p));
      double x = 0.0;
      acc[0] += 0.0;
      for (long t = 1; t <= n_iters; ++t) {
        const double s = 1.0 + omega * std::fabs(x);
        x = 0.5 * x + rng.sign() * s;
        acc[t] += x * x;
      }
    }
  }

  std::vector<double> mean(n_iters + 1, 0.0);
  for (long b = 0; b < n_blocks; ++b)
    for (long t = 0; t <= n_iters; ++t) mean[t] += partial[b][t];
  for (auto& v : mean) v /= static_cast<double>(n_paths);
  return mean;
}

}  // namespace degrad
