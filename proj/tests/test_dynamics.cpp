#include <doctest.h>

#include <cmath>

#include "degrad/bounds.hpp"
#include "degrad/dynamics.hpp"
#include "degrad/errors.hpp"

using namespace degrad;

namespace {

AlgorithmConfig constant_cfg(Variant v, double eta, int t_updates = 1, double gamma = 1.0) {
  AlgorithmConfig cfg;
  cfg.variant = v;
  cfg.step = StepSchedule::constant(eta);
  cfg.local_updates = t_updates;
  cfg.consensus_gamma = gamma;
  return cfg;
}

ObjectiveEnsemble heterogeneous_ring_ensemble(int n, Rng& rng) {
  Vec curv(n), mins(n);
  for (int i = 0; i < n; ++i) {
    curv[i] = 0.8 + rng.uniform01();
    mins[i] = 2.0 * rng.normal();
  }
  return make_scalar_quadratic(curv, mins);
}

}  // namespace

TEST_CASE("gd step is the scalar affine map") {
  const ObjectiveEnsemble ens = make_scalar_quadratic(Vec{2.0}, Vec{0.0});
  Mat x(1, 1, 3.0);
  Rng rng(1);
  const Mat next = step(x, 0, constant_cfg(Variant::GD, 0.1), nullptr, ens,
                        NoiseConfig::none(), rng);
  CHECK(next(0, 0) == doctest::Approx(3.0 * (1.0 - 0.1 * 2.0)).epsilon(1e-15));

  CHECK_THROWS_AS(step(Mat(2, 3, 0.0), 0, constant_cfg(Variant::GD, 0.1), nullptr, ens,
                       NoiseConfig::none(), rng),
                  DomainError);
}

TEST_CASE("dgd step scales weight-matrix eigenvectors") {
  const int n = 6;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.1);
  const double rho = 1.3;
  const ObjectiveEnsemble ens = make_scalar_quadratic(Vec(n, rho), Vec(n, 0.0));
  // eigenvector for lambda_N on an even ring: alternating signs
  Mat x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = (i % 2) ? -1.0 : 1.0;
  Rng rng(2);
  const double eta = 0.05;
  const Mat next = step(x, 0, constant_cfg(Variant::DGD, eta), &ring, ens,
                        NoiseConfig::none(), rng);
  const double factor = ring.lambdaN() - eta * rho;
  for (int i = 0; i < n; ++i)
    CHECK(next(i, 0) == doctest::Approx(factor * x(i, 0)).epsilon(1e-13));
}

TEST_CASE("federated equals diffusion-atc on the complete graph, bitwise") {
  Rng rng(3);
  const int n = 5;
  ObjectiveEnsemble ens = heterogeneous_ring_ensemble(n, rng);
  const Topology complete = build_toy(ToyKind::Complete, n, 1.0);
  Mat x0(n, 1);
  for (int i = 0; i < n; ++i) x0(i, 0) = rng.normal();
  for (int t_updates : {1, 2, 5}) {
    const Trace fed =
        run(x0, 25, constant_cfg(Variant::Federated, 0.08, t_updates), nullptr, ens,
            NoiseConfig::none(), 77);
    const Trace atc =
        run(x0, 25, constant_cfg(Variant::DiffusionATC, 0.08, t_updates), &complete, ens,
            NoiseConfig::none(), 77);
    REQUIRE(fed.iterates.size() == atc.iterates.size());
    for (std::size_t k = 0; k < fed.iterates.size(); ++k)
      CHECK(fed.iterates[k] == atc.iterates[k]);
  }
}

TEST_CASE("cta is atc after shifting the state through the consensus") {
  Rng rng(4);
  const int n = 5;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.15);
  const ObjectiveEnsemble ens = heterogeneous_ring_ensemble(n, rng);
  Mat x0(n, 1);
  for (int i = 0; i < n; ++i) x0(i, 0) = rng.normal();

  const long iters = 30;
  const Trace cta = run(x0, iters, constant_cfg(Variant::DiffusionCTA, 0.1), &ring, ens,
                        NoiseConfig::none(), 5);
  const Mat y0 = matmul(ring.weights(), x0);
  const Trace atc = run(y0, iters, constant_cfg(Variant::DiffusionATC, 0.1), &ring, ens,
                        NoiseConfig::none(), 5);
  for (long t = 0; t <= iters; ++t) {
    const Mat shifted = matmul(ring.weights(), cta.iterates[t]);
    CHECK(frob_dist(shifted, atc.iterates[t]) <= 1e-13);
  }
}

TEST_CASE("identical objectives at consensus stay fixed under every variant") {
  const int n = 4;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.25);  // dyadic weights
  const ObjectiveEnsemble ens = make_scalar_quadratic(Vec(n, 1.0), Vec(n, 1.0));
  Mat x0(n, 1, 1.0);  // everyone at the shared minimizer
  for (Variant v : {Variant::DGD, Variant::DiffusionATC, Variant::DiffusionCTA,
                    Variant::Federated, Variant::GD}) {
    const Topology* topo = (v == Variant::GD || v == Variant::Federated) ? nullptr : &ring;
    const Trace tr = run(x0, 20, constant_cfg(v, 0.125, 2), topo, ens, NoiseConfig::none(), 6);
    for (const Mat& x : tr.iterates) CHECK(frob_dist(x, x0) == 0.0);
  }
}

TEST_CASE("identical seeds give bit-identical traces; serial equals parallel") {
  Rng rng(8);
  const int n = 6;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.1);
  const ObjectiveEnsemble ens = heterogeneous_ring_ensemble(n, rng);
  const NoiseConfig noise = NoiseConfig::synthetic_gradient(0.3, 0.1);
  Mat x0(n, 1, 0.5);

  const Trace a = run(x0, 50, constant_cfg(Variant::DGD, 0.05), &ring, ens, noise, 123);
  const Trace b = run(x0, 50, constant_cfg(Variant::DGD, 0.05), &ring, ens, noise, 123);
  REQUIRE(a.iterates.size() == b.iterates.size());
  for (std::size_t k = 0; k < a.iterates.size(); ++k) CHECK(a.iterates[k] == b.iterates[k]);

  RunOptions par;
  par.exec = Exec::Parallel;
  const Trace c = run(x0, 50, constant_cfg(Variant::DGD, 0.05), &ring, ens, noise, 123, par);
  for (std::size_t k = 0; k < a.iterates.size(); ++k) CHECK(a.iterates[k] == c.iterates[k]);
}

TEST_CASE("separable multi-dimensional run equals independent scalar runs") {
  const int n = 4, d = 3;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.2);
  Rng rng(9);
  std::vector<Mat> curv;
  std::vector<Vec> lin;
  Vec col_curv[d], col_lin[d];
  for (int j = 0; j < d; ++j) {
    col_curv[j].resize(n);
    col_lin[j].resize(n);
  }
  for (int i = 0; i < n; ++i) {
    Mat c(d, d, 0.0);
    Vec b(d);
    for (int j = 0; j < d; ++j) {
      c(j, j) = 0.5 + rng.uniform01();
      b[j] = rng.normal();
      col_curv[j][i] = c(j, j);
      col_lin[j][i] = b[j];
    }
    curv.push_back(c);
    lin.push_back(b);
  }
  const ObjectiveEnsemble joint = make_quadratic(curv, lin);
  Mat x0(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x0(i, j) = rng.normal();

  const Trace full = run(x0, 30, constant_cfg(Variant::DiffusionATC, 0.1), &ring, joint,
                         NoiseConfig::none(), 10);
  for (int j = 0; j < d; ++j) {
    std::vector<Vec> lin_j;
    std::vector<double> curv_j;
    for (int i = 0; i < n; ++i) {
      curv_j.push_back(col_curv[j][i]);
      lin_j.push_back(Vec{col_lin[j][i]});
    }
    const ObjectiveEnsemble scalar = make_quadratic(curv_j, lin_j);
    Mat x0j(n, 1);
    for (int i = 0; i < n; ++i) x0j(i, 0) = x0(i, j);
    const Trace part = run(x0j, 30, constant_cfg(Variant::DiffusionATC, 0.1), &ring, scalar,
                           NoiseConfig::none(), 10);
    for (long t = 0; t <= 30; ++t)
      for (int i = 0; i < n; ++i) CHECK(full.iterates[t](i, j) == part.iterates[t](i, 0));
  }
}

TEST_CASE("noise contract: synthetic conditional second moment is exact") {
  const int n = 3, d = 2;
  const Topology ring = build_toy(ToyKind::Complete, n, 1.0);
  const ObjectiveEnsemble ens =
      make_quadratic(std::vector<double>{1.0, 1.0, 1.0},
                     std::vector<Vec>{Vec(d, 0.0), Vec(d, 0.0), Vec(d, 0.0)});
  (void)ring;

  Mat x(n, d);
  Rng rng(10);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  const double sigma = 0.4, omega = 0.2;
  const double target = sigma + omega * frob(x);

  for (auto dist : {NoiseDistribution::Gaussian, NoiseDistribution::TwoPoint}) {
    const NoiseConfig noise = NoiseConfig::synthetic_gradient(sigma, omega, dist);
    Engine engine(constant_cfg(Variant::GD, 0.1), nullptr, ens, noise);
    const long draws = 1000000;
    double acc = 0.0, mean_acc = 0.0;
    Rng nrng(11);
    const Mat exact = grad_stack(ens, x);
    for (long k = 0; k < draws; ++k) {
      // engine applies noise inside the gradient; recover it by subtraction
      const Mat noisy = sub(engine.step(x, 0, nrng), x);  // -eta (g + eps)
      const Mat eps = scale(-1.0 / 0.1, noisy);
      const Mat pure = sub(eps, exact);
      acc += frob(pure) * frob(pure);
      mean_acc += pure(0, 0);
    }
    acc /= draws;
    CHECK(std::fabs(acc - target * target) <= 0.05 * target * target);
    CHECK(std::fabs(mean_acc / draws) <= 4.0 * target / std::sqrt(static_cast<double>(draws)));
  }
}

TEST_CASE("fixed points: gd reaches the optimum, dgd the biased point") {
  Rng rng(12);
  const int n = 5;
  const ObjectiveEnsemble ens = heterogeneous_ring_ensemble(n, rng);
  const OptimumReport opt = solve_optimum(ens);

  // gradient descent: fixed point = optimum (per agent = local minimizer,
  // but with one shared objective list each agent sits at its own optimum)
  {
    const ObjectiveEnsemble solo = make_scalar_quadratic(Vec{1.7}, Vec{0.4});
    const FixedPoint fp = fixed_point(constant_cfg(Variant::GD, 0.3), nullptr, solo, 1e-13);
    CHECK(std::fabs(fp.x_hat(0, 0) - 0.4) <= 1e-11);
  }
  // diffusion on the complete graph: fixed point = consensus optimum
  {
    const Topology complete = build_toy(ToyKind::Complete, n, 1.0);
    const FixedPoint fp =
        fixed_point(constant_cfg(Variant::DiffusionATC, 0.1), &complete, ens, 1e-13);
    for (int i = 0; i < n; ++i)
      CHECK(std::fabs(fp.x_hat(i, 0) - opt.x_star[0]) <= 1e-10);
  }
  // dgd on odd-symmetric quadratics: fixed point at zero
  {
    const Topology ring = build_toy(ToyKind::Ring, n, 0.2);
    const ObjectiveEnsemble sym = make_scalar_quadratic(Vec(n, 1.2), Vec(n, 0.0));
    const FixedPoint fp = fixed_point(constant_cfg(Variant::DGD, 0.1), &ring, sym, 1e-13);
    CHECK(frob(fp.x_hat) <= 1e-12);
  }
  // outside the regime: rejected
  {
    const Topology ring = build_toy(ToyKind::Ring, n, 0.2);
    CHECK_THROWS_AS(fixed_point(constant_cfg(Variant::DGD, 5.0), &ring, ens, 1e-12),
                    StepSizeError);
  }
}

TEST_CASE("noise-free dgd trace is dominated by its contraction envelope") {
  Rng rng(13);
  const int n = 6;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.12);
  const ObjectiveEnsemble ens = heterogeneous_ring_ensemble(n, rng);
  const double eta = 0.8 * (1.0 + ring.lambdaN()) / (ens.L() + ens.mu());
  const AlgorithmConfig cfg = constant_cfg(Variant::DGD, eta);
  Mat x0(n, 1);
  for (int i = 0; i < n; ++i) x0(i, 0) = rng.normal();
  const Trace tr = run(x0, 200, cfg, &ring, ens, NoiseConfig::none(), 14);
  const double c = 1.0 - eta * ens.mu();
  for (long t = 0; t <= 200; ++t) {
    const double envelope = std::pow(c, static_cast<double>(t)) * tr.dist_to_fixed[0];
    // below ~1e-10 the metric floors at the fixed-point solver accuracy
    if (envelope < 1e-10 * tr.dist_to_fixed[0]) break;
    CHECK(tr.dist_to_fixed[t] <= envelope * (1.0 + 1e-9) + 1e-14);
  }
}

TEST_CASE("bipartite dgd divergence sets the flag instead of crashing") {
  Mat swap(2, 2, 0.0);
  swap(0, 1) = swap(1, 0) = 1.0;
  const Topology t = Topology::from_weights(swap);
  const ObjectiveEnsemble ens = make_scalar_quadratic(Vec{1.0, 1.0}, Vec{0.0, 0.0});
  Mat x0(2, 1);
  x0(0, 0) = 1.0;
  x0(1, 0) = -1.0;
  RunOptions opts;
  opts.compute_fixed_point = false;
  opts.record_iterates = false;
  const Trace tr = run(x0, 5000, constant_cfg(Variant::DGD, 0.2), &t, ens,
                       NoiseConfig::none(), 15, opts);
  CHECK(tr.diverged);
  CHECK(tr.diverged_at > 0);
  for (double v : tr.dist_to_opt) CHECK(std::isfinite(v));
}

TEST_CASE("consensus rounds inside a run equal running on the combined topology") {
  Rng rng(29);
  const int n = 5;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.15);
  const ObjectiveEnsemble ens = heterogeneous_ring_ensemble(n, rng);
  Mat x0(n, 1);
  for (int i = 0; i < n; ++i) x0(i, 0) = rng.normal();

  AlgorithmConfig with_rounds = constant_cfg(Variant::DGD, 0.05);
  with_rounds.consensus_rounds = Vec{0.25, 0.75};
  const Trace a = run(x0, 20, with_rounds, &ring, ens, NoiseConfig::none(), 30);

  const Topology combined = combine_rounds(ring, Vec{0.25, 0.75});
  const Trace b =
      run(x0, 20, constant_cfg(Variant::DGD, 0.05), &combined, ens, NoiseConfig::none(), 30);
  for (std::size_t k = 0; k < a.iterates.size(); ++k) CHECK(a.iterates[k] == b.iterates[k]);
}

TEST_CASE("time-varying steps reject multiple local updates") {
  const ObjectiveEnsemble ens = make_scalar_quadratic(Vec{1.0, 1.0}, Vec{0.0, 1.0});
  const Topology line = build_toy(ToyKind::Line, 2, 0.3);
  AlgorithmConfig cfg;
  cfg.variant = Variant::DGD;
  cfg.step = StepSchedule::inverse_time(0.1, 10.0);
  cfg.local_updates = 3;
  Mat x0(2, 1, 0.0);
  Rng rng(16);
  CHECK_THROWS_AS(step(x0, 0, cfg, &line, ens, NoiseConfig::none(), rng), DomainError);
}

TEST_CASE("fixed_point rejects non-constant schedules; zero-length runs record x0") {
  const ObjectiveEnsemble ens = make_scalar_quadratic(Vec{1.0, 1.0}, Vec{0.0, 1.0});
  const Topology line = build_toy(ToyKind::Line, 2, 0.3);
  AlgorithmConfig cfg;
  cfg.variant = Variant::DGD;
  cfg.step = StepSchedule::inverse_time(0.1, 10.0);
  CHECK_THROWS_AS(fixed_point(cfg, &line, ens, 1e-12), StepSizeError);

  const Trace tr = run(Mat(2, 1, 0.25), 0, constant_cfg(Variant::DGD, 0.1), &line, ens,
                       NoiseConfig::none(), 1);
  CHECK(tr.iterates.size() == 1);
  CHECK(tr.dist_to_opt.size() == 1);
}

TEST_CASE("combining rounds that disconnect the support is rejected") {
  // W^2 of the two-agent swap is the identity: no longer a valid topology
  Mat swap(2, 2, 0.0);
  swap(0, 1) = swap(1, 0) = 1.0;
  const Topology bip = Topology::from_weights(swap);
  CHECK_THROWS_AS(combine_rounds(bip, Vec{0.0, 1.0}), ValidityError);
}

TEST_CASE("nc3t counterexample recursion") {
  // starts at zero
  const auto d2 = nc3t_counterexample(10, 2000, std::sqrt(3.0) / 2.0, 21);
  CHECK(d2[0] == 0.0);
  // grows roughly linearly even with few paths
  CHECK(d2[10] > 5.0);

  // subcritical noise slope: bounded by the stationary level
  const double dhat = nc3t_dhat(0.5, 0.4, 1.0, 0.0);
  const auto d2b = nc3t_counterexample(60, 20000, 0.4, 22);
  for (double v : d2b) CHECK(std::sqrt(v) <= dhat * 1.1);
}

TEST_CASE("link failure runs stay near the mean-dynamics fixed point") {
  const int n = 5;
  const Topology ring = build_toy(ToyKind::Ring, n, 0.2);
  Rng rng(23);
  const ObjectiveEnsemble ens = heterogeneous_ring_ensemble(n, rng);
  const LinkFailureModel model =
      LinkFailureModel::uniform(ring, 0.8, LinkFailureModel::Mode::UnknownProbs);
  AlgorithmConfig cfg = constant_cfg(Variant::DGD, 0.02, 1, 0.5);
  Mat x0(n, 1, 0.0);
  const Trace tr = run(x0, 4000, cfg, &ring, ens, NoiseConfig::link_failure(model), 24);
  CHECK_FALSE(tr.diverged);
  // settles to a noise ball around the mean fixed point
  double tail = 0.0;
  for (long t = 3000; t <= 4000; ++t) tail = std::max(tail, tr.dist_to_fixed[t]);
  CHECK(tail < tr.dist_to_fixed[0]);

  // diffusion with link failures is not covered
  CHECK_THROWS_AS(run(x0, 5, constant_cfg(Variant::DiffusionATC, 0.02), &ring, ens,
                      NoiseConfig::link_failure(model), 25),
                  DomainError);
}
