// Timings for the data-parallel kernels: serial reference vs OpenMP, on the
// consensus multiply, the gradient stack, and a Monte Carlo path ensemble.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "degrad/bounds.hpp"
#include "degrad/dynamics.hpp"
#include "degrad/experiment.hpp"

using namespace degrad;

namespace {

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main() {
  apply_thread_cap();
  std::printf("threads available: %d\n", max_threads());

  {
    const int n = 768, d = 16;
    Rng rng(1);
    Mat w(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) w(i, j) = rng.normal();
    Mat x(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) x(i, j) = rng.normal();

    Mat y_serial, y_parallel;
    const double ts = time_best_of(5, [&] { y_serial = matmul(w, x, Exec::Serial); });
    const double tp = time_best_of(5, [&] { y_parallel = matmul(w, x, Exec::Parallel); });
    const bool same = y_serial == y_parallel;
    std::printf(
        "consensus multiply %dx%d * %dx%d: serial %.4fs, parallel %.4fs, speedup %.2fx, "
        "bit-identical: %s\n",
        n, n, n, d, ts, tp, ts / tp, same ? "yes" : "no");
  }

  {
    const int n = 512, d = 8;
    std::vector<Mat> curvatures;
    std::vector<Vec> linears;
    Rng rng(2);
    for (int a = 0; a < n; ++a) {
      curvatures.push_back(random_symmetric_with_spectrum(d, 0.5, 3.0, rng));
      Vec lin(d);
      for (auto& v : lin) v = rng.normal();
      linears.push_back(lin);
    }
    const ObjectiveEnsemble ens = make_quadratic(curvatures, linears);
    Mat x(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) x(i, j) = rng.normal();

    Mat g_serial, g_parallel;
    const int reps = 200;
    const double ts = time_best_of(3, [&] {
      for (int r = 0; r < reps; ++r) g_serial = grad_stack(ens, x, Exec::Serial);
    });
    const double tp = time_best_of(3, [&] {
      for (int r = 0; r < reps; ++r) g_parallel = grad_stack(ens, x, Exec::Parallel);
    });
    std::printf(
        "gradient stack N=%d d=%d: serial %.4fs, parallel %.4fs, speedup %.2fx, "
        "bit-identical: %s\n",
        n, d, ts, tp, ts / tp, (g_serial == g_parallel) ? "yes" : "no");
  }

  {
    // Monte Carlo ensemble of seeded stochastic-DGD paths; the parallel
    // version splits paths across threads exactly like the harness does.
    const int n = 16;
    const long n_paths = 256, n_iters = 400;
    const Topology ring = build_toy(ToyKind::Ring, n, 0.2);
    Vec curv(n), mins(n);
    Rng rng(3);
    for (int i = 0; i < n; ++i) {
      curv[i] = 1.0 + rng.uniform01();
      mins[i] = 2.0 * rng.normal();
    }
    const ObjectiveEnsemble ens = make_scalar_quadratic(curv, mins);
    AlgorithmConfig cfg;
    cfg.variant = Variant::DGD;
    cfg.step = StepSchedule::constant(0.05);
    const NoiseConfig noise = NoiseConfig::synthetic_gradient(0.5, 0.1);
    const Mat x0(n, 1, 0.0);
    const FixedPoint fp = fixed_point(cfg, &ring, ens, 1e-12);
    const Vec x_star = solve_optimum(ens).x_star;

    auto run_path = [&](long p) {
      RunOptions opts;
      opts.record_iterates = false;
      opts.fixed_point_hint = fp.x_hat;
      opts.x_star_hint = x_star;
      const Trace tr = run(x0, n_iters, cfg, &ring, ens, noise, 100 + p, opts);
      return tr.dist_to_fixed.back();
    };

    std::vector<double> tail_serial(n_paths), tail_parallel(n_paths);
    const double ts = time_best_of(2, [&] {
      for (long p = 0; p < n_paths; ++p) tail_serial[p] = run_path(p);
    });
    const double tp = time_best_of(2, [&] {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
      for (long p = 0; p < n_paths; ++p) tail_parallel[p] = run_path(p);
    });
    const bool same = tail_serial == tail_parallel;
    std::printf(
        "monte carlo %ld paths x %ld iters: serial %.4fs, parallel %.4fs, speedup %.2fx, "
        "bit-identical: %s\n",
        n_paths, n_iters, ts, tp, ts / tp, same ? "yes" : "no");
  }

  return 0;
}
