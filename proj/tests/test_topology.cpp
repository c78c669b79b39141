#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "degrad/errors.hpp"
#include "degrad/topology.hpp"

using namespace degrad;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Random connected graph: spanning tree plus extra edges.
Topology random_connected(int n, Rng& rng) {
  Mat adj(n, n, 0.0);
  for (int v = 1; v < n; ++v) {
    const int u = static_cast<int>(rng.below(v));
    adj(u, v) = adj(v, u) = 1.0;
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (adj(i, j) == 0.0 && rng.bernoulli(0.25)) adj(i, j) = adj(j, i) = 1.0;
  int k_max = 0;
  for (int i = 0; i < n; ++i) {
    int deg = 0;
    for (int j = 0; j < n; ++j) deg += adj(i, j) == 1.0 ? 1 : 0;
    k_max = std::max(k_max, deg);
  }
  const double eps = rng.uniform(0.2, 0.9) / k_max;
  return from_laplacian(adj, eps);
}

}  // namespace

TEST_CASE("toy topologies match the closed-form spectral gaps") {
  // ring: 1 - lambda2 = 4 sin^2(pi/N) eps
  const Topology ring = build_toy(ToyKind::Ring, 4, 0.25);
  CHECK(1.0 - ring.lambda2() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(topology_factor(ring, FactorKind::DGD) == doctest::Approx(2.0).epsilon(1e-12));

  // star: 1 - lambda2 = eps
  const Topology star = build_toy(ToyKind::Star, 5, 0.1);
  CHECK(1.0 - star.lambda2() == doctest::Approx(0.1).epsilon(1e-10));

  // complete graph built directly: all trailing eigenvalues vanish
  const Topology complete = build_toy(ToyKind::Complete, 4, 1.0);
  for (int k = 1; k < 4; ++k)
    CHECK(std::fabs(complete.spectrum().eigenvalues[k]) <= 1e-12);
  CHECK(topology_factor(complete, FactorKind::Diffusion) <= 1e-10);
  CHECK(topology_factor(complete, FactorKind::DGD) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ring spectrum equals the circulant formula") {
  const int n = 6;
  const double eps = 0.1;
  const Topology ring = build_toy(ToyKind::Ring, n, eps);
  // oracle: eigenvalues 1 - eps * (2 - 2 cos(2 pi k / N))
  Vec expect;
  for (int k = 0; k < n; ++k)
    expect.push_back(1.0 - eps * (2.0 - 2.0 * std::cos(2.0 * kPi * k / n)));
  std::sort(expect.begin(), expect.end(), std::greater<>());
  for (int k = 0; k < n; ++k)
    CHECK(ring.spectrum().eigenvalues[k] == doctest::Approx(expect[k]).epsilon(1e-12));
  CHECK(ring.lambda2() == doctest::Approx(1.0 - 0.4 * std::sin(kPi / 6) * std::sin(kPi / 6))
                              .epsilon(1e-12));
}

TEST_CASE("from_laplacian hand cases and input validation") {
  Mat path2(2, 2, 0.0);
  path2(0, 1) = path2(1, 0) = 1.0;
  const Topology t = from_laplacian(path2, 0.4);
  CHECK(t.weights()(0, 0) == doctest::Approx(0.6));
  CHECK(t.weights()(0, 1) == doctest::Approx(0.4));
  CHECK(t.lambda2() == doctest::Approx(0.2).epsilon(1e-12));

  // triangle: K_3 Laplacian eigenvalues {0, 3, 3}
  Mat tri(3, 3, 1.0);
  for (int i = 0; i < 3; ++i) tri(i, i) = 0.0;
  const Topology k3 = from_laplacian(tri, 0.2);
  CHECK(k3.lambda2() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(k3.lambdaN() == doctest::Approx(0.4).epsilon(1e-12));

  CHECK_THROWS_AS(from_laplacian(path2, 0.0), StepSizeError);
  CHECK_THROWS_AS(from_laplacian(path2, 1.0), StepSizeError);
  CHECK_THROWS_AS(build_toy(ToyKind::Ring, 1, 0.1), DomainError);

  Mat disconnected(4, 4, 0.0);
  disconnected(0, 1) = disconnected(1, 0) = 1.0;
  disconnected(2, 3) = disconnected(3, 2) = 1.0;
  CHECK_THROWS_AS(from_laplacian(disconnected, 0.3), ValidityError);
}

TEST_CASE("validate diagnoses the two-agent swap and the identity") {
  Mat swap(2, 2, 0.0);
  swap(0, 1) = swap(1, 0) = 1.0;
  const Topology t = Topology::from_weights(swap);
  const ValidityReport rep = validate(t);
  CHECK(rep.is_bipartite);
  CHECK_FALSE(rep.satisfies_eig_condition);
  CHECK(t.lambdaN() == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(t.spectrum().eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));

  const Topology single = Topology::from_weights(Mat::identity(1));
  const ValidityReport rep1 = validate(single);
  CHECK(rep1.satisfies_eig_condition);
  CHECK(rep1.is_connected);

  const Topology k3 = build_toy(ToyKind::Complete, 3, 1.0);
  const ValidityReport rep3 = validate(k3);
  CHECK(rep3.satisfies_eig_condition);
  CHECK_FALSE(rep3.is_bipartite);
  CHECK(rep3.is_nonnegative);
}

TEST_CASE("topology invariants over random connected graphs") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(8));
    const Topology t = random_connected(n, rng);

    double row_defect = 0.0, sym_defect = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) {
        s += t.weights()(i, j);
        sym_defect = std::max(sym_defect, std::fabs(t.weights()(i, j) - t.weights()(j, i)));
      }
      row_defect = std::max(row_defect, std::fabs(s - 1.0));
    }
    CHECK(row_defect <= 1e-12);
    CHECK(sym_defect <= 1e-12);

    const auto& sp = t.spectrum();
    CHECK(std::fabs(sp.eigenvalues[0] - 1.0) <= 1e-9);
    for (int k = 1; k < n; ++k) CHECK(sp.eigenvalues[k - 1] >= sp.eigenvalues[k]);
    // leading eigenvector is the normalized all-ones direction
    for (int i = 0; i < n; ++i)
      CHECK(sp.eigenvectors(i, 0) == doctest::Approx(1.0 / std::sqrt(n)).epsilon(1e-8));

    CHECK(topology_factor(t, FactorKind::Diffusion) <=
          2.0 * topology_factor(t, FactorKind::DGD) + 1e-12);
  }
}

TEST_CASE("scale_consensus maps the spectrum affinely") {
  Mat swap(2, 2, 0.0);
  swap(0, 1) = swap(1, 0) = 1.0;
  const Topology t = Topology::from_weights(swap);

  const Topology same = scale_consensus(t, 1.0);
  CHECK(same.weights() == t.weights());

  const Topology half = scale_consensus(t, 0.5);
  CHECK(half.weights()(0, 0) == doctest::Approx(0.5));
  CHECK(half.weights()(0, 1) == doctest::Approx(0.5));
  CHECK(half.lambdaN() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(validate(half).satisfies_eig_condition);

  CHECK_THROWS_AS(scale_consensus(t, 0.0), DomainError);
  CHECK_THROWS_AS(scale_consensus(t, 1.5), DomainError);

  Rng rng(11);
  const Topology g = random_connected(6, rng);
  const double gamma = 0.25;
  const Topology scaled = scale_consensus(g, gamma);
  for (int k = 0; k < 6; ++k) {
    const double expect = 1.0 - gamma + gamma * g.spectrum().eigenvalues[k];
    CHECK(std::fabs(scaled.spectrum().eigenvalues[k] - expect) <= 1e-10);
  }
}

TEST_CASE("combine_rounds maps eigenvalues through the round polynomial") {
  const Topology ring = build_toy(ToyKind::Ring, 4, 0.25);

  const Topology same = combine_rounds(ring, Vec{1.0});
  CHECK(same.weights() == ring.weights());

  const Topology squared = combine_rounds(ring, Vec{0.0, 1.0});
  // ring eigenvalues {1, .5, .5, 0} -> squared {1, .25, .25, 0}
  CHECK(squared.lambda2() == doctest::Approx(0.25).epsilon(1e-12));

  const Topology mixed = combine_rounds(ring, Vec{0.5, 0.5});
  CHECK(mixed.lambda2() == doctest::Approx(0.5 * 0.5 + 0.5 * 0.25).epsilon(1e-12));

  CHECK_THROWS_AS(combine_rounds(ring, Vec{0.6, 0.6}), DomainError);
  CHECK_THROWS_AS(combine_rounds(ring, Vec{1.5, -0.5}), DomainError);
}

TEST_CASE("link failure sampling: hand cases") {
  Mat w(2, 2, 0.5);
  const Topology t = Topology::from_weights(w);

  // all links reliable: Q is W for both modes
  for (auto mode : {LinkFailureModel::Mode::KnownProbs, LinkFailureModel::Mode::UnknownProbs}) {
    const LinkFailureModel m = LinkFailureModel::uniform(t, 1.0, mode);
    Rng rng(1);
    const Mat q = sample_link_failure(t, m, rng);
    CHECK(frob_dist(q, w) <= 1e-15);
    CHECK(frob_dist(expected_q(t, m), w) <= 1e-15);
  }

  const LinkFailureModel half = LinkFailureModel::uniform(t, 0.5, LinkFailureModel::Mode::KnownProbs);
  // expected mixing matrix from the expectation formula
  const Mat eq = expected_q(t, half);
  CHECK(eq(0, 0) == doctest::Approx(0.75));
  CHECK(eq(0, 1) == doctest::Approx(0.25));
  CHECK(eq(1, 0) == doctest::Approx(0.25));
  CHECK(eq(1, 1) == doctest::Approx(0.75));

  // known-probability construction from an explicit mask
  Mat mask_ok(2, 2, 1.0);
  const Mat q_ok = build_q_from_mask(t, half, mask_ok);
  CHECK(q_ok(0, 0) == doctest::Approx(1.0 + 0.5 - (0.5 + 0.25)));
  CHECK(q_ok(0, 1) == doctest::Approx(0.5));
  Mat mask_fail = mask_ok;
  mask_fail(0, 1) = mask_fail(1, 0) = 0.0;
  const Mat q_fail = build_q_from_mask(t, half, mask_fail);
  CHECK(q_fail(0, 1) == 0.0);
  CHECK(q_fail(0, 0) == doctest::Approx(0.75));

  // unknown mode with every link down: the diagonal absorbs everything
  const LinkFailureModel unk = LinkFailureModel::uniform(t, 0.5, LinkFailureModel::Mode::UnknownProbs);
  Mat mask_none(2, 2, 0.0);
  mask_none(0, 0) = mask_none(1, 1) = 1.0;  // self-links always succeed
  const Mat q_id = build_q_from_mask(t, unk, mask_none);
  CHECK(frob_dist(q_id, Mat::identity(2)) <= 1e-15);
}

TEST_CASE("link failure: realized rows and Monte Carlo mean") {
  const Topology ring = build_toy(ToyKind::Ring, 5, 0.2);
  const long draws = 20000;

  for (auto mode : {LinkFailureModel::Mode::KnownProbs, LinkFailureModel::Mode::UnknownProbs}) {
    const LinkFailureModel m = LinkFailureModel::uniform(ring, 0.7, mode);
    const Mat eq = expected_q(ring, m);
    // expected Q: symmetric with unit row sums
    for (int i = 0; i < 5; ++i) {
      double s = 0.0;
      for (int j = 0; j < 5; ++j) {
        s += eq(i, j);
        CHECK(eq(i, j) == doctest::Approx(eq(j, i)).epsilon(1e-14));
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }

    Rng rng(40);
    Mat mean(5, 5, 0.0);
    for (long k = 0; k < draws; ++k) {
      const Mat q = sample_link_failure(ring, m, rng);
      if (mode == LinkFailureModel::Mode::UnknownProbs) {
        for (int i = 0; i < 5; ++i) {
          double s = 0.0;
          for (int j = 0; j < 5; ++j) s += q(i, j);
          CHECK(s == doctest::Approx(1.0).epsilon(1e-15));  // exact row repair
        }
      }
      mean = add(mean, q);
    }
    mean = scale(1.0 / draws, mean);
    // binomial 4-sigma band per entry
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        if (i == j) continue;
        const double w = ring.weights()(i, j);
        if (w == 0.0) {
          CHECK(mean(i, j) == 0.0);
          continue;
        }
        const double sd = std::sqrt(0.7 * 0.3 / draws) * w;
        CHECK(std::fabs(mean(i, j) - eq(i, j)) <= 4.0 * sd + 1e-12);
      }
  }
}

TEST_CASE("expected_q monotonicity: lowering a success probability is PSD") {
  const Topology ring = build_toy(ToyKind::Ring, 5, 0.2);
  LinkFailureModel m = LinkFailureModel::uniform(ring, 0.9, LinkFailureModel::Mode::KnownProbs);
  const Mat before = expected_q(ring, m);
  m.success_probs(0, 1) -= 0.3;
  m.success_probs(1, 0) -= 0.3;
  const Mat after = expected_q(ring, m);
  const SymEig e = sym_eig(sub(after, before));
  CHECK(e.values.back() >= -1e-10);
}

TEST_CASE("link noise variance bounds") {
  const Topology ring = build_toy(ToyKind::Ring, 5, 0.2);

  const LinkFailureModel sure = LinkFailureModel::uniform(ring, 1.0, LinkFailureModel::Mode::KnownProbs);
  const LinkNoiseBound b1 = link_noise_variance_bound(ring, sure);
  CHECK(b1.tighter_sum == doctest::Approx(0.0));
  CHECK(b1.coefficient == doctest::Approx(5.0 / 4.0));

  const LinkFailureModel unk = LinkFailureModel::uniform(ring, 0.5, LinkFailureModel::Mode::UnknownProbs);
  const LinkNoiseBound b2 = link_noise_variance_bound(ring, unk);
  CHECK(b2.coefficient == doctest::Approx(5.0 / 2.0));
  double wsq = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) wsq += ring.weights()(i, j) * ring.weights()(i, j);
  CHECK(b2.tighter_sum == doctest::Approx(0.5 * wsq));

  // empirical conditional variance of (Q - E[Q]) x stays below tighter_sum
  Rng rng(55);
  Vec x(5);
  for (auto& v : x) v = rng.normal();
  const double x2 = dot(x, x);
  for (auto mode : {LinkFailureModel::Mode::KnownProbs, LinkFailureModel::Mode::UnknownProbs}) {
    const LinkFailureModel m = LinkFailureModel::uniform(ring, 0.6, mode);
    const Mat eq = expected_q(ring, m);
    const LinkNoiseBound lb = link_noise_variance_bound(ring, m);
    double acc = 0.0;
    const long draws = 100000;
    for (long k = 0; k < draws; ++k) {
      const Mat q = sample_link_failure(ring, m, rng);
      const Vec eps = matvec(sub(q, eq), x);
      acc += dot(eps, eps);
    }
    acc /= draws;
    CHECK(acc <= lb.tighter_sum * x2 * 1.05);
    CHECK(acc <= lb.coefficient * x2 * 1.05);
  }
}

TEST_CASE("link model validation") {
  const Topology ring = build_toy(ToyKind::Ring, 4, 0.2);
  LinkFailureModel m = LinkFailureModel::uniform(ring, 0.5, LinkFailureModel::Mode::KnownProbs);
  m.success_probs(0, 1) = 1.4;
  m.success_probs(1, 0) = 1.4;
  CHECK_THROWS_AS(check_link_model(ring, m), DomainError);

  LinkFailureModel zero = LinkFailureModel::uniform(ring, 0.5, LinkFailureModel::Mode::KnownProbs);
  zero.success_probs(0, 1) = 0.0;
  zero.success_probs(1, 0) = 0.0;
  CHECK_THROWS_AS(check_link_model(ring, zero), DomainError);

  // bipartite base topologies are rejected for sampling
  Mat swap(2, 2, 0.0);
  swap(0, 1) = swap(1, 0) = 1.0;
  const Topology bip = Topology::from_weights(swap);
  const LinkFailureModel bm = LinkFailureModel::uniform(bip, 0.9, LinkFailureModel::Mode::KnownProbs);
  Rng rng(3);
  CHECK_THROWS_AS(sample_link_failure(bip, bm, rng), DomainError);
}
