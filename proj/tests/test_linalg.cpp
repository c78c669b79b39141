#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <string>

#include "degrad/errors.hpp"
#include "degrad/linalg.hpp"

using namespace degrad;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("matmul serial and parallel agree bitwise") {
  Rng rng(1);
  const Mat a = random_mat(37, 23, rng);
  const Mat b = random_mat(23, 11, rng);
  const Mat cs = matmul(a, b, Exec::Serial);
  const Mat cp = matmul(a, b, Exec::Parallel);
  CHECK(cs == cp);
  CHECK_THROWS_AS(matmul(a, a, Exec::Serial), DomainError);
}

TEST_CASE("sym_eig on a hand 2x2") {
  Mat w(2, 2);
  w(0, 0) = w(1, 1) = 0.6;
  w(0, 1) = w(1, 0) = 0.4;
  const SymEig e = sym_eig(w);
  CHECK(e.values[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(0.2).epsilon(1e-14));
  // descending order and positive-leading-component convention
  CHECK(e.values[0] >= e.values[1]);
  CHECK(e.vectors(0, 0) > 0.0);
  CHECK(e.vectors(0, 1) > 0.0);
}

TEST_CASE("sym_eig reconstructs random symmetric matrices") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(10));
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) a(i, j) = a(j, i) = rng.normal();
    const SymEig e = sym_eig(a);
    for (int k = 1; k < n; ++k) CHECK(e.values[k - 1] >= e.values[k]);
    double recon_err = 0.0, ortho_err = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0, q = 0.0;
        for (int k = 0; k < n; ++k) {
          s += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
          q += e.vectors(k, i) * e.vectors(k, j);
        }
        recon_err = std::max(recon_err, std::fabs(s - a(i, j)));
        ortho_err = std::max(ortho_err, std::fabs(q - (i == j ? 1.0 : 0.0)));
      }
    CHECK(recon_err <= 1e-12 * std::max(1.0, frob(a)));
    CHECK(ortho_err <= 1e-12);
  }
}

TEST_CASE("solve against known system and singular detection") {
  Mat a(2, 2);
  a(0, 0) = 2.0;
  a(0, 1) = 1.0;
  a(1, 0) = 1.0;
  a(1, 1) = 3.0;
  const Vec x = solve(a, Vec{5.0, 10.0});
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(3.0).epsilon(1e-12));

  Mat s(2, 2, 1.0);
  CHECK_THROWS_AS(solve(s, Vec{1.0, 2.0}), NumericalError);
}

TEST_CASE("random orthogonal and spectrum factories") {
  Rng rng(3);
  const int n = 8;
  const Mat q = random_orthogonal(n, rng);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += q(k, i) * q(k, j);
      CHECK(std::fabs(s - (i == j ? 1.0 : 0.0)) <= 1e-12);
    }

  const Mat a = random_symmetric_with_spectrum(n, 0.5, 2.5, rng);
  const SymEig e = sym_eig(a);
  CHECK(e.values.front() == doctest::Approx(2.5).epsilon(1e-10));
  CHECK(e.values.back() == doctest::Approx(0.5).epsilon(1e-10));
  for (double v : e.values) {
    CHECK(v >= 0.5 - 1e-9);
    CHECK(v <= 2.5 + 1e-9);
  }
}

TEST_CASE("thread cap honors the DEGRAD_THREADS environment variable") {
  const char* saved = std::getenv("DEGRAD_THREADS");
  const std::string saved_value = saved ? saved : "";
  setenv("DEGRAD_THREADS", "1", 1);
  CHECK(max_threads() == 1);
  if (saved)
    setenv("DEGRAD_THREADS", saved_value.c_str(), 1);
  else
    unsetenv("DEGRAD_THREADS");
  CHECK(max_threads() >= 1);
}

TEST_CASE("consensus residual vanishes on consensus states") {
  Mat x(4, 2);
  for (int i = 0; i < 4; ++i) {
    x(i, 0) = 3.25;
    x(i, 1) = -1.5;
  }
  CHECK(consensus_residual(x) == doctest::Approx(0.0).epsilon(1e-15));
  x(2, 0) += 1.0;
  CHECK(consensus_residual(x) > 0.5);
}
