#include "degrad/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "degrad/errors.hpp"

namespace degrad {

int max_threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("DEGRAD_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

void apply_thread_cap() {
#ifdef _OPENMP
  omp_set_num_threads(max_threads());
#endif
}

double dot(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

Vec vsub(const Vec& x, const Vec& y) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
  return r;
}

Vec vadd(const Vec& x, const Vec& y) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + y[i];
  return r;
}

Vec vscale(double a, const Vec& x) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = a * x[i];
  return r;
}

Mat transpose(const Mat& a) {
  Mat r(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(j, i) = a(i, j);
  return r;
}

Mat add(const Mat& a, const Mat& b) {
  Mat r(a.rows(), a.cols());
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = a.data()[i] + b.data()[i];
  return r;
}

Mat sub(const Mat& a, const Mat& b) {
  Mat r(a.rows(), a.cols());
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = a.data()[i] - b.data()[i];
  return r;
}

Mat scale(double s, const Mat& a) {
  Mat r(a.rows(), a.cols());
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = s * a.data()[i];
  return r;
}

double frob(const Mat& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return std::sqrt(s);
}

double max_abs(const Mat& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i]));
  return m;
}

double frob_dist(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

inline void matmul_row(const Mat& a, const Mat& b, Mat& c, int i) {
  const int n = a.cols();
  const int m = b.cols();
  const double* arow = a.row(i);
  double* crow = c.row(i);
  if (a.rows() == n) {
    // Square (mixing-matrix) case: start from the diagonal term and skip
    // structural zeros. Rows with mirrored sign patterns then evaluate
    // sign-symmetric expressions, so weight-matrix eigenvector rays are
    // preserved exactly; skipping zeros never changes a finite sum.
    const double aii = arow[i];
    const double* bdiag = b.row(i);
    for (int j = 0; j < m; ++j) crow[j] = aii * bdiag[j];
    for (int k = 0; k < n; ++k) {
      const double aik = arow[k];
      if (k == i || aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < m; ++j) crow[j] += aik * brow[j];
    }
    return;
  }
  for (int j = 0; j < m; ++j) crow[j] = 0.0;
  for (int k = 0; k < n; ++k) {
    const double aik = arow[k];
    const double* brow = b.row(k);
    for (int j = 0; j < m; ++j) crow[j] += aik * brow[j];
  }
}

}  // namespace

Mat matmul(const Mat& a, const Mat& b, Exec exec) {
  if (a.cols() != b.rows()) throw DomainError("matmul: inner dimensions differ");
  Mat c(a.rows(), b.cols());
#ifdef _OPENMP
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
    return c;
  }
#else
  (void)exec;
#endif
  for (int i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
  return c;
}

Vec matvec(const Mat& a, const Vec& x) {
  if (a.cols() != static_cast<int>(x.size())) throw DomainError("matvec: dimension mismatch");
  Vec y(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += arow[j] * x[j];
    y[i] = s;
  }
  return y;
}

Vec col_mean(const Mat& x) {
  Vec m(x.cols(), 0.0);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) m[j] += x(i, j);
  for (auto& v : m) v /= x.rows();
  return m;
}

double consensus_residual(const Mat& x) {
  const Vec m = col_mean(x);
  double s = 0.0;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - m[j];
      s += d * d;
    }
  return std::sqrt(s);
}

SymEig sym_eig(const Mat& a_in, int max_sweeps) {
  const int n = a_in.rows();
  if (n != a_in.cols()) throw DomainError("sym_eig: matrix not square");
  Mat a = a_in;
  Mat v = Mat::identity(n);

  auto offdiag = [&]() {
    double s = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) s += a(p, q) * a(p, q);
    return std::sqrt(2.0 * s);
  };

  const double scale0 = std::max(frob(a_in), 1e-300);
  bool converged = (n == 1);
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    if (offdiag() <= 1e-15 * scale0) {
      converged = true;
      break;
    }
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged && offdiag() > 1e-12 * scale0)
    throw NumericalError("sym_eig: Jacobi sweeps did not converge");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a(i, i) > a(j, j); });

  SymEig out;
  out.values.resize(n);
  out.vectors = Mat(n, n);
  for (int c = 0; c < n; ++c) {
    const int src = order[c];
    out.values[c] = a(src, src);
    // Sign convention: first component of non-negligible magnitude positive.
    double flip = 1.0;
    for (int k = 0; k < n; ++k) {
      if (std::fabs(v(k, src)) > 1e-12) {
        flip = v(k, src) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (int k = 0; k < n; ++k) out.vectors(k, c) = flip * v(k, src);
  }
  return out;
}

Mat solve(Mat a, Mat b) {
  const int n = a.rows();
  if (n != a.cols() || b.rows() != n) throw DomainError("solve: dimension mismatch");
  const int m = b.cols();
  const double scale0 = std::max(max_abs(a), 1e-300);
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i)
      if (std::fabs(a(i, k)) > std::fabs(a(piv, k))) piv = i;
    if (std::fabs(a(piv, k)) < 1e-14 * scale0)
      throw NumericalError("solve: singular (or nearly singular) system");
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      for (int j = 0; j < m; ++j) std::swap(b(k, j), b(piv, j));
    }
    for (int i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (int j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      for (int j = 0; j < m; ++j) b(i, j) -= f * b(k, j);
    }
  }
  for (int k = n - 1; k >= 0; --k) {
    for (int j = 0; j < m; ++j) {
      double s = b(k, j);
      for (int i = k + 1; i < n; ++i) s -= a(k, i) * b(i, j);
      b(k, j) = s / a(k, k);
    }
  }
  return b;
}

Vec solve(Mat a, const Vec& b) {
  Mat col(static_cast<int>(b.size()), 1);
  for (std::size_t i = 0; i < b.size(); ++i) col(static_cast<int>(i), 0) = b[i];
  Mat x = solve(std::move(a), std::move(col));
  Vec out(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = x(static_cast<int>(i), 0);
  return out;
}

Mat random_orthogonal(int n, Rng& rng) {
  Mat q(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) q(i, j) = rng.normal();
  // Modified Gram-Schmidt, run twice for orthogonality near machine level.
  for (int pass = 0; pass < 2; ++pass) {
    for (int c = 0; c < n; ++c) {
      for (int p = 0; p < c; ++p) {
        double proj = 0.0;
        for (int k = 0; k < n; ++k) proj += q(k, c) * q(k, p);
        for (int k = 0; k < n; ++k) q(k, c) -= proj * q(k, p);
      }
      double nrm = 0.0;
      for (int k = 0; k < n; ++k) nrm += q(k, c) * q(k, c);
      nrm = std::sqrt(nrm);
      if (nrm < 1e-12) {
        // Degenerate draw; replace with a unit coordinate direction.
        for (int k = 0; k < n; ++k) q(k, c) = (k == c) ? 1.0 : 0.0;
        continue;
      }
      for (int k = 0; k < n; ++k) q(k, c) /= nrm;
    }
  }
  return q;
}

Mat random_symmetric_with_spectrum(int n, double lo, double hi, Rng& rng) {
  if (hi < lo) throw DomainError("random_symmetric_with_spectrum: hi < lo");
  Mat q = random_orthogonal(n, rng);
  Vec eigs(n);
  for (int i = 0; i < n; ++i) eigs[i] = rng.uniform(lo, hi);
  if (n >= 1) eigs[0] = lo;
  if (n >= 2) eigs[1] = hi;
  Mat r(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += q(i, k) * eigs[k] * q(j, k);
      r(i, j) = s;
      r(j, i) = s;
    }
  return r;
}

}  // namespace degrad
