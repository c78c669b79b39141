#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "degrad/exec.hpp"
#include "degrad/rng.hpp"

namespace degrad {

using Vec = std::vector<double>;

// Dense row-major matrix. Small and value-semantic; all agents-by-dimension
// iterate blocks and N-by-N weight matrices use this type.
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(static_cast<std::size_t>(rows) * cols, fill) {}

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return a_.size(); }

  double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * cols_ + j]; }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }
  double* row(int i) { return a_.data() + static_cast<std::size_t>(i) * cols_; }
  const double* row(int i) const { return a_.data() + static_cast<std::size_t>(i) * cols_; }

  bool operator==(const Mat& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && a_ == o.a_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> a_;
};

// ---- vector helpers ----
double dot(const Vec& x, const Vec& y);
double norm2(const Vec& x);
Vec vsub(const Vec& x, const Vec& y);
Vec vadd(const Vec& x, const Vec& y);
Vec vscale(double a, const Vec& x);

// ---- matrix helpers ----
Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat sub(const Mat& a, const Mat& b);
Mat scale(double s, const Mat& a);
double frob(const Mat& a);
double max_abs(const Mat& a);
double frob_dist(const Mat& a, const Mat& b);

// C = A * B. The parallel path splits output rows across threads; each output
// element is accumulated by one thread in index order, so Serial and Parallel
// agree bitwise.
Mat matmul(const Mat& a, const Mat& b, Exec exec = Exec::Serial);
Vec matvec(const Mat& a, const Vec& x);

// Column means of X, i.e. (1/N) 1^T X.
Vec col_mean(const Mat& x);
// || X - 1 * colmean(X) ||_F, the distance from the consensus subspace.
double consensus_residual(const Mat& x);

// ---- symmetric eigendecomposition ----
struct SymEig {
  Vec values;   // descending
  Mat vectors;  // orthonormal columns, paired with values; first nonzero
                // component of each column is positive
};

// Cyclic Jacobi. Intended for the modest matrix orders of this project;
// accuracy is near machine precision which the spectral tolerances rely on.
SymEig sym_eig(const Mat& a, int max_sweeps = 100);

// ---- dense solve (Gaussian elimination, partial pivoting) ----
Mat solve(Mat a, Mat b);
Vec solve(Mat a, const Vec& b);

// ---- random matrix factories (tests and the distance-bounding oracle) ----
Mat random_orthogonal(int n, Rng& rng);
// Symmetric matrix with eigenvalues drawn uniformly in [lo, hi]; the extremes
// lo and hi are always included so certificates are exercised at both ends.
Mat random_symmetric_with_spectrum(int n, double lo, double hi, Rng& rng);

}  // namespace degrad
