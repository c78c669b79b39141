#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "degrad/linalg.hpp"
#include "degrad/rng.hpp"

namespace degrad {

// A local objective: differentiable, mu-strongly convex and L-smooth on R^d,
// with certified constants. Objectives are supplied analytically so the
// certificates are exact.
class LocalObjective {
 public:
  virtual ~LocalObjective() = default;

  virtual int dim() const = 0;
  virtual double value(const Vec& x) const = 0;
  virtual Vec gradient(const Vec& x) const = 0;
  virtual double mu() const = 0;
  virtual double L() const = 0;

  virtual bool has_hessian() const { return false; }
  virtual Mat hessian(const Vec& x) const;

  virtual bool has_stochastic_gradient() const { return false; }
  virtual Vec stochastic_gradient(const Vec& x, Rng& rng) const;

  virtual bool is_quadratic() const { return false; }
};

// f(x) = (1/2) x^T C x - b^T x with SPD curvature C.
class QuadraticObjective final : public LocalObjective {
 public:
  QuadraticObjective(Mat curvature, Vec linear);

  int dim() const override { return static_cast<int>(linear_.size()); }
  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  double mu() const override { return mu_; }
  double L() const override { return l_; }
  bool has_hessian() const override { return true; }
  Mat hessian(const Vec&) const override { return curvature_; }
  bool is_quadratic() const override { return true; }

  const Mat& curvature() const { return curvature_; }
  const Vec& linear() const { return linear_; }
  Vec minimizer() const;  // solves C m = b

 private:
  Mat curvature_;
  Vec linear_;
  double mu_ = 0.0;
  double l_ = 0.0;
};

// Mean squared residual over a local dataset plus an optional ridge term:
// f(x) = (1/m) sum_i (a_i^T x - y_i)^2 + ridge * ||x||^2.
// The stochastic gradient samples one data point uniformly; the ridge term
// is deterministic and enters every sample.
class RegressionObjective final : public LocalObjective {
 public:
  struct DataPoint {
    Vec feature;
    double target;
  };

  RegressionObjective(std::vector<DataPoint> data, double ridge);

  int dim() const override { return dim_; }
  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  double mu() const override { return mu_; }
  double L() const override { return l_; }
  bool has_hessian() const override { return true; }
  Mat hessian(const Vec&) const override { return hessian_; }
  bool has_stochastic_gradient() const override { return true; }
  Vec stochastic_gradient(const Vec& x, Rng& rng) const override;
  bool is_quadratic() const override { return true; }

  const std::vector<DataPoint>& data() const { return data_; }
  double ridge() const { return ridge_; }

 private:
  std::vector<DataPoint> data_;
  double ridge_ = 0.0;
  int dim_ = 0;
  Mat hessian_;  // constant: (2/m) sum a a^T + 2 ridge I
  double mu_ = 0.0;
  double l_ = 0.0;
};

// N local objectives over a shared R^d. The ensemble certificate collapses
// heterogeneous constants conservatively: mu = min_n mu_n, L = max_n L_n.
class ObjectiveEnsemble {
 public:
  explicit ObjectiveEnsemble(std::vector<std::shared_ptr<const LocalObjective>> locals);

  int n_agents() const { return static_cast<int>(locals_.size()); }
  int dim() const { return dim_; }
  double mu() const { return mu_; }
  double L() const { return l_; }
  const LocalObjective& local(int n) const { return *locals_[n]; }
  bool all_quadratic() const { return all_quadratic_; }
  bool all_stochastic() const { return all_stochastic_; }

  // Component-wise objective at a stacked iterate: sum_n f_n(X row n).
  double stacked_value(const Mat& x) const;

 private:
  std::vector<std::shared_ptr<const LocalObjective>> locals_;
  int dim_ = 0;
  double mu_ = 0.0;
  double l_ = 0.0;
  bool all_quadratic_ = true;
  bool all_stochastic_ = true;
};

// ---- factories ----

ObjectiveEnsemble make_quadratic(const std::vector<Mat>& curvatures,
                                 const std::vector<Vec>& linear_terms);

// Scalar curvatures c_n expand to c_n * I.
ObjectiveEnsemble make_quadratic(const std::vector<double>& curvatures,
                                 const std::vector<Vec>& linear_terms);

// One-dimensional agents f_n(x) = (c_n/2) (x - m_n)^2.
ObjectiveEnsemble make_scalar_quadratic(const Vec& curvatures, const Vec& minimizers);

ObjectiveEnsemble make_linear_regression(
    const std::vector<std::vector<RegressionObjective::DataPoint>>& per_agent_data,
    double ridge);

// ---- operations ----

// Row n holds grad f_n at row n of X.
Mat grad_stack(const ObjectiveEnsemble& e, const Mat& x, Exec exec = Exec::Serial);

struct OptimumReport {
  Vec x_star;            // minimizer of F = (1/N) sum f_n
  Mat grad_at_opt;       // grad_stack at the consensus matrix 1 x*^T
  Mat local_minimizers;  // row n: argmin f_n
};

// Quadratic ensembles solve analytically; otherwise gradient descent at
// eta = 2/(L+mu) down to ||grad F|| <= tol, iteration cap 1e7.
OptimumReport solve_optimum(const ObjectiveEnsemble& e, double tol = 1e-10);

struct HeterogeneityReport {
  double grad_norm;  // || grad f(x*) ||_F
  double dist;       // || X* - X*_loc ||_F
  double gap;        // f(X*) - f(X*_loc)
  bool bounds_ok;    // sandwich inequalities through 1/L, 1/mu hold
};

HeterogeneityReport heterogeneity(const ObjectiveEnsemble& e);

// Symmetric matrix with spectrum inside [mu, L] mapping y - x to
// grad f(y) - grad f(x). Canonical projector form; the one-dimensional case
// degenerates to the divided difference.
struct MhtKernel {
  Vec a;          // y - x
  Vec b;          // grad f(y) - grad f(x)
  double alpha;   // ||a||/||b|| in the parallel branch
  Mat matrix;
};

MhtKernel mht_kernel(const LocalObjective& f, const Vec& x, const Vec& y);

// Noisy stacked gradient and its deviation from the exact stack; the noise
// has zero conditional mean by construction (uniform subsampling).
std::pair<Mat, Mat> sample_stochastic_grad(const ObjectiveEnsemble& e, const Mat& x, Rng& rng);

}  // namespace degrad
