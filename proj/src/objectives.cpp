#include "degrad/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "degrad/errors.hpp"

namespace degrad {

Mat LocalObjective::hessian(const Vec&) const {
  throw CapabilityError("objective does not expose a Hessian");
}

Vec LocalObjective::stochastic_gradient(const Vec&, Rng&) const {
  throw CapabilityError("objective does not expose a stochastic gradient sampler");
}

QuadraticObjective::QuadraticObjective(Mat curvature, Vec linear)
    : curvature_(std::move(curvature)), linear_(std::move(linear)) {
  const int d = static_cast<int>(linear_.size());
  if (curvature_.rows() != d || curvature_.cols() != d)
    throw DomainError("quadratic objective: curvature shape mismatch");
  double defect = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      defect = std::max(defect, std::fabs(curvature_(i, j) - curvature_(j, i)));
  if (defect > 1e-12) throw DomainError("quadratic objective: curvature not symmetric");
  const SymEig eig = sym_eig(curvature_);
  mu_ = eig.values.back();
  l_ = eig.values.front();
  if (!(mu_ > 0.0)) throw DomainError("quadratic objective: curvature not positive definite");
}

double QuadraticObjective::value(const Vec& x) const {
  const Vec cx = matvec(curvature_, x);
  return 0.5 * dot(x, cx) - dot(linear_, x);
}

Vec QuadraticObjective::gradient(const Vec& x) const {
  Vec g = matvec(curvature_, x);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= linear_[i];
  return g;
}

Vec QuadraticObjective::minimizer() const { return solve(curvature_, linear_); }

RegressionObjective::RegressionObjective(std::vector<DataPoint> data, double ridge)
    : data_(std::move(data)), ridge_(ridge) {
  if (data_.empty()) throw DomainError("regression objective: empty dataset");
  if (ridge_ < 0.0) throw DomainError("regression objective: ridge must be nonnegative");
  dim_ = static_cast<int>(data_[0].feature.size());
  for (const auto& p : data_)
    if (static_cast<int>(p.feature.size()) != dim_)
      throw DomainError("regression objective: inconsistent feature dimensions");

  hessian_ = Mat(dim_, dim_, 0.0);
  const double scale = 2.0 / static_cast<double>(data_.size());
  for (const auto& p : data_)
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) hessian_(i, j) += scale * p.feature[i] * p.feature[j];
  for (int i = 0; i < dim_; ++i) hessian_(i, i) += 2.0 * ridge_;

  const SymEig eig = sym_eig(hessian_);
  mu_ = eig.values.back();
  l_ = eig.values.front();
  if (!(mu_ > 0.0))
    throw DegenerateObjectiveError(
        "regression objective: Gram matrix not positive definite; a positive ridge is required");
}

double RegressionObjective::value(const Vec& x) const {
  double s = 0.0;
  for (const auto& p : data_) {
    const double r = dot(p.feature, x) - p.target;
    s += r * r;
  }
  s /= static_cast<double>(data_.size());
  return s + ridge_ * dot(x, x);
}

Vec RegressionObjective::gradient(const Vec& x) const {
  Vec g(dim_, 0.0);
  const double scale = 2.0 / static_cast<double>(data_.size());
  for (const auto& p : data_) {
    const double r = dot(p.feature, x) - p.target;
    for (int i = 0; i < dim_; ++i) g[i] += scale * r * p.feature[i];
  }
  for (int i = 0; i < dim_; ++i) g[i] += 2.0 * ridge_ * x[i];
  return g;
}

Vec RegressionObjective::stochastic_gradient(const Vec& x, Rng& rng) const {
  const auto& p = data_[rng.below(data_.size())];
  const double r = dot(p.feature, x) - p.target;
  Vec g(dim_);
  for (int i = 0; i < dim_; ++i) g[i] = 2.0 * r * p.feature[i] + 2.0 * ridge_ * x[i];
  return g;
}

ObjectiveEnsemble::ObjectiveEnsemble(std::vector<std::shared_ptr<const LocalObjective>> locals)
    : locals_(std::move(locals)) {
  if (locals_.empty()) throw DomainError("ensemble: needs at least one local objective");
  dim_ = locals_[0]->dim();
  mu_ = locals_[0]->mu();
  l_ = locals_[0]->L();
  for (const auto& f : locals_) {
    if (!f) throw DomainError("ensemble: null objective");
    if (f->dim() != dim_) throw DomainError("ensemble: locals must share the dimension");
    mu_ = std::min(mu_, f->mu());
    l_ = std::max(l_, f->L());
    all_quadratic_ = all_quadratic_ && f->is_quadratic();
    all_stochastic_ = all_stochastic_ && f->has_stochastic_gradient();
  }
  if (mu_ > l_) throw DomainError("ensemble: mu exceeds L");
}

double ObjectiveEnsemble::stacked_value(const Mat& x) const {
  if (x.rows() != n_agents() || x.cols() != dim_)
    throw DomainError("stacked_value: iterate shape mismatch");
  double s = 0.0;
  Vec row(dim_);
  for (int n = 0; n < n_agents(); ++n) {
    for (int j = 0; j < dim_; ++j) row[j] = x(n, j);
    s += locals_[n]->value(row);
  }
  return s;
}

ObjectiveEnsemble make_quadratic(const std::vector<Mat>& curvatures,
                                 const std::vector<Vec>& linear_terms) {
  if (curvatures.size() != linear_terms.size())
    throw DomainError("make_quadratic: curvature and linear term counts differ");
  std::vector<std::shared_ptr<const LocalObjective>> locals;
  locals.reserve(curvatures.size());
  for (std::size_t n = 0; n < curvatures.size(); ++n)
    locals.push_back(std::make_shared<QuadraticObjective>(curvatures[n], linear_terms[n]));
  return ObjectiveEnsemble(std::move(locals));
}

ObjectiveEnsemble make_quadratic(const std::vector<double>& curvatures,
                                 const std::vector<Vec>& linear_terms) {
  if (curvatures.size() != linear_terms.size())
    throw DomainError("make_quadratic: curvature and linear term counts differ");
  std::vector<Mat> mats;
  mats.reserve(curvatures.size());
  for (std::size_t n = 0; n < curvatures.size(); ++n) {
    const int d = static_cast<int>(linear_terms[n].size());
    Mat c(d, d, 0.0);
    for (int i = 0; i < d; ++i) c(i, i) = curvatures[n];
    mats.push_back(std::move(c));
  }
  return make_quadratic(mats, linear_terms);
}

ObjectiveEnsemble make_scalar_quadratic(const Vec& curvatures, const Vec& minimizers) {
  if (curvatures.size() != minimizers.size())
    throw DomainError("make_scalar_quadratic: size mismatch");
  std::vector<Vec> linear;
  linear.reserve(curvatures.size());
  for (std::size_t n = 0; n < curvatures.size(); ++n)
    linear.push_back(Vec{curvatures[n] * minimizers[n]});
  return make_quadratic(std::vector<double>(curvatures.begin(), curvatures.end()), linear);
}

ObjectiveEnsemble make_linear_regression(
    const std::vector<std::vector<RegressionObjective::DataPoint>>& per_agent_data,
    double ridge) {
  std::vector<std::shared_ptr<const LocalObjective>> locals;
  locals.reserve(per_agent_data.size());
  for (const auto& rows : per_agent_data)
    locals.push_back(std::make_shared<RegressionObjective>(rows, ridge));
  return ObjectiveEnsemble(std::move(locals));
}

Mat grad_stack(const ObjectiveEnsemble& e, const Mat& x, Exec exec) {
  const int n = e.n_agents();
  const int d = e.dim();
  if (x.rows() != n || x.cols() != d) throw DomainError("grad_stack: iterate shape mismatch");
  Mat g(n, d);
  auto fill_row = [&](int row) {
    Vec xr(d);
    for (int j = 0; j < d; ++j) xr[j] = x(row, j);
    const Vec gr = e.local(row).gradient(xr);
    for (int j = 0; j < d; ++j) g(row, j) = gr[j];
  };
#ifdef _OPENMP
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (int row = 0; row < n; ++row) fill_row(row);
    return g;
  }
#else
  (void)exec;
#endif
  for (int row = 0; row < n; ++row) fill_row(row);
  return g;
}

namespace {

Vec descend(const std::function<Vec(const Vec&)>& grad, int d, double eta, double tol,
            const char* what) {
  Vec x(d, 0.0);
  const long cap = 10'000'000;
  for (long it = 0; it < cap; ++it) {
    const Vec g = grad(x);
    if (norm2(g) <= tol) return x;
    for (int j = 0; j < d; ++j) x[j] -= eta * g[j];
  }
  throw ConvergenceError(std::string(what) + ": gradient descent exceeded the iteration cap");
}

}  // namespace

OptimumReport solve_optimum(const ObjectiveEnsemble& e, double tol) {
  const int n = e.n_agents();
  const int d = e.dim();
  OptimumReport rep;

  if (e.all_quadratic()) {
    // grad F = (1/N) (sum C_n) x - (1/N) (sum b_n); solve directly.
    Mat csum(d, d, 0.0);
    Vec bsum(d, 0.0);
    for (int k = 0; k < n; ++k) {
      const Vec zero(d, 0.0);
      const Mat h = e.local(k).hessian(zero);
      const Vec g0 = e.local(k).gradient(zero);  // equals -b_k
      csum = add(csum, h);
      for (int j = 0; j < d; ++j) bsum[j] -= g0[j];
    }
    rep.x_star = solve(csum, bsum);
  } else {
    const double eta = 2.0 / (e.L() + e.mu());
    rep.x_star = descend(
        [&](const Vec& x) {
          Vec g(d, 0.0);
          for (int k = 0; k < n; ++k) {
            const Vec gk = e.local(k).gradient(x);
            for (int j = 0; j < d; ++j) g[j] += gk[j];
          }
          for (int j = 0; j < d; ++j) g[j] /= n;
          return g;
        },
        d, eta, tol, "solve_optimum (global)");
  }

  rep.local_minimizers = Mat(n, d);
  for (int k = 0; k < n; ++k) {
    Vec mk;
    if (const auto* q = dynamic_cast<const QuadraticObjective*>(&e.local(k))) {
      mk = q->minimizer();
    } else if (e.local(k).is_quadratic() && e.local(k).has_hessian()) {
      const Vec zero(d, 0.0);
      mk = solve(e.local(k).hessian(zero), vscale(-1.0, e.local(k).gradient(zero)));
    } else {
      const double eta = 2.0 / (e.local(k).L() + e.local(k).mu());
      mk = descend([&](const Vec& x) { return e.local(k).gradient(x); }, d, eta, tol,
                   "solve_optimum (local)");
    }
    for (int j = 0; j < d; ++j) rep.local_minimizers(k, j) = mk[j];
  }

  Mat consensus(n, d);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < d; ++j) consensus(k, j) = rep.x_star[j];
  rep.grad_at_opt = grad_stack(e, consensus);
  return rep;
}

HeterogeneityReport heterogeneity(const ObjectiveEnsemble& e) {
  const OptimumReport opt = solve_optimum(e);
  const int n = e.n_agents();
  const int d = e.dim();

  HeterogeneityReport rep{};
  rep.grad_norm = frob(opt.grad_at_opt);

  Mat consensus(n, d);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < d; ++j) consensus(k, j) = opt.x_star[j];
  rep.dist = frob_dist(consensus, opt.local_minimizers);
  rep.gap = e.stacked_value(consensus) - e.stacked_value(opt.local_minimizers);

  const double mu = e.mu();
  const double l = e.L();
  const double g = rep.grad_norm;
  const double slack = 1e-8;
  auto leq = [slack](double lhs, double rhs) {
    return lhs <= rhs + slack * std::max({1.0, std::fabs(lhs), std::fabs(rhs)});
  };
  rep.bounds_ok = leq(g / l, rep.dist) && leq(rep.dist, g / mu) &&
                  leq(g * g / (2.0 * l), rep.gap) && leq(rep.gap, g * g / (2.0 * mu));
  return rep;
}

MhtKernel mht_kernel(const LocalObjective& f, const Vec& x, const Vec& y) {
  const int m = f.dim();
  if (static_cast<int>(x.size()) != m || static_cast<int>(y.size()) != m)
    throw DomainError("mht_kernel: dimension mismatch");
  MhtKernel k;
  k.a = vsub(y, x);
  const double na = norm2(k.a);
  if (na == 0.0) throw DomainError("mht_kernel: x and y must differ");
  k.b = vsub(f.gradient(y), f.gradient(x));
  const double nb = norm2(k.b);
  const double mu = f.mu();
  const double l = f.L();

  if (nb < mu * na * (1.0 - 1e-9) || nb > l * na * (1.0 + 1e-9)) {
    std::ostringstream os;
    os << "mht_kernel: ||b||/||a|| = " << nb / na << " outside the certified range ["
       << mu << ", " << l << "]";
    throw CertificationError(os.str());
  }

  const double ba = dot(k.b, k.a);
  if (ba < mu * na * na * (1.0 - 1e-9))
    throw CertificationError("mht_kernel: strong-convexity inner-product certificate violated");

  // Parallel branch: b within 1e-12 relative of span{a}.
  const double proj = ba / (na * na);
  Vec resid = k.b;
  for (int i = 0; i < m; ++i) resid[i] -= proj * k.a[i];
  const double numer = ba - mu * na * na;
  const double denom = nb * nb - mu * ba;
  if (norm2(resid) <= 1e-12 * nb || denom <= 0.0 || numer < 0.0) {
    const double ratio = nb / na;
    k.alpha = na / nb;
    k.matrix = Mat(m, m, 0.0);
    for (int i = 0; i < m; ++i) k.matrix(i, i) = ratio;
    return k;
  }

  k.alpha = numer / denom;
  const double top = 1.0 / k.alpha;
  if (top < mu - 1e-9 || top > l + 1e-9)
    throw CertificationError("mht_kernel: projector eigenvalue outside [mu, L]");

  // mu on the complement of w = b - mu a, 1/alpha along w.
  Vec w(m);
  for (int i = 0; i < m; ++i) w[i] = k.b[i] - mu * k.a[i];
  const double nw2 = dot(w, w);
  k.matrix = Mat(m, m, 0.0);
  for (int i = 0; i < m; ++i) {
    k.matrix(i, i) = mu;
    for (int j = 0; j < m; ++j) k.matrix(i, j) += (top - mu) * w[i] * w[j] / nw2;
  }
  return k;
}

std::pair<Mat, Mat> sample_stochastic_grad(const ObjectiveEnsemble& e, const Mat& x, Rng& rng) {
  const int n = e.n_agents();
  const int d = e.dim();
  if (x.rows() != n || x.cols() != d)
    throw DomainError("sample_stochastic_grad: iterate shape mismatch");
  if (!e.all_stochastic())
    throw CapabilityError("sample_stochastic_grad: some locals have no sampler");
  Mat noisy(n, d);
  Vec row(d);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < d; ++j) row[j] = x(k, j);
    const Vec g = e.local(k).stochastic_gradient(row, rng);
    for (int j = 0; j < d; ++j) noisy(k, j) = g[j];
  }
  const Mat exact = grad_stack(e, x);
  return {noisy, sub(noisy, exact)};
}

}  // namespace degrad
