#include "degrad/topology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "degrad/errors.hpp"

namespace degrad {

namespace {

std::vector<std::vector<int>> support_adjacency(const Mat& w) {
  const int n = w.rows();
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && std::fabs(w(i, j)) > kSupportThreshold) adj[i].push_back(j);
  return adj;
}

double symmetry_defect(const Mat& w) {
  double m = 0.0;
  for (int i = 0; i < w.rows(); ++i)
    for (int j = i + 1; j < w.cols(); ++j)
      m = std::max(m, std::fabs(w(i, j) - w(j, i)));
  return m;
}

double row_sum_defect(const Mat& w) {
  double m = 0.0;
  for (int i = 0; i < w.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < w.cols(); ++j) s += w(i, j);
    m = std::max(m, std::fabs(s - 1.0));
  }
  return m;
}

}  // namespace

bool support_connected(const Mat& w) {
  const int n = w.rows();
  if (n <= 1) return true;
  const auto adj = support_adjacency(w);
  std::vector<char> seen(n, 0);
  std::deque<int> queue{0};
  seen[0] = 1;
  int count = 1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        queue.push_back(v);
      }
  }
  return count == n;
}

bool support_bipartite(const Mat& w) {
  const int n = w.rows();
  const auto adj = support_adjacency(w);
  std::vector<int> color(n, -1);
  for (int start = 0; start < n; ++start) {
    if (color[start] != -1) continue;
    color[start] = 0;
    std::deque<int> queue{start};
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int v : adj[u]) {
        if (color[v] == -1) {
          color[v] = 1 - color[u];
          queue.push_back(v);
        } else if (color[v] == color[u]) {
          return false;
        }
      }
    }
  }
  return true;
}

Topology::Topology(Mat w)
    : n_(w.rows()), w_(std::move(w)), cell_(std::make_shared<SpectrumCell>()) {}

Topology Topology::from_weights(Mat w) {
  if (w.rows() < 1 || w.rows() != w.cols())
    throw ValidityError("topology: weight matrix must be square and nonempty");
  if (symmetry_defect(w) > 1e-12)
    throw ValidityError("topology: weight matrix not symmetric within 1e-12");
  if (row_sum_defect(w) > 1e-12)
    throw ValidityError("topology: rows must sum to one within 1e-12");
  if (!support_connected(w))
    throw ValidityError("topology: support graph is disconnected");
  return Topology(std::move(w));
}

const SpectrumReport& Topology::spectrum() const {
  std::call_once(cell_->flag, [this]() {
    SymEig eig = sym_eig(w_);
    SpectrumReport rep;
    rep.eigenvalues = std::move(eig.values);
    rep.eigenvectors = std::move(eig.vectors);
    rep.lambda2 = (n_ > 1) ? rep.eigenvalues[1] : rep.eigenvalues[0];
    rep.lambdaN = rep.eigenvalues[n_ - 1];
    // Reconstruction check: || U diag(lambda) U^T - W ||_F <= 1e-9.
    double err2 = 0.0;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        double s = 0.0;
        for (int k = 0; k < n_; ++k)
          s += rep.eigenvectors(i, k) * rep.eigenvalues[k] * rep.eigenvectors(j, k);
        const double d = s - w_(i, j);
        err2 += d * d;
      }
    if (std::sqrt(err2) > 1e-9)
      throw NumericalError("topology spectrum: reconstruction error above 1e-9");
    cell_->report = std::move(rep);
  });
  return cell_->report;
}

Topology build_toy(ToyKind kind, int n, double epsilon) {
  if (n < 2) throw DomainError("build_toy: need at least 2 agents");
  if (!(epsilon > 0.0)) throw StepSizeError("build_toy: epsilon must be positive");

  if (kind == ToyKind::Complete) {
    Mat w(n, n, 1.0 / n);
    return Topology::from_weights(std::move(w));
  }

  Mat adj(n, n, 0.0);
  switch (kind) {
    case ToyKind::Star:
      for (int i = 1; i < n; ++i) adj(0, i) = adj(i, 0) = 1.0;
      break;
    case ToyKind::Line:
      for (int i = 0; i + 1 < n; ++i) adj(i, i + 1) = adj(i + 1, i) = 1.0;
      break;
    case ToyKind::Ring:
      for (int i = 0; i + 1 < n; ++i) adj(i, i + 1) = adj(i + 1, i) = 1.0;
      adj(0, n - 1) = adj(n - 1, 0) = 1.0;
      break;
    default:
      break;
  }
  return from_laplacian(adj, epsilon);
}

Topology from_laplacian(const Mat& adjacency, double epsilon) {
  const int n = adjacency.rows();
  if (n < 2 || n != adjacency.cols())
    throw DomainError("from_laplacian: adjacency must be square with n >= 2");
  int k_max = 0;
  for (int i = 0; i < n; ++i) {
    if (adjacency(i, i) != 0.0)
      throw DomainError("from_laplacian: adjacency diagonal must be zero");
    int deg = 0;
    for (int j = 0; j < n; ++j) {
      const double a = adjacency(i, j);
      if (a != 0.0 && a != 1.0)
        throw DomainError("from_laplacian: adjacency entries must be 0 or 1");
      if (std::fabs(a - adjacency(j, i)) != 0.0)
        throw DomainError("from_laplacian: adjacency must be symmetric");
      if (i != j && a == 1.0) ++deg;
    }
    k_max = std::max(k_max, deg);
  }
  if (!support_connected(adjacency))
    throw ValidityError("from_laplacian: graph is disconnected");
  if (!(epsilon > 0.0) || epsilon >= 1.0 / k_max) {
    std::ostringstream os;
    os << "from_laplacian: epsilon must lie in (0, " << 1.0 / k_max
       << ") for max degree " << k_max;
    throw StepSizeError(os.str());
  }
  // W = I - eps * (D - A).
  Mat w(n, n, 0.0);
  for (int i = 0; i < n; ++i) {
    int deg = 0;
    for (int j = 0; j < n; ++j)
      if (i != j && adjacency(i, j) == 1.0) {
        w(i, j) = epsilon;
        ++deg;
      }
    w(i, i) = 1.0 - epsilon * deg;
  }
  return Topology::from_weights(std::move(w));
}

ValidityReport validate(const Topology& t) {
  ValidityReport rep;
  const Mat& w = t.weights();
  const int n = t.n_agents();

  rep.is_symmetric = symmetry_defect(w) <= 1e-12;
  rep.rows_sum_to_one = row_sum_defect(w) <= 1e-12;
  rep.is_connected = support_connected(w);
  rep.is_bipartite = support_bipartite(w);

  rep.is_nonnegative = true;
  for (int i = 0; i < n && rep.is_nonnegative; ++i)
    for (int j = 0; j < n; ++j)
      if (w(i, j) < -1e-14) {
        rep.is_nonnegative = false;
        break;
      }

  if (n == 1) {
    rep.satisfies_eig_condition = true;  // single agent, lambda_1 = 1 only
  } else {
    try {
      const auto& sp = t.spectrum();
      rep.satisfies_eig_condition =
          sp.lambda2 < 1.0 - 1e-10 && sp.lambdaN > -1.0 + 1e-10;
      if (!rep.satisfies_eig_condition) {
        std::ostringstream os;
        os << "eigenvalue condition violated: lambda2 = " << sp.lambda2
           << ", lambdaN = " << sp.lambdaN;
        rep.messages.push_back(os.str());
      }
    } catch (const Error& e) {
      rep.satisfies_eig_condition = false;
      rep.messages.push_back(std::string("spectrum unavailable: ") + e.what());
    }
  }
  if (!rep.is_symmetric) rep.messages.push_back("weights are not symmetric");
  if (!rep.rows_sum_to_one) rep.messages.push_back("row sums differ from one");
  if (!rep.is_connected) rep.messages.push_back("support graph disconnected");
  if (rep.is_bipartite && n > 1) rep.messages.push_back("support graph is bipartite");
  return rep;
}

double pinv_w_norm(const Topology& t) {
  const auto& sp = t.spectrum();
  double m = 0.0;
  for (double lam : sp.eigenvalues) {
    if (std::fabs(1.0 - lam) <= 1e-10) continue;  // nullspace of I - W
    m = std::max(m, std::fabs(lam / (1.0 - lam)));
  }
  return m;
}

double topology_factor(const Topology& t, FactorKind kind) {
  if (kind == FactorKind::Diffusion) return 2.0 * pinv_w_norm(t);
  if (t.n_agents() == 1) return 0.0;  // single agent: no consensus error
  const double l2 = t.lambda2();
  if (l2 >= 1.0 - 1e-10)
    throw DomainError("topology_factor: lambda2 >= 1, degenerate topology");
  return 1.0 / (1.0 - l2);
}

Topology scale_consensus(const Topology& t, double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0)
    throw DomainError("scale_consensus: gamma must lie in (0, 1]");
  if (gamma == 1.0) return t;
  const int n = t.n_agents();
  Mat w(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      w(i, j) = gamma * t.weights()(i, j) + (i == j ? 1.0 - gamma : 0.0);
  return Topology::from_weights(std::move(w));
}

Topology combine_rounds(const Topology& t, const Vec& alphas) {
  if (alphas.empty()) throw DomainError("combine_rounds: empty weight vector");
  double sum = 0.0;
  for (double a : alphas) {
    if (a < 0.0) throw DomainError("combine_rounds: weights must be nonnegative");
    sum += a;
  }
  if (std::fabs(sum - 1.0) > 1e-12)
    throw DomainError("combine_rounds: weights must sum to one within 1e-12");
  if (alphas.size() == 1) return t;

  const int n = t.n_agents();
  Mat acc(n, n, 0.0);
  Mat power = t.weights();
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (k > 0) power = matmul(power, t.weights());
    if (alphas[k] != 0.0) acc = add(acc, scale(alphas[k], power));
  }
  return Topology::from_weights(std::move(acc));
}

LinkFailureModel LinkFailureModel::uniform(const Topology& t, double p, Mode mode) {
  const int n = t.n_agents();
  Mat probs(n, n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      probs(i, j) = (i == j) ? 1.0 : (std::fabs(t.weights()(i, j)) > kSupportThreshold ? p : 0.0);
  LinkFailureModel m;
  m.success_probs = std::move(probs);
  m.mode = mode;
  return m;
}

void check_link_model(const Topology& t, const LinkFailureModel& model) {
  const int n = t.n_agents();
  const Mat& p = model.success_probs;
  if (p.rows() != n || p.cols() != n)
    throw DomainError("link model: probability matrix has wrong shape");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (std::fabs(p(i, j) - p(j, i)) > 1e-12)
        throw DomainError("link model: success probabilities must be symmetric");
      if (p(i, j) < 0.0 || p(i, j) > 1.0)
        throw DomainError("link model: probabilities must lie in [0, 1]");
      const bool on_support =
          (i != j && std::fabs(t.weights()(i, j)) > kSupportThreshold) || i == j;
      if (on_support && !(p(i, j) > 0.0))
        throw DomainError("link model: probabilities on the support must be positive");
    }
}

namespace {

void require_failure_preconditions(const Topology& t) {
  // E[Q] interpolates W toward the identity, so its eigenvalues dominate
  // those of W; requiring W nonnegative with lambda2 < 1 and lambdaN > -1
  // makes the mean dynamics admissible. A bipartite support with zero
  // diagonal (lambdaN = -1) is exactly the case this rejects.
  const ValidityReport rep = validate(t);
  if (!rep.is_nonnegative)
    throw DomainError("link failure: base weights must be nonnegative");
  if (!rep.satisfies_eig_condition)
    throw DomainError(
        "link failure: base topology must satisfy the eigenvalue condition "
        "(nonnegative and not bipartite without self-weights)");
}

}  // namespace

Mat build_q_from_mask(const Topology& t, const LinkFailureModel& model, const Mat& mask) {
  const int n = t.n_agents();
  const Mat& w = t.weights();
  Mat q(n, n, 0.0);
  for (int i = 0; i < n; ++i) {
    double removed;
    if (model.mode == LinkFailureModel::Mode::KnownProbs) {
      removed = 0.0;  // expected incoming mass
      for (int k = 0; k < n; ++k) removed += model.success_probs(i, k) * w(i, k);
    } else {
      removed = 0.0;  // realized incoming mass
      for (int k = 0; k < n; ++k) removed += mask(i, k) * w(i, k);
    }
    for (int j = 0; j < n; ++j)
      if (i != j) q(i, j) = mask(i, j) * w(i, j);
    q(i, i) = 1.0 + mask(i, i) * w(i, i) - removed;
  }
  return q;
}

Mat sample_link_failure(const Topology& t, const LinkFailureModel& model, Rng& rng) {
  check_link_model(t, model);
  require_failure_preconditions(t);
  const int n = t.n_agents();
  // Directed transmissions fail independently; the realized matrix need not
  // be symmetric.
  Mat mask(n, n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double p = model.success_probs(i, j);
      mask(i, j) = (p >= 1.0) ? 1.0 : (rng.bernoulli(p) ? 1.0 : 0.0);
    }
  return build_q_from_mask(t, model, mask);
}

Mat expected_q(const Topology& t, const LinkFailureModel& model) {
  check_link_model(t, model);
  require_failure_preconditions(t);
  const int n = t.n_agents();
  const Mat& w = t.weights();
  Mat q(n, n, 0.0);
  for (int i = 0; i < n; ++i) {
    double incoming = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) incoming += model.success_probs(i, k) * w(i, k);
    for (int j = 0; j < n; ++j)
      if (i != j) q(i, j) = model.success_probs(i, j) * w(i, j);
    q(i, i) = 1.0 - incoming;
  }
  return q;
}

LinkNoiseBound link_noise_variance_bound(const Topology& t, const LinkFailureModel& model) {
  check_link_model(t, model);
  const int n = t.n_agents();
  const Mat& w = t.weights();
  LinkNoiseBound out{};
  if (model.mode == LinkFailureModel::Mode::KnownProbs) {
    out.coefficient = n / 4.0;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double p = model.success_probs(i, j);
        s += p * (1.0 - p) * w(i, j) * w(i, j);
      }
    out.tighter_sum = s;
  } else {
    out.coefficient = n / 2.0;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s += w(i, j) * w(i, j);
    out.tighter_sum = 0.5 * s;
  }
  return out;
}

}  // namespace degrad
