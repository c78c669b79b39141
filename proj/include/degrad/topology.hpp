#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "degrad/linalg.hpp"
#include "degrad/rng.hpp"

namespace degrad {

// Off-diagonal entries with magnitude above this threshold define the
// support graph used for connectivity and bipartiteness decisions.
inline constexpr double kSupportThreshold = 1e-14;

struct SpectrumReport {
  Vec eigenvalues;   // descending: lambda_1 >= ... >= lambda_N
  Mat eigenvectors;  // orthonormal columns paired with eigenvalues
  double lambda2 = 1.0;
  double lambdaN = 1.0;
};

struct ValidityReport {
  bool is_symmetric = false;
  bool rows_sum_to_one = false;
  bool is_connected = false;
  bool satisfies_eig_condition = false;  // lambda2 < 1 and lambdaN > -1
  bool is_nonnegative = false;
  bool is_bipartite = false;
  std::vector<std::string> messages;
};

// A consensus weight matrix: symmetric, rows summing to one, connected
// support. Entries may be negative. Immutable after construction; the
// spectrum is computed lazily and cached (thread-safe).
class Topology {
 public:
  // Validates symmetry (1e-12), row sums (1e-12) and connectivity; throws
  // ValidityError otherwise.
  static Topology from_weights(Mat w);

  int n_agents() const { return n_; }
  const Mat& weights() const { return w_; }
  const SpectrumReport& spectrum() const;

  double lambda2() const { return spectrum().lambda2; }
  double lambdaN() const { return spectrum().lambdaN; }

 private:
  explicit Topology(Mat w);

  struct SpectrumCell {
    std::once_flag flag;
    SpectrumReport report;
  };

  int n_ = 0;
  Mat w_;
  std::shared_ptr<SpectrumCell> cell_;
};

enum class ToyKind { Complete, Star, Line, Ring };

// Equal-edge-weight toy networks. Star/Line/Ring use W = I - eps*L and
// require eps < 1/k_max (largest node degree). The complete graph is the
// exact averaging matrix (1/N in every entry); eps only needs to be positive.
Topology build_toy(ToyKind kind, int n, double epsilon);

// W = I - eps*L for a 0/1 adjacency matrix (symmetric, zero diagonal,
// connected); requires 0 < eps < 1/k_max.
Topology from_laplacian(const Mat& adjacency, double epsilon);

// Diagnoses a weight matrix. Never throws; failures land in messages.
ValidityReport validate(const Topology& t);

enum class FactorKind { DGD, Diffusion };

// Topology factor: 1/(1-lambda2) for DGD, 2*||(I-W)^+ W|| for diffusion.
// Modes with |1 - lambda| <= 1e-10 are treated as the nullspace of I - W.
double topology_factor(const Topology& t, FactorKind kind);

// ||(I-W)^+ W||, the unscaled diffusion spectral quantity.
double pinv_w_norm(const Topology& t);

// W' = (1-gamma) I + gamma W for gamma in (0, 1]. Eigenvalues map to
// 1 - gamma + gamma*lambda; gamma < 1 repairs a bipartite spectrum.
Topology scale_consensus(const Topology& t, double gamma);

// W' = sum_k alpha_k W^k for nonnegative alphas summing to one (K rounds of
// averaging with per-round blending weights).
Topology combine_rounds(const Topology& t, const Vec& alphas);

// ---- random link failures ----

struct LinkFailureModel {
  enum class Mode { KnownProbs, UnknownProbs };

  Mat success_probs;  // symmetric; in (0,1] on the support of W
  Mode mode = Mode::KnownProbs;

  // All links succeed with probability p; self-links always succeed.
  static LinkFailureModel uniform(const Topology& t, double p, Mode mode);
};

// Checks the model against a topology; throws DomainError on bad entries.
void check_link_model(const Topology& t, const LinkFailureModel& model);

// One realized mixing matrix Q. Off-diagonal entries are W_nn' where the
// directed transmission succeeded and 0 where it failed; the diagonal repair
// depends on the mode:
//   KnownProbs:   Q_nn = 1 + S_nn - sum_k p_nk W_nk   (expected incoming mass;
//                 realized rows sum to one only in expectation)
//   UnknownProbs: Q_nn = 1 + S_nn - sum_k S_nk        (realized incoming mass;
//                 rows sum to one exactly)
// Q is asymmetric in general; E[Q] is symmetric with unit row sums.
Mat sample_link_failure(const Topology& t, const LinkFailureModel& model, Rng& rng);

// Deterministic Q from a realized success mask (mask(i,j) in {0,1}); the
// sampling entry point draws the mask and delegates here.
Mat build_q_from_mask(const Topology& t, const LinkFailureModel& model, const Mat& mask);

// E[Q]: off-diagonal p_nn' W_nn', diagonal 1 - sum_{k != n} p_nk W_nk.
Mat expected_q(const Topology& t, const LinkFailureModel& model);

struct LinkNoiseBound {
  double coefficient;  // N/4 (known) or N/2 (unknown)
  double tighter_sum;  // sum p(1-p) W^2 (known) or (1/2) sum W^2 (unknown)
};

// Bounds on the conditional variance of the effective mixing noise
// eps = (Q - E[Q]) x:  E[||eps||^2 | x] <= tighter_sum * ||x||^2
//                                       <= coefficient * ||x||^2.
LinkNoiseBound link_noise_variance_bound(const Topology& t, const LinkFailureModel& model);

// ---- support-graph helpers ----
bool support_connected(const Mat& w);
bool support_bipartite(const Mat& w);

}  // namespace degrad
