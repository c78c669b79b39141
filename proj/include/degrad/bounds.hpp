#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "degrad/dynamics.hpp"
#include "degrad/topology.hpp"

namespace degrad {

enum class StepRegime { LowerStep, UpperStep };

// Per-sub-map contraction factor of the noise-free update, with the regime
// it came from. In the lower regime the factor is 1 - eta*mu; in the upper
// regime it is eta*L - 1 (GD/diffusion) or eta*L - lambdaN (DGD). Above
// eta_max no contraction exists and valid is false (not an exception).
struct ContractionSpec {
  double factor = 1.0;
  StepRegime regime = StepRegime::LowerStep;
  double eta_max = 0.0;        // admissibility threshold
  bool valid = false;          // factor < 1
  double eta_lower_max = 0.0;  // boundary between the two regimes
  int local_updates = 1;

  // Factor per outer iteration (T concatenated sub-maps).
  double outer_factor() const { return std::pow(factor, local_updates); }
};

// lambda2/lambdaN describe the base mixing matrix; gamma first maps them to
// 1 - gamma + gamma*lambda. GD and the diffusion variants do not depend on
// the spectrum.
ContractionSpec contraction_factor(Variant variant, double eta, double mu, double l,
                                   double lambda2, double lambdaN, int local_updates = 1,
                                   double gamma = 1.0);

struct TopoQuantities {
  double lambda2 = 0.0;
  double lambdaN = 0.0;
  double pinv_w_norm = 0.0;  // ||(I-W)^+ W||
};

TopoQuantities topo_quantities(const Topology& t);

struct GapBound {
  double value = 0.0;            // eta-linear bound on ||x_hat - x*||
  bool second_order_flag = false;  // eta*T*L > 0.1: suppressed second-order term may matter
  double documented_slack = 0.0;   // 10 (eta T L)^2 g / mu, added to dominance checks for T > 1
};

// T = 1 uses ||x_hat - x*|| <= eta (L/mu) Lambda ||grad f(x*)||; T > 1 uses
// the multi-local-update coefficients, and the federated variant its
// complete-graph reduction. Diffusion with T = 1 additionally requires
// eta <= 1/(L Lambda).
GapBound fixed_point_gap_bound(Variant variant, double eta, int local_updates, double mu,
                               double l, const TopoQuantities& topo, double grad_norm_at_opt);

// dhat = (omega*M + sigma) / (sqrt(1 - c^2) - omega); requires c^2 + omega^2 < 1.
// The number of concatenated maps does not change the stationary level, only
// the exponent of the transient, so n_maps is validated but unused here.
double nc3t_dhat(double c, double omega, double sigma, double m_const, int n_maps = 1);

enum class EnvelopeKind { NoiseFree, GradientNoise, CommNoise, MultiTGradientNoise };

struct EnvelopeParams {
  double contraction = 0.0;     // per-sub-map factor c
  int maps_per_iteration = 1;   // T
  double dist0_to_fixed = 0.0;  // ||x0 - x_hat||
  double gap = 0.0;             // ||x_hat - x*||
  double eta = 0.0;
  double mu = 0.0;
  double omega = 0.0;
  double sigma = 0.0;
  double noise_m = 0.0;  // M constant in dhat (||x_hat|| when T = 1)
  double gamma = 1.0;    // communication-noise scaling
};

// Evaluable bound of the shape dhat + gap + rate^(T t) * head.
struct ErrorEnvelope {
  double dhat = 0.0;
  double gap = 0.0;
  double rate = 0.0;
  long maps_per_iter = 1;
  double head = 0.0;

  // Bound on RMS ||x_t - x*||.
  double at(long t) const {
    return dhat + gap + std::pow(rate, static_cast<double>(t) * maps_per_iter) * head;
  }
  // Bound on RMS ||x_t - x_hat||.
  double fixed_at(long t) const {
    return dhat + std::pow(rate, static_cast<double>(t) * maps_per_iter) * head;
  }
};

// Throws StepSizeError (naming the violated inequality) when the noise
// regime conditions fail, e.g. c^2 + (eta*omega)^2 >= 1.
ErrorEnvelope total_error_envelope(EnvelopeKind kind, const EnvelopeParams& p);

// Simplified stationary level sqrt(eta) * (omega*M + sigma) / sqrt(mu), valid
// only when eta / (sqrt(2 eta mu - eta^2 mu^2) - eta omega) <= sqrt(eta/mu);
// returns the exact dhat when the simplification does not hold numerically.
double gradient_noise_dhat_simplified(double eta, double mu, double omega, double sigma,
                                      double m_const);

// Envelope for the inverse-time schedule eta_t = eta0 / (t/tau + 1), built
// from the exact finite products and drift sums (no asymptotic shortcut).
class TimeVaryingEnvelope {
 public:
  TimeVaryingEnvelope(Variant variant, double eta0, double tau, double mu, double l,
                      double lambda_factor, double lambdaN_eff, double grad_norm_at_opt,
                      double dist0_to_opt);

  // Bound on ||x_t - x*||; extends the internal prefix cache as needed.
  double at(long t);

  // "1/t" when tau > 1/(eta0 mu), "log(t)/t" at the critical value,
  // otherwise "1/t^(eta0 mu tau)".
  std::string decay_class() const;

  double eta_at(long t) const {
    return eta0_ / (static_cast<double>(t) / tau_ + 1.0);
  }

 private:
  void extend(long t);

  double eta0_, tau_, mu_, l_, lambda_, grad_norm_, dist0_;
  double gap0_ = 0.0;
  double p_run_ = 1.0;  // running product of (1 - eta_i mu)
  double s_run_ = 0.0;  // running drift sum
  std::vector<double> fix_env_;  // bound on ||x_t - x_hat_t||
};

// Monte Carlo check of the distance-bounding lemma: solves
// [Z A + (1/eta)(I - W)] d = -Z v for random certified A and random v with
// zero mean, and returns the worst ||d|| / (eta (L/mu) Lambda ||v||).
double aux_distance_check(const Topology& t, double eta, FactorKind kind, double mu, double l,
                          int trials, Rng& rng);

}  // namespace degrad
