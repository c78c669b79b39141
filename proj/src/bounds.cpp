#include "degrad/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "degrad/errors.hpp"

namespace degrad {

ContractionSpec contraction_factor(Variant variant, double eta, double mu, double l,
                                   double lambda2, double lambdaN, int local_updates,
                                   double gamma) {
  if (!(mu > 0.0) || !(l >= mu)) throw DomainError("contraction_factor: need 0 < mu <= L");
  if (local_updates < 1) throw DomainError("contraction_factor: local_updates must be >= 1");
  if (!(gamma > 0.0) || gamma > 1.0)
    throw DomainError("contraction_factor: gamma must lie in (0, 1]");
  (void)lambda2;
  const double lamN_eff = 1.0 - gamma + gamma * lambdaN;

  ContractionSpec spec;
  spec.local_updates = local_updates;
  double lower_max, upper_max, upper_floor;  // factor = eta*L - upper_floor above lower_max
  switch (variant) {
    case Variant::DGD:
      lower_max = (1.0 + lamN_eff) / (l + mu);
      upper_max = (1.0 + lamN_eff) / l;
      upper_floor = lamN_eff;
      break;
    default:  // GD and the diffusion-type variants share the GD thresholds
      lower_max = 2.0 / (l + mu);
      upper_max = 2.0 / l;
      upper_floor = 1.0;
      break;
  }
  spec.eta_lower_max = lower_max;
  spec.eta_max = upper_max;
  if (!(eta > 0.0) || eta >= upper_max) {
    spec.valid = false;
    spec.factor = 1.0;
    spec.regime = eta > lower_max ? StepRegime::UpperStep : StepRegime::LowerStep;
    return spec;
  }
  if (eta <= lower_max) {
    spec.regime = StepRegime::LowerStep;
    spec.factor = 1.0 - eta * mu;
  } else {
    spec.regime = StepRegime::UpperStep;
    spec.factor = eta * l - upper_floor;
  }
  spec.valid = spec.factor < 1.0;
  return spec;
}

TopoQuantities topo_quantities(const Topology& t) {
  TopoQuantities q;
  q.lambda2 = t.lambda2();
  q.lambdaN = t.lambdaN();
  q.pinv_w_norm = pinv_w_norm(t);
  return q;
}

GapBound fixed_point_gap_bound(Variant variant, double eta, int local_updates, double mu,
                               double l, const TopoQuantities& topo, double grad_norm_at_opt) {
  if (!(eta > 0.0)) throw StepSizeError("fixed_point_gap_bound: eta must be positive");
  if (!(mu > 0.0) || !(l >= mu)) throw DomainError("fixed_point_gap_bound: need 0 < mu <= L");
  if (local_updates < 1) throw DomainError("fixed_point_gap_bound: local_updates must be >= 1");
  if (grad_norm_at_opt < 0.0)
    throw DomainError("fixed_point_gap_bound: gradient norm must be nonnegative");

  const int t_local = local_updates;
  const double kappa = l / mu;
  const double g = grad_norm_at_opt;
  GapBound out;
  if (t_local > 1) {
    out.second_order_flag = eta * t_local * l > 0.1;
    out.documented_slack = 10.0 * (eta * t_local * l) * (eta * t_local * l) * g / mu;
  }

  switch (variant) {
    case Variant::GD:
      // The gradient-descent fixed point is the optimum itself.
      out.value = 0.0;
      return out;
    case Variant::Federated:
      out.value = eta * 0.5 * (t_local - 1) * kappa * g;
      return out;
    case Variant::DGD: {
      if (topo.lambda2 >= 1.0 - 1e-10)
        throw StepSizeError("fixed_point_gap_bound: lambda2 >= 1, no spectral gap");
      const double lam_dgd = 1.0 / (1.0 - topo.lambda2);
      if (t_local == 1) {
        out.value = eta * kappa * lam_dgd * g;
      } else {
        out.value = eta *
                    (0.5 * (t_local - 1) * kappa +
                     (1.0 + kappa) * ((t_local - 1) * topo.pinv_w_norm + lam_dgd)) *
                    g;
      }
      return out;
    }
    case Variant::DiffusionATC:
    case Variant::DiffusionCTA: {
      const double lam_diff = 2.0 * topo.pinv_w_norm;
      if (t_local == 1) {
        if (lam_diff > 0.0 && eta > 1.0 / (l * lam_diff)) {
          std::ostringstream os;
          os << "fixed_point_gap_bound: diffusion requires eta <= 1/(L*Lambda) = "
             << 1.0 / (l * lam_diff);
          throw StepSizeError(os.str());
        }
        out.value = eta * kappa * lam_diff * g;
      } else {
        out.value = eta *
                    (0.5 * (t_local - 1) * kappa +
                     static_cast<double>(t_local) * (1.0 + kappa) * topo.pinv_w_norm) *
                    g;
      }
      return out;
    }
  }
  throw DomainError("fixed_point_gap_bound: unknown variant");
}

double nc3t_dhat(double c, double omega, double sigma, double m_const, int n_maps) {
  if (!(c >= 0.0) || c >= 1.0) throw DomainError("nc3t_dhat: need 0 <= c < 1");
  if (omega < 0.0 || sigma < 0.0 || m_const < 0.0)
    throw DomainError("nc3t_dhat: noise constants must be nonnegative");
  if (n_maps < 1) throw DomainError("nc3t_dhat: n_maps must be >= 1");
  // The strict condition c^2 + omega^2 < 1 is equivalent to a positive
  // denominator; checking the denominator also catches the critical case
  // when the sum rounds to just below one.
  const double denom = std::sqrt(1.0 - c * c) - omega;
  if (c * c + omega * omega >= 1.0 || denom <= 0.0) {
    std::ostringstream os;
    os << "nc3t_dhat: divergence condition c^2 + omega^2 = " << c * c + omega * omega
       << " >= 1";
    throw StepSizeError(os.str());
  }
  return (omega * m_const + sigma) / denom;
}

ErrorEnvelope total_error_envelope(EnvelopeKind kind, const EnvelopeParams& p) {
  if (!(p.contraction >= 0.0) || p.contraction >= 1.0)
    throw StepSizeError("envelope: contraction factor must lie in [0, 1)");
  if (p.maps_per_iteration < 1) throw DomainError("envelope: maps_per_iteration must be >= 1");

  ErrorEnvelope env;
  env.maps_per_iter = p.maps_per_iteration;
  env.gap = p.gap;

  switch (kind) {
    case EnvelopeKind::NoiseFree:
      env.rate = p.contraction;
      env.dhat = 0.0;
      env.head = p.dist0_to_fixed;
      return env;
    case EnvelopeKind::GradientNoise:
    case EnvelopeKind::MultiTGradientNoise: {
      const double c = p.contraction;
      const double ow = p.eta * p.omega;  // gradient noise scales with eta
      const double os_ = p.eta * p.sigma;
      if (c * c + ow * ow >= 1.0) {
        std::ostringstream os;
        os << "envelope: c^2 + (eta*omega)^2 = " << c * c + ow * ow << " >= 1";
        throw StepSizeError(os.str());
      }
      env.rate = std::sqrt(c * c + ow * ow);
      env.dhat = (ow * p.noise_m + os_) / (std::sqrt(1.0 - c * c) - ow);
      env.head = std::max(0.0, p.dist0_to_fixed - env.dhat);
      return env;
    }
    case EnvelopeKind::CommNoise: {
      const double c = p.contraction;
      const double ow = p.gamma * p.omega;  // communication noise scales with gamma
      const double os_ = p.gamma * p.sigma;
      if (c * c + ow * ow >= 1.0) {
        std::ostringstream os;
        os << "envelope: c^2 + (gamma*omega)^2 = " << c * c + ow * ow << " >= 1";
        throw StepSizeError(os.str());
      }
      env.rate = std::sqrt(c * c + ow * ow);
      env.dhat = (ow * p.noise_m + os_) / (std::sqrt(1.0 - c * c) - ow);
      env.head = std::max(0.0, p.dist0_to_fixed - env.dhat);
      return env;
    }
  }
  throw DomainError("envelope: unknown kind");
}

double gradient_noise_dhat_simplified(double eta, double mu, double omega, double sigma,
                                      double m_const) {
  const double c = 1.0 - eta * mu;
  const double exact = nc3t_dhat(c, eta * omega, eta * sigma, m_const);
  const double denom = std::sqrt(2.0 * eta * mu - eta * eta * mu * mu) - eta * omega;
  if (denom > 0.0 && eta / denom <= std::sqrt(eta / mu)) {
    // The sqrt(eta) majorization holds for this eta; report the simple form.
    return std::sqrt(eta) * (omega * m_const + sigma) / std::sqrt(mu);
  }
  return exact;
}

TimeVaryingEnvelope::TimeVaryingEnvelope(Variant variant, double eta0, double tau, double mu,
                                         double l, double lambda_factor, double lambdaN_eff,
                                         double grad_norm_at_opt, double dist0_to_opt)
    : eta0_(eta0),
      tau_(tau),
      mu_(mu),
      l_(l),
      lambda_(lambda_factor),
      grad_norm_(grad_norm_at_opt),
      dist0_(dist0_to_opt) {
  if (!(eta0 > 0.0) || !(tau > 0.0))
    throw DomainError("time_varying_envelope: eta0 and tau must be positive");
  if (!(mu > 0.0) || !(l >= mu)) throw DomainError("time_varying_envelope: need 0 < mu <= L");
  if (lambda_factor < 0.0) throw DomainError("time_varying_envelope: Lambda must be nonnegative");

  const double lower_max = (variant == Variant::DGD) ? (1.0 + lambdaN_eff) / (l + mu)
                                                     : 2.0 / (l + mu);
  if (eta0 > lower_max) {
    std::ostringstream os;
    os << "time_varying_envelope: eta0 = " << eta0
       << " exceeds the lower-regime threshold " << lower_max;
    throw StepSizeError(os.str());
  }
  if (lambda_factor > 0.0) {
    // Keeps ||grad f(x_hat_t)|| within twice the heterogeneity norm.
    const double drift_max = mu / (l * l * lambda_factor);
    if (eta0 > drift_max) {
      std::ostringstream os;
      os << "time_varying_envelope: eta0 = " << eta0
         << " exceeds the drift-constant threshold mu/(L^2 Lambda) = " << drift_max;
      throw StepSizeError(os.str());
    }
    if ((variant == Variant::DiffusionATC || variant == Variant::DiffusionCTA ||
         variant == Variant::Federated) &&
        eta0 > 1.0 / (l * lambda_factor)) {
      throw StepSizeError("time_varying_envelope: diffusion requires eta0 <= 1/(L*Lambda)");
    }
  }

  gap0_ = eta0_ * (l_ / mu_) * lambda_ * grad_norm_;
  fix_env_.push_back(dist0_ + gap0_);  // product empty, drift sum empty
}

void TimeVaryingEnvelope::extend(long t) {
  // fix_env_[t] = P_t (dist0 + gap0) + 2 (L/mu) Lambda S_t g  with
  // P_{t+1} = P_t (1 - eta_t mu),  S_{t+1} = S_t (1 - eta_t mu) + |eta_t - eta_{t+1}|.
  while (static_cast<long>(fix_env_.size()) <= t) {
    const long k = static_cast<long>(fix_env_.size()) - 1;
    const double eta_k = eta_at(k);
    const double eta_k1 = eta_at(k + 1);
    p_run_ *= (1.0 - eta_k * mu_);
    s_run_ = s_run_ * (1.0 - eta_k * mu_) + std::fabs(eta_k - eta_k1);
    fix_env_.push_back(p_run_ * (dist0_ + gap0_) +
                       2.0 * (l_ / mu_) * lambda_ * s_run_ * grad_norm_);
  }
}

double TimeVaryingEnvelope::at(long t) {
  if (t < 0) throw DomainError("time_varying_envelope: t must be nonnegative");
  extend(t);
  return fix_env_[static_cast<std::size_t>(t)] + eta_at(t) * (l_ / mu_) * lambda_ * grad_norm_;
}

std::string TimeVaryingEnvelope::decay_class() const {
  const double product = eta0_ * mu_ * tau_;
  if (std::fabs(product - 1.0) <= 1e-12) return "log(t)/t";
  if (product > 1.0) return "1/t";
  std::ostringstream os;
  os << "1/t^" << product;
  return os.str();
}

double aux_distance_check(const Topology& t, double eta, FactorKind kind, double mu, double l,
                          int trials, Rng& rng) {
  if (!(eta > 0.0)) throw StepSizeError("aux_distance_check: eta must be positive");
  if (!(mu > 0.0) || !(l >= mu)) throw DomainError("aux_distance_check: need 0 < mu <= L");
  const double lambda = topology_factor(t, kind);
  if (kind == FactorKind::Diffusion && lambda > 0.0 && eta > 1.0 / (l * lambda))
    throw StepSizeError("aux_distance_check: diffusion requires eta <= 1/(L*Lambda)");
  const int n = t.n_agents();
  const Mat& w = t.weights();

  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const Mat a = random_symmetric_with_spectrum(n, mu, l, rng);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    for (double& x : v) x -= mean;  // project onto the zero-mean subspace
    const double nv = norm2(v);
    if (nv < 1e-12) continue;

    Mat system(n, n);
    Vec rhs(n);
    if (kind == FactorKind::DGD) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
          system(i, j) = a(i, j) + ((i == j ? 1.0 : 0.0) - w(i, j)) / eta;
        rhs[i] = -v[i];
      }
    } else {
      const Mat wa = matmul(w, a);
      const Vec wv = matvec(w, v);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
          system(i, j) = wa(i, j) + ((i == j ? 1.0 : 0.0) - w(i, j)) / eta;
        rhs[i] = -wv[i];
      }
    }
    const Vec d = solve(system, rhs);
    const double bound = eta * (l / mu) * lambda * nv;
    const double nd = norm2(d);
    if (bound == 0.0) {
      if (nd > 1e-10) return std::numeric_limits<double>::infinity();
      continue;
    }
    worst = std::max(worst, nd / bound);
  }
  return worst;
}

}  // namespace degrad
