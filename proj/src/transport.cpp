#include "sbg/transport.hpp"

#include <cmath>

namespace sbg {

namespace {

// Lifetimes: endpoints capture the model by pointer; callers keep the model
// alive for as long as the endpoints are used.
double scaled_target_energy(const EnergyTarget& target, double scale, VectorRef x, Vector* grad) {
  if (scale == 1.0) {
    if (!grad) return target_energy(target, x);
    auto [e, g] = energy_and_grad(target, x);
    *grad = std::move(g);
    return e;
  }
  const Vector raw = scale * x;
  if (!grad) return target_energy(target, raw);
  auto [e, g] = energy_and_grad(target, raw);
  *grad = scale * g;
  return e;
}

void clip_drift(Vector& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = grad.norm();
  if (n > max_norm) grad *= max_norm / n;
}

void quarantine(ParticleEnsemble& ensemble, Index i) {
  ensemble.quarantined(i) = true;
  ensemble.log_weights(i) = kNegInf;
}

void quarantine_nonfinite(ParticleEnsemble& ensemble) {
  for (Index i = 0; i < ensemble.positions.rows(); ++i)
    if (!all_finite(ensemble.positions.row(i)) || std::isnan(ensemble.log_weights(i)))
      quarantine(ensemble, i);
}

}  // namespace

ParticleEnsemble make_ensemble(Matrix positions) {
  ParticleEnsemble ensemble;
  ensemble.log_weights = Vector::Zero(positions.rows());
  ensemble.quarantined = BoolArray::Constant(positions.rows(), false);
  ensemble.positions = std::move(positions);
  ensemble.tau = 0.0;
  return ensemble;
}

AnnealEndpoints flow_to_target(const FlowModel& model, const EnergyTarget& target) {
  AnnealEndpoints ep;
  const FlowModel* m = &model;
  ep.e0 = [m](VectorRef x, Vector* grad) -> double {
    if (m->com_sigma > 0.0) {
      if (grad) *grad = -grad_com_adjusted_log_prob(*m, x);
      return -com_adjusted_log_prob(*m, x);
    }
    if (grad) {
      const LogProbGrads g = log_prob_with_grads(*m, x, /*want_params=*/false);
      *grad = -g.grad_input;
      return -g.logp;
    }
    return -log_prob(*m, x);
  };
  const double scale = model.standardization.scale;
  ep.e1 = [target, scale](VectorRef x, Vector* grad) -> double {
    return scaled_target_energy(target, scale, x, grad);
  };
  return ep;
}

AnnealEndpoints target_to_target(const EnergyTarget& from, const EnergyTarget& to) {
  AnnealEndpoints ep;
  ep.e0 = [from](VectorRef x, Vector* grad) -> double {
    return scaled_target_energy(from, 1.0, x, grad);
  };
  ep.e1 = [to](VectorRef x, Vector* grad) -> double {
    return scaled_target_energy(to, 1.0, x, grad);
  };
  return ep;
}

InterpValue interp_energy(const AnnealEndpoints& endpoints, VectorRef x, double tau) {
  if (tau < 0.0 || tau > 1.0) throw InputError("interp_energy: tau outside [0, 1]");
  Vector g0, g1;
  const double e0 = endpoints.e0(x, &g0);
  const double e1 = endpoints.e1(x, &g1);
  InterpValue out;
  out.value = (1.0 - tau) * e0 + tau * e1;
  out.grad = (1.0 - tau) * g0 + tau * g1;
  out.dtau_value = e1 - e0;
  return out;
}

InterpValue interp_energy(const FlowModel& model, const EnergyTarget& target, VectorRef x,
                          double tau) {
  return interp_energy(flow_to_target(model, target), x, tau);
}

AnnealSchedule AnnealSchedule::constant(Index n_steps, double eps, double ess_threshold,
                                        ResampleKind scheme) {
  AnnealSchedule s;
  s.n_steps = n_steps;
  s.epsilon = Vector::Constant(n_steps, eps);
  s.ess_threshold = ess_threshold;
  s.resample_scheme = scheme;
  return s;
}

void validate_schedule(const AnnealSchedule& schedule) {
  if (schedule.n_steps < 1) throw InputError("schedule: n_steps must be >= 1");
  if (schedule.epsilon.size() != schedule.n_steps)
    throw InputError("schedule: epsilon size must equal n_steps");
  // epsilon == 0 is the frozen-particle limit and is allowed.
  for (Index i = 0; i < schedule.epsilon.size(); ++i)
    if (!(schedule.epsilon(i) >= 0.0) || !std::isfinite(schedule.epsilon(i)))
      throw InputError("schedule: epsilon entries must be finite and nonnegative");
  if (schedule.ess_threshold < 0.0 || schedule.ess_threshold > 1.0)
    throw InputError("schedule: ess_threshold must lie in [0, 1]");
  if (schedule.workers < 1) throw InputError("schedule: workers must be >= 1");
}

void langevin_step(ParticleEnsemble& ensemble, const AnnealEndpoints& endpoints,
                   const AnnealSchedule& schedule, Index step, uint64_t seed) {
  const double n = static_cast<double>(schedule.n_steps);
  const double tau = static_cast<double>(step) / n;
  const double dtau = 1.0 / n;
  const double eps = schedule.epsilon(step);
  const Index dim = ensemble.positions.cols();

  parallel_for(ensemble.positions.rows(), schedule.workers, [&](Index i) {
    if (ensemble.quarantined(i)) return;
    const Vector x = ensemble.positions.row(i).transpose();
    InterpValue ev;
    try {
      ev = interp_energy(endpoints, x, tau);
    } catch (const NumericalError&) {
      quarantine(ensemble, i);
      return;
    }
    if (!std::isfinite(ev.dtau_value) || !all_finite(ev.grad)) {
      quarantine(ensemble, i);
      return;
    }
    clip_drift(ev.grad, schedule.drift_max_norm);
    Prng rng(hash_combine(hash_combine(seed, static_cast<uint64_t>(i)),
                          static_cast<uint64_t>(step)));
    Vector noise(dim);
    for (Index j = 0; j < dim; ++j) noise(j) = rng.normal();
    const Vector moved = x - (eps * dtau) * ev.grad + std::sqrt(2.0 * eps * dtau) * noise;
    const double logw = ensemble.log_weights(i) - ev.dtau_value * dtau;
    if (!all_finite(moved) || std::isnan(logw)) {
      quarantine(ensemble, i);
      return;
    }
    ensemble.positions.row(i) = moved.transpose();
    ensemble.log_weights(i) = logw;
  });
  ensemble.tau = static_cast<double>(step + 1) / n;
}

ParticleEnsemble anneal(ParticleEnsemble ensemble, const AnnealEndpoints& endpoints,
                        const AnnealSchedule& schedule, uint64_t seed,
                        const EnsembleObserver& observer) {
  validate_schedule(schedule);
  if (ensemble.tau != 0.0) throw InputError("anneal: ensemble must start at tau = 0");
  quarantine_nonfinite(ensemble);
  if (observer) observer(ensemble, 0);
  for (Index step = 0; step < schedule.n_steps; ++step) {
    langevin_step(ensemble, endpoints, schedule, step, seed);
    if (observer) observer(ensemble, step + 1);
  }
  return ensemble;
}

ParticleEnsemble anneal(ParticleEnsemble ensemble, const FlowModel& model,
                        const EnergyTarget& target, const AnnealSchedule& schedule,
                        uint64_t seed) {
  return anneal(std::move(ensemble), flow_to_target(model, target), schedule, seed);
}

double jarzynski_log_z_ratio(const ParticleEnsemble& ensemble) {
  if (ensemble.log_weights.size() == 0)
    throw EstimationError("jarzynski_log_z_ratio: empty ensemble");
  const double lme = log_mean_exp(ensemble.log_weights);
  if (!std::isfinite(lme))
    throw EstimationError("jarzynski_log_z_ratio: no finite log-weight");
  return lme;
}

ParticleEnsemble anneal_target_only(ParticleEnsemble ensemble, const AnnealEndpoints& endpoints,
                                    const AnnealSchedule& schedule, uint64_t seed) {
  validate_schedule(schedule);
  if (ensemble.tau != 0.0) throw InputError("anneal_target_only: ensemble must start at tau = 0");
  const Index dim = ensemble.positions.cols();
  if (dim > 32)
    throw UnsupportedError("anneal_target_only: divergence estimation supported at dim <= 32");
  quarantine_nonfinite(ensemble);
  const double n = static_cast<double>(schedule.n_steps);
  const double dtau = 1.0 / n;
  const double fd_h = 1e-4;

  // nu = eps (grad E_tau - grad E1) = eps (1 - tau) (grad E0 - grad E1).
  const auto nu_at = [&](VectorRef x, double tau, double eps) -> Vector {
    Vector g0, g1;
    endpoints.e0(x, &g0);
    endpoints.e1(x, &g1);
    return (eps * (1.0 - tau)) * (g0 - g1);
  };

  for (Index step = 0; step < schedule.n_steps; ++step) {
    const double tau = static_cast<double>(step) / n;
    const double eps = schedule.epsilon(step);
    parallel_for(ensemble.positions.rows(), schedule.workers, [&](Index i) {
      if (ensemble.quarantined(i)) return;
      const Vector x = ensemble.positions.row(i).transpose();
      double logw = ensemble.log_weights(i);
      try {
        Vector g0, g1;
        const double e0 = endpoints.e0(x, &g0);
        const double e1 = endpoints.e1(x, &g1);
        const Vector grad_tau = (1.0 - tau) * g0 + tau * g1;
        const Vector nu = (eps * (1.0 - tau)) * (g0 - g1);
        double div_nu = 0.0;
        for (Index j = 0; j < dim; ++j) {
          Vector xp = x, xm = x;
          xp(j) += fd_h;
          xm(j) -= fd_h;
          div_nu += (nu_at(xp, tau, eps)(j) - nu_at(xm, tau, eps)(j)) / (2.0 * fd_h);
        }
        logw += (div_nu - grad_tau.dot(nu) - (e1 - e0)) * dtau;

        Vector drift = g1;
        clip_drift(drift, schedule.drift_max_norm);
        Prng rng(hash_combine(hash_combine(seed, static_cast<uint64_t>(i)),
                              static_cast<uint64_t>(step)));
        Vector noise(dim);
        for (Index j = 0; j < dim; ++j) noise(j) = rng.normal();
        const Vector moved = x - (eps * dtau) * drift + std::sqrt(2.0 * eps * dtau) * noise;
        if (!all_finite(moved) || std::isnan(logw)) {
          quarantine(ensemble, i);
          return;
        }
        ensemble.positions.row(i) = moved.transpose();
        ensemble.log_weights(i) = logw;
      } catch (const NumericalError&) {
        quarantine(ensemble, i);
      }
    });
    ensemble.tau = static_cast<double>(step + 1) / n;
  }
  return ensemble;
}

ParticleEnsemble anneal_target_only(ParticleEnsemble ensemble, const FlowModel& model,
                                    const EnergyTarget& target, const AnnealSchedule& schedule,
                                    uint64_t seed) {
  return anneal_target_only(std::move(ensemble), flow_to_target(model, target), schedule, seed);
}

}  // namespace sbg
