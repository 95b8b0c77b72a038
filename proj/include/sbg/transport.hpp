#pragma once

#include <functional>

#include "sbg/common.hpp"
#include "sbg/flow.hpp"
#include "sbg/rng.hpp"
#include "sbg/targets.hpp"

namespace sbg {

/// K particles with unnormalized log-weights at annealing time tau.
/// Quarantined particles are frozen with log-weight -inf instead of aborting
/// the ensemble.
struct ParticleEnsemble {
  Matrix positions;  // K x dim
  Vector log_weights;
  double tau = 0.0;
  std::vector<Index> lineage;  // ancestor indices from the last resampling
  BoolArray quarantined;
};

ParticleEnsemble make_ensemble(Matrix positions);

/// Energy pair for the annealing path E_tau = (1 - tau) E0 + tau E1.
/// Each callable returns the energy and, when grad != nullptr, fills the
/// gradient.
struct AnnealEndpoints {
  std::function<double(VectorRef, Vector*)> e0;
  std::function<double(VectorRef, Vector*)> e1;
};

/// E0 = -log p under the flow (centroid-adjusted when com_sigma > 0); E1 is
/// the temperature-scaled target evaluated in model coordinates.
AnnealEndpoints flow_to_target(const FlowModel& model, const EnergyTarget& target);

/// Both endpoints are analytic targets; used by oracle paths and tests.
AnnealEndpoints target_to_target(const EnergyTarget& from, const EnergyTarget& to);

struct InterpValue {
  double value;
  Vector grad;
  double dtau_value;  // E1(x) - E0(x), the tau-derivative of the interpolant
};

InterpValue interp_energy(const AnnealEndpoints& endpoints, VectorRef x, double tau);
InterpValue interp_energy(const FlowModel& model, const EnergyTarget& target, VectorRef x,
                          double tau);

enum class ResampleKind { multinomial, stratified };

struct AnnealSchedule {
  Index n_steps = 100;
  Vector epsilon;               // per-step diffusion coefficients, all positive
  double ess_threshold = 0.5;   // normalized (ESS / K) trigger
  ResampleKind resample_scheme = ResampleKind::multinomial;
  double drift_max_norm = 1e3;  // Langevin drift clip in model units; <= 0 disables
  int workers = 1;

  static AnnealSchedule constant(Index n_steps, double eps, double ess_threshold = 0.5,
                                 ResampleKind scheme = ResampleKind::multinomial);
};

void validate_schedule(const AnnealSchedule& schedule);

/// Advances one Euler-Maruyama step from tau over dtau: positions move along
/// -eps grad E_tau with sqrt(2 eps dtau) noise, then log-weights decrease by
/// dtau * dE/dtau evaluated at the pre-move state.  Noise for particle i at
/// `step` comes from a counter-based stream keyed on (seed, i, step), so the
/// result is independent of worker count and of where the step loop lives.
void langevin_step(ParticleEnsemble& ensemble, const AnnealEndpoints& endpoints,
                   const AnnealSchedule& schedule, Index step, uint64_t seed);

using EnsembleObserver = std::function<void(const ParticleEnsemble&, Index step)>;

/// Full annealing pass tau: 0 -> 1 with no resampling.
ParticleEnsemble anneal(ParticleEnsemble ensemble, const AnnealEndpoints& endpoints,
                        const AnnealSchedule& schedule, uint64_t seed,
                        const EnsembleObserver& observer = {});
ParticleEnsemble anneal(ParticleEnsemble ensemble, const FlowModel& model,
                        const EnergyTarget& target, const AnnealSchedule& schedule, uint64_t seed);

/// log-mean-exp of the log-weights: the estimate of log(Z_tau / Z_0) for an
/// ensemble annealed without resampling.
double jarzynski_log_z_ratio(const ParticleEnsemble& ensemble);

/// Proposal-free path: positions follow the target-only SDE while the
/// log-weight ODE picks up the drift correction
///   dw = (div nu - grad E_tau . nu - dE/dtau) dtau,
/// nu = eps (grad E_tau - grad E1).  The divergence is estimated with central
/// finite differences (h = 1e-4), practical at dim <= 32.
ParticleEnsemble anneal_target_only(ParticleEnsemble ensemble, const AnnealEndpoints& endpoints,
                                    const AnnealSchedule& schedule, uint64_t seed);
ParticleEnsemble anneal_target_only(ParticleEnsemble ensemble, const FlowModel& model,
                                    const EnergyTarget& target, const AnnealSchedule& schedule,
                                    uint64_t seed);

}  // namespace sbg
