#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sbg/reweight.hpp"
#include "sbg/transport.hpp"

namespace sbg {

/// Effective sample size 1 / sum(w_bar^2) of self-normalized weights; lies in
/// [1, K] and is invariant under constant shifts of the log-weights.
double ess(VectorRef log_weights);

struct ResampleScheme {
  ResampleKind kind = ResampleKind::multinomial;
  uint64_t seed = 0;
};

/// Draws K offspring by the scheme, resets log-weights to zero and records
/// lineage.  Stratified resampling places one uniform in each CDF stratum of
/// width 1/K, so uniform weights reproduce every particle exactly once.
ParticleEnsemble resample(const ParticleEnsemble& ensemble, const ResampleScheme& scheme);

std::vector<Index> sample_offspring(VectorRef weights, ResampleKind kind, Prng& rng);

struct StepDiagnostics {
  double tau = 0.0;
  double ess = 0.0;
  bool resampled = false;
  Index quarantined = 0;
};

struct SbgDiagnostics {
  std::vector<StepDiagnostics> steps;
  std::vector<FilterReport> filters;
  Index n_start = 0;    // proposal draws before pre-filters
  Index n_particles = 0;
};

/// Pre-transport filters applied once to the proposal draw, before any
/// annealing: optional energy crop E > gamma and removal of the largest
/// weight fraction of one-shot importance weights.
struct SbgFilters {
  std::optional<double> energy_gamma;
  double clip_fraction = 0.0;
};

struct SbgResult {
  ParticleEnsemble ensemble;
  SbgDiagnostics diagnostics;
};

/// Full sampling loop: draw K proposal samples with zero log-weights, apply
/// pre-filters, then per step run one Langevin move with its weight update and
/// resample whenever ESS/K drops below the schedule threshold.
/// Child seeds derive from `seed` with seed_tag::proposal / anneal / resample.
SbgResult sbg_run(const FlowModel& model, const EnergyTarget& target,
                  const AnnealSchedule& schedule, Index n_particles, uint64_t seed,
                  const SbgFilters& filters = {}, const EnsembleObserver& observer = {});

/// Same loop on a pre-drawn ensemble with explicit endpoints (oracle paths and
/// the degenerate-identity tests use this form).
SbgResult sbg_run(ParticleEnsemble ensemble, const AnnealEndpoints& endpoints,
                  const AnnealSchedule& schedule, uint64_t anneal_seed, uint64_t resample_seed,
                  const EnsembleObserver& observer = {});

}  // namespace sbg
