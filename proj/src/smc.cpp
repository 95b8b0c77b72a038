#include "sbg/smc.hpp"

#include <cmath>

namespace sbg {

double ess(VectorRef log_weights) {
  if (log_weights.size() == 0) throw EstimationError("ess: empty log-weights");
  const Vector w = normalized_weights(log_weights);
  return 1.0 / w.squaredNorm();
}

std::vector<Index> sample_offspring(VectorRef weights, ResampleKind kind, Prng& rng) {
  const Index n = weights.size();
  Vector cdf(n);
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    acc += weights(i);
    cdf(i) = acc;
  }
  const auto pick = [&](double u) -> Index {
    Index lo = 0, hi = n - 1;
    while (lo < hi) {
      const Index mid = (lo + hi) / 2;
      if (cdf(mid) > u)
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo;
  };
  std::vector<Index> offspring(static_cast<size_t>(n));
  if (kind == ResampleKind::multinomial) {
    for (Index k = 0; k < n; ++k) offspring[static_cast<size_t>(k)] = pick(rng.uniform() * acc);
  } else {
    // One uniform per stratum of width 1/n on the normalized CDF.
    for (Index k = 0; k < n; ++k) {
      const double u = (static_cast<double>(k) + rng.uniform()) / static_cast<double>(n);
      offspring[static_cast<size_t>(k)] = pick(u * acc);
    }
  }
  return offspring;
}

ParticleEnsemble resample(const ParticleEnsemble& ensemble, const ResampleScheme& scheme) {
  const Vector w = normalized_weights(ensemble.log_weights);
  Prng rng(scheme.seed);
  const std::vector<Index> offspring = sample_offspring(w, scheme.kind, rng);
  ParticleEnsemble out;
  out.positions.resize(ensemble.positions.rows(), ensemble.positions.cols());
  out.quarantined = BoolArray::Constant(ensemble.positions.rows(), false);
  for (Index k = 0; k < out.positions.rows(); ++k) {
    out.positions.row(k) = ensemble.positions.row(offspring[static_cast<size_t>(k)]);
    out.quarantined(k) = ensemble.quarantined(offspring[static_cast<size_t>(k)]);
  }
  out.log_weights = Vector::Zero(ensemble.positions.rows());
  out.tau = ensemble.tau;
  out.lineage = offspring;
  return out;
}

SbgResult sbg_run(ParticleEnsemble ensemble, const AnnealEndpoints& endpoints,
                  const AnnealSchedule& schedule, uint64_t anneal_seed, uint64_t resample_seed,
                  const EnsembleObserver& observer) {
  validate_schedule(schedule);
  if (ensemble.tau != 0.0) throw InputError("sbg_run: ensemble must start at tau = 0");
  if (ensemble.positions.rows() < 2) throw InputError("sbg_run: need at least two particles");

  SbgResult result;
  result.diagnostics.n_particles = ensemble.positions.rows();
  Prng resample_rng(resample_seed);
  if (observer) observer(ensemble, 0);
  for (Index step = 0; step < schedule.n_steps; ++step) {
    langevin_step(ensemble, endpoints, schedule, step, anneal_seed);
    const Index n_quarantined = static_cast<Index>(ensemble.quarantined.count());
    if (n_quarantined == ensemble.positions.rows())
      throw EstimationError("sbg_run: all particles quarantined at step " + std::to_string(step));
    StepDiagnostics diag;
    diag.tau = ensemble.tau;
    diag.ess = ess(ensemble.log_weights);
    diag.quarantined = n_quarantined;
    const double k = static_cast<double>(ensemble.positions.rows());
    if (diag.ess / k < schedule.ess_threshold) {
      ResampleScheme scheme{schedule.resample_scheme, resample_rng.u64()};
      ensemble = resample(ensemble, scheme);
      diag.resampled = true;
    }
    result.diagnostics.steps.push_back(diag);
    if (observer) observer(ensemble, step + 1);
  }
  result.ensemble = std::move(ensemble);
  return result;
}

SbgResult sbg_run(const FlowModel& model, const EnergyTarget& target,
                  const AnnealSchedule& schedule, Index n_particles, uint64_t seed,
                  const SbgFilters& filters, const EnsembleObserver& observer) {
  if (n_particles < 2) throw InputError("sbg_run: need at least two particles");
  const Prng run_rng(seed);
  const uint64_t proposal_seed = run_rng.derive(seed_tag::proposal).seed();
  const uint64_t anneal_seed = run_rng.derive(seed_tag::anneal).seed();
  const uint64_t resample_seed = run_rng.derive(seed_tag::resample).seed();

  const AnnealEndpoints endpoints = flow_to_target(model, target);
  FlowSamples proposal = flow_sample(model, proposal_seed, n_particles);

  SbgDiagnostics pre;
  pre.n_start = n_particles;
  Matrix positions = std::move(proposal.positions);
  if (filters.energy_gamma.has_value() || filters.clip_fraction > 0.0) {
    // One-shot importance weights drive the pre-transport filters.
    Vector log_target_v(positions.rows());
    for (Index i = 0; i < positions.rows(); ++i)
      log_target_v(i) = -endpoints.e1(positions.row(i).transpose(), nullptr);
    Vector log_proposal_v = proposal.logprobs;
    if (model.com_sigma > 0.0) {
      const int sd = model.standardization.spatial_dim;
      for (Index i = 0; i < positions.rows(); ++i) {
        const Vector c = centroid_of(positions.row(i).transpose(), sd);
        log_proposal_v(i) -= chi_log_density(c.norm(), sd, model.com_sigma);
      }
    }
    WeightedSamples ws = make_weighted_samples(std::move(positions), std::move(log_target_v),
                                               std::move(log_proposal_v));
    if (filters.energy_gamma.has_value()) {
      FilterOutcome fo = energy_filter(ws, *filters.energy_gamma);
      pre.filters.push_back(fo.report);
      ws = std::move(fo.samples);
    }
    if (filters.clip_fraction > 0.0 && ws.size() > 0) {
      FilterOutcome fo = weight_clip(ws, filters.clip_fraction);
      pre.filters.push_back(fo.report);
      ws = std::move(fo.samples);
    }
    if (ws.size() < 2)
      throw EstimationError("sbg_run: pre-transport filters removed nearly all particles");
    positions = std::move(ws.positions);
  }

  SbgResult result =
      sbg_run(make_ensemble(std::move(positions)), endpoints, schedule, anneal_seed,
              resample_seed, observer);
  result.diagnostics.filters = std::move(pre.filters);
  result.diagnostics.n_start = pre.n_start;
  result.diagnostics.n_particles = result.ensemble.positions.rows();
  return result;
}

}  // namespace sbg
