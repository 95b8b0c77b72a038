#include "sbg/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sbg {

namespace {

WeightedSamples select_rows(const WeightedSamples& samples, const std::vector<Index>& keep) {
  WeightedSamples out;
  const Index n = static_cast<Index>(keep.size());
  out.positions.resize(n, samples.positions.cols());
  out.log_target.resize(n);
  out.log_proposal.resize(n);
  out.log_weight.resize(n);
  for (Index i = 0; i < n; ++i) {
    out.positions.row(i) = samples.positions.row(keep[static_cast<size_t>(i)]);
    out.log_target(i) = samples.log_target(keep[static_cast<size_t>(i)]);
    out.log_proposal(i) = samples.log_proposal(keep[static_cast<size_t>(i)]);
    out.log_weight(i) = samples.log_weight(keep[static_cast<size_t>(i)]);
  }
  return out;
}

FilterOutcome keep_where(const WeightedSamples& samples, const std::string& name, double parameter,
                         const std::function<bool(Index)>& pred) {
  std::vector<Index> keep;
  keep.reserve(static_cast<size_t>(samples.size()));
  for (Index i = 0; i < samples.size(); ++i)
    if (pred(i)) keep.push_back(i);
  FilterOutcome out;
  out.samples = select_rows(samples, keep);
  out.report = {name, parameter, samples.size() - static_cast<Index>(keep.size()),
                static_cast<Index>(keep.size())};
  out.empty = keep.empty();
  return out;
}

/// log of the empirical mean of exp(-lambda X), max-subtracted.
double log_mgf_mean(VectorRef x, double lambda) {
  Vector v = -lambda * x;
  return log_mean_exp(v);
}

}  // namespace

WeightedSamples make_weighted_samples(Matrix positions, Vector log_target, Vector log_proposal) {
  const Index n = positions.rows();
  if (log_target.size() != n || log_proposal.size() != n)
    throw InputError("make_weighted_samples: column length mismatch");
  WeightedSamples out;
  out.positions = std::move(positions);
  out.log_weight = log_target - log_proposal;
  out.log_target = std::move(log_target);
  out.log_proposal = std::move(log_proposal);
  return out;
}

SnisResult snis(VectorRef log_weights, VectorRef phi_values) {
  if (log_weights.size() == 0) throw EstimationError("snis: empty sample set");
  if (log_weights.size() != phi_values.size()) throw InputError("snis: length mismatch");
  const Vector w = normalized_weights(log_weights);
  SnisResult out;
  out.estimate = w.dot(phi_values);
  out.ess = 1.0 / w.squaredNorm();
  return out;
}

SnisResult snis(const WeightedSamples& samples, const std::function<double(VectorRef)>& phi) {
  Vector phi_values(samples.size());
  for (Index i = 0; i < samples.size(); ++i)
    phi_values(i) = phi(samples.positions.row(i).transpose());
  return snis(samples.log_weight, phi_values);
}

double log_z_hat(const WeightedSamples& samples) {
  if (samples.size() == 0) throw EstimationError("log_z_hat: empty sample set");
  if (!all_finite(samples.log_weight))
    throw EstimationError("log_z_hat: non-finite log-weight");
  const double bound = samples.log_weight.mean();
  const double lme = log_mean_exp(samples.log_weight);
  if (bound > lme + 1e-12) throw NumericalError("log_z_hat: Jensen ordering violated");
  return bound;
}

FilterOutcome energy_filter(const WeightedSamples& samples, double gamma) {
  if (std::isnan(gamma)) throw InputError("energy_filter: gamma is NaN");
  return keep_where(samples, "energy", gamma,
                    [&](Index i) { return -samples.log_target(i) <= gamma; });
}

FilterOutcome likelihood_filter(const WeightedSamples& samples, double delta) {
  if (std::isnan(delta) || delta < 0.0) throw InputError("likelihood_filter: delta must be >= 0");
  const double log_delta = std::log(delta);  // delta == 0 keeps everything
  return keep_where(samples, "likelihood", delta,
                    [&](Index i) { return samples.log_proposal(i) >= log_delta; });
}

double gamma_threshold(Index n_particles, double b, double rho, double lambda,
                       const WeightedSamples& samples) {
  if (n_particles < 1 || b <= 0.0 || rho <= 0.0 || lambda <= 0.0)
    throw InputError("gamma_threshold: need K >= 1 and positive b, rho, lambda");
  if (samples.size() == 0) throw EstimationError("gamma_threshold: empty sample set");
  const Vector energies = -samples.log_target;
  const double log_mgf = log_mgf_mean(energies, lambda);
  if (!std::isfinite(log_mgf))
    throw EstimationError("gamma_threshold: moment estimate underflowed; use a smaller lambda");
  return (std::log(static_cast<double>(n_particles) * b) - std::log(12.0 * rho) - log_mgf) /
             lambda +
         log_z_hat(samples);
}

double delta_threshold(Index n_particles, double b, double rho, double lambda,
                       const WeightedSamples& samples) {
  if (n_particles < 1 || b <= 0.0 || rho <= 0.0 || lambda <= 0.0)
    throw InputError("delta_threshold: need K >= 1 and positive b, rho, lambda");
  if (samples.size() == 0) throw EstimationError("delta_threshold: empty sample set");
  const double log_mgf = log_mgf_mean(samples.log_proposal, lambda);
  if (!std::isfinite(log_mgf))
    throw EstimationError("delta_threshold: moment estimate underflowed; use a smaller lambda");
  return (std::log(static_cast<double>(n_particles) * b) - std::log(12.0 * rho) - log_mgf) /
         lambda;
}

FilterOutcome weight_clip(const WeightedSamples& samples, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0) throw InputError("weight_clip: fraction must be in [0, 1)");
  const Index n = samples.size();
  const Index drop = static_cast<Index>(std::ceil(fraction * static_cast<double>(n)));
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index bidx) {
    if (samples.log_weight(a) != samples.log_weight(bidx))
      return samples.log_weight(a) > samples.log_weight(bidx);
    return a < bidx;
  });
  std::vector<bool> dropped(static_cast<size_t>(n), false);
  for (Index i = 0; i < drop; ++i) dropped[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;
  std::vector<Index> keep;
  keep.reserve(static_cast<size_t>(n - drop));
  for (Index i = 0; i < n; ++i)
    if (!dropped[static_cast<size_t>(i)]) keep.push_back(i);
  FilterOutcome out;
  out.samples = select_rows(samples, keep);
  out.report = {"weight_clip", fraction, drop, n - drop};
  out.empty = keep.empty();
  return out;
}

}  // namespace sbg
