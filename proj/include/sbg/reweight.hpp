#pragma once

#include <functional>
#include <optional>
#include <string>

#include "sbg/common.hpp"

namespace sbg {

/// Columnar batch of importance-weighted samples.  log_target is the
/// temperature-scaled negative energy -E/kT (unnormalized), log_proposal the
/// proposal log-density, and log_weight their difference, kept explicitly so
/// the recomputation identity is exact.
struct WeightedSamples {
  Matrix positions;
  Vector log_target;
  Vector log_proposal;
  Vector log_weight;

  Index size() const { return log_weight.size(); }
};

WeightedSamples make_weighted_samples(Matrix positions, Vector log_target, Vector log_proposal);

struct SnisResult {
  double estimate = 0.0;
  double ess = 0.0;
};

/// Self-normalized importance estimate of a test function, with the effective
/// sample size of the normalized weights.
SnisResult snis(const WeightedSamples& samples, const std::function<double(VectorRef)>& phi);
SnisResult snis(VectorRef log_weights, VectorRef phi_values);

/// Monte-Carlo lower bound on log Z: the mean of (log_target - log_proposal).
/// Always <= the log-mean-exp of the same values; the Jensen ordering is
/// asserted on every call.
double log_z_hat(const WeightedSamples& samples);

struct FilterReport {
  std::string filter;
  double parameter = 0.0;
  Index removed = 0;
  Index remaining = 0;
};

struct FilterOutcome {
  WeightedSamples samples;
  FilterReport report;
  bool empty = false;  // warning flag, not an error
};

/// Drops samples whose scaled energy -log_target exceeds gamma.
FilterOutcome energy_filter(const WeightedSamples& samples, double gamma);

/// Drops samples with proposal likelihood below delta (log_proposal < log delta).
FilterOutcome likelihood_filter(const WeightedSamples& samples, double delta);

/// Energy truncation threshold
///   gamma = (1/lambda) log(K b / (12 rho E[exp(-lambda X)])) + log Z_hat
/// with X the sample energies and the moment estimate taken in log space.
double gamma_threshold(Index n_particles, double b, double rho, double lambda,
                       const WeightedSamples& samples);

/// Likelihood truncation threshold, same form without the log Z_hat offset and
/// with X the proposal log-likelihoods; the returned value lives on the
/// log-likelihood scale (exponentiate before passing to likelihood_filter).
double delta_threshold(Index n_particles, double b, double rho, double lambda,
                       const WeightedSamples& samples);

/// Removes the ceil(fraction K) samples of largest log-weight; ties break on
/// the lower sample index.
FilterOutcome weight_clip(const WeightedSamples& samples, double fraction);

}  // namespace sbg
