#pragma once

#include <optional>
#include <string>

#include "sbg/common.hpp"
#include "sbg/rng.hpp"

namespace sbg {

/// Geodesic circle distance, the absolute angle difference wrapped into [0, pi].
double wrap_distance(double a, double b);

/// Exact Wasserstein-1 between two empirical energy distributions, computed as
/// the integral of quantile differences.  Handles unequal sample counts; with
/// equal counts it reduces to the mean absolute difference of sorted values.
double energy_w1(VectorRef energies_a, VectorRef energies_b);

/// Weighted variant on the weighted empirical CDFs (unnormalized log-weights).
double energy_w1_weighted(VectorRef energies_a, VectorRef log_weights_a, VectorRef energies_b,
                          VectorRef log_weights_b);

/// Wasserstein-2 between angle point clouds on the torus: per-pair ground cost
/// is the root sum of squared wrapped coordinate distances, and the coupling
/// is solved exactly by optimal assignment.  Requires equal sizes, entries in
/// [-pi, pi], and n <= 2000 (subsample larger sets first).
double torus_w2(const Matrix& angles_a, const Matrix& angles_b);

/// Weighted variant: stratified-resamples both clouds to n points (uniform
/// weights reproduce each point exactly once when n equals the input size),
/// then solves the unweighted problem.
double torus_w2_weighted(const Matrix& angles_a, VectorRef log_weights_a, const Matrix& angles_b,
                         VectorRef log_weights_b, Index n, uint64_t seed);

struct HistogramTable {
  Vector centers;
  Vector densities;  // integrate to one over [lo, hi]
  double lo = 0.0;
  double hi = 0.0;
  double underflow = 0.0;  // weight fraction below lo / above hi, not dropped
  double overflow = 0.0;
};

HistogramTable histogram(VectorRef values, Index bins, double lo, double hi);
HistogramTable histogram_weighted(VectorRef values, VectorRef log_weights, Index bins, double lo,
                                  double hi);

/// Maps configurations to angle coordinates in [-pi, pi].
///   atan2_point: a single planar point becomes one angle.
///   chain:       consecutive bond vectors; signed bend angles in 2-D,
///                proper dihedrals over particle quadruples in 3-D.
struct AngleExtractor {
  enum class Rule { atan2_point, chain };
  Rule rule = Rule::atan2_point;
  int spatial_dim = 2;
};

Index angle_count(const AngleExtractor& extractor, Index dim);
Matrix extract_angles(const AngleExtractor& extractor, const Matrix& configurations);

struct MetricsReport {
  double ess = 0.0;
  double ess_normalized = 0.0;
  std::optional<double> energy_w1;
  std::optional<double> torus_w2;
  std::optional<double> log_z_hat;
  std::optional<double> log_z_jarzynski;
  Index n_samples = 0;
  uint64_t seed = 0;
};

}  // namespace sbg
