#include "sbg/metrics.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sbg/assignment.hpp"

namespace sbg {

namespace {

constexpr double kTwoPi = 6.2831853071795864769;

// Sorted (value, probability) pairs from samples and unnormalized log-weights;
// zero-weight entries are kept (they span zero quantile length).
std::vector<std::pair<double, double>> weighted_sorted(VectorRef values, VectorRef log_weights) {
  if (values.size() == 0) throw InputError("energy_w1: empty input");
  Vector w = log_weights.size() == 0 ? Vector::Constant(values.size(), 1.0 / values.size())
                                     : normalized_weights(log_weights);
  if (w.size() != values.size()) throw InputError("energy_w1: weight length mismatch");
  std::vector<std::pair<double, double>> out(static_cast<size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) out[static_cast<size_t>(i)] = {values(i), w(i)};
  std::sort(out.begin(), out.end());
  return out;
}

// Integral of |Qa - Qb| over the unit quantile interval.
double quantile_sweep(const std::vector<std::pair<double, double>>& a,
                      const std::vector<std::pair<double, double>>& b) {
  size_t ia = 0, ib = 0;
  double cum_a = a[0].second, cum_b = b[0].second;
  double prev = 0.0, total = 0.0;
  while (true) {
    const double next = std::min(cum_a, cum_b);
    total += (next - prev) * std::abs(a[ia].first - b[ib].first);
    prev = next;
    const bool step_a = cum_a <= next && ia + 1 < a.size();
    const bool step_b = cum_b <= next && ib + 1 < b.size();
    if (!step_a && !step_b) break;
    if (step_a) cum_a += a[++ia].second;
    if (step_b) cum_b += b[++ib].second;
  }
  return total;
}

Matrix resample_rows(const Matrix& points, VectorRef log_weights, Index n, Prng& rng) {
  Vector w = log_weights.size() == 0
                 ? Vector::Constant(points.rows(), 1.0 / static_cast<double>(points.rows()))
                 : normalized_weights(log_weights);
  // Stratified selection over n strata; uniform weights with n == rows give
  // the identity permutation.
  Vector cdf(points.rows());
  double acc = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    acc += w(i);
    cdf(i) = acc;
  }
  Matrix out(n, points.cols());
  for (Index k = 0; k < n; ++k) {
    const double u = (static_cast<double>(k) + rng.uniform()) / static_cast<double>(n) * acc;
    Index lo = 0, hi = points.rows() - 1;
    while (lo < hi) {
      const Index mid = (lo + hi) / 2;
      if (cdf(mid) > u)
        hi = mid;
      else
        lo = mid + 1;
    }
    out.row(k) = points.row(lo);
  }
  return out;
}

}  // namespace

double wrap_distance(double a, double b) { return std::abs(std::remainder(a - b, kTwoPi)); }

double energy_w1(VectorRef energies_a, VectorRef energies_b) {
  return energy_w1_weighted(energies_a, Vector(), energies_b, Vector());
}

double energy_w1_weighted(VectorRef energies_a, VectorRef log_weights_a, VectorRef energies_b,
                          VectorRef log_weights_b) {
  const auto a = weighted_sorted(energies_a, log_weights_a);
  const auto b = weighted_sorted(energies_b, log_weights_b);
  return quantile_sweep(a, b);
}

double torus_w2(const Matrix& angles_a, const Matrix& angles_b) {
  if (angles_a.rows() == 0 || angles_a.rows() != angles_b.rows() ||
      angles_a.cols() != angles_b.cols())
    throw InputError("torus_w2: inputs must be nonempty with equal shapes");
  if (angles_a.rows() > 2000)
    throw UnsupportedError("torus_w2: exact assignment limited to n <= 2000; subsample first");
  const double bound = M_PI + 1e-9;
  if (angles_a.cwiseAbs().maxCoeff() > bound || angles_b.cwiseAbs().maxCoeff() > bound)
    throw InputError("torus_w2: angles must lie in [-pi, pi]");
  const Index n = angles_a.rows();
  Matrix cost(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      double c2 = 0.0;
      for (Index k = 0; k < angles_a.cols(); ++k) {
        const double d = wrap_distance(angles_a(i, k), angles_b(j, k));
        c2 += d * d;
      }
      cost(i, j) = c2;
    }
  }
  const AssignmentResult assignment = solve_assignment(cost);
  return std::sqrt(assignment.total_cost / static_cast<double>(n));
}

double torus_w2_weighted(const Matrix& angles_a, VectorRef log_weights_a, const Matrix& angles_b,
                         VectorRef log_weights_b, Index n, uint64_t seed) {
  if (n < 1) throw InputError("torus_w2_weighted: n must be positive");
  Prng rng(seed);
  Prng rng_a = rng.derive(1);
  Prng rng_b = rng.derive(2);
  const Matrix a = resample_rows(angles_a, log_weights_a, n, rng_a);
  const Matrix b = resample_rows(angles_b, log_weights_b, n, rng_b);
  return torus_w2(a, b);
}

HistogramTable histogram(VectorRef values, Index bins, double lo, double hi) {
  return histogram_weighted(values, Vector(), bins, lo, hi);
}

HistogramTable histogram_weighted(VectorRef values, VectorRef log_weights, Index bins, double lo,
                                  double hi) {
  if (bins < 1) throw InputError("histogram: need at least one bin");
  if (!(hi > lo)) throw InputError("histogram: degenerate range");
  if (values.size() == 0) throw InputError("histogram: empty input");
  const Vector w = log_weights.size() == 0
                       ? Vector::Constant(values.size(), 1.0 / static_cast<double>(values.size()))
                       : normalized_weights(log_weights);
  const double width = (hi - lo) / static_cast<double>(bins);
  HistogramTable table;
  table.lo = lo;
  table.hi = hi;
  table.centers.resize(bins);
  for (Index k = 0; k < bins; ++k) table.centers(k) = lo + width * (static_cast<double>(k) + 0.5);
  Vector mass = Vector::Zero(bins);
  for (Index i = 0; i < values.size(); ++i) {
    const double v = values(i);
    if (v < lo) {
      table.underflow += w(i);
    } else if (v > hi) {
      table.overflow += w(i);
    } else {
      Index k = static_cast<Index>((v - lo) / width);
      if (k >= bins) k = bins - 1;  // right edge lands in the last bin
      mass(k) += w(i);
    }
  }
  const double in_range = mass.sum();
  table.densities = in_range > 0.0 ? Vector(mass / (in_range * width)) : Vector::Zero(bins);
  return table;
}

Index angle_count(const AngleExtractor& extractor, Index dim) {
  if (extractor.rule == AngleExtractor::Rule::atan2_point) {
    if (dim != 2) throw InputError("angle extraction: atan2_point needs dim == 2");
    return 1;
  }
  const int sd = extractor.spatial_dim;
  if (sd != 2 && sd != 3) throw InputError("angle extraction: spatial_dim must be 2 or 3");
  if (dim % sd != 0) throw InputError("angle extraction: dim not divisible by spatial_dim");
  const Index particles = dim / sd;
  const Index s = sd == 2 ? particles - 2 : particles - 3;
  if (s < 1) throw InputError("angle extraction: too few particles for chain angles");
  return s;
}

Matrix extract_angles(const AngleExtractor& extractor, const Matrix& configurations) {
  const Index s = angle_count(extractor, configurations.cols());
  Matrix out(configurations.rows(), s);
  if (extractor.rule == AngleExtractor::Rule::atan2_point) {
    for (Index r = 0; r < configurations.rows(); ++r)
      out(r, 0) = std::atan2(configurations(r, 1), configurations(r, 0));
    return out;
  }
  const int sd = extractor.spatial_dim;
  const Index particles = configurations.cols() / sd;
  for (Index r = 0; r < configurations.rows(); ++r) {
    const auto particle = [&](Index i) -> Vector {
      return configurations.row(r).segment(i * sd, sd).transpose();
    };
    if (sd == 2) {
      for (Index i = 0; i + 2 < particles; ++i) {
        const Vector b1 = particle(i + 1) - particle(i);
        const Vector b2 = particle(i + 2) - particle(i + 1);
        const double cross = b1(0) * b2(1) - b1(1) * b2(0);
        out(r, i) = std::atan2(cross, b1.dot(b2));
      }
    } else {
      for (Index i = 0; i + 3 < particles; ++i) {
        const Eigen::Vector3d b1 = particle(i + 1) - particle(i);
        const Eigen::Vector3d b2 = particle(i + 2) - particle(i + 1);
        const Eigen::Vector3d b3 = particle(i + 3) - particle(i + 2);
        const Eigen::Vector3d n1 = b1.cross(b2);
        const Eigen::Vector3d n2 = b2.cross(b3);
        const double norm_b2 = std::max(b2.norm(), 1e-300);
        out(r, i) = std::atan2(n1.cross(n2).dot(b2) / norm_b2, n1.dot(n2));
      }
    }
  }
  return out;
}

}  // namespace sbg
