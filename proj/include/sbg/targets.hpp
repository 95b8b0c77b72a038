#pragma once

#include <array>
#include <optional>
#include <variant>
#include <vector>

#include "sbg/common.hpp"
#include "sbg/rng.hpp"

namespace sbg {

enum class TargetKind { gaussian, gaussian_mixture, double_well, muller_brown, many_body_pairwise };

struct GaussianParams {
  Vector mean;
  double sigma = 1.0;  // isotropic standard deviation of the quadratic well
};

struct GaussianMixtureParams {
  std::vector<double> weights;  // component weights, positive
  std::vector<Vector> means;
  std::vector<double> sigmas;
};

/// E(x) = sum_i barrier * (x_i^2 - 1)^2 + tilt * x_i
struct DoubleWellParams {
  double barrier = 1.0;
  double tilt = 0.0;
};

/// Four-term Gaussian-exponential surface on R^2 with the standard constants.
struct MullerBrownParams {
  std::array<double, 4> amplitude{-200.0, -100.0, -170.0, 15.0};
  std::array<double, 4> ax{-1.0, -1.0, -6.5, 0.7};
  std::array<double, 4> bxy{0.0, 0.0, 11.0, 0.6};
  std::array<double, 4> cy{-10.0, -10.0, -6.5, 0.7};
  std::array<double, 4> x0{1.0, 0.0, -0.5, -1.0};
  std::array<double, 4> y0{0.0, 0.5, 1.5, 1.0};
};

/// Sum over particle pairs of a distance double well
///   v(d) = a (d - d0) + b (d - d0)^2 + c (d - d0)^4,
/// invariant under global rotations and translations.
struct ManyBodyPairwiseParams {
  Index n_particles = 4;
  int spatial_dim = 3;
  double a = 0.0;
  double b = -4.0;
  double c = 0.9;
  double d0 = 4.0;
};

using TargetParams = std::variant<GaussianParams, GaussianMixtureParams, DoubleWellParams,
                                  MullerBrownParams, ManyBodyPairwiseParams>;

/// A Boltzmann target mu(x) ~ exp(-E(x) / temperature_scale).  Immutable after
/// construction; all evaluation functions are pure.
struct EnergyTarget {
  TargetKind kind;
  Index dim = 0;
  double temperature_scale = 1.0;
  TargetParams params;
};

EnergyTarget gaussian_target(Index dim, Vector mean, double sigma, double temperature_scale = 1.0);
EnergyTarget gaussian_mixture_target(Index dim, GaussianMixtureParams params,
                                     double temperature_scale = 1.0);
EnergyTarget double_well_target(Index dim, DoubleWellParams params = {},
                                double temperature_scale = 1.0);
EnergyTarget muller_brown_target(MullerBrownParams params = {}, double temperature_scale = 20.0);
EnergyTarget many_body_pairwise_target(ManyBodyPairwiseParams params = {},
                                       double temperature_scale = 1.0);

/// Temperature-scaled energy E(x)/temperature_scale.
double target_energy(const EnergyTarget& target, VectorRef x);

/// Temperature-scaled energy and its gradient, both divided by temperature_scale.
std::pair<double, Vector> energy_and_grad(const EnergyTarget& target, VectorRef x);

struct ReferenceOracle {
  enum class Method { analytic, quadrature };
  std::optional<double> log_partition;
  std::optional<Vector> mean;
  Method method = Method::analytic;
  // Grid actually used when method == quadrature (dim <= 2).
  Index grid_points = 0;
  double grid_lo = 0.0;
  double grid_hi = 0.0;
};

/// Bounds and resolution of the trapezoidal reference grid.
struct QuadratureSpec {
  double lo = -12.0;
  double hi = 12.0;
  Index points = 20001;  // per axis; 2-D grids use sqrt-scaled resolution
};

QuadratureSpec default_quadrature_spec(const EnergyTarget& target);

/// Ground-truth log Z (and mean where available).  Closed form for Gaussians
/// at any temperature and for mixtures at temperature_scale == 1; trapezoidal
/// quadrature otherwise, supported at dim <= 2 only.
ReferenceOracle reference(const EnergyTarget& target);
ReferenceOracle reference(const EnergyTarget& target, const QuadratureSpec& spec);

/// Exact i.i.d. samples; gaussian and gaussian_mixture kinds only
/// (mixtures at temperature_scale == 1).
Matrix sample_exact(const EnergyTarget& target, uint64_t seed, Index n);

}  // namespace sbg
