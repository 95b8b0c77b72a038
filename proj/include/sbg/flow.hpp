#pragma once

#include <optional>
#include <vector>

#include "sbg/common.hpp"
#include "sbg/gradcore.hpp"
#include "sbg/rng.hpp"

namespace sbg {

/// One affine coupling transform.  Coordinates with mask == 1 pass through
/// unchanged and feed the conditioner networks; coordinates with mask == 0 are
/// scaled and shifted.  Scale outputs are bounded with
/// s = clamp * tanh(s_raw / clamp) so exp(s) cannot overflow.
struct CouplingLayer {
  Eigen::VectorXi mask;
  Mlp scale_net;  // maps kept coordinates to one scale per transformed coordinate
  Mlp shift_net;
  double scale_clamp = 5.0;
  // Derived index lists, rebuilt by finalize_layer().
  std::vector<Index> keep;
  std::vector<Index> work;
};

void finalize_layer(CouplingLayer& layer);

/// Data standardization: optional per-configuration centroid removal followed
/// by one global scalar scale.  Centroid removal is a projection, so
/// destandardize restores the scale only; round trips are exact on mean-free
/// input.
struct Standardization {
  bool center_com = false;
  int spatial_dim = 1;
  double scale = 1.0;
};

/// Exact-likelihood invertible flow with a standard normal prior.
/// Immutable while sampling or transporting; training holds the only writer.
struct FlowModel {
  Index dim = 0;
  std::vector<CouplingLayer> layers;
  Standardization standardization;
  double com_sigma = 0.0;                // centroid noise scale, 0 disables the lift
  std::optional<Vector> ema_params;      // shadow parameters, flat packing
};

struct FlowConfig {
  Index n_layers = 6;
  std::vector<Index> hidden = {64, 64};
  Activation activation = Activation::tanh;
  double scale_clamp = 5.0;
};

/// Alternating-mask coupling stack.  Conditioner nets are Glorot-initialized
/// with a zeroed final layer, so a fresh model is exactly the identity map.
/// At dim == 1 layers carry empty conditioner inputs (constant scale/shift).
FlowModel build_flow(Index dim, const FlowConfig& config, Prng& rng);

void validate_flow(const FlowModel& model);

Index flow_parameter_count(const FlowModel& model);
Vector flow_parameters(const FlowModel& model);
void set_flow_parameters(FlowModel& model, VectorRef params);

struct FlowMap {
  Vector point;
  double logdet;
};

/// Generative direction x0 (prior space) -> x1.  logdet is the summed clamped
/// scale output over all layers.
FlowMap flow_forward(const FlowModel& model, VectorRef x0);

/// Inverse direction x1 -> x0; logdet is that of the inverse map itself, equal
/// to minus the forward logdet at x0.
FlowMap flow_inverse(const FlowModel& model, VectorRef x1);

/// log p(x) = log p0(f^-1(x)) + log |det d f^-1 / dx|, x in model coordinates.
double log_prob(const FlowModel& model, VectorRef x);

/// Exact input gradient of log_prob via one reverse sweep through the inverse
/// pass, logdet term included.
Vector grad_log_prob(const FlowModel& model, VectorRef x);

struct LogProbGrads {
  double logp = 0.0;
  Vector grad_input;
  Vector grad_params;  // empty unless requested
};
LogProbGrads log_prob_with_grads(const FlowModel& model, VectorRef x, bool want_params);

struct FlowSamples {
  Matrix positions;  // n x dim
  Vector logprobs;
};
FlowSamples flow_sample(const FlowModel& model, uint64_t seed, Index n);

/// Per-configuration centroid of a flattened particle vector.
Vector centroid_of(VectorRef x, int spatial_dim);

/// log-density of the chi(k) law of a norm with scale sigma; r is clamped
/// below at 1e-12 before the log.
double chi_log_density(double r, int k, double sigma);

/// Adds isotropic Gaussian centroid noise c ~ N(0, sigma^2 I) to a mean-free
/// configuration, broadcast over particles.  Input centroid must vanish.
Vector lift_com(VectorRef x_meanfree, int spatial_dim, double sigma, Prng& rng);

/// log p(x) minus the chi log-density of the centroid norm, the density
/// consistent with factoring the lifted model into mean-free part times an
/// isotropic centroid law.  Requires com_sigma > 0.
double com_adjusted_log_prob(const FlowModel& model, VectorRef x);
Vector grad_com_adjusted_log_prob(const FlowModel& model, VectorRef x);

/// Applies an independent uniformly random rotation to every row (rows reshape
/// to particles x spatial_dim).  identity_rotations is a test hook.
Matrix augment_rotation(const Matrix& batch, int spatial_dim, Prng& rng,
                        bool identity_rotations = false);

/// Uniform rotation matrix; SO(2) by angle, SO(3) via unit quaternion.
Matrix random_rotation(int spatial_dim, Prng& rng);

Standardization fit_standardization(const Matrix& data, bool center_com, int spatial_dim);
Matrix standardize(const Matrix& batch, const Standardization& stats);
Matrix destandardize(const Matrix& batch, const Standardization& stats);

}  // namespace sbg
