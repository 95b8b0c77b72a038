#pragma once

#include <vector>

#include "sbg/common.hpp"
#include "sbg/rng.hpp"

namespace sbg {

enum class Activation { tanh, gelu };

/// Fully connected network in 64-bit arithmetic.  The activation is applied
/// after every layer except the last.  A leading width of zero is allowed and
/// yields a constant (bias-driven) network, which the flow uses for
/// one-dimensional coupling layers.
struct Mlp {
  std::vector<Index> widths;
  std::vector<Matrix> weights;  // weights[l] has shape widths[l+1] x widths[l]
  std::vector<Vector> biases;
  Activation activation = Activation::tanh;
};

Mlp make_mlp(std::vector<Index> widths, Activation activation = Activation::tanh);

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero.
void glorot_init(Mlp& net, Prng& rng);

/// Zeroes the final layer so the network output starts at exactly zero.
void zero_last_layer(Mlp& net);

Index param_count(const Mlp& net);

/// Recording of one forward evaluation, sufficient for a single reverse sweep.
struct MlpTape {
  const Mlp* net = nullptr;
  Vector input;
  std::vector<Vector> pre;  // pre-activation per layer
  std::vector<Vector> act;  // post-activation per layer (last entry: output)
  bool used = false;
};

struct MlpGrad {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

MlpGrad zero_grad(const Mlp& net);
void axpy(double alpha, const MlpGrad& g, MlpGrad& acc);

std::pair<Vector, MlpTape> mlp_forward(const Mlp& net, VectorRef x);

/// Output without a tape, for paths that never differentiate.
Vector mlp_eval(const Mlp& net, VectorRef x);

/// Exact reverse-mode gradients of <upstream, y> in parameters and input.
/// Each tape supports exactly one sweep; a second call is a state error.
std::pair<MlpGrad, Vector> mlp_backward(MlpTape& tape, VectorRef upstream);

/// Flat parameter packing (per layer: column-major weights, then biases).
void pack_params(const Mlp& net, double* dst);
void unpack_params(Mlp& net, const double* src);
void pack_grad(const MlpGrad& grad, double* dst);

}  // namespace sbg
