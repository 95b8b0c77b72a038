#include "sbg/gradcore.hpp"

#include <cmath>

namespace sbg {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double act_value(Activation a, double z) {
  if (a == Activation::tanh) return std::tanh(z);
  return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2));
}

double act_deriv(Activation a, double z, double v) {
  if (a == Activation::tanh) return 1.0 - v * v;
  const double phi = kInvSqrt2Pi * std::exp(-0.5 * z * z);
  return 0.5 * (1.0 + std::erf(z * kInvSqrt2)) + z * phi;
}

}  // namespace

Mlp make_mlp(std::vector<Index> widths, Activation activation) {
  if (widths.size() < 2) throw InputError("make_mlp: need at least two layer widths");
  for (size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 0 || (widths[i] == 0 && i > 0))
      throw InputError("make_mlp: widths must be positive (input width may be zero)");
  }
  Mlp net;
  net.widths = std::move(widths);
  net.activation = activation;
  for (size_t l = 0; l + 1 < net.widths.size(); ++l) {
    net.weights.emplace_back(Matrix::Zero(net.widths[l + 1], net.widths[l]));
    net.biases.emplace_back(Vector::Zero(net.widths[l + 1]));
  }
  return net;
}

void glorot_init(Mlp& net, Prng& rng) {
  for (size_t l = 0; l < net.weights.size(); ++l) {
    const double fan = static_cast<double>(net.widths[l] + net.widths[l + 1]);
    const double bound = std::sqrt(6.0 / fan);
    for (Index j = 0; j < net.weights[l].cols(); ++j)
      for (Index i = 0; i < net.weights[l].rows(); ++i)
        net.weights[l](i, j) = bound * (2.0 * rng.uniform() - 1.0);
    net.biases[l].setZero();
  }
}

void zero_last_layer(Mlp& net) {
  net.weights.back().setZero();
  net.biases.back().setZero();
}

Index param_count(const Mlp& net) {
  Index n = 0;
  for (size_t l = 0; l < net.weights.size(); ++l)
    n += net.weights[l].size() + net.biases[l].size();
  return n;
}

MlpGrad zero_grad(const Mlp& net) {
  MlpGrad g;
  for (size_t l = 0; l < net.weights.size(); ++l) {
    g.weights.emplace_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
    g.biases.emplace_back(Vector::Zero(net.biases[l].size()));
  }
  return g;
}

void axpy(double alpha, const MlpGrad& g, MlpGrad& acc) {
  for (size_t l = 0; l < g.weights.size(); ++l) {
    acc.weights[l] += alpha * g.weights[l];
    acc.biases[l] += alpha * g.biases[l];
  }
}

std::pair<Vector, MlpTape> mlp_forward(const Mlp& net, VectorRef x) {
  if (x.size() != net.widths.front())
    throw InputError("mlp_forward: input width " + std::to_string(x.size()) + ", expected " +
                     std::to_string(net.widths.front()));
  MlpTape tape;
  tape.net = &net;
  tape.input = x;
  const size_t depth = net.weights.size();
  tape.pre.resize(depth);
  tape.act.resize(depth);
  Vector cur = x;
  for (size_t l = 0; l < depth; ++l) {
    tape.pre[l] = net.weights[l] * cur + net.biases[l];
    if (l + 1 < depth) {
      tape.act[l].resize(tape.pre[l].size());
      for (Index i = 0; i < tape.pre[l].size(); ++i)
        tape.act[l](i) = act_value(net.activation, tape.pre[l](i));
    } else {
      tape.act[l] = tape.pre[l];  // linear output layer
    }
    cur = tape.act[l];
  }
  return {cur, std::move(tape)};
}

Vector mlp_eval(const Mlp& net, VectorRef x) {
  if (x.size() != net.widths.front()) throw InputError("mlp_eval: input width mismatch");
  Vector cur = x;
  const size_t depth = net.weights.size();
  for (size_t l = 0; l < depth; ++l) {
    Vector z = net.weights[l] * cur + net.biases[l];
    if (l + 1 < depth)
      for (Index i = 0; i < z.size(); ++i) z(i) = act_value(net.activation, z(i));
    cur = std::move(z);
  }
  return cur;
}

std::pair<MlpGrad, Vector> mlp_backward(MlpTape& tape, VectorRef upstream) {
  if (tape.net == nullptr) throw StateError("mlp_backward: empty tape");
  if (tape.used) throw StateError("mlp_backward: tape already consumed");
  tape.used = true;
  const Mlp& net = *tape.net;
  if (upstream.size() != net.widths.back())
    throw InputError("mlp_backward: upstream width mismatch");

  MlpGrad grad = zero_grad(net);
  Vector delta = upstream;  // gradient w.r.t. the current layer output
  for (size_t li = net.weights.size(); li-- > 0;) {
    if (li + 1 < net.weights.size()) {
      for (Index i = 0; i < delta.size(); ++i)
        delta(i) *= act_deriv(net.activation, tape.pre[li](i), tape.act[li](i));
    }
    const Vector& in = li == 0 ? tape.input : tape.act[li - 1];
    grad.weights[li] = delta * in.transpose();
    grad.biases[li] = delta;
    delta = net.weights[li].transpose() * delta;
  }
  return {std::move(grad), std::move(delta)};
}

void pack_params(const Mlp& net, double* dst) {
  for (size_t l = 0; l < net.weights.size(); ++l) {
    std::copy(net.weights[l].data(), net.weights[l].data() + net.weights[l].size(), dst);
    dst += net.weights[l].size();
    std::copy(net.biases[l].data(), net.biases[l].data() + net.biases[l].size(), dst);
    dst += net.biases[l].size();
  }
}

void unpack_params(Mlp& net, const double* src) {
  for (size_t l = 0; l < net.weights.size(); ++l) {
    std::copy(src, src + net.weights[l].size(), net.weights[l].data());
    src += net.weights[l].size();
    std::copy(src, src + net.biases[l].size(), net.biases[l].data());
    src += net.biases[l].size();
  }
}

void pack_grad(const MlpGrad& grad, double* dst) {
  for (size_t l = 0; l < grad.weights.size(); ++l) {
    std::copy(grad.weights[l].data(), grad.weights[l].data() + grad.weights[l].size(), dst);
    dst += grad.weights[l].size();
    std::copy(grad.biases[l].data(), grad.biases[l].data() + grad.biases[l].size(), dst);
    dst += grad.biases[l].size();
  }
}

}  // namespace sbg
