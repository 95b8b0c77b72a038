#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sbg/gradcore.hpp"
#include "testutil.hpp"

using namespace sbg;

namespace {

Mlp random_net(std::vector<Index> widths, Activation act, uint64_t seed) {
  Mlp net = make_mlp(std::move(widths), act);
  Prng rng(seed);
  glorot_init(net, rng);
  for (auto& b : net.biases)
    for (Index i = 0; i < b.size(); ++i) b(i) = 0.3 * rng.normal();
  return net;
}

Vector random_vector(Index n, Prng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

// Straightforward re-evaluation, independent of the library forward pass.
Vector plain_eval(const Mlp& net, const Vector& x) {
  Vector cur = x;
  for (size_t l = 0; l < net.weights.size(); ++l) {
    Vector z = net.weights[l] * cur + net.biases[l];
    if (l + 1 < net.weights.size()) {
      for (Index i = 0; i < z.size(); ++i) {
        if (net.activation == Activation::tanh)
          z(i) = std::tanh(z(i));
        else
          z(i) = 0.5 * z(i) * (1.0 + std::erf(z(i) / std::sqrt(2.0)));
      }
    }
    cur = z;
  }
  return cur;
}

}  // namespace

TEST_CASE("zero network maps everything to zero") {
  const Mlp net = make_mlp({3, 5, 2});
  Prng rng(1);
  const auto [y, tape] = mlp_forward(net, random_vector(3, rng));
  CHECK(y.norm() == 0.0);
}

TEST_CASE("identity linear layer") {
  Mlp net = make_mlp({3, 3});
  net.weights[0] = Matrix::Identity(3, 3);
  Prng rng(2);
  const Vector x = random_vector(3, rng);
  const auto [y, tape] = mlp_forward(net, x);
  CHECK((y - x).norm() == 0.0);
}

TEST_CASE("forward matches an independent re-evaluation") {
  for (const Activation act : {Activation::tanh, Activation::gelu}) {
    const Mlp net = random_net({4, 16, 16, 3}, act, 77);
    Prng rng(3);
    for (int t = 0; t < 10; ++t) {
      const Vector x = random_vector(4, rng);
      const auto [y, tape] = mlp_forward(net, x);
      CHECK((y - plain_eval(net, x)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("parameter count formula") {
  const Mlp net = make_mlp({4, 16, 16, 3});
  CHECK(param_count(net) == 4 * 16 + 16 + 16 * 16 + 16 + 16 * 3 + 3);
  const Mlp empty_in = make_mlp({0, 8, 2});
  CHECK(param_count(empty_in) == 0 * 8 + 8 + 8 * 2 + 2);
}

TEST_CASE("identity jacobian and zero cotangent") {
  Mlp net = make_mlp({3, 3});
  net.weights[0] = Matrix::Identity(3, 3);
  Prng rng(4);
  auto [y, tape] = mlp_forward(net, random_vector(3, rng));
  Vector e1 = Vector::Zero(3);
  e1(0) = 1.0;
  auto [gp, gin] = mlp_backward(tape, e1);
  CHECK((gin - e1).norm() == 0.0);

  auto [y2, tape2] = mlp_forward(net, random_vector(3, rng));
  auto [gp2, gin2] = mlp_backward(tape2, Vector::Zero(3));
  CHECK(gin2.norm() == 0.0);
  for (const auto& w : gp2.weights) CHECK(w.norm() == 0.0);
}

TEST_CASE("tape reuse is a state error") {
  const Mlp net = random_net({2, 4, 2}, Activation::tanh, 5);
  Prng rng(5);
  auto [y, tape] = mlp_forward(net, random_vector(2, rng));
  const Vector u = random_vector(2, rng);
  mlp_backward(tape, u);
  CHECK_THROWS_AS(mlp_backward(tape, u), StateError);
}

TEST_CASE("width mismatch is an input error") {
  const Mlp net = make_mlp({3, 2});
  Prng rng(6);
  CHECK_THROWS_AS(mlp_forward(net, random_vector(4, rng)), InputError);
}

TEST_CASE("gradients match finite differences on 50 random triples") {
  Prng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const Activation act = trial % 2 == 0 ? Activation::tanh : Activation::gelu;
    const Mlp net = random_net({3, 8, 2}, act, 1000 + static_cast<uint64_t>(trial));
    const Vector x = random_vector(3, rng);
    const Vector upstream = random_vector(2, rng);

    auto [y, tape] = mlp_forward(net, x);
    auto [gp, gin] = mlp_backward(tape, upstream);

    const Vector fd_in = testutil::fd_gradient(
        [&](const Vector& p) { return upstream.dot(plain_eval(net, p)); }, x);
    CHECK(testutil::grad_rel_error(gin, fd_in) < 1e-5);

    // Parameter gradients against finite differences on the packed vector.
    const Index n_params = param_count(net);
    Vector theta(n_params);
    pack_params(net, theta.data());
    Vector packed_grad(n_params);
    pack_grad(gp, packed_grad.data());
    const auto loss_at = [&](const Vector& p) {
      Mlp probe = net;
      unpack_params(probe, p.data());
      return upstream.dot(plain_eval(probe, x));
    };
    const Vector fd_params = testutil::fd_gradient(loss_at, theta);
    CHECK(testutil::grad_rel_error(packed_grad, fd_params) < 1e-5);
  }
}

TEST_CASE("backward is linear in the upstream vector") {
  const Mlp net = random_net({3, 6, 2}, Activation::tanh, 7);
  Prng rng(8);
  const Vector x = random_vector(3, rng);
  const Vector u = random_vector(2, rng);
  const Vector v = random_vector(2, rng);
  const double a = 0.7, b = -1.3;

  auto t1 = mlp_forward(net, x).second;
  auto t2 = mlp_forward(net, x).second;
  auto t3 = mlp_forward(net, x).second;
  auto [gp_u, gin_u] = mlp_backward(t1, u);
  auto [gp_v, gin_v] = mlp_backward(t2, v);
  auto [gp_mix, gin_mix] = mlp_backward(t3, a * u + b * v);

  CHECK((gin_mix - (a * gin_u + b * gin_v)).cwiseAbs().maxCoeff() < 1e-12);
  for (size_t l = 0; l < gp_mix.weights.size(); ++l) {
    CHECK((gp_mix.weights[l] - (a * gp_u.weights[l] + b * gp_v.weights[l]))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK((gp_mix.biases[l] - (a * gp_u.biases[l] + b * gp_v.biases[l])).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("empty-input network is a trainable constant") {
  Mlp net = random_net({0, 4, 2}, Activation::tanh, 11);
  const Vector empty(0);
  const auto [y, tape] = mlp_forward(net, empty);
  CHECK(y.size() == 2);
  CHECK(all_finite(y));
  CHECK((y - plain_eval(net, empty)).norm() == 0.0);
}
