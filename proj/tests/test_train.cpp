#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sbg/targets.hpp"
#include "sbg/train.hpp"
#include "testutil.hpp"

using namespace sbg;

namespace {

FlowModel small_flow(Index dim, uint64_t seed, Index n_layers = 2,
                     std::vector<Index> hidden = {8}) {
  Prng rng(seed);
  FlowConfig config;
  config.n_layers = n_layers;
  config.hidden = std::move(hidden);
  return build_flow(dim, config, rng);
}

Matrix normal_data(Index n, Index dim, uint64_t seed, double sigma = 1.0) {
  return sample_exact(gaussian_target(dim, Vector(), sigma, 1.0), seed, n);
}

}  // namespace

TEST_CASE("nll of the identity model is the closed-form gaussian loss") {
  const FlowModel model = small_flow(3, 1);
  const Matrix batch = normal_data(64, 3, 2);
  const NllResult out = nll_loss(model, batch);
  const double expected =
      1.5 * std::log(2.0 * M_PI) + 0.5 * batch.array().square().rowwise().sum().mean();
  CHECK(out.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("duplicated batches give the same mean loss") {
  FlowModel model = small_flow(2, 3);
  Prng rng(4);
  Vector params(flow_parameter_count(model));
  for (Index i = 0; i < params.size(); ++i) params(i) = 0.3 * rng.normal();
  set_flow_parameters(model, params);
  const Matrix batch = normal_data(50, 2, 5);
  Matrix doubled(100, 2);
  doubled << batch, batch;
  CHECK(std::abs(nll_loss(model, batch).loss - nll_loss(model, doubled).loss) < 1e-12);
}

TEST_CASE("nll gradients match finite differences on a two-layer model") {
  FlowModel model = small_flow(2, 6, 2, {6});
  Prng rng(7);
  Vector params(flow_parameter_count(model));
  for (Index i = 0; i < params.size(); ++i) params(i) = 0.4 * rng.normal();
  set_flow_parameters(model, params);
  const Matrix batch = normal_data(16, 2, 8);
  const NllResult out = nll_loss(model, batch);
  const Vector fd = testutil::fd_gradient(
      [&](const Vector& p) {
        FlowModel probe = model;
        set_flow_parameters(probe, p);
        return nll_loss(probe, batch).loss;
      },
      params);
  CHECK(testutil::grad_rel_error(out.grads, fd) < 1e-5);
}

TEST_CASE("worker count does not change the loss or gradients") {
  FlowModel model = small_flow(2, 9);
  Prng rng(10);
  Vector params(flow_parameter_count(model));
  for (Index i = 0; i < params.size(); ++i) params(i) = 0.3 * rng.normal();
  set_flow_parameters(model, params);
  const Matrix batch = normal_data(200, 2, 11);
  const NllResult one = nll_loss(model, batch, 1);
  const NllResult four = nll_loss(model, batch, 4);
  CHECK(one.loss == four.loss);
  CHECK((one.grads - four.grads).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("learning-rate schedule endpoints") {
  TrainConfig config;
  config.learning_rate = 1e-4;
  const int64_t total = 4000;
  const int64_t warmup = static_cast<int64_t>(std::ceil(config.warmup_fraction * total));
  CHECK(lr_at(config, warmup, total) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(std::abs(lr_at(config, total - 1, total) - 1e-4 / 500.0) < 1e-9);
  CHECK(lr_at(config, 0, total) == doctest::Approx(1e-4 / 500.0).epsilon(1e-9));
  // Warmup is linear.
  const double quarter = lr_at(config, warmup / 4, total);
  const double half = lr_at(config, warmup / 2, total);
  CHECK(half - quarter == doctest::Approx(quarter - lr_at(config, 0, total)).epsilon(1e-6));
}

TEST_CASE("decoupled weight decay shrinks parameters on frozen gradients") {
  TrainConfig config;
  config.weight_decay = 0.02;
  Vector params = Vector::Constant(5, 2.0);
  TrainerState state;
  state.m = Vector::Zero(5);
  state.v = Vector::Zero(5);
  const Vector zero_grads = Vector::Zero(5);
  const double lr = 0.1;
  Vector expected = params;
  for (int t = 0; t < 7; ++t) {
    adamw_update(params, state, zero_grads, lr, config);
    expected *= 1.0 - lr * config.weight_decay;
  }
  CHECK((params - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("ema shadow equals the exponential average of the trajectory") {
  FlowModel model = small_flow(1, 12, 1, {4});
  const Matrix data = normal_data(1, 1, 13);  // one-row dataset: replayable batches
  TrainConfig config;
  config.epochs = 10;
  config.batch_size = 1;
  config.learning_rate = 1e-2;
  config.weight_decay = 1e-3;
  config.ema_decay = 0.9;
  config.seed = 99;
  const FitResult out = fit(model, data, data, config, nullptr);

  // Replay the same ten updates through the public optimizer step.
  Vector params = flow_parameters(model);
  Vector ema = params;
  TrainerState state;
  state.m = Vector::Zero(params.size());
  state.v = Vector::Zero(params.size());
  FlowModel probe = model;
  for (int64_t step = 0; step < 10; ++step) {
    set_flow_parameters(probe, params);
    const NllResult nll = nll_loss(probe, data);
    adamw_update(params, state, nll.grads, lr_at(config, step, 10), config);
    ema = config.ema_decay * ema + (1.0 - config.ema_decay) * params;
  }
  REQUIRE(out.model.ema_params.has_value());
  CHECK((*out.model.ema_params - ema).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero epochs return the initial model unchanged") {
  const FlowModel model = small_flow(2, 14);
  const Matrix data = normal_data(32, 2, 15);
  TrainConfig config;
  config.epochs = 0;
  const FitResult out = fit(model, data, data, config, nullptr);
  CHECK((flow_parameters(out.model) - flow_parameters(model)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training loss decreases monotonically on a gaussian target") {
  const FlowModel model = small_flow(1, 16, 1, {4});
  const Matrix data = normal_data(512, 1, 17, 1.7);
  TrainConfig config;
  config.epochs = 30;
  config.batch_size = 512;  // full-batch: epoch averages are single losses
  config.learning_rate = 5e-3;
  config.weight_decay = 0.0;
  config.seed = 18;
  const FitResult out = fit(model, data, data, config, nullptr);
  REQUIRE(out.log.size() == 30);
  for (size_t i = 1; i < out.log.size(); ++i)
    CHECK(out.log[i].train_nll <= out.log[i - 1].train_nll + 1e-9);
}

TEST_CASE("a small flow reaches the analytic gaussian entropy") {
  const FlowModel model = small_flow(1, 19, 1, {4});
  const Matrix train_data = normal_data(2000, 1, 20);
  const Matrix val_data = normal_data(500, 1, 21);
  TrainConfig config;
  config.epochs = 200;
  config.batch_size = 256;
  config.learning_rate = 2e-2;
  config.weight_decay = 0.0;
  config.ema_decay = 0.99;
  config.seed = 22;
  const FitResult out = fit(model, train_data, val_data, config, nullptr);
  const double nll = nll_loss(out.model, val_data).loss;
  const double entropy = 0.5 * std::log(2.0 * M_PI * std::exp(1.0));
  CHECK(std::abs(nll - entropy) < 0.05);
}

TEST_CASE("checkpoint-best selection follows the validation metric") {
  const FlowModel model = small_flow(1, 23, 1, {4});
  const Matrix data = normal_data(256, 1, 24);
  TrainConfig config;
  config.epochs = 5;
  config.batch_size = 256;
  config.learning_rate = 1e-2;
  config.seed = 25;
  // A hook that prefers the third epoch.
  int64_t calls = 0;
  std::vector<double> schedule = {5.0, 4.0, 1.0, 3.0, 2.0};
  Vector third_ema;
  const FitResult out = fit(model, data, data, config,
                            [&](const FlowModel& candidate) {
                              const double value = schedule[static_cast<size_t>(calls % 5)];
                              if (calls == 2) third_ema = *candidate.ema_params;
                              ++calls;
                              return value;
                            });
  CHECK(out.best_val_metric == 1.0);
  CHECK((flow_parameters(out.model) - third_ema).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("divergence aborts with the last good checkpoint") {
  const FlowModel model = small_flow(1, 26, 1, {4});
  const Matrix data = normal_data(64, 1, 27);
  TrainConfig config;
  config.epochs = 50;
  config.batch_size = 64;
  config.learning_rate = 1e160;  // overflow the shift outputs on step two
  config.seed = 28;
  const FitResult out = fit(model, data, data, config, nullptr);
  CHECK(out.diverged);
  CHECK(all_finite(flow_parameters(out.model)));
}

TEST_CASE("same seed gives bit-identical checkpoints") {
  const FlowModel model = small_flow(2, 29);
  const Matrix train_data = normal_data(300, 2, 30);
  const Matrix val_data = normal_data(100, 2, 31);
  TrainConfig config;
  config.epochs = 4;
  config.batch_size = 64;
  config.learning_rate = 3e-3;
  config.seed = 4242;
  const FitResult a = fit(model, train_data, val_data, config, nullptr);
  const FitResult b = fit(model, train_data, val_data, config, nullptr);
  CHECK((flow_parameters(a.model) - flow_parameters(b.model)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((*a.model.ema_params - *b.model.ema_params).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("resume continues the schedule at the recorded step") {
  const FlowModel model = small_flow(1, 32, 1, {4});
  const Matrix data = normal_data(128, 1, 33);
  TrainConfig config;
  config.epochs = 6;
  config.batch_size = 128;
  config.learning_rate = 1e-2;
  config.seed = 77;

  const FitResult full = fit(model, data, data, config, nullptr);

  TrainConfig three = config;
  three.epochs = 3;
  const FitResult first_half = fit(model, data, data, three, nullptr);
  const FitResult second_half =
      fit(first_half.model, data, data, config, nullptr, &first_half.state);
  REQUIRE(!second_half.log.empty());
  CHECK(second_half.log.front().step == 3);
  CHECK(second_half.log.front().lr == doctest::Approx(lr_at(config, 3, 6)).epsilon(1e-15));
  CHECK(full.log.back().lr == doctest::Approx(second_half.log.back().lr).epsilon(1e-15));
}
