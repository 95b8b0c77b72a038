#include "sbg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sbg {

namespace {

constexpr uint64_t kShuffleTag = 101;
constexpr uint64_t kAugmentTag = 102;

Matrix augment_batch(const FlowModel& model, const TrainConfig& config, const Matrix& batch,
                     Prng& rng) {
  Matrix out = batch;
  const int sd = model.standardization.spatial_dim;
  if (config.augment_rotations) out = augment_rotation(out, sd, rng);
  if (model.com_sigma > 0.0) {
    for (Index r = 0; r < out.rows(); ++r)
      out.row(r) = lift_com(out.row(r).transpose(), sd, model.com_sigma, rng).transpose();
  }
  return out;
}

}  // namespace

void validate_train_config(const TrainConfig& config) {
  if (config.learning_rate <= 0.0) throw InputError("train: learning_rate must be positive");
  if (config.weight_decay < 0.0) throw InputError("train: weight_decay must be nonnegative");
  if (config.ema_decay < 0.0 || config.ema_decay >= 1.0)
    throw InputError("train: ema_decay must lie in [0, 1)");
  if (config.warmup_fraction <= 0.0 || config.warmup_fraction >= 1.0)
    throw InputError("train: warmup_fraction must lie in (0, 1)");
  if (config.lr_floor_ratio <= 0.0 || config.lr_floor_ratio > 1.0)
    throw InputError("train: lr_floor_ratio must lie in (0, 1]");
  if (config.epochs < 0 || config.batch_size < 1) throw InputError("train: bad epoch/batch sizes");
  if (config.workers < 1) throw InputError("train: workers must be >= 1");
}

double lr_at(const TrainConfig& config, int64_t step, int64_t total_steps) {
  const double peak = config.learning_rate;
  const double floor = peak * config.lr_floor_ratio;
  if (total_steps <= 0) return floor;
  const int64_t warmup = std::max<int64_t>(
      1, static_cast<int64_t>(std::ceil(config.warmup_fraction * static_cast<double>(total_steps))));
  if (step < warmup)
    return floor + (peak - floor) * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps - 1 <= warmup) return step >= total_steps - 1 ? floor : peak;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - 1 - warmup);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

void adamw_update(Vector& params, TrainerState& state, const Vector& grads, double lr,
                  const TrainConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw InputError("adamw_update: size mismatch");
  const double t = static_cast<double>(state.step + 1);
  state.m = config.adam_beta1 * state.m + (1.0 - config.adam_beta1) * grads;
  state.v = config.adam_beta2 * state.v + (1.0 - config.adam_beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(config.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(config.adam_beta2, t);
  const Vector update =
      (state.m / bc1).cwiseQuotient(((state.v / bc2).cwiseSqrt().array() + config.adam_eps).matrix());
  params -= lr * update + (lr * config.weight_decay) * params;
  ++state.step;
}

NllResult nll_loss(const FlowModel& model, const Matrix& batch, int workers) {
  const Index n = batch.rows();
  if (n == 0) throw InputError("nll_loss: empty batch");
  if (batch.cols() != model.dim) throw InputError("nll_loss: batch dimension mismatch");
  const Index n_params = flow_parameter_count(model);

  // Fixed chunk layout keeps the floating-point reduction order independent of
  // the worker count.
  const Index n_chunks = std::min<Index>(16, n);
  const Index chunk = (n + n_chunks - 1) / n_chunks;
  std::vector<Vector> grad_acc(static_cast<size_t>(n_chunks), Vector::Zero(n_params));
  std::vector<double> loss_acc(static_cast<size_t>(n_chunks), 0.0);
  std::vector<Index> bad_row(static_cast<size_t>(n_chunks), -1);

  parallel_for(n_chunks, workers, [&](Index c) {
    const Index lo = c * chunk;
    const Index hi = std::min(n, lo + chunk);
    for (Index i = lo; i < hi; ++i) {
      const LogProbGrads g = log_prob_with_grads(model, batch.row(i).transpose(), true);
      if (!std::isfinite(g.logp)) {
        bad_row[static_cast<size_t>(c)] = i;
        return;
      }
      loss_acc[static_cast<size_t>(c)] += g.logp;
      grad_acc[static_cast<size_t>(c)] += g.grad_params;
    }
  });
  for (Index c = 0; c < n_chunks; ++c)
    if (bad_row[static_cast<size_t>(c)] >= 0)
      throw NumericalError("nll_loss: non-finite log-probability at row " +
                           std::to_string(bad_row[static_cast<size_t>(c)]));

  NllResult out;
  out.grads = Vector::Zero(n_params);
  double total = 0.0;
  for (Index c = 0; c < n_chunks; ++c) {
    total += loss_acc[static_cast<size_t>(c)];
    out.grads += grad_acc[static_cast<size_t>(c)];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss = -total * inv_n;
  out.grads *= -inv_n;
  return out;
}

FitResult fit(FlowModel model, const Matrix& train_data, const Matrix& val_data,
              const TrainConfig& config, const ValMetricHook& val_metric_hook,
              const TrainerState* resume) {
  validate_train_config(config);
  if (train_data.rows() == 0 || val_data.rows() == 0) throw InputError("fit: empty dataset");
  if (train_data.cols() != model.dim) throw InputError("fit: data dimension mismatch");

  const Index n = train_data.rows();
  const Index batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int64_t total_steps = static_cast<int64_t>(config.epochs) * batches_per_epoch;

  FitResult result;
  Vector params = flow_parameters(model);
  Vector ema = model.ema_params.value_or(params);
  TrainerState state;
  if (resume) {
    state = *resume;
    if (state.m.size() != params.size() || state.v.size() != params.size())
      throw InputError("fit: resume state does not match the model");
  } else {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }

  Vector best_ema = ema;
  double best_val = std::numeric_limits<double>::infinity();
  int64_t best_step = state.step;

  const auto eval_hook = [&](int64_t at_step) {
    if (!val_metric_hook) return std::numeric_limits<double>::quiet_NaN();
    FlowModel candidate = model;
    set_flow_parameters(candidate, ema);
    candidate.ema_params = ema;
    const double metric = val_metric_hook(candidate);
    if (std::isfinite(metric) && metric < best_val) {
      best_val = metric;
      best_ema = ema;
      best_step = at_step;
    }
    return metric;
  };

  // Baseline validation so epochs == 0 still reports a checkpoint.
  if (total_steps == 0) eval_hook(state.step);

  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Prng run_rng(config.seed);

  while (state.step < total_steps && !result.diverged) {
    const int64_t epoch = state.step / batches_per_epoch;
    {
      Prng shuffle_rng = run_rng.derive(hash_combine(kShuffleTag, static_cast<uint64_t>(epoch)));
      for (Index i = n - 1; i > 0; --i) {
        const Index j = static_cast<Index>(shuffle_rng.below(static_cast<uint64_t>(i) + 1));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
      }
    }
    for (Index b = static_cast<Index>(state.step % batches_per_epoch);
         b < batches_per_epoch && !result.diverged; ++b) {
      const Index lo = b * config.batch_size;
      const Index hi = std::min(n, lo + config.batch_size);
      Matrix batch(hi - lo, model.dim);
      for (Index i = lo; i < hi; ++i)
        batch.row(i - lo) = train_data.row(order[static_cast<size_t>(i)]);
      Prng aug_rng = run_rng.derive(hash_combine(kAugmentTag, static_cast<uint64_t>(state.step)));
      batch = augment_batch(model, config, batch, aug_rng);

      TrainLogRow row;
      row.step = state.step;
      row.lr = lr_at(config, state.step, total_steps);
      try {
        const NllResult nll = nll_loss(model, batch, config.workers);
        row.train_nll = nll.loss;
        if (!std::isfinite(nll.loss)) throw NumericalError("fit: non-finite loss");
        adamw_update(params, state, nll.grads, row.lr, config);
        set_flow_parameters(model, params);
        ema = config.ema_decay * ema + (1.0 - config.ema_decay) * params;
      } catch (const NumericalError&) {
        result.diverged = true;
        row.train_nll = std::numeric_limits<double>::quiet_NaN();
      }
      const bool epoch_end = !result.diverged && (b + 1 == batches_per_epoch);
      if (epoch_end) row.val_metric = eval_hook(state.step);
      result.log.push_back(row);
    }
  }
  // Without a metric (or before any successful validation) the latest EMA is
  // the checkpoint.
  if (!std::isfinite(best_val)) best_ema = ema;

  result.last_params = params;
  result.last_ema = ema;
  set_flow_parameters(model, best_ema);
  model.ema_params = best_ema;
  result.model = std::move(model);
  result.state = std::move(state);
  result.best_val_metric = best_val;
  result.best_step = best_step;
  return result;
}

}  // namespace sbg
