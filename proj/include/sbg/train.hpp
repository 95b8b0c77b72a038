#pragma once

#include <functional>
#include <vector>

#include "sbg/flow.hpp"

namespace sbg {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 4e-4;   // decoupled, applied directly to parameters
  double adam_beta1 = 0.90;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  Index epochs = 500;
  Index batch_size = 256;
  double warmup_fraction = 0.05;
  double lr_floor_ratio = 1.0 / 500.0;  // start and end lr relative to the peak
  double ema_decay = 0.999;
  uint64_t seed = 0;
  bool augment_rotations = false;
  int workers = 1;
};

void validate_train_config(const TrainConfig& config);

/// Linear warmup from peak*floor_ratio to peak over ceil(warmup_fraction *
/// total) steps, then cosine decay back to the floor, hit exactly at the final
/// step.
double lr_at(const TrainConfig& config, int64_t step, int64_t total_steps);

struct NllResult {
  double loss = 0.0;
  Vector grads;  // flat, aligned with flow_parameters()
};

/// Mean negative log-likelihood of a standardized (and CoM-lifted, when the
/// model carries com_sigma > 0) batch, with exact parameter gradients.
/// Gradients are reduced over fixed-size chunks in fixed order, so the result
/// does not depend on the worker count.
NllResult nll_loss(const FlowModel& model, const Matrix& batch, int workers = 1);

/// Adam moments for checkpoint resume.
struct TrainerState {
  int64_t step = 0;
  Vector m;
  Vector v;
};

/// One bias-corrected Adam step with decoupled weight decay; advances
/// state.step.  With zero gradients the parameters shrink by exactly
/// (1 - lr * weight_decay).
void adamw_update(Vector& params, TrainerState& state, const Vector& grads, double lr,
                  const TrainConfig& config);

struct TrainLogRow {
  int64_t step = 0;
  double lr = 0.0;
  double train_nll = 0.0;
  double val_metric = std::numeric_limits<double>::quiet_NaN();  // set on epoch ends
};

/// Validation metric on a candidate model (lower is better); evaluated on the
/// EMA weights at every epoch end.
using ValMetricHook = std::function<double(const FlowModel&)>;

struct FitResult {
  FlowModel model;  // parameters set to the best-validation EMA snapshot
  TrainerState state;
  Vector last_params;  // raw end-of-run parameters, for resume
  Vector last_ema;
  std::vector<TrainLogRow> log;
  double best_val_metric = std::numeric_limits<double>::infinity();
  int64_t best_step = 0;
  bool diverged = false;
};

/// Maximum-likelihood training with AdamW-style decoupled weight decay, the
/// warmup+cosine schedule and an EMA shadow.  Rotation augmentation and the
/// CoM lift are drawn fresh per batch.  On divergence (non-finite loss) the
/// last good checkpoint is returned with the diverged flag set.
FitResult fit(FlowModel model, const Matrix& train_data, const Matrix& val_data,
              const TrainConfig& config, const ValMetricHook& val_metric_hook,
              const TrainerState* resume = nullptr);

}  // namespace sbg
