#pragma once

#include <optional>
#include <string>

#include "sbg/flow.hpp"
#include "sbg/io.hpp"
#include "sbg/mcmc.hpp"
#include "sbg/metrics.hpp"
#include "sbg/targets.hpp"
#include "sbg/train.hpp"
#include "sbg/transport.hpp"

namespace sbg::cli {

/// Threshold selector: disabled, a fixed value, or the automatic rule driven
/// by the truncation bounds.
struct FilterSetting {
  enum class Mode { off, fixed, automatic };
  Mode mode = Mode::off;
  double value = 0.0;
};

struct FilterBlock {
  FilterSetting energy_gamma;
  FilterSetting likelihood_delta;
  double clip_fraction = 0.0;
  double bias_b = 0.1;  // total-variation budget fed to the automatic rules
  double lambda = 1.0;
  std::optional<double> rho;  // absent: 1 / ESS of the one-shot weights
};

struct DataBlock {
  ChainConfig chain;
  std::vector<double> x0;  // chain start; zeros when empty
  Index train_n = 10000;
  Index val_n = 2000;
  Index test_n = 10000;
  DatasetFormat format = DatasetFormat::csv;
};

struct FlowBlock {
  FlowConfig config;
  double com_sigma = 0.0;
  bool center_com = false;
  int spatial_dim = 1;
};

struct ScheduleBlock {
  Index n_steps = 100;
  double epsilon = 1e-5;
  double ess_threshold = 0.5;
  ResampleKind resample = ResampleKind::multinomial;
  double drift_max_norm = 1e3;
  bool trajectory_dump = false;
};

struct MetricsBlock {
  Index bins = 60;
  std::optional<std::pair<double, double>> energy_range;  // absent: fit to data
  enum class AngleRule { none, atan2_point, chain } angles = AngleRule::none;
  Index torus_subsample = 1000;
};

struct TrainBlock {
  TrainConfig config;
  double val_crop_quantile = 0.999;
  Index val_samples = 2000;
};

struct RunConfig {
  uint64_t seed = 0;
  int workers = 1;
  bool reproducible = true;
  std::string output_dir = "out";
  EnergyTarget target = gaussian_target(1, Vector(), 1.0, 1.0);
  DataBlock data;
  FlowBlock flow;
  TrainBlock train;
  ScheduleBlock schedule;
  FilterBlock filters;
  Index n_samples = 10000;
  MetricsBlock metrics;
  bool ablate_centroid_norm = false;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Fully resolved snapshot; parsing it back reproduces the run bit-exactly.
std::string run_config_json(const RunConfig& config);
void write_run_config(const std::string& path, const RunConfig& config);

AnnealSchedule make_schedule(const RunConfig& config);

}  // namespace sbg::cli
