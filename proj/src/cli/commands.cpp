#include "sbg/cli/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace sbg::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path out_dir(const RunConfig& config) {
  fs::path dir(config.output_dir);
  fs::create_directories(dir);
  return dir;
}

std::string dataset_name(const RunConfig& config, const char* split) {
  return std::string(split) + (config.data.format == DatasetFormat::binary ? ".bin" : ".csv");
}

void snapshot(const RunConfig& config) {
  write_run_config((out_dir(config) / "config_resolved.json").string(), config);
}

uint64_t derived_seed(const RunConfig& config, uint64_t tag) {
  return Prng(config.seed).derive(tag).seed();
}

double quantile_of(Vector values, double q) {
  std::sort(values.data(), values.data() + values.size());
  const Index idx = std::min<Index>(values.size() - 1,
                                    static_cast<Index>(q * static_cast<double>(values.size())));
  return values(std::max<Index>(idx, 0));
}

Vector raw_energies(const EnergyTarget& target, const Matrix& raw_positions) {
  Vector energies(raw_positions.rows());
  for (Index i = 0; i < raw_positions.rows(); ++i)
    energies(i) = target_energy(target, raw_positions.row(i).transpose());
  return energies;
}

std::optional<AngleExtractor> angle_extractor(const RunConfig& config) {
  switch (config.metrics.angles) {
    case MetricsBlock::AngleRule::none:
      return std::nullopt;
    case MetricsBlock::AngleRule::atan2_point:
      return AngleExtractor{AngleExtractor::Rule::atan2_point, 2};
    case MetricsBlock::AngleRule::chain:
      return AngleExtractor{AngleExtractor::Rule::chain, config.flow.spatial_dim};
  }
  return std::nullopt;
}

std::optional<double> torus_metric(const RunConfig& config, const Matrix& raw_a,
                                   const Vector& logw_a, const Matrix& raw_b, uint64_t seed) {
  const auto extractor = angle_extractor(config);
  if (!extractor.has_value()) return std::nullopt;
  const Index n = std::min({config.metrics.torus_subsample, raw_a.rows(), raw_b.rows(),
                            Index{2000}});
  if (n < 1) return std::nullopt;
  const Matrix angles_a = extract_angles(*extractor, raw_a);
  const Matrix angles_b = extract_angles(*extractor, raw_b);
  return torus_w2_weighted(angles_a, logw_a, angles_b, Vector(), n, seed);
}

// One-shot importance weights of a proposal draw in model coordinates.
WeightedSamples proposal_weighted_samples(const FlowModel& model, const EnergyTarget& target,
                                          const FlowSamples& proposal) {
  const AnnealEndpoints endpoints = flow_to_target(model, target);
  const Index n = proposal.positions.rows();
  Vector log_target(n);
  Vector log_proposal = proposal.logprobs;
  for (Index i = 0; i < n; ++i)
    log_target(i) = -endpoints.e1(proposal.positions.row(i).transpose(), nullptr);
  if (model.com_sigma > 0.0) {
    const int sd = model.standardization.spatial_dim;
    for (Index i = 0; i < n; ++i) {
      const Vector c = centroid_of(proposal.positions.row(i).transpose(), sd);
      log_proposal(i) -= chi_log_density(c.norm(), sd, model.com_sigma);
    }
  }
  return make_weighted_samples(proposal.positions, std::move(log_target),
                               std::move(log_proposal));
}

struct ResolvedFilters {
  std::optional<double> gamma;
  std::optional<double> delta;  // likelihood threshold (probability scale)
  double clip_fraction = 0.0;
};

ResolvedFilters resolve_filters(const RunConfig& config, const WeightedSamples& samples) {
  ResolvedFilters resolved;
  resolved.clip_fraction = config.filters.clip_fraction;
  const auto need_rho = [&]() {
    if (config.filters.rho.has_value()) return *config.filters.rho;
    const Vector w = normalized_weights(samples.log_weight);
    return w.squaredNorm();  // 1 / ESS
  };
  if (config.filters.energy_gamma.mode == FilterSetting::Mode::fixed)
    resolved.gamma = config.filters.energy_gamma.value;
  else if (config.filters.energy_gamma.mode == FilterSetting::Mode::automatic)
    resolved.gamma = gamma_threshold(samples.size(), config.filters.bias_b, need_rho(),
                                     config.filters.lambda, samples);
  if (config.filters.likelihood_delta.mode == FilterSetting::Mode::fixed)
    resolved.delta = config.filters.likelihood_delta.value;
  else if (config.filters.likelihood_delta.mode == FilterSetting::Mode::automatic)
    resolved.delta = std::exp(delta_threshold(samples.size(), config.filters.bias_b, need_rho(),
                                              config.filters.lambda, samples));
  return resolved;
}

struct EstimatorRows {
  MetricsReport proposal;
  MetricsReport bg;
  MetricsReport sbg;
};

void write_training_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write training log: " + path);
  out << "step,lr,train_nll,val_ew1\n";
  for (const auto& row : rows) {
    out << row.step << ',' << format_double(row.lr) << ',' << format_double(row.train_nll) << ',';
    if (std::isnan(row.val_metric))
      out << "";
    else
      out << format_double(row.val_metric);
    out << '\n';
  }
}

void print_report_line(const std::string& name, const MetricsReport& report) {
  const auto opt = [](const std::optional<double>& v) {
    return v.has_value() ? format_double(*v) : std::string("-");
  };
  std::cout << name << "  ess=" << format_double(report.ess)
            << "  ess_norm=" << format_double(report.ess_normalized)
            << "  energy_w1=" << opt(report.energy_w1) << "  torus_w2=" << opt(report.torus_w2)
            << "  log_z_hat=" << opt(report.log_z_hat)
            << "  log_z_jarzynski=" << opt(report.log_z_jarzynski)
            << "  n=" << report.n_samples << "\n";
}

HistogramTable energy_histogram(const RunConfig& config, const Vector& energies,
                                const Vector& log_weights, double lo, double hi) {
  return histogram_weighted(energies, log_weights, config.metrics.bins, lo, hi);
}

}  // namespace

void cmd_generate_data(const RunConfig& config) {
  const fs::path dir = out_dir(config);
  snapshot(config);
  const EnergyTarget& target = config.target;

  ChainConfig chain_config = config.data.chain;
  const Prng data_rng(derived_seed(config, seed_tag::data));
  chain_config.seed = data_rng.derive(1).seed();
  Vector x0 = Vector::Zero(target.dim);
  if (!config.data.x0.empty()) {
    if (static_cast<Index>(config.data.x0.size()) != target.dim)
      throw InputError("config: data.x0 has the wrong dimension");
    for (Index i = 0; i < target.dim; ++i) x0(i) = config.data.x0[static_cast<size_t>(i)];
  }
  const ChainResult chain = run_chain(target, x0, chain_config);
  const SplitResult split = split_biased(chain.samples, config.data.train_n, config.data.val_n,
                                         config.data.test_n, data_rng.derive(2).seed());

  write_dataset((dir / dataset_name(config, "train")).string(), split.train, config.data.format);
  write_dataset((dir / dataset_name(config, "val")).string(), split.val, config.data.format);
  write_dataset((dir / dataset_name(config, "test")).string(), split.test, config.data.format);

  json provenance;
  provenance["chain"] = {{"kind", config.data.chain.kind == ChainKind::mala ? "mala" : "ula"},
                         {"steps", chain_config.steps},
                         {"step_size", chain_config.step_size},
                         {"burn_in", chain_config.burn_in},
                         {"acceptance_rate", chain.acceptance_rate}};
  provenance["seed"] = config.seed;
  provenance["rows"] = {{"train", split.train.rows()},
                        {"val", split.val.rows()},
                        {"test", split.test.rows()}};
  std::ofstream(dir / "provenance.json") << provenance.dump(2) << "\n";
  std::cout << "wrote " << split.train.rows() << "/" << split.val.rows() << "/"
            << split.test.rows() << " rows, acceptance " << chain.acceptance_rate << "\n";
}

void cmd_train(const RunConfig& config) {
  const fs::path dir = out_dir(config);
  snapshot(config);
  const EnergyTarget& target = config.target;

  const Matrix train_raw = read_dataset((dir / dataset_name(config, "train")).string());
  const Matrix val_raw = read_dataset((dir / dataset_name(config, "val")).string());
  if (train_raw.cols() != target.dim) throw InputError("train data does not match the target");

  const Standardization stats =
      fit_standardization(train_raw, config.flow.center_com, config.flow.spatial_dim);
  const Matrix train_std = standardize(train_raw, stats);
  const Matrix val_std = standardize(val_raw, stats);

  const Prng train_rng(derived_seed(config, seed_tag::train));
  Prng build_rng = train_rng.derive(1);
  FlowModel model = build_flow(target.dim, config.flow.config, build_rng);
  model.standardization = stats;
  model.com_sigma = config.flow.com_sigma;

  TrainConfig train_config = config.train.config;
  train_config.seed = train_rng.derive(2).seed();
  train_config.workers = config.workers;

  // Early-stopping metric: Wasserstein-1 between the energies of an
  // energy-cropped proposal draw and the validation energies, fixed draw seed
  // so epochs are comparable.
  const Vector val_energies = raw_energies(target, val_raw);
  const double crop = quantile_of(val_energies, config.train.val_crop_quantile);
  const uint64_t hook_seed = train_rng.derive(3).seed();
  const Index val_draws = config.train.val_samples;
  const ValMetricHook hook = [&](const FlowModel& candidate) {
    const FlowSamples draw = flow_sample(candidate, hook_seed, val_draws);
    const Matrix raw = destandardize(draw.positions, candidate.standardization);
    std::vector<double> kept;
    kept.reserve(static_cast<size_t>(val_draws));
    for (Index i = 0; i < raw.rows(); ++i) {
      const double e = target_energy(target, raw.row(i).transpose());
      if (e <= crop) kept.push_back(e);
    }
    if (kept.size() < 2) return std::numeric_limits<double>::infinity();
    Vector kept_v(static_cast<Index>(kept.size()));
    for (size_t i = 0; i < kept.size(); ++i) kept_v(static_cast<Index>(i)) = kept[i];
    return energy_w1(kept_v, val_energies);
  };

  const FitResult result = fit(model, train_std, val_std, train_config, hook);
  write_training_log((dir / "training_log.csv").string(), result.log);
  save_checkpoint((dir / "checkpoint.ckpt").string(), result.model, &result.state);

  // Resumable end-of-run state: the raw parameter vector with moments.
  FlowModel last = result.model;
  set_flow_parameters(last, result.last_params);
  last.ema_params = result.last_ema;
  save_checkpoint((dir / "checkpoint_last.ckpt").string(), last, &result.state);

  std::cout << "trained " << result.state.step << " steps, best val E-W1 "
            << format_double(result.best_val_metric) << " at step " << result.best_step
            << (result.diverged ? " (diverged, kept last good checkpoint)" : "") << "\n";
}

void cmd_sample(const RunConfig& config) {
  const fs::path dir = out_dir(config);
  snapshot(config);
  const FlowModel model = load_checkpoint((dir / "checkpoint.ckpt").string());
  const FlowSamples proposal =
      flow_sample(model, derived_seed(config, seed_tag::proposal), config.n_samples);
  ParticleEnsemble ensemble = make_ensemble(proposal.positions);
  write_ensemble_csv((dir / "ensemble_proposal.csv").string(), ensemble);
  std::cout << "sampled " << config.n_samples << " proposal points\n";
}

void cmd_transport(const RunConfig& config) {
  const fs::path dir = out_dir(config);
  snapshot(config);
  const FlowModel model = load_checkpoint((dir / "checkpoint.ckpt").string());
  const EnergyTarget& target = config.target;
  const AnnealSchedule schedule = make_schedule(config);

  const FlowSamples proposal =
      flow_sample(model, derived_seed(config, seed_tag::proposal), config.n_samples);
  const WeightedSamples samples = proposal_weighted_samples(model, target, proposal);
  const ResolvedFilters filters = resolve_filters(config, samples);

  EnsembleObserver observer;
  if (config.schedule.trajectory_dump) {
    observer = [&](const ParticleEnsemble& ensemble, Index step) {
      const Index n = schedule.n_steps;
      for (const double tau : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        if (step == static_cast<Index>(tau * static_cast<double>(n))) {
          char name[64];
          std::snprintf(name, sizeof(name), "trajectory_tau_%.2f.csv", tau);
          write_ensemble_csv((dir / name).string(), ensemble);
        }
      }
    };
  }

  const SbgResult result =
      sbg_run(model, target, schedule, config.n_samples, config.seed,
              SbgFilters{filters.gamma, filters.clip_fraction}, observer);
  write_ensemble_csv((dir / "ensemble_sbg.csv").string(), result.ensemble);
  write_diagnostics((dir / "diagnostics.json").string(), result.diagnostics);
  Index resamples = 0;
  for (const auto& step : result.diagnostics.steps) resamples += step.resampled ? 1 : 0;
  std::cout << "transported " << result.ensemble.positions.rows() << " particles, "
            << resamples << " resampling events\n";
}

void cmd_evaluate(const RunConfig& config) {
  const fs::path dir = out_dir(config);
  snapshot(config);
  const FlowModel model = load_checkpoint((dir / "checkpoint.ckpt").string());
  const EnergyTarget& target = config.target;
  const AnnealSchedule schedule = make_schedule(config);
  const Matrix test_raw = read_dataset((dir / dataset_name(config, "test")).string());
  const Vector test_energies = raw_energies(target, test_raw);
  const uint64_t metric_seed = derived_seed(config, seed_tag::metrics);

  // One shared proposal draw: the SMC driver derives the same stream.
  const FlowSamples proposal =
      flow_sample(model, derived_seed(config, seed_tag::proposal), config.n_samples);
  const Matrix proposal_raw = destandardize(proposal.positions, model.standardization);
  const Vector proposal_energies = raw_energies(target, proposal_raw);

  EstimatorRows rows;

  // Unweighted proposal.
  rows.proposal.ess = static_cast<double>(config.n_samples);
  rows.proposal.ess_normalized = 1.0;
  rows.proposal.energy_w1 = energy_w1(proposal_energies, test_energies);
  rows.proposal.torus_w2 =
      torus_metric(config, proposal_raw, Vector(), test_raw, metric_seed);
  rows.proposal.n_samples = config.n_samples;
  rows.proposal.seed = config.seed;

  // One-shot importance sampling with the configured filters.
  const WeightedSamples unfiltered = proposal_weighted_samples(model, target, proposal);
  const ResolvedFilters filters = resolve_filters(config, unfiltered);
  WeightedSamples bg = unfiltered;
  SbgDiagnostics bg_filter_log;
  if (filters.gamma.has_value()) {
    FilterOutcome out = energy_filter(bg, *filters.gamma);
    bg_filter_log.filters.push_back(out.report);
    bg = std::move(out.samples);
  }
  if (filters.delta.has_value() && bg.size() > 0) {
    FilterOutcome out = likelihood_filter(bg, *filters.delta);
    bg_filter_log.filters.push_back(out.report);
    bg = std::move(out.samples);
  }
  if (filters.clip_fraction > 0.0 && bg.size() > 0) {
    FilterOutcome out = weight_clip(bg, filters.clip_fraction);
    bg_filter_log.filters.push_back(out.report);
    bg = std::move(out.samples);
  }
  if (bg.size() == 0) throw EstimationError("evaluate: filters removed every sample");
  const Matrix bg_raw = destandardize(bg.positions, model.standardization);
  const Vector bg_energies = raw_energies(target, bg_raw);
  rows.bg.ess = ess(bg.log_weight);
  rows.bg.ess_normalized = rows.bg.ess / static_cast<double>(bg.size());
  rows.bg.energy_w1 = energy_w1_weighted(bg_energies, bg.log_weight, test_energies, Vector());
  rows.bg.torus_w2 = torus_metric(config, bg_raw, bg.log_weight, test_raw, metric_seed);
  rows.bg.log_z_hat = log_z_hat(bg);
  rows.bg.log_z_jarzynski = log_mean_exp(bg.log_weight);
  rows.bg.n_samples = bg.size();
  rows.bg.seed = config.seed;

  // Annealed SMC on the same draw.
  const SbgResult sbg = sbg_run(model, target, schedule, config.n_samples, config.seed,
                                SbgFilters{filters.gamma, filters.clip_fraction});
  const Matrix sbg_raw = destandardize(sbg.ensemble.positions, model.standardization);
  const Vector sbg_energies = raw_energies(target, sbg_raw);
  bool resampled_any = false;
  for (const auto& step : sbg.diagnostics.steps) resampled_any |= step.resampled;
  rows.sbg.ess = ess(sbg.ensemble.log_weights);
  rows.sbg.ess_normalized =
      rows.sbg.ess / static_cast<double>(sbg.ensemble.positions.rows());
  rows.sbg.energy_w1 =
      energy_w1_weighted(sbg_energies, sbg.ensemble.log_weights, test_energies, Vector());
  rows.sbg.torus_w2 =
      torus_metric(config, sbg_raw, sbg.ensemble.log_weights, test_raw, metric_seed);
  if (!resampled_any) {
    // Weight-path estimates are only Z-estimates while no resampling reset them.
    rows.sbg.log_z_hat = sbg.ensemble.log_weights.mean();
    rows.sbg.log_z_jarzynski = jarzynski_log_z_ratio(sbg.ensemble);
  }
  rows.sbg.n_samples = sbg.ensemble.positions.rows();
  rows.sbg.seed = config.seed;

  write_metrics_report((dir / "report_proposal.json").string(), rows.proposal);
  write_metrics_report((dir / "report_bg.json").string(), rows.bg);
  write_metrics_report((dir / "report_sbg.json").string(), rows.sbg);
  SbgDiagnostics diagnostics = sbg.diagnostics;
  diagnostics.filters.insert(diagnostics.filters.end(), bg_filter_log.filters.begin(),
                             bg_filter_log.filters.end());
  write_diagnostics((dir / "diagnostics.json").string(), diagnostics);
  write_ensemble_csv((dir / "ensemble_sbg.csv").string(), sbg.ensemble);

  // Four-curve energy histograms.
  double lo, hi;
  if (config.metrics.energy_range.has_value()) {
    lo = config.metrics.energy_range->first;
    hi = config.metrics.energy_range->second;
  } else {
    lo = std::min({test_energies.minCoeff(), proposal_energies.minCoeff(),
                   sbg_energies.minCoeff()});
    hi = std::max({quantile_of(test_energies, 0.999), quantile_of(proposal_energies, 0.999),
                   quantile_of(sbg_energies, 0.999)});
    const double pad = 0.05 * (hi - lo) + 1e-9;
    lo -= pad;
    hi += pad;
  }
  write_histogram_csv((dir / "hist_energy_data.csv").string(),
                      energy_histogram(config, test_energies, Vector(), lo, hi));
  write_histogram_csv((dir / "hist_energy_proposal.csv").string(),
                      energy_histogram(config, proposal_energies, Vector(), lo, hi));
  write_histogram_csv((dir / "hist_energy_transported.csv").string(),
                      energy_histogram(config, sbg_energies, Vector(), lo, hi));
  write_histogram_csv(
      (dir / "hist_energy_reweighted.csv").string(),
      energy_histogram(config, sbg_energies, sbg.ensemble.log_weights, lo, hi));

  // Centroid-norm ablation: proposal histogram plus reweighted histograms
  // under the standard and adjusted proposal energies, each with and without
  // the 0.2% weight clip.
  if (config.ablate_centroid_norm) {
    if (model.com_sigma <= 0.0)
      throw InputError("evaluate: centroid ablation needs com_sigma > 0");
    const int sd = model.standardization.spatial_dim;
    const Index n = proposal.positions.rows();
    Vector cnorm(n), logw_std(n), logw_adj(n);
    for (Index i = 0; i < n; ++i) {
      const Vector c = centroid_of(proposal.positions.row(i).transpose(), sd);
      cnorm(i) = c.norm();
      logw_std(i) = unfiltered.log_target(i) - proposal.logprobs(i);
      logw_adj(i) = unfiltered.log_weight(i);
    }
    const double c_hi = cnorm.maxCoeff() * 1.02 + 1e-9;
    const auto cnorm_hist = [&](const Vector& logw) {
      return histogram_weighted(cnorm, logw, config.metrics.bins, 0.0, c_hi);
    };
    const auto clipped = [&](const Vector& logw) {
      WeightedSamples ws;
      ws.positions = cnorm;  // ride the norms through the clip as positions
      ws.log_target = logw;
      ws.log_proposal = Vector::Zero(n);
      ws.log_weight = logw;
      const FilterOutcome out = weight_clip(ws, 0.002);
      return histogram_weighted(out.samples.positions.col(0), out.samples.log_weight,
                                config.metrics.bins, 0.0, c_hi);
    };
    write_histogram_csv((dir / "hist_cnorm_proposal.csv").string(), cnorm_hist(Vector()));
    write_histogram_csv((dir / "hist_cnorm_standard.csv").string(), cnorm_hist(logw_std));
    write_histogram_csv((dir / "hist_cnorm_adjusted.csv").string(), cnorm_hist(logw_adj));
    write_histogram_csv((dir / "hist_cnorm_standard_clip.csv").string(), clipped(logw_std));
    write_histogram_csv((dir / "hist_cnorm_adjusted_clip.csv").string(), clipped(logw_adj));
  }

  print_report_line("proposal", rows.proposal);
  print_report_line("bg      ", rows.bg);
  print_report_line("sbg     ", rows.sbg);
}

void cmd_report(const RunConfig& config) {
  const fs::path dir = out_dir(config);
  for (const char* name : {"report_proposal.json", "report_bg.json", "report_sbg.json"}) {
    const fs::path path = dir / name;
    if (!fs::exists(path)) continue;
    print_report_line(name, read_metrics_report(path.string()));
  }
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return exit_ok;
  } catch (const InputError& err) {
    std::cerr << "input error: " << err.what() << "\n";
    return exit_input;
  } catch (const UnsupportedError& err) {
    std::cerr << "unsupported: " << err.what() << "\n";
    return exit_input;
  } catch (const StateError& err) {
    std::cerr << "state error: " << err.what() << "\n";
    return exit_input;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return exit_numerical;
  } catch (const EstimationError& err) {
    std::cerr << "estimation error: " << err.what() << "\n";
    return exit_estimation;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_failure;
  }
}

}  // namespace sbg::cli
