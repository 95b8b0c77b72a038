#include "sbg/cli/run_config.hpp"

#include <fstream>

#include "json.hpp"

namespace sbg::cli {

namespace {

using nlohmann::json;

Vector to_vector(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  Index i = 0;
  for (const auto& item : j) v(i++) = item.get<double>();
  return v;
}

json from_vector(const Vector& v) {
  json j = json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

EnergyTarget parse_target(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const double temperature = j.value("temperature_scale", 1.0);
  if (kind == "gaussian") {
    const Index dim = j.at("dim").get<Index>();
    Vector mean = j.contains("mean") ? to_vector(j.at("mean")) : Vector();
    return gaussian_target(dim, std::move(mean), j.value("sigma", 1.0), temperature);
  }
  if (kind == "gaussian_mixture") {
    const Index dim = j.at("dim").get<Index>();
    GaussianMixtureParams params;
    for (const auto& comp : j.at("components")) {
      params.weights.push_back(comp.at("weight").get<double>());
      params.means.push_back(to_vector(comp.at("mean")));
      params.sigmas.push_back(comp.at("sigma").get<double>());
    }
    return gaussian_mixture_target(dim, std::move(params), temperature);
  }
  if (kind == "double_well") {
    const Index dim = j.at("dim").get<Index>();
    return double_well_target(dim, {j.value("barrier", 1.0), j.value("tilt", 0.0)}, temperature);
  }
  if (kind == "muller_brown") {
    return muller_brown_target({}, temperature);
  }
  if (kind == "many_body_pairwise") {
    ManyBodyPairwiseParams params;
    params.n_particles = j.value("n_particles", Index{4});
    params.spatial_dim = j.value("spatial_dim", 3);
    params.a = j.value("a", 0.0);
    params.b = j.value("b", -4.0);
    params.c = j.value("c", 0.9);
    params.d0 = j.value("d0", 4.0);
    return many_body_pairwise_target(params, temperature);
  }
  throw InputError("config: unknown target kind '" + kind + "'");
}

json target_json(const EnergyTarget& target) {
  json j;
  j["dim"] = target.dim;
  j["temperature_scale"] = target.temperature_scale;
  switch (target.kind) {
    case TargetKind::gaussian: {
      const auto& p = std::get<GaussianParams>(target.params);
      j["kind"] = "gaussian";
      j["mean"] = from_vector(p.mean);
      j["sigma"] = p.sigma;
      break;
    }
    case TargetKind::gaussian_mixture: {
      const auto& p = std::get<GaussianMixtureParams>(target.params);
      j["kind"] = "gaussian_mixture";
      json comps = json::array();
      for (size_t k = 0; k < p.weights.size(); ++k)
        comps.push_back({{"weight", p.weights[k]},
                         {"mean", from_vector(p.means[k])},
                         {"sigma", p.sigmas[k]}});
      j["components"] = comps;
      break;
    }
    case TargetKind::double_well: {
      const auto& p = std::get<DoubleWellParams>(target.params);
      j["kind"] = "double_well";
      j["barrier"] = p.barrier;
      j["tilt"] = p.tilt;
      break;
    }
    case TargetKind::muller_brown:
      j["kind"] = "muller_brown";
      break;
    case TargetKind::many_body_pairwise: {
      const auto& p = std::get<ManyBodyPairwiseParams>(target.params);
      j["kind"] = "many_body_pairwise";
      j["n_particles"] = p.n_particles;
      j["spatial_dim"] = p.spatial_dim;
      j["a"] = p.a;
      j["b"] = p.b;
      j["c"] = p.c;
      j["d0"] = p.d0;
      break;
    }
  }
  return j;
}

FilterSetting parse_filter_setting(const json& j, const char* key) {
  FilterSetting setting;
  if (!j.contains(key) || j.at(key).is_null()) return setting;
  if (j.at(key).is_string()) {
    if (j.at(key).get<std::string>() != "auto")
      throw InputError(std::string("config: filter '") + key + "' must be a number or \"auto\"");
    setting.mode = FilterSetting::Mode::automatic;
    return setting;
  }
  setting.mode = FilterSetting::Mode::fixed;
  setting.value = j.at(key).get<double>();
  return setting;
}

json filter_setting_json(const FilterSetting& setting) {
  switch (setting.mode) {
    case FilterSetting::Mode::off:
      return json(nullptr);
    case FilterSetting::Mode::automatic:
      return json("auto");
    case FilterSetting::Mode::fixed:
      return json(setting.value);
  }
  return json(nullptr);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json j = json::parse(json_text);
  RunConfig config;
  config.seed = j.value("seed", uint64_t{0});
  config.workers = j.value("workers", 1);
  config.reproducible = j.value("reproducible", true);
  config.output_dir = j.value("output_dir", std::string("out"));
  if (j.contains("target")) config.target = parse_target(j.at("target"));

  if (j.contains("data")) {
    const json& d = j.at("data");
    config.data.chain.kind =
        d.value("chain_kind", std::string("ula")) == "mala" ? ChainKind::mala : ChainKind::ula;
    config.data.chain.steps = d.value("chain_steps", Index{100000});
    config.data.chain.step_size = d.value("step_size", 1e-2);
    config.data.chain.burn_in = d.value("burn_in", Index{1000});
    if (d.contains("x0")) config.data.x0 = d.at("x0").get<std::vector<double>>();
    config.data.train_n = d.value("train_n", Index{10000});
    config.data.val_n = d.value("val_n", Index{2000});
    config.data.test_n = d.value("test_n", Index{10000});
    config.data.format = d.value("format", std::string("csv")) == "binary"
                             ? DatasetFormat::binary
                             : DatasetFormat::csv;
  }

  if (j.contains("flow")) {
    const json& f = j.at("flow");
    config.flow.config.n_layers = f.value("n_layers", Index{6});
    if (f.contains("hidden")) {
      config.flow.config.hidden.clear();
      for (const auto& h : f.at("hidden")) config.flow.config.hidden.push_back(h.get<Index>());
    }
    config.flow.config.activation =
        f.value("activation", std::string("tanh")) == "gelu" ? Activation::gelu
                                                             : Activation::tanh;
    config.flow.config.scale_clamp = f.value("scale_clamp", 5.0);
    config.flow.com_sigma = f.value("com_sigma", 0.0);
    config.flow.center_com = f.value("center_com", false);
    config.flow.spatial_dim = f.value("spatial_dim", 1);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    TrainConfig& tc = config.train.config;
    tc.learning_rate = t.value("learning_rate", 1e-4);
    tc.weight_decay = t.value("weight_decay", 4e-4);
    tc.adam_beta1 = t.value("adam_beta1", 0.90);
    tc.adam_beta2 = t.value("adam_beta2", 0.95);
    tc.adam_eps = t.value("adam_eps", 1e-8);
    tc.epochs = t.value("epochs", Index{500});
    tc.batch_size = t.value("batch_size", Index{256});
    tc.warmup_fraction = t.value("warmup_fraction", 0.05);
    tc.lr_floor_ratio = t.value("lr_floor_ratio", 1.0 / 500.0);
    tc.ema_decay = t.value("ema_decay", 0.999);
    tc.augment_rotations = t.value("augment_rotations", false);
    config.train.val_crop_quantile = t.value("val_crop_quantile", 0.999);
    config.train.val_samples = t.value("val_samples", Index{2000});
  }

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    config.schedule.n_steps = s.value("n_steps", Index{100});
    config.schedule.epsilon = s.value("epsilon", 1e-5);
    config.schedule.ess_threshold = s.value("ess_threshold", 0.5);
    config.schedule.resample = s.value("resample", std::string("multinomial")) == "stratified"
                                   ? ResampleKind::stratified
                                   : ResampleKind::multinomial;
    config.schedule.drift_max_norm = s.value("drift_max_norm", 1e3);
    config.schedule.trajectory_dump = s.value("trajectory_dump", false);
  }

  if (j.contains("filters")) {
    const json& f = j.at("filters");
    config.filters.energy_gamma = parse_filter_setting(f, "energy_gamma");
    config.filters.likelihood_delta = parse_filter_setting(f, "likelihood_delta");
    config.filters.clip_fraction = f.value("clip_fraction", 0.0);
    config.filters.bias_b = f.value("b", 0.1);
    config.filters.lambda = f.value("lambda", 1.0);
    if (f.contains("rho") && !f.at("rho").is_null())
      config.filters.rho = f.at("rho").get<double>();
  }

  config.n_samples = j.value("n_samples", Index{10000});

  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    config.metrics.bins = m.value("bins", Index{60});
    if (m.contains("energy_range") && !m.at("energy_range").is_null())
      config.metrics.energy_range = std::make_pair(m.at("energy_range").at(0).get<double>(),
                                                   m.at("energy_range").at(1).get<double>());
    const std::string rule = m.value("angles", std::string("none"));
    if (rule == "none")
      config.metrics.angles = MetricsBlock::AngleRule::none;
    else if (rule == "atan2")
      config.metrics.angles = MetricsBlock::AngleRule::atan2_point;
    else if (rule == "chain")
      config.metrics.angles = MetricsBlock::AngleRule::chain;
    else
      throw InputError("config: metrics.angles must be none, atan2 or chain");
    config.metrics.torus_subsample = m.value("torus_subsample", Index{1000});
  }

  config.ablate_centroid_norm = j.value("ablate_centroid_norm", false);
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config: " + path);
  return parse_run_config(
      std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

std::string run_config_json(const RunConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["workers"] = config.workers;
  j["reproducible"] = config.reproducible;
  j["output_dir"] = config.output_dir;
  j["target"] = target_json(config.target);
  j["data"] = {{"chain_kind", config.data.chain.kind == ChainKind::mala ? "mala" : "ula"},
               {"chain_steps", config.data.chain.steps},
               {"step_size", config.data.chain.step_size},
               {"burn_in", config.data.chain.burn_in},
               {"x0", config.data.x0},
               {"train_n", config.data.train_n},
               {"val_n", config.data.val_n},
               {"test_n", config.data.test_n},
               {"format", config.data.format == DatasetFormat::binary ? "binary" : "csv"}};
  j["flow"] = {{"n_layers", config.flow.config.n_layers},
               {"hidden", config.flow.config.hidden},
               {"activation", config.flow.config.activation == Activation::gelu ? "gelu" : "tanh"},
               {"scale_clamp", config.flow.config.scale_clamp},
               {"com_sigma", config.flow.com_sigma},
               {"center_com", config.flow.center_com},
               {"spatial_dim", config.flow.spatial_dim}};
  const TrainConfig& tc = config.train.config;
  j["train"] = {{"learning_rate", tc.learning_rate},
                {"weight_decay", tc.weight_decay},
                {"adam_beta1", tc.adam_beta1},
                {"adam_beta2", tc.adam_beta2},
                {"adam_eps", tc.adam_eps},
                {"epochs", tc.epochs},
                {"batch_size", tc.batch_size},
                {"warmup_fraction", tc.warmup_fraction},
                {"lr_floor_ratio", tc.lr_floor_ratio},
                {"ema_decay", tc.ema_decay},
                {"augment_rotations", tc.augment_rotations},
                {"val_crop_quantile", config.train.val_crop_quantile},
                {"val_samples", config.train.val_samples}};
  j["schedule"] = {
      {"n_steps", config.schedule.n_steps},
      {"epsilon", config.schedule.epsilon},
      {"ess_threshold", config.schedule.ess_threshold},
      {"resample", config.schedule.resample == ResampleKind::stratified ? "stratified"
                                                                        : "multinomial"},
      {"drift_max_norm", config.schedule.drift_max_norm},
      {"trajectory_dump", config.schedule.trajectory_dump}};
  json filters;
  filters["energy_gamma"] = filter_setting_json(config.filters.energy_gamma);
  filters["likelihood_delta"] = filter_setting_json(config.filters.likelihood_delta);
  filters["clip_fraction"] = config.filters.clip_fraction;
  filters["b"] = config.filters.bias_b;
  filters["lambda"] = config.filters.lambda;
  filters["rho"] = config.filters.rho.has_value() ? json(*config.filters.rho) : json(nullptr);
  j["filters"] = filters;
  j["n_samples"] = config.n_samples;
  json metrics;
  metrics["bins"] = config.metrics.bins;
  metrics["energy_range"] =
      config.metrics.energy_range.has_value()
          ? json::array({config.metrics.energy_range->first, config.metrics.energy_range->second})
          : json(nullptr);
  metrics["angles"] = config.metrics.angles == MetricsBlock::AngleRule::none ? "none"
                      : config.metrics.angles == MetricsBlock::AngleRule::atan2_point
                          ? "atan2"
                          : "chain";
  metrics["torus_subsample"] = config.metrics.torus_subsample;
  j["metrics"] = metrics;
  j["ablate_centroid_norm"] = config.ablate_centroid_norm;
  return j.dump(2);
}

void write_run_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write config snapshot: " + path);
  out << run_config_json(config) << "\n";
}

AnnealSchedule make_schedule(const RunConfig& config) {
  AnnealSchedule schedule = AnnealSchedule::constant(
      config.schedule.n_steps, config.schedule.epsilon, config.schedule.ess_threshold,
      config.schedule.resample);
  schedule.drift_max_norm = config.schedule.drift_max_norm;
  schedule.workers = config.workers;
  return schedule;
}

}  // namespace sbg::cli
