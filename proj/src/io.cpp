#include "sbg/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sbg {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw InputError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw InputError("cannot open for reading: " + path);
  return in;
}

template <typename T>
void put(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InputError("checkpoint: truncated file");
  return value;
}

void put_vector(std::ofstream& out, const Vector& v) {
  put<int64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size());
}

Vector get_vector(std::ifstream& in) {
  const int64_t n = get<int64_t>(in);
  if (n < 0) throw InputError("checkpoint: negative vector length");
  Vector v(n);
  in.read(reinterpret_cast<char*>(v.data()), sizeof(double) * n);
  if (!in) throw InputError("checkpoint: truncated vector");
  return v;
}

std::vector<double> parse_csv_row(const std::string& line) {
  std::vector<double> row;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t pos = 0;
    const double v = std::stod(item, &pos);
    row.push_back(v);
  }
  return row;
}

json optional_json(const std::optional<double>& value) {
  return value.has_value() ? json(*value) : json(nullptr);
}

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

constexpr char kCheckpointMagic[8] = {'S', 'B', 'G', 'F', 'L', 'O', 'W', '1'};

}  // namespace

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_dataset(const std::string& path, const Matrix& samples, DatasetFormat format) {
  if (format == DatasetFormat::csv) {
    std::ofstream out = open_out(path, false);
    out << "# dim=" << samples.cols() << "\n";
    for (Index i = 0; i < samples.rows(); ++i) {
      for (Index j = 0; j < samples.cols(); ++j) {
        if (j > 0) out << ',';
        out << format_double(samples(i, j));
      }
      out << '\n';
    }
    return;
  }
  std::ofstream out = open_out(path, true);
  put<uint64_t>(out, static_cast<uint64_t>(samples.rows()));
  put<uint64_t>(out, static_cast<uint64_t>(samples.cols()));
  for (Index i = 0; i < samples.rows(); ++i)
    for (Index j = 0; j < samples.cols(); ++j) put<double>(out, samples(i, j));
}

Matrix read_dataset(const std::string& path) {
  // Sniff the header: CSV datasets start with '#'.
  {
    std::ifstream probe = open_in(path, true);
    char first = 0;
    probe.read(&first, 1);
    if (probe && first != '#') {
      std::ifstream in = open_in(path, true);
      const auto rows = get<uint64_t>(in);
      const auto cols = get<uint64_t>(in);
      if (cols == 0 || cols > (1u << 20)) throw InputError("dataset: implausible binary header");
      Matrix samples(static_cast<Index>(rows), static_cast<Index>(cols));
      for (Index i = 0; i < samples.rows(); ++i)
        for (Index j = 0; j < samples.cols(); ++j) samples(i, j) = get<double>(in);
      return samples;
    }
  }
  std::ifstream in = open_in(path, false);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# dim=", 0) != 0)
    throw InputError("dataset: missing '# dim=' header in " + path);
  const Index dim = static_cast<Index>(std::stoll(line.substr(6)));
  if (dim <= 0) throw InputError("dataset: bad dimension header");
  std::vector<double> buffer;
  Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<double> row = parse_csv_row(line);
    if (static_cast<Index>(row.size()) != dim)
      throw InputError("dataset: row with wrong column count in " + path);
    buffer.insert(buffer.end(), row.begin(), row.end());
    ++rows;
  }
  Matrix samples(rows, dim);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < dim; ++j) samples(i, j) = buffer[static_cast<size_t>(i * dim + j)];
  return samples;
}

void write_ensemble_csv(const std::string& path, const ParticleEnsemble& ensemble) {
  std::ofstream out = open_out(path, false);
  out << "# dim=" << ensemble.positions.cols() << " tau=" << format_double(ensemble.tau) << "\n";
  for (Index i = 0; i < ensemble.positions.rows(); ++i) {
    for (Index j = 0; j < ensemble.positions.cols(); ++j)
      out << format_double(ensemble.positions(i, j)) << ',';
    out << format_double(ensemble.log_weights(i)) << ',' << (ensemble.quarantined(i) ? 1 : 0)
        << '\n';
  }
}

ParticleEnsemble read_ensemble_csv(const std::string& path) {
  std::ifstream in = open_in(path, false);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# dim=", 0) != 0)
    throw InputError("ensemble: missing header in " + path);
  std::stringstream header(line.substr(2));
  std::string token;
  Index dim = -1;
  double tau = 0.0;
  while (header >> token) {
    if (token.rfind("dim=", 0) == 0) dim = static_cast<Index>(std::stoll(token.substr(4)));
    if (token.rfind("tau=", 0) == 0) tau = std::stod(token.substr(4));
  }
  if (dim <= 0) throw InputError("ensemble: bad dimension header");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row = parse_csv_row(line);
    if (static_cast<Index>(row.size()) != dim + 2)
      throw InputError("ensemble: row with wrong column count");
    rows.push_back(std::move(row));
  }
  ParticleEnsemble ensemble;
  const Index n = static_cast<Index>(rows.size());
  ensemble.positions.resize(n, dim);
  ensemble.log_weights.resize(n);
  ensemble.quarantined = BoolArray::Constant(n, false);
  ensemble.tau = tau;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < dim; ++j) ensemble.positions(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    ensemble.log_weights(i) = rows[static_cast<size_t>(i)][static_cast<size_t>(dim)];
    ensemble.quarantined(i) = rows[static_cast<size_t>(i)][static_cast<size_t>(dim + 1)] != 0.0;
  }
  return ensemble;
}

void write_histogram_csv(const std::string& path, const HistogramTable& table) {
  std::ofstream out = open_out(path, false);
  out << "# lo=" << format_double(table.lo) << " hi=" << format_double(table.hi)
      << " underflow=" << format_double(table.underflow)
      << " overflow=" << format_double(table.overflow) << "\n";
  out << "bin_center,density\n";
  for (Index k = 0; k < table.centers.size(); ++k)
    out << format_double(table.centers(k)) << ',' << format_double(table.densities(k)) << '\n';
}

std::string metrics_report_json(const MetricsReport& report) {
  json j;
  j["ess"] = report.ess;
  j["ess_normalized"] = report.ess_normalized;
  j["energy_w1"] = optional_json(report.energy_w1);
  j["torus_w2"] = optional_json(report.torus_w2);
  j["log_z_hat"] = optional_json(report.log_z_hat);
  j["log_z_jarzynski"] = optional_json(report.log_z_jarzynski);
  j["n_samples"] = report.n_samples;
  j["seed"] = report.seed;
  return j.dump(2);
}

void write_metrics_report(const std::string& path, const MetricsReport& report) {
  open_out(path, false) << metrics_report_json(report) << "\n";
}

MetricsReport read_metrics_report(const std::string& path) {
  std::ifstream in = open_in(path, false);
  json j = json::parse(in);
  MetricsReport report;
  report.ess = j.at("ess").get<double>();
  report.ess_normalized = j.at("ess_normalized").get<double>();
  report.energy_w1 = optional_from(j, "energy_w1");
  report.torus_w2 = optional_from(j, "torus_w2");
  report.log_z_hat = optional_from(j, "log_z_hat");
  report.log_z_jarzynski = optional_from(j, "log_z_jarzynski");
  report.n_samples = j.at("n_samples").get<Index>();
  report.seed = j.at("seed").get<uint64_t>();
  return report;
}

std::string diagnostics_json(const SbgDiagnostics& diagnostics) {
  json steps = json::array();
  for (const auto& s : diagnostics.steps)
    steps.push_back(
        {{"tau", s.tau}, {"ess", s.ess}, {"resampled", s.resampled}, {"quarantined", s.quarantined}});
  json filters = json::array();
  for (const auto& f : diagnostics.filters)
    filters.push_back({{"filter", f.filter},
                       {"parameter", f.parameter},
                       {"removed", f.removed},
                       {"remaining", f.remaining}});
  json j;
  j["n_start"] = diagnostics.n_start;
  j["n_particles"] = diagnostics.n_particles;
  j["steps"] = steps;
  j["filters"] = filters;
  return j.dump(2);
}

void write_diagnostics(const std::string& path, const SbgDiagnostics& diagnostics) {
  open_out(path, false) << diagnostics_json(diagnostics) << "\n";
}

void save_checkpoint(const std::string& path, const FlowModel& model, const TrainerState* state) {
  std::ofstream out = open_out(path, true);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<uint32_t>(out, 1);  // version
  put<int64_t>(out, model.dim);
  put<uint8_t>(out, model.standardization.center_com ? 1 : 0);
  put<int32_t>(out, model.standardization.spatial_dim);
  put<double>(out, model.standardization.scale);
  put<double>(out, model.com_sigma);
  put<uint32_t>(out, static_cast<uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    put<double>(out, layer.scale_clamp);
    for (Index i = 0; i < layer.mask.size(); ++i)
      put<uint8_t>(out, static_cast<uint8_t>(layer.mask(i)));
    const auto put_widths = [&](const Mlp& net) {
      put<uint8_t>(out, net.activation == Activation::tanh ? 0 : 1);
      put<uint32_t>(out, static_cast<uint32_t>(net.widths.size()));
      for (const Index w : net.widths) put<int64_t>(out, w);
    };
    put_widths(layer.scale_net);
    put_widths(layer.shift_net);
  }
  put_vector(out, flow_parameters(model));
  put<uint8_t>(out, model.ema_params.has_value() ? 1 : 0);
  if (model.ema_params) put_vector(out, *model.ema_params);
  put<uint8_t>(out, state != nullptr ? 1 : 0);
  if (state) {
    put<int64_t>(out, state->step);
    put_vector(out, state->m);
    put_vector(out, state->v);
  }
}

FlowModel load_checkpoint(const std::string& path, TrainerState* state) {
  std::ifstream in = open_in(path, true);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw InputError("checkpoint: bad magic in " + path);
  if (get<uint32_t>(in) != 1) throw InputError("checkpoint: unsupported version");
  FlowModel model;
  model.dim = get<int64_t>(in);
  model.standardization.center_com = get<uint8_t>(in) != 0;
  model.standardization.spatial_dim = get<int32_t>(in);
  model.standardization.scale = get<double>(in);
  model.com_sigma = get<double>(in);
  const uint32_t n_layers = get<uint32_t>(in);
  for (uint32_t l = 0; l < n_layers; ++l) {
    CouplingLayer layer;
    layer.scale_clamp = get<double>(in);
    layer.mask.resize(model.dim);
    for (Index i = 0; i < model.dim; ++i) layer.mask(i) = get<uint8_t>(in);
    const auto get_net = [&]() {
      const Activation act = get<uint8_t>(in) == 0 ? Activation::tanh : Activation::gelu;
      const uint32_t n_widths = get<uint32_t>(in);
      std::vector<Index> widths(n_widths);
      for (auto& w : widths) w = get<int64_t>(in);
      return make_mlp(widths, act);
    };
    layer.scale_net = get_net();
    layer.shift_net = get_net();
    finalize_layer(layer);
    model.layers.push_back(std::move(layer));
  }
  const Vector params = get_vector(in);
  set_flow_parameters(model, params);
  if (get<uint8_t>(in) != 0) model.ema_params = get_vector(in);
  const bool has_state = get<uint8_t>(in) != 0;
  if (has_state) {
    TrainerState loaded;
    loaded.step = get<int64_t>(in);
    loaded.m = get_vector(in);
    loaded.v = get_vector(in);
    if (state) *state = std::move(loaded);
  } else if (state) {
    *state = TrainerState{};
  }
  validate_flow(model);
  return model;
}

}  // namespace sbg
