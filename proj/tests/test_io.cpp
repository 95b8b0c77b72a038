#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "sbg/io.hpp"
#include "sbg/targets.hpp"
#include "testutil.hpp"

using namespace sbg;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("sbg_io_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("dataset round trips in both formats") {
  TempDir dir;
  Prng rng(1);
  Matrix data(17, 3);
  for (Index i = 0; i < data.size(); ++i) data(i / 3, i % 3) = rng.normal();

  SUBCASE("csv") {
    write_dataset(dir.file("a.csv"), data, DatasetFormat::csv);
    const Matrix back = read_dataset(dir.file("a.csv"));
    CHECK((back - data).cwiseAbs().maxCoeff() == 0.0);
    // Rewrites are byte-identical.
    write_dataset(dir.file("b.csv"), back, DatasetFormat::csv);
    CHECK(slurp(dir.file("a.csv")) == slurp(dir.file("b.csv")));
  }
  SUBCASE("binary") {
    write_dataset(dir.file("a.bin"), data, DatasetFormat::binary);
    const Matrix back = read_dataset(dir.file("a.bin"));
    CHECK((back - data).cwiseAbs().maxCoeff() == 0.0);
    CHECK(slurp(dir.file("a.bin")).size() == 16 + sizeof(double) * 17 * 3);
  }
  SUBCASE("bad headers are rejected") {
    std::ofstream(dir.file("bad.csv")) << "1.0,2.0\n";
    CHECK_THROWS_AS(read_dataset(dir.file("bad.csv")), InputError);
  }
}

TEST_CASE("ensemble csv carries weights, tau and quarantine flags") {
  TempDir dir;
  ParticleEnsemble ensemble = make_ensemble(Matrix::Random(9, 2));
  ensemble.tau = 0.75;
  ensemble.log_weights(3) = -2.5;
  ensemble.quarantined(5) = true;
  ensemble.log_weights(5) = kNegInf;
  write_ensemble_csv(dir.file("e.csv"), ensemble);
  const ParticleEnsemble back = read_ensemble_csv(dir.file("e.csv"));
  CHECK(back.tau == 0.75);
  CHECK((back.positions - ensemble.positions).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.log_weights(3) == -2.5);
  CHECK(back.log_weights(5) == kNegInf);
  CHECK(back.quarantined(5));
  CHECK(!back.quarantined(0));
}

TEST_CASE("metrics report json round trip with optional fields") {
  TempDir dir;
  MetricsReport report;
  report.ess = 123.4;
  report.ess_normalized = 0.1234;
  report.energy_w1 = 0.71;
  report.torus_w2 = std::nullopt;
  report.log_z_hat = -3.25;
  report.log_z_jarzynski = std::nullopt;
  report.n_samples = 1000;
  report.seed = 99;
  write_metrics_report(dir.file("r.json"), report);
  const MetricsReport back = read_metrics_report(dir.file("r.json"));
  CHECK(back.ess == report.ess);
  CHECK(back.energy_w1.has_value());
  CHECK(*back.energy_w1 == 0.71);
  CHECK(!back.torus_w2.has_value());
  CHECK(!back.log_z_jarzynski.has_value());
  CHECK(back.n_samples == 1000);
  CHECK(back.seed == 99);
}

TEST_CASE("diagnostics json shape") {
  SbgDiagnostics diagnostics;
  diagnostics.n_start = 100;
  diagnostics.n_particles = 98;
  diagnostics.steps.push_back({0.25, 51.0, true, 2});
  diagnostics.filters.push_back({"energy", 4.0, 2, 98});
  const std::string body = diagnostics_json(diagnostics);
  CHECK(body.find("\"tau\": 0.25") != std::string::npos);
  CHECK(body.find("\"resampled\": true") != std::string::npos);
  CHECK(body.find("\"filter\": \"energy\"") != std::string::npos);
}

TEST_CASE("histogram csv has the documented shape") {
  TempDir dir;
  HistogramTable table;
  table.lo = 0.0;
  table.hi = 1.0;
  table.centers = Vector::Constant(1, 0.5);
  table.densities = Vector::Constant(1, 1.0);
  table.overflow = 0.25;
  write_histogram_csv(dir.file("h.csv"), table);
  const std::string body = slurp(dir.file("h.csv"));
  CHECK(body.find("overflow=0.25") != std::string::npos);
  CHECK(body.find("bin_center,density") != std::string::npos);
}

TEST_CASE("checkpoints reload bit-exactly") {
  TempDir dir;
  Prng rng(3);
  FlowConfig config;
  config.n_layers = 3;
  config.hidden = {10};
  FlowModel model = build_flow(4, config, rng);
  Vector params(flow_parameter_count(model));
  for (Index i = 0; i < params.size(); ++i) params(i) = 0.4 * rng.normal();
  set_flow_parameters(model, params);
  model.standardization = {true, 2, 1.75};
  model.com_sigma = 0.1;
  model.ema_params = params * 0.5;

  TrainerState state;
  state.step = 1234;
  state.m = params * 0.1;
  state.v = params.cwiseAbs();

  save_checkpoint(dir.file("m.ckpt"), model, &state);
  TrainerState back_state;
  const FlowModel back = load_checkpoint(dir.file("m.ckpt"), &back_state);

  CHECK(back.dim == 4);
  CHECK(back.standardization.center_com);
  CHECK(back.standardization.spatial_dim == 2);
  CHECK(back.standardization.scale == 1.75);
  CHECK(back.com_sigma == 0.1);
  CHECK((flow_parameters(back) - params).cwiseAbs().maxCoeff() == 0.0);
  CHECK((*back.ema_params - *model.ema_params).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back_state.step == 1234);
  CHECK((back_state.m - state.m).cwiseAbs().maxCoeff() == 0.0);

  // Same log-density to the last bit on replay.
  Prng probe(4);
  for (int t = 0; t < 20; ++t) {
    Vector x(4);
    for (Index i = 0; i < 4; ++i) x(i) = probe.normal();
    CHECK(log_prob(back, x) == log_prob(model, x));
  }

  SUBCASE("corrupted magic is rejected") {
    std::ofstream(dir.file("junk.ckpt"), std::ios::binary) << "NOTACKPT";
    CHECK_THROWS_AS(load_checkpoint(dir.file("junk.ckpt")), InputError);
  }
}
