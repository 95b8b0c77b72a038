#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sbg/transport.hpp"
#include "testutil.hpp"

using namespace sbg;

namespace {

ParticleEnsemble gaussian_ensemble(const EnergyTarget& target, uint64_t seed, Index n) {
  return make_ensemble(sample_exact(target, seed, n));
}

AnnealSchedule oracle_schedule(Index steps, double eps) {
  AnnealSchedule schedule = AnnealSchedule::constant(steps, eps);
  schedule.drift_max_norm = 0.0;  // oracle runs never clip
  return schedule;
}

}  // namespace

TEST_CASE("interp_energy endpoints and linearity") {
  const EnergyTarget from = gaussian_target(2, Vector(), 1.0, 1.0);
  const EnergyTarget to = gaussian_target(2, Vector(), 2.0, 1.0);
  const AnnealEndpoints endpoints = target_to_target(from, to);
  Prng rng(1);
  Vector x(2);
  x << 0.7, -0.4;
  const InterpValue at0 = interp_energy(endpoints, x, 0.0);
  CHECK(at0.value == doctest::Approx(0.5 * x.squaredNorm()).epsilon(1e-14));
  const InterpValue at1 = interp_energy(endpoints, x, 1.0);
  CHECK(at1.value == doctest::Approx(0.5 * x.squaredNorm() / 4.0).epsilon(1e-14));
  const InterpValue mid = interp_energy(endpoints, x, 0.37);
  CHECK(mid.dtau_value == doctest::Approx(at1.value - at0.value).epsilon(1e-12));
  // Interpolant is linear in tau, so the finite difference is exact.
  const InterpValue lo = interp_energy(endpoints, x, 0.37 - 1e-4);
  const InterpValue hi = interp_energy(endpoints, x, 0.37 + 1e-4);
  CHECK(std::abs((hi.value - lo.value) / 2e-4 - mid.dtau_value) < 1e-8);
}

TEST_CASE("annealing a target to itself keeps all log-weights at zero") {
  const EnergyTarget target = gaussian_target(1, Vector(), 1.0, 1.0);
  const AnnealEndpoints endpoints = target_to_target(target, target);
  ParticleEnsemble ensemble = gaussian_ensemble(target, 2, 500);
  ensemble = anneal(std::move(ensemble), endpoints, oracle_schedule(50, 0.3), 7);
  CHECK(ensemble.tau == 1.0);
  CHECK(ensemble.log_weights.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("frozen-particle limit reduces annealed weights to one-shot importance weights") {
  const EnergyTarget from = gaussian_target(1, Vector(), 1.0, 1.0);
  const EnergyTarget to = gaussian_target(1, Vector(), 2.0, 1.0);
  const AnnealEndpoints endpoints = target_to_target(from, to);
  ParticleEnsemble ensemble = gaussian_ensemble(from, 3, 400);
  const Matrix start = ensemble.positions;
  ensemble = anneal(std::move(ensemble), endpoints, oracle_schedule(100, 0.0), 8);
  CHECK((ensemble.positions - start).cwiseAbs().maxCoeff() == 0.0);
  for (Index i = 0; i < start.rows(); ++i) {
    const Vector x = start.row(i).transpose();
    const double is_weight = -(target_energy(to, x) - target_energy(from, x));
    CHECK(ensemble.log_weights(i) == doctest::Approx(is_weight).epsilon(1e-12));
  }
}

TEST_CASE("gaussian-to-gaussian anneal recovers the analytic partition ratio") {
  // Variance 1 -> 4, so Z1/Z0 = 2.
  const EnergyTarget from = gaussian_target(1, Vector(), 1.0, 1.0);
  const EnergyTarget to = gaussian_target(1, Vector(), 2.0, 1.0);
  const AnnealEndpoints endpoints = target_to_target(from, to);
  ParticleEnsemble ensemble = gaussian_ensemble(from, 4, 10000);
  ensemble = anneal(std::move(ensemble), endpoints, oracle_schedule(500, 0.4), 9);
  const double ratio = std::exp(jarzynski_log_z_ratio(ensemble));
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("jarzynski hand cases") {
  ParticleEnsemble ensemble = make_ensemble(Matrix::Zero(2, 1));
  SUBCASE("all zeros") { CHECK(jarzynski_log_z_ratio(ensemble) == 0.0); }
  SUBCASE("constant weights") {
    ensemble.log_weights.setConstant(std::log(2.0));
    CHECK(jarzynski_log_z_ratio(ensemble) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("all minus infinity is an estimation error") {
    ensemble.log_weights.setConstant(kNegInf);
    CHECK_THROWS_AS(jarzynski_log_z_ratio(ensemble), EstimationError);
  }
}

TEST_CASE("quarantine freezes broken particles instead of aborting") {
  const EnergyTarget target = gaussian_target(1, Vector(), 1.0, 1.0);
  AnnealEndpoints endpoints = target_to_target(target, target);
  // Poison the final energy for particles in a thin band.
  endpoints.e1 = [](VectorRef x, Vector* grad) -> double {
    if (std::abs(x(0) - 0.5) < 0.05) {
      if (grad) *grad = Vector::Constant(1, std::numeric_limits<double>::quiet_NaN());
      return std::numeric_limits<double>::quiet_NaN();
    }
    if (grad) *grad = x;
    return 0.5 * x.squaredNorm();
  };
  ParticleEnsemble ensemble = gaussian_ensemble(target, 5, 2000);
  ensemble = anneal(std::move(ensemble), endpoints, oracle_schedule(20, 0.1), 11);
  const Index bad = static_cast<Index>(ensemble.quarantined.count());
  CHECK(bad > 0);
  CHECK(bad < ensemble.positions.rows());
  for (Index i = 0; i < ensemble.positions.rows(); ++i) {
    if (ensemble.quarantined(i)) CHECK(ensemble.log_weights(i) == kNegInf);
  }
  // The estimator still works on the survivors.
  CHECK(std::isfinite(jarzynski_log_z_ratio(ensemble)));
}

TEST_CASE("variance reduction over one-shot importance sampling on a double well") {
  const EnergyTarget proposal = gaussian_target(1, Vector(), 0.5, 1.0);
  const EnergyTarget target = double_well_target(1, {1.0, 0.0});
  const AnnealEndpoints endpoints = target_to_target(proposal, target);
  int wins = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ParticleEnsemble ais = gaussian_ensemble(proposal, 100 + seed, 2000);
    const Matrix start = ais.positions;
    ais = anneal(std::move(ais), endpoints, oracle_schedule(100, 0.25), 200 + seed);
    Vector is_logw(start.rows());
    for (Index i = 0; i < start.rows(); ++i) {
      const Vector x = start.row(i).transpose();
      is_logw(i) = -(target_energy(target, x) - target_energy(proposal, x));
    }
    if (testutil::sample_variance(ais.log_weights) <= testutil::sample_variance(is_logw)) ++wins;
  }
  CHECK(wins >= 18);
}

TEST_CASE("target-only path") {
  const EnergyTarget from = gaussian_target(1, Vector(), 1.0, 1.0);
  const EnergyTarget to = gaussian_target(1, Vector(), 2.0, 1.0);

  SUBCASE("identical endpoints keep weights near zero (nu vanishes)") {
    const AnnealEndpoints same = target_to_target(from, from);
    ParticleEnsemble plain = gaussian_ensemble(from, 6, 300);
    ParticleEnsemble corrected = plain;
    plain = anneal(std::move(plain), same, oracle_schedule(50, 0.2), 13);
    corrected = anneal_target_only(std::move(corrected), same, oracle_schedule(50, 0.2), 13);
    CHECK((corrected.positions - plain.positions).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((corrected.log_weights - plain.log_weights).cwiseAbs().maxCoeff() < 1e-3);
  }
  SUBCASE("frozen limit reduces to importance weights") {
    const AnnealEndpoints endpoints = target_to_target(from, to);
    ParticleEnsemble ensemble = gaussian_ensemble(from, 7, 200);
    const Matrix start = ensemble.positions;
    ensemble = anneal_target_only(std::move(ensemble), endpoints, oracle_schedule(60, 0.0), 14);
    for (Index i = 0; i < start.rows(); ++i) {
      const Vector x = start.row(i).transpose();
      const double is_weight = -(target_energy(to, x) - target_energy(from, x));
      CHECK(ensemble.log_weights(i) == doctest::Approx(is_weight).epsilon(1e-12));
    }
  }
  SUBCASE("agrees with the plain path on the gaussian widening") {
    const AnnealEndpoints endpoints = target_to_target(from, to);
    const Index n = 4000;
    ParticleEnsemble plain = gaussian_ensemble(from, 8, n);
    ParticleEnsemble alt = plain;
    plain = anneal(std::move(plain), endpoints, oracle_schedule(200, 0.3), 15);
    alt = anneal_target_only(std::move(alt), endpoints, oracle_schedule(200, 0.3), 16);
    // Compare SNIS means of x^2 (target value 4) within combined bootstrap error.
    const auto snis_mean = [](const ParticleEnsemble& e) {
      const Vector w = normalized_weights(e.log_weights);
      double acc = 0.0;
      for (Index i = 0; i < w.size(); ++i) acc += w(i) * e.positions(i, 0) * e.positions(i, 0);
      return acc;
    };
    Vector phi_plain(n), phi_alt(n);
    for (Index i = 0; i < n; ++i) {
      phi_plain(i) = plain.positions(i, 0) * plain.positions(i, 0);
      phi_alt(i) = alt.positions(i, 0) * alt.positions(i, 0);
    }
    const double se_plain = testutil::snis_bootstrap_se(plain.log_weights, phi_plain, 200, 31);
    const double se_alt = testutil::snis_bootstrap_se(alt.log_weights, phi_alt, 200, 32);
    const double gap = std::abs(snis_mean(plain) - snis_mean(alt));
    CHECK(gap < 4.0 * std::sqrt(se_plain * se_plain + se_alt * se_alt) + 1e-9);
  }
  SUBCASE("dimension cap") {
    const EnergyTarget big = gaussian_target(40, Vector(), 1.0, 1.0);
    ParticleEnsemble ensemble = gaussian_ensemble(big, 8, 4);
    CHECK_THROWS_AS(anneal_target_only(std::move(ensemble), target_to_target(big, big),
                                       oracle_schedule(5, 0.1), 17),
                    UnsupportedError);
  }
}

TEST_CASE("results are independent of the worker count") {
  const EnergyTarget from = gaussian_target(2, Vector(), 1.0, 1.0);
  const EnergyTarget to = gaussian_target(2, Vector(), 1.7, 1.0);
  const AnnealEndpoints endpoints = target_to_target(from, to);
  ParticleEnsemble single = gaussian_ensemble(from, 11, 512);
  ParticleEnsemble pooled = single;
  AnnealSchedule schedule = oracle_schedule(40, 0.3);
  schedule.workers = 1;
  single = anneal(std::move(single), endpoints, schedule, 99);
  schedule.workers = 4;
  pooled = anneal(std::move(pooled), endpoints, schedule, 99);
  CHECK((single.positions - pooled.positions).cwiseAbs().maxCoeff() == 0.0);
  CHECK((single.log_weights - pooled.log_weights).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bad schedules and states are rejected") {
  const EnergyTarget target = gaussian_target(1, Vector(), 1.0, 1.0);
  const AnnealEndpoints endpoints = target_to_target(target, target);
  AnnealSchedule schedule = AnnealSchedule::constant(0, 0.1);
  CHECK_THROWS_AS(anneal(gaussian_ensemble(target, 9, 4), endpoints, schedule, 1), InputError);

  ParticleEnsemble advanced = gaussian_ensemble(target, 10, 4);
  advanced.tau = 0.5;
  CHECK_THROWS_AS(anneal(std::move(advanced), endpoints, AnnealSchedule::constant(5, 0.1), 1),
                  InputError);
}
