#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sbg/smc.hpp"
#include "testutil.hpp"

using namespace sbg;

TEST_CASE("ess hand cases and invariants") {
  Vector equal = Vector::Zero(4);
  CHECK(ess(equal) == doctest::Approx(4.0).epsilon(1e-14));

  Vector lone(5);
  lone.setConstant(kNegInf);
  lone(2) = 1.3;
  CHECK(ess(lone) == doctest::Approx(1.0).epsilon(1e-12));

  Vector w(3);
  w << std::log(2.0), 0.0, 0.0;
  CHECK(ess(w) == doctest::Approx(8.0 / 3.0).epsilon(1e-12));

  SUBCASE("shift invariance is exact") {
    // Dyadic log-weights and shifts, so the shifted inputs carry no rounding
    // of their own and the invariance must hold bit-for-bit.
    Prng rng(1);
    Vector logw(64);
    for (Index i = 0; i < logw.size(); ++i)
      logw(i) = 0.25 * static_cast<double>(static_cast<int>(rng.below(64)) - 32);
    const double base = ess(logw);
    for (const double c : {-8.0, 0.5, 256.0}) {
      Vector shifted = logw.array() + c;
      CHECK(ess(shifted) == base);
    }
  }
  SUBCASE("bounds") {
    Prng rng(2);
    for (int t = 0; t < 50; ++t) {
      Vector logw(20);
      for (Index i = 0; i < logw.size(); ++i) logw(i) = 3.0 * rng.normal();
      const double e = ess(logw);
      CHECK(e >= 1.0 - 1e-12);
      CHECK(e <= 20.0 + 1e-12);
    }
  }
  SUBCASE("all minus infinity") {
    Vector dead = Vector::Constant(4, kNegInf);
    CHECK_THROWS_AS(ess(dead), EstimationError);
  }
}

TEST_CASE("resampling schemes") {
  SUBCASE("stratified with uniform weights is a permutation") {
    ParticleEnsemble ensemble = make_ensemble(Matrix::Random(64, 2));
    const ParticleEnsemble out = resample(ensemble, {ResampleKind::stratified, 3});
    std::vector<bool> seen(64, false);
    for (const Index a : out.lineage) {
      CHECK(!seen[static_cast<size_t>(a)]);
      seen[static_cast<size_t>(a)] = true;
    }
    CHECK(out.log_weights.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("degenerate weights clone the only survivor") {
    ParticleEnsemble ensemble = make_ensemble(Matrix::Random(8, 1));
    ensemble.log_weights.setConstant(kNegInf);
    ensemble.log_weights(1) = 0.0;
    const ParticleEnsemble out = resample(ensemble, {ResampleKind::multinomial, 4});
    for (const Index a : out.lineage) CHECK(a == 1);
    for (Index i = 0; i < 8; ++i) CHECK(out.positions(i, 0) == ensemble.positions(1, 0));
  }
  SUBCASE("multinomial offspring means match K w over repeats") {
    const Index k = 5;
    ParticleEnsemble ensemble = make_ensemble(Matrix::Random(k, 1));
    Vector logw(k);
    logw << std::log(0.4), std::log(0.3), std::log(0.15), std::log(0.1), std::log(0.05);
    ensemble.log_weights = logw;
    const Vector w = normalized_weights(logw);
    const int repeats = 10000;
    Vector counts = Vector::Zero(k);
    for (int r = 0; r < repeats; ++r) {
      const ParticleEnsemble out =
          resample(ensemble, {ResampleKind::multinomial, 1000 + static_cast<uint64_t>(r)});
      for (const Index a : out.lineage) counts(a) += 1.0;
    }
    for (Index i = 0; i < k; ++i) {
      const double mean_count = counts(i) / repeats;
      const double expected = static_cast<double>(k) * w(i);
      const double se = std::sqrt(static_cast<double>(k) * w(i) * (1.0 - w(i)) /
                                  static_cast<double>(repeats));
      CHECK(std::abs(mean_count - expected) < 4.0 * se);
    }
  }
  SUBCASE("resampling preserves SNIS expectations") {
    const Index k = 40;
    Prng rng(9);
    ParticleEnsemble ensemble = make_ensemble(Matrix::Random(k, 1));
    for (Index i = 0; i < k; ++i) ensemble.log_weights(i) = rng.normal();
    const Vector w = normalized_weights(ensemble.log_weights);
    // Bounded test function of the position.
    const auto phi = [](double x) { return std::tanh(3.0 * x); };
    double snis_value = 0.0;
    for (Index i = 0; i < k; ++i) snis_value += w(i) * phi(ensemble.positions(i, 0));
    const int repeats = 10000;
    double mean_post = 0.0, mean_sq = 0.0;
    for (int r = 0; r < repeats; ++r) {
      const ParticleEnsemble out =
          resample(ensemble, {ResampleKind::multinomial, 5000 + static_cast<uint64_t>(r)});
      double post = 0.0;
      for (Index i = 0; i < k; ++i) post += phi(out.positions(i, 0));
      post /= static_cast<double>(k);
      mean_post += post;
      mean_sq += post * post;
    }
    mean_post /= repeats;
    mean_sq /= repeats;
    const double se = std::sqrt((mean_sq - mean_post * mean_post) / repeats);
    CHECK(std::abs(mean_post - snis_value) < 4.0 * se);
  }
}

TEST_CASE("sbg loop degenerations and diagnostics") {
  const EnergyTarget proposal = gaussian_target(1, Vector(), 1.0, 1.0);
  const EnergyTarget target = gaussian_target(1, Vector(), 1.6, 1.0);
  const AnnealEndpoints endpoints = target_to_target(proposal, target);

  SUBCASE("threshold zero never resamples and equals plain annealing bit for bit") {
    AnnealSchedule schedule = AnnealSchedule::constant(40, 0.2, 0.0);
    schedule.drift_max_norm = 0.0;
    ParticleEnsemble start = make_ensemble(sample_exact(proposal, 42, 500));
    const ParticleEnsemble annealed = anneal(start, endpoints, schedule, 777);
    const SbgResult smc = sbg_run(start, endpoints, schedule, 777, 888);
    CHECK((smc.ensemble.positions - annealed.positions).cwiseAbs().maxCoeff() == 0.0);
    CHECK((smc.ensemble.log_weights - annealed.log_weights).cwiseAbs().maxCoeff() == 0.0);
    for (const auto& step : smc.diagnostics.steps) CHECK(!step.resampled);
  }
  SUBCASE("threshold one resamples every step") {
    AnnealSchedule schedule = AnnealSchedule::constant(25, 0.2, 1.0);
    schedule.drift_max_norm = 0.0;
    ParticleEnsemble start = make_ensemble(sample_exact(proposal, 43, 300));
    const SbgResult smc = sbg_run(start, endpoints, schedule, 11, 12);
    for (const auto& step : smc.diagnostics.steps) CHECK(step.resampled);
  }
  SUBCASE("diagnostics are deterministic under a fixed seed") {
    AnnealSchedule schedule = AnnealSchedule::constant(30, 0.15, 0.9);
    ParticleEnsemble start = make_ensemble(sample_exact(proposal, 44, 256));
    const SbgResult a = sbg_run(start, endpoints, schedule, 5, 6);
    const SbgResult b = sbg_run(start, endpoints, schedule, 5, 6);
    REQUIRE(a.diagnostics.steps.size() == b.diagnostics.steps.size());
    for (size_t i = 0; i < a.diagnostics.steps.size(); ++i) {
      CHECK(a.diagnostics.steps[i].ess == b.diagnostics.steps[i].ess);
      CHECK(a.diagnostics.steps[i].resampled == b.diagnostics.steps[i].resampled);
    }
    CHECK((a.ensemble.positions - b.ensemble.positions).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("all-quarantined run aborts with an estimation error") {
    AnnealEndpoints poisoned = endpoints;
    poisoned.e1 = [](VectorRef x, Vector* grad) -> double {
      if (grad) *grad = Vector::Constant(x.size(), std::numeric_limits<double>::quiet_NaN());
      return std::numeric_limits<double>::quiet_NaN();
    };
    AnnealSchedule schedule = AnnealSchedule::constant(5, 0.1, 0.5);
    ParticleEnsemble start = make_ensemble(sample_exact(proposal, 45, 64));
    CHECK_THROWS_AS(sbg_run(start, poisoned, schedule, 1, 2), EstimationError);
  }
}

TEST_CASE("sbg on a mode-biased double well beats one-shot importance sampling") {
  // Proposal concentrated in the left well; the target is symmetric.  The
  // schedule carries enough diffusion time for repeated barrier crossings, so
  // the transported ensemble decorrelates from its ancestry.
  const EnergyTarget proposal = gaussian_target(1, Vector::Constant(1, -1.0), 0.35, 1.0);
  const EnergyTarget target = double_well_target(1, {2.0, 0.0});
  const AnnealEndpoints endpoints = target_to_target(proposal, target);

  // Quadrature truth for the mass right of zero (symmetric: one half).
  const auto energy1 = [&](double v) {
    Vector p(1);
    p << v;
    return std::exp(-target_energy(target, p));
  };
  const double z_all = testutil::trapz(energy1, -3.0, 3.0, 40001);
  const double z_right = testutil::trapz(energy1, 0.0, 3.0, 20001);
  const double truth = z_right / z_all;

  const Index k = 5000;
  AnnealSchedule schedule = AnnealSchedule::constant(800, 20.0, 0.5);
  int ess_wins = 0;
  int covered = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ParticleEnsemble start = make_ensemble(sample_exact(proposal, 300 + seed, k));
    Vector is_logw(k);
    for (Index i = 0; i < k; ++i) {
      const Vector x = start.positions.row(i).transpose();
      is_logw(i) = -(target_energy(target, x) - target_energy(proposal, x));
    }
    const double is_ess = ess(is_logw);
    const SbgResult smc = sbg_run(start, endpoints, schedule, 400 + seed, 500 + seed);
    if (smc.diagnostics.steps.back().ess > is_ess) ++ess_wins;

    Vector phi(k);
    for (Index i = 0; i < k; ++i) phi(i) = smc.ensemble.positions(i, 0) > 0.0 ? 1.0 : 0.0;
    const SnisResult est = snis(smc.ensemble.log_weights, phi);
    const double se =
        testutil::snis_bootstrap_se(smc.ensemble.log_weights, phi, 200, 600 + seed);
    if (std::abs(est.estimate - truth) < 4.0 * se + 1e-6) ++covered;
  }
  CHECK(ess_wins >= 18);
  CHECK(covered >= 16);
}
