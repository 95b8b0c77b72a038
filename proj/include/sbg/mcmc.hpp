#pragma once

#include "sbg/common.hpp"
#include "sbg/rng.hpp"
#include "sbg/targets.hpp"

namespace sbg {

enum class ChainKind { ula, mala };

struct ChainConfig {
  Index steps = 10000;
  double step_size = 1e-2;
  Index burn_in = 0;
  ChainKind kind = ChainKind::mala;
  uint64_t seed = 0;
};

struct ChainResult {
  Matrix samples;  // (steps - burn_in) x dim, recorded after burn-in
  double acceptance_rate = 1.0;  // 1 for ULA by construction
};

/// One unadjusted Langevin step x - h grad + sqrt(2h) noise.
Vector ula_step(const EnergyTarget& target, VectorRef x, double step_size, Prng& rng);

/// Overdamped Langevin chain; `mala` adds the exact Metropolis correction so
/// the recorded marginal is unbiased.
ChainResult run_chain(const EnergyTarget& target, VectorRef x0, const ChainConfig& config);

struct SplitResult {
  Matrix train;  // first train_n rows, contiguous
  Matrix val;    // next val_n rows, contiguous
  Matrix test;   // uniform subsample (without replacement) of the remainder
  std::vector<Index> test_indices;  // row indices into the source chain
};

SplitResult split_biased(const Matrix& chain, Index train_n, Index val_n, Index test_n,
                         uint64_t seed);

}  // namespace sbg
