#include "sbg/mcmc.hpp"

#include <algorithm>
#include <cmath>

namespace sbg {

namespace {

// Log-density of the ULA proposal y ~ N(x - h grad(x), 2h).
double proposal_log_density(VectorRef y, VectorRef mean, double step_size) {
  return -(y - mean).squaredNorm() / (4.0 * step_size);
}

}  // namespace

Vector ula_step(const EnergyTarget& target, VectorRef x, double step_size, Prng& rng) {
  if (step_size < 0.0) throw InputError("ula_step: negative step size");
  Vector noise(x.size());
  for (Index i = 0; i < x.size(); ++i) noise(i) = rng.normal();
  if (step_size == 0.0) return x;
  const Vector grad = energy_and_grad(target, x).second;
  return x - step_size * grad + std::sqrt(2.0 * step_size) * noise;
}

ChainResult run_chain(const EnergyTarget& target, VectorRef x0, const ChainConfig& config) {
  if (config.step_size <= 0.0) throw InputError("run_chain: step_size must be positive");
  if (config.burn_in >= config.steps) throw InputError("run_chain: burn_in must be below steps");
  if (!all_finite(x0)) throw InputError("run_chain: non-finite start point");

  Prng rng(config.seed);
  ChainResult result;
  result.samples.resize(config.steps - config.burn_in, target.dim);

  Vector x = x0;
  auto [ex, gx] = energy_and_grad(target, x);
  Index accepted = 0;
  const double h = config.step_size;

  for (Index k = 0; k < config.steps; ++k) {
    Vector noise(target.dim);
    for (Index i = 0; i < target.dim; ++i) noise(i) = rng.normal();
    const Vector mean_fwd = x - h * gx;
    const Vector y = mean_fwd + std::sqrt(2.0 * h) * noise;
    if (!all_finite(y)) throw NumericalError("run_chain: non-finite state at step " + std::to_string(k));
    if (config.kind == ChainKind::ula) {
      x = y;
      std::tie(ex, gx) = energy_and_grad(target, x);
      ++accepted;
    } else {
      auto [ey, gy] = energy_and_grad(target, y);
      const Vector mean_rev = y - h * gy;
      const double log_alpha =
          -ey + ex + proposal_log_density(x, mean_rev, h) - proposal_log_density(y, mean_fwd, h);
      if (std::log(rng.uniform_pos()) < log_alpha) {
        x = y;
        ex = ey;
        gx = gy;
        ++accepted;
      }
    }
    if (!all_finite(x))
      throw NumericalError("run_chain: non-finite state at step " + std::to_string(k));
    if (k >= config.burn_in) result.samples.row(k - config.burn_in) = x.transpose();
  }
  result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(config.steps);
  return result;
}

SplitResult split_biased(const Matrix& chain, Index train_n, Index val_n, Index test_n,
                         uint64_t seed) {
  const Index rows = chain.rows();
  if (train_n < 0 || val_n < 0 || test_n < 0) throw InputError("split_biased: negative count");
  if (train_n + val_n > rows) throw InputError("split_biased: train + val exceed the chain");
  const Index pool = rows - train_n - val_n;
  if (test_n > pool) throw InputError("split_biased: test pool too small");

  SplitResult out;
  out.train = chain.topRows(train_n);
  out.val = chain.middleRows(train_n, val_n);

  // Uniform subsample without replacement via a partial Fisher-Yates shuffle.
  std::vector<Index> pool_idx(static_cast<size_t>(pool));
  for (Index i = 0; i < pool; ++i) pool_idx[static_cast<size_t>(i)] = train_n + val_n + i;
  Prng rng(seed);
  for (Index i = 0; i < test_n; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<uint64_t>(pool - i)));
    std::swap(pool_idx[static_cast<size_t>(i)], pool_idx[static_cast<size_t>(j)]);
  }
  out.test_indices.assign(pool_idx.begin(), pool_idx.begin() + test_n);
  std::sort(out.test_indices.begin(), out.test_indices.end());
  out.test.resize(test_n, chain.cols());
  for (Index i = 0; i < test_n; ++i) out.test.row(i) = chain.row(out.test_indices[static_cast<size_t>(i)]);
  return out;
}

}  // namespace sbg
