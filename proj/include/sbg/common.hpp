#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sbg {

using Scalar = double;
using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;
using MatrixRef = Eigen::Ref<const Eigen::MatrixXd>;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;

// Error taxonomy shared by the whole library.  The CLI maps these onto
// distinct exit codes, so throw the most specific type that applies.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct UnsupportedError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct EstimationError : Error {
  using Error::Error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

/// log(sum_i exp(v_i)) with max-subtraction; -inf entries contribute zero.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  if (v.size() == 0) return kNegInf;
  const double m = v.derived().maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a stray +inf/nan propagates)
  double acc = 0.0;
  for (Index i = 0; i < v.size(); ++i) acc += std::exp(v.derived()(i) - m);
  return m + std::log(acc);
}

template <typename Derived>
double log_mean_exp(const Eigen::DenseBase<Derived>& v) {
  return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

/// Self-normalized weights from unnormalized log-weights.
/// Throws EstimationError when no entry is finite.
template <typename Derived>
Vector normalized_weights(const Eigen::DenseBase<Derived>& logw) {
  const double m = logw.size() > 0 ? logw.derived().maxCoeff() : kNegInf;
  if (!std::isfinite(m)) throw EstimationError("normalized_weights: no finite log-weight");
  Vector w(logw.size());
  for (Index i = 0; i < logw.size(); ++i) w(i) = std::exp(logw.derived()(i) - m);
  w /= w.sum();
  return w;
}

/// Runs fn(i) for i in [0, n).  Chunk boundaries are fixed by n alone, so any
/// per-index output is identical for every worker count.
template <typename Fn>
void parallel_for(Index n, int workers, Fn&& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n < 64) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nt = static_cast<int>(std::min<Index>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nt));
  const Index chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    const Index lo = t * chunk;
    const Index hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &fn] {
      for (Index i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace sbg
