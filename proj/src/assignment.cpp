#include "sbg/assignment.hpp"

#include <limits>

namespace sbg {

AssignmentResult solve_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw InputError("solve_assignment: cost matrix must be square");
  if (!all_finite(cost)) throw InputError("solve_assignment: non-finite cost");
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();

  // 1-based arrays; p[j] is the row matched to column j, column 0 is virtual.
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<Index> p(static_cast<size_t>(n) + 1, 0);
  std::vector<Index> way(static_cast<size_t>(n) + 1, 0);

  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
    std::vector<bool> used(static_cast<size_t>(n) + 1, false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const Index i0 = p[static_cast<size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur =
            cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  AssignmentResult result;
  result.col_of_row.assign(static_cast<size_t>(n), -1);
  for (Index j = 1; j <= n; ++j)
    result.col_of_row[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  for (Index i = 0; i < n; ++i)
    result.total_cost += cost(i, result.col_of_row[static_cast<size_t>(i)]);
  return result;
}

}  // namespace sbg
