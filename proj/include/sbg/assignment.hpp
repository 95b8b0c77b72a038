#pragma once

#include <vector>

#include "sbg/common.hpp"

namespace sbg {

struct AssignmentResult {
  std::vector<Index> col_of_row;  // col_of_row[i] is the column matched to row i
  double total_cost = 0.0;
};

/// Exact minimum-cost perfect matching on a square cost matrix
/// (shortest augmenting paths with dual potentials, O(n^3)).
AssignmentResult solve_assignment(const Matrix& cost);

}  // namespace sbg
