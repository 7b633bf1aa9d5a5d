#pragma once

// Classical depth-first backtracking solver: row-major cell order, ascending
// value order, validity pruning. Serves as correctness oracle and timing
// baseline.

#include <chrono>
#include <optional>
#include <stdexcept>
#include <vector>

#include <nlms/sudoku.hpp>

namespace nlms {

struct SolveResult {
  std::optional<Grid> solution;
  long long placements = 0;  // committed cell assignments
  long long backtracks = 0;  // assignments undone
  std::chrono::nanoseconds elapsed{0};
};

namespace detail {

inline bool solve_dfs(Grid& g, const std::vector<int>& empties, std::size_t i, SolveResult& res) {
  if (i == empties.size()) return true;
  const int pos = empties[i];
  const int r = pos / 9, c = pos % 9;
  for (int x = 1; x <= 9; ++x) {
    if (!placement_fits(g, r, c, x)) continue;
    g.cells[static_cast<std::size_t>(pos)] = x;
    ++res.placements;
    if (solve_dfs(g, empties, i + 1, res)) return true;
    g.cells[static_cast<std::size_t>(pos)] = 0;
    ++res.backtracks;
  }
  return false;
}

inline void count_dfs(Grid& g, const std::vector<int>& empties, std::size_t i, int cap, int& found) {
  if (found >= cap) return;
  if (i == empties.size()) {
    ++found;
    return;
  }
  const int pos = empties[i];
  const int r = pos / 9, c = pos % 9;
  for (int x = 1; x <= 9; ++x) {
    if (!placement_fits(g, r, c, x)) continue;
    g.cells[static_cast<std::size_t>(pos)] = x;
    count_dfs(g, empties, i + 1, cap, found);
    g.cells[static_cast<std::size_t>(pos)] = 0;
    if (found >= cap) return;
  }
}

inline std::vector<int> empty_positions(const Grid& g) {
  std::vector<int> empties;
  for (int i = 0; i < 81; ++i) {
    if (g.cells[static_cast<std::size_t>(i)] == 0) empties.push_back(i);
  }
  return empties;
}

}  // namespace detail

inline SolveResult solve_backtracking(const Grid& puzzle) {
  if (!is_valid(puzzle)) {
    throw std::invalid_argument("solve_backtracking: input grid is not valid");
  }
  SolveResult res;
  Grid work = puzzle;
  const std::vector<int> empties = detail::empty_positions(work);
  const auto t0 = std::chrono::steady_clock::now();
  const bool found = detail::solve_dfs(work, empties, 0, res);
  res.elapsed = std::chrono::steady_clock::now() - t0;
  if (found) res.solution = work;
  return res;
}

inline int count_solutions(const Grid& puzzle, int cap) {
  if (!is_valid(puzzle)) throw std::invalid_argument("count_solutions: input grid is not valid");
  if (cap < 1) throw std::invalid_argument("count_solutions: cap must be >= 1");
  Grid work = puzzle;
  const std::vector<int> empties = detail::empty_positions(work);
  int found = 0;
  detail::count_dfs(work, empties, 0, cap, found);
  return found;
}

}  // namespace nlms
