#pragma once

// Sudoku grids, validity checks, the lifted boolean predicates fed to the
// reasoner, puzzle generation, and dataset file IO.

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlms/rng.hpp>
#include <nlms/tensor.hpp>

namespace nlms {

struct Grid {
  std::array<int, 81> cells{};  // row-major, 0 = empty

  int at(int r, int c) const { return cells[static_cast<std::size_t>(r * 9 + c)]; }
  void set(int r, int c, int v) { cells[static_cast<std::size_t>(r * 9 + c)] = v; }
  bool operator==(const Grid&) const = default;
};

inline int box_origin_row(int r) { return 3 * (r / 3); }
inline int box_origin_col(int c) { return 3 * (c / 3); }

inline int count_empty(const Grid& g) {
  int n = 0;
  for (int v : g.cells) n += (v == 0);
  return n;
}

// True iff writing x at the empty-or-not cell (r,c) keeps every unit duplicate
// free. The current value of (r,c) itself is ignored, so this also answers
// "could x legally live here" for occupied cells.
inline bool placement_fits(const Grid& g, int r, int c, int x) {
  for (int i = 0; i < 9; ++i) {
    if (i != c && g.at(r, i) == x) return false;
    if (i != r && g.at(i, c) == x) return false;
  }
  const int br = box_origin_row(r), bc = box_origin_col(c);
  for (int i = br; i < br + 3; ++i) {
    for (int j = bc; j < bc + 3; ++j) {
      if ((i != r || j != c) && g.at(i, j) == x) return false;
    }
  }
  return true;
}

inline bool is_valid(const Grid& g) {
  for (int v : g.cells) {
    if (v < 0 || v > 9) return false;
  }
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 9; ++c) {
      const int v = g.at(r, c);
      if (v != 0 && !placement_fits(g, r, c, v)) return false;
    }
  }
  return true;
}

inline bool is_solved(const Grid& g) {
  for (int v : g.cells) {
    if (v == 0) return false;
  }
  return is_valid(g);
}

struct PredicateSet {
  Tensor is_row;                          // [9,9], [r][x-1]
  Tensor is_column;                       // [9,9], [c][x-1]
  Tensor is_submat;                       // [9,9,9], [r][c][x-1]
  Tensor stacked_binary;                  // [9,9,2], ch0 = is_row, ch1 = is_column
  Tensor ternary;                         // [9,9,9,1]
  std::array<std::uint8_t, 81> empty_mask{};  // [r*9+c], 1 iff cell empty
};

inline PredicateSet compute_predicates(const Grid& g) {
  PredicateSet p{Tensor({9, 9}), Tensor({9, 9}), Tensor({9, 9, 9}),
                 Tensor({9, 9, 2}), Tensor({9, 9, 9, 1}), {}};
  bool box_has[3][3][9] = {};
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 9; ++c) {
      const int v = g.at(r, c);
      p.empty_mask[static_cast<std::size_t>(r * 9 + c)] = (v == 0);
      if (v == 0) continue;
      p.is_row.data()[r * 9 + (v - 1)] = 1.0;
      p.is_column.data()[c * 9 + (v - 1)] = 1.0;
      box_has[r / 3][c / 3][v - 1] = true;
    }
  }
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 9; ++c) {
      for (int x = 0; x < 9; ++x) {
        const double in_box = box_has[r / 3][c / 3][x] ? 1.0 : 0.0;
        p.is_submat.data()[(r * 9 + c) * 9 + x] = in_box;
        p.ternary.data()[(r * 9 + c) * 9 + x] = in_box;
      }
      p.stacked_binary.data()[(r * 9 + c) * 2 + 0] = p.is_row.data()[r * 9 + c];
      p.stacked_binary.data()[(r * 9 + c) * 2 + 1] = p.is_column.data()[r * 9 + c];
    }
  }
  return p;
}

namespace detail {

inline bool fill_backtrack(Grid& g, int pos, Rng& rng) {
  while (pos < 81 && g.cells[static_cast<std::size_t>(pos)] != 0) ++pos;
  if (pos == 81) return true;
  const int r = pos / 9, c = pos % 9;
  std::array<int, 9> vals{1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (int i = 8; i > 0; --i) {
    std::swap(vals[static_cast<std::size_t>(i)],
              vals[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  }
  for (int x : vals) {
    if (!placement_fits(g, r, c, x)) continue;
    g.set(r, c, x);
    if (fill_backtrack(g, pos + 1, rng)) return true;
    g.set(r, c, 0);
  }
  return false;
}

}  // namespace detail

inline Grid generate_solved(Rng& rng) {
  Grid g{};
  detail::fill_backtrack(g, 0, rng);  // cannot fail from an empty grid
  return g;
}

inline Grid generate_solved(std::uint64_t seed) {
  Rng rng(seed);
  return generate_solved(rng);
}

// Blanks n_empty uniformly chosen cells. A full shuffle runs regardless of
// n_empty, so for a fixed RNG state the blanked sets nest as n_empty grows.
inline Grid blank_cells(const Grid& solved, int n_empty, Rng& rng) {
  if (n_empty < 1 || n_empty > 81) {
    throw std::invalid_argument("blank_cells: n_empty must be in 1..81, got " +
                                std::to_string(n_empty));
  }
  std::vector<int> order(81);
  for (int i = 0; i < 81; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  Grid out = solved;
  for (int i = 0; i < n_empty; ++i) {
    out.cells[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0;
  }
  return out;
}

inline Grid blank_cells(const Grid& solved, int n_empty, std::uint64_t seed) {
  Rng rng(seed);
  return blank_cells(solved, n_empty, rng);
}

inline std::string to_line(const Grid& g) {
  std::string s(81, '0');
  for (int i = 0; i < 81; ++i) {
    s[static_cast<std::size_t>(i)] =
        static_cast<char>('0' + g.cells[static_cast<std::size_t>(i)]);
  }
  return s;
}

inline Grid parse_line(const std::string& line, std::size_t line_no) {
  if (line.size() != 81) {
    throw std::runtime_error("dataset line " + std::to_string(line_no) + ": expected 81 characters, got " +
                             std::to_string(line.size()));
  }
  Grid g{};
  for (int i = 0; i < 81; ++i) {
    const char ch = line[static_cast<std::size_t>(i)];
    if (ch == '.' || ch == '0') {
      g.cells[static_cast<std::size_t>(i)] = 0;
    } else if (ch >= '1' && ch <= '9') {
      g.cells[static_cast<std::size_t>(i)] = ch - '0';
    } else {
      throw std::runtime_error("dataset line " + std::to_string(line_no) + ": invalid character '" +
                               std::string(1, ch) + "' at position " + std::to_string(i));
    }
  }
  if (!is_valid(g)) {
    throw std::runtime_error("dataset line " + std::to_string(line_no) + ": grid violates Sudoku validity");
  }
  return g;
}

inline std::vector<Grid> load_dataset(const std::string& path, bool require_solved = false) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::vector<Grid> grids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Grid g = parse_line(line, line_no);
    if (require_solved && !is_solved(g)) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) +
                               ": expected a solved grid but it has empty cells");
    }
    grids.push_back(g);
  }
  return grids;
}

inline void save_dataset(const std::string& path, const std::vector<Grid>& grids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  for (const Grid& g : grids) out << to_line(g) << '\n';
}

}  // namespace nlms
