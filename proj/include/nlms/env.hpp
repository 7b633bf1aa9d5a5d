#pragma once

// Episodic Sudoku environment: commits legal placements, prices every move,
// resets internally on dead ends, and enforces a per-episode step budget.

#include <stdexcept>
#include <string>

#include <nlms/sudoku.hpp>

namespace nlms {

struct Action {
  int r = 0;  // row 0..8
  int c = 0;  // column 0..8
  int x = 0;  // value 1..9
};

enum class EnvStatus { InProgress, Solved, StepLimitExceeded };

inline const char* to_string(EnvStatus s) {
  switch (s) {
    case EnvStatus::InProgress: return "InProgress";
    case EnvStatus::Solved: return "Solved";
    case EnvStatus::StepLimitExceeded: return "StepLimitExceeded";
  }
  return "?";
}

struct StepOutcome {
  double reward = 0.0;
  bool applied = false;
  EnvStatus status = EnvStatus::InProgress;
  bool did_reset = false;
};

constexpr double kMoveCost = -0.01;
constexpr double kSolveReward = 0.99;  // +1 solve bonus composed with the move cost

class EnvState {
 public:
  EnvState(const Grid& puzzle, int max_steps) : initial_(puzzle), current_(puzzle) {
    if (max_steps < 1) {
      throw std::invalid_argument("env: max_steps must be >= 1, got " + std::to_string(max_steps));
    }
    if (!is_valid(puzzle)) throw std::invalid_argument("env: puzzle is not a valid grid");
    if (count_empty(puzzle) == 0) {
      throw std::invalid_argument("env: puzzle has no empty cells");
    }
    max_steps_ = max_steps;
  }

  const Grid& initial() const { return initial_; }
  const Grid& current() const { return current_; }
  int steps_taken() const { return steps_taken_; }
  int max_steps() const { return max_steps_; }
  int resets() const { return resets_; }
  EnvStatus status() const { return status_; }

  // True iff some empty cell admits no value 1..9 keeping the grid valid.
  bool dead_end() const {
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 9; ++c) {
        if (current_.at(r, c) != 0) continue;
        bool any = false;
        for (int x = 1; x <= 9 && !any; ++x) any = placement_fits(current_, r, c, x);
        if (!any) return true;
      }
    }
    return false;
  }

  StepOutcome step(const Action& a) {
    if (status_ != EnvStatus::InProgress) {
      throw std::logic_error(std::string("env: cannot step a terminal state (") +
                             to_string(status_) + ")");
    }
    if (a.r < 0 || a.r > 8 || a.c < 0 || a.c > 8 || a.x < 1 || a.x > 9) {
      throw std::invalid_argument("env: action out of range (r=" + std::to_string(a.r) +
                                  ", c=" + std::to_string(a.c) + ", x=" + std::to_string(a.x) + ")");
    }
    ++steps_taken_;
    StepOutcome out;
    const bool legal = current_.at(a.r, a.c) == 0 && placement_fits(current_, a.r, a.c, a.x);
    if (legal) {
      current_.set(a.r, a.c, a.x);
      out.applied = true;
      if (is_solved(current_)) {
        status_ = EnvStatus::Solved;
        out.reward = kSolveReward;
        out.status = status_;
        return out;
      }
    }
    out.reward = kMoveCost;
    if (dead_end()) {
      current_ = initial_;
      ++resets_;
      out.did_reset = true;
    }
    if (steps_taken_ >= max_steps_) status_ = EnvStatus::StepLimitExceeded;
    out.status = status_;
    return out;
  }

  int success_score() const {
    if (status_ == EnvStatus::InProgress) {
      throw std::logic_error("env: success_score requires a terminal state");
    }
    return status_ == EnvStatus::Solved ? 1 : 0;
  }

 private:
  Grid initial_;
  Grid current_;
  int steps_taken_ = 0;
  int max_steps_ = 0;
  int resets_ = 0;
  EnvStatus status_ = EnvStatus::InProgress;
};

inline EnvState reset(const Grid& puzzle, int max_steps) { return EnvState(puzzle, max_steps); }

}  // namespace nlms
