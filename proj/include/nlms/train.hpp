#pragma once

// REINFORCE with discounted returns, a running-mean baseline, Adam, and a
// curriculum over the number of empty cells.
//
// Rollouts store detached log-probs plus the visited states and actions; the
// policy update re-runs forward/log_prob one step at a time and accumulates
// leaf gradients, so peak tape memory stays at one step regardless of episode
// length while producing exactly the batch-averaged REINFORCE gradient.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlms/env.hpp>
#include <nlms/nlm.hpp>
#include <nlms/rng.hpp>
#include <nlms/sudoku.hpp>

namespace nlms {

struct TrainConfig {
  NlmConfig nlm{};
  int epochs = 50;
  int batch_size = 4;
  double learning_rate = 0.005;
  double gamma = 0.99;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int curriculum_start = 3;
  int curriculum_end = 10;
  double promotion_threshold = 0.9;
  int eval_window = 50;
  int max_steps_train = 729;
  std::uint64_t seed = 0;
  int batches_per_epoch = 200;
  bool stop_when_converged = false;   // stop once the top level clears the threshold
  int converged_patience_batches = 0;  // extra consecutive passing batches required
  double wall_budget_seconds = 0.0;   // 0 = unlimited
  bool deterministic = false;         // log wall_ms as 0 for byte-stable output

  void validate() const {
    nlm.validate();
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (!(gamma > 0.0) || gamma > 1.0) throw std::invalid_argument("train: gamma must be in (0,1]");
    if (curriculum_start < 1 || curriculum_start > curriculum_end || curriculum_end > 81) {
      throw std::invalid_argument("train: need 1 <= curriculum_start <= curriculum_end <= 81");
    }
    if (!(promotion_threshold > 0.0) || promotion_threshold > 1.0) {
      throw std::invalid_argument("train: promotion_threshold must be in (0,1]");
    }
    if (eval_window < 1) throw std::invalid_argument("train: eval_window must be >= 1");
    if (max_steps_train < 1) throw std::invalid_argument("train: max_steps_train must be >= 1");
    if (batches_per_epoch < 1) throw std::invalid_argument("train: batches_per_epoch must be >= 1");
    if (converged_patience_batches < 0) {
      throw std::invalid_argument("train: converged_patience_batches must be >= 0");
    }
  }
};

struct Episode {
  std::vector<Grid> states;      // state before each step
  std::vector<Action> actions;
  std::vector<double> log_probs;  // detached values from the rollout policy
  std::vector<double> rewards;
  bool solved = false;
  int steps = 0;
};

inline Episode rollout(NlmModel& model, const Grid& puzzle, int max_steps, Rng& rng) {
  EnvState env = reset(puzzle, max_steps);
  Episode ep;
  while (env.status() == EnvStatus::InProgress) {
    PredicateSet preds = compute_predicates(env.current());
    Tensor logits = model.forward(preds).detach();
    model.graph().clear_tape();
    std::vector<double> probs = action_probabilities(logits, preds.empty_mask);
    const long long ai = sample_action(probs, rng);
    const Action a{static_cast<int>(ai / 81), static_cast<int>((ai / 9) % 9),
                   static_cast<int>(ai % 9) + 1};
    ep.states.push_back(env.current());
    ep.actions.push_back(a);
    ep.log_probs.push_back(std::log(probs[static_cast<std::size_t>(ai)]));
    StepOutcome out = env.step(a);
    ep.rewards.push_back(out.reward);
  }
  ep.steps = static_cast<int>(ep.rewards.size());
  ep.solved = env.status() == EnvStatus::Solved;
  return ep;
}

inline std::vector<double> returns(const std::vector<double>& rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

struct AdamState {
  long long t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void init(const std::vector<Tensor*>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
      m.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
      v.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
    }
  }
};

// One Adam update from the accumulated leaf gradients; zeroes them after.
inline void adam_step(const std::vector<Tensor*>& params, AdamState& st, const TrainConfig& cfg) {
  if (st.m.size() != params.size()) {
    throw std::logic_error("adam_step: state not initialized for this parameter set");
  }
  ++st.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i];
    auto grad = p->grad();
    double* w = p->data();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < grad.size(); ++j) {
      const double g = grad[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      w[j] -= cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
    }
    p->zero_grad();
  }
}

struct BaselineState {
  double value = 0.0;
  bool initialized = false;

  // Exponential moving average over batch mean returns; the first batch seeds
  // the average directly.
  void update(double batch_mean_return) {
    value = initialized ? 0.9 * value + 0.1 * batch_mean_return : batch_mean_return;
    initialized = true;
  }
};

// REINFORCE update: loss = -(1/B) sum_e sum_t (G_t - b) log pi(a_t|s_t).
// Returns the loss value. Gradients are produced by re-running each step's
// forward pass and backpropagating it with weight -(G_t - b)/B.
inline double policy_update(NlmModel& model, const std::vector<Episode>& episodes,
                            const TrainConfig& cfg, AdamState& opt, BaselineState& baseline) {
  if (episodes.empty()) throw std::invalid_argument("policy_update: empty batch");
  const double b = baseline.initialized ? baseline.value : 0.0;
  const double inv_b = 1.0 / static_cast<double>(episodes.size());
  double loss = 0.0;
  double g_sum = 0.0;
  long long g_count = 0;
  for (const Episode& ep : episodes) {
    const std::vector<double> G = returns(ep.rewards, cfg.gamma);
    for (std::size_t t = 0; t < G.size(); ++t) {
      g_sum += G[t];
      ++g_count;
      const double w = -(G[t] - b) * inv_b;
      if (w == 0.0) continue;
      const Grid& s = ep.states[t];
      const Action& a = ep.actions[t];
      PredicateSet preds = compute_predicates(s);
      Tensor logits = model.forward(preds);
      Tensor lp = log_prob(logits, preds.empty_mask, a.r, a.c, a.x);
      Tensor term = weighted_sum_scalars({lp}, {w});
      backward(term);
      loss += term.item();
      model.graph().clear_tape();
    }
  }
  adam_step(model.parameters(), opt, cfg);
  if (g_count > 0) baseline.update(g_sum / static_cast<double>(g_count));
  return loss;
}

using PuzzleSource = std::function<Grid(int n_empty, Rng& rng)>;

inline PuzzleSource generator_source() {
  return [](int n_empty, Rng& rng) {
    Grid solved = generate_solved(rng);
    return blank_cells(solved, n_empty, rng);
  };
}

inline PuzzleSource dataset_source(std::vector<Grid> solved_grids) {
  if (solved_grids.empty()) throw std::invalid_argument("dataset_source: no grids");
  for (const Grid& g : solved_grids) {
    if (!is_solved(g)) throw std::invalid_argument("dataset_source: grids must be solved");
  }
  auto index = std::make_shared<std::size_t>(0);
  return [grids = std::move(solved_grids), index](int n_empty, Rng& rng) {
    const Grid& solved = grids[*index % grids.size()];
    ++*index;
    return blank_cells(solved, n_empty, rng);
  };
}

struct TrainEpochLog {
  int epoch = 0;
  long long batches = 0;  // cumulative
  int curriculum_level = 0;
  double rolling_solve_rate = 0.0;
  double mean_return = 0.0;  // mean episode return G_0 over the epoch
  long long wall_ms = 0;
};

struct TrainResult {
  std::vector<TrainEpochLog> log;
  int final_level = 0;
  bool converged = false;
  long long total_batches = 0;
};

// checkpoint_hook(level, final) fires on each promotion and once at the end.
inline TrainResult train(
    NlmModel& model, const TrainConfig& cfg, const PuzzleSource& source,
    const std::function<void(const NlmModel&, int level, bool final)>& checkpoint_hook = {},
    const std::function<void(const TrainEpochLog&)>& log_hook = {}) {
  cfg.validate();
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);  // decorrelated from weight init
  AdamState opt;
  opt.init(model.parameters());
  BaselineState baseline;

  TrainResult result;
  int level = cfg.curriculum_start;
  std::deque<int> window;
  int converged_streak = 0;
  bool stop = false;
  const auto t0 = std::chrono::steady_clock::now();

  auto window_rate = [&]() {
    if (window.empty()) return 0.0;
    double s = 0.0;
    for (int w : window) s += w;
    return s / static_cast<double>(window.size());
  };

  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    double return_sum = 0.0;
    long long episode_count = 0;
    for (int bi = 0; bi < cfg.batches_per_epoch && !stop; ++bi) {
      std::vector<Episode> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int e = 0; e < cfg.batch_size; ++e) {
        Grid puzzle = source(level, rng);
        Episode ep = rollout(model, puzzle, cfg.max_steps_train, rng);
        window.push_back(ep.solved ? 1 : 0);
        while (static_cast<int>(window.size()) > cfg.eval_window) window.pop_front();
        if (!ep.rewards.empty()) return_sum += returns(ep.rewards, cfg.gamma)[0];
        ++episode_count;
        batch.push_back(std::move(ep));
      }
      policy_update(model, batch, cfg, opt, baseline);
      ++result.total_batches;

      if (static_cast<int>(window.size()) >= cfg.eval_window &&
          window_rate() >= cfg.promotion_threshold) {
        if (level < cfg.curriculum_end) {
          ++level;
          window.clear();
          converged_streak = 0;
          if (checkpoint_hook) checkpoint_hook(model, level, false);
        } else if (cfg.stop_when_converged) {
          ++converged_streak;
          if (converged_streak > cfg.converged_patience_batches) {
            result.converged = true;
            stop = true;
          }
        }
      } else {
        converged_streak = 0;
      }
      if (cfg.wall_budget_seconds > 0.0) {
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (elapsed >= cfg.wall_budget_seconds) stop = true;
      }
    }
    TrainEpochLog entry;
    entry.epoch = epoch;
    entry.batches = result.total_batches;
    entry.curriculum_level = level;
    entry.rolling_solve_rate = window_rate();
    entry.mean_return = episode_count > 0 ? return_sum / static_cast<double>(episode_count) : 0.0;
    entry.wall_ms =
        cfg.deterministic
            ? 0
            : std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
                  .count();
    result.log.push_back(entry);
    if (log_hook) log_hook(entry);
  }
  result.final_level = level;
  if (checkpoint_hook) checkpoint_hook(model, level, true);
  return result;
}

}  // namespace nlms
