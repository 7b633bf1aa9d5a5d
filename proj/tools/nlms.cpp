// nlms: train, evaluate, benchmark, and generate Sudoku puzzles with a
// neural-logic-machine policy.
//
// Exit codes: 0 success, 1 runtime failure (I/O, bad files), 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <nlms/bench.hpp>
#include <nlms/nlm.hpp>
#include <nlms/rng.hpp>
#include <nlms/sudoku.hpp>
#include <nlms/train.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <system_error>
#include <vector>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest decimal form that parses back to the identical double, so CSV
// consumers can recompute aggregates exactly.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Wraps a CLI11 subcommand so a JSON config file can supply any flag the
// command defines; flags given on the command line take precedence.
class ConfigurableCommand {
 public:
  ConfigurableCommand(CLI::App& app, const std::string& name, const std::string& desc)
      : sub_(app.add_subcommand(name, desc)) {
    sub_->add_option("--config", config_path_,
                     "JSON object supplying any flag of this command; "
                     "explicit flags override the file");
  }

  template <typename T>
  CLI::Option* bind(const std::string& names, T& var, const std::string& desc) {
    CLI::Option* opt = sub_->add_option(names, var, desc);
    bindings_.push_back({opt, config_key(names),
                         [&var](const json& v) { var = v.get<T>(); }});
    return opt;
  }

  CLI::Option* bind_flag(const std::string& names, bool& var, const std::string& desc) {
    CLI::Option* opt = sub_->add_flag(names, var, desc);
    bindings_.push_back({opt, config_key(names),
                         [&var](const json& v) { var = v.get<bool>(); }});
    return opt;
  }

  CLI::App* app() { return sub_; }
  bool parsed() const { return sub_->parsed(); }

  // Fills every option the command line left unset from the config file.
  void apply_config() const {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw std::runtime_error("cannot open config file: " + config_path_);
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config file " + config_path_ + ": " + e.what());
    }
    if (!cfg.is_object()) {
      throw UsageError("config file " + config_path_ + " must hold a JSON object");
    }
    for (const auto& [key, value] : cfg.items()) {
      const Binding* match = nullptr;
      for (const Binding& b : bindings_) {
        if (b.key == key) {
          match = &b;
          break;
        }
      }
      if (match == nullptr) {
        std::cerr << "warning: config key \"" << key << "\" matches no "
                  << sub_->get_name() << " flag; ignored\n";
        continue;
      }
      if (match->opt->count() > 0) continue;  // command line wins
      try {
        match->apply(value);
      } catch (const json::exception&) {
        throw UsageError("config key \"" + key + "\" has the wrong type");
      }
    }
  }

 private:
  struct Binding {
    CLI::Option* opt;
    std::string key;
    std::function<void(const json&)> apply;
  };

  // First long name, without leading dashes: "--max-steps,-m" -> "max-steps".
  static std::string config_key(std::string names) {
    const auto comma = names.find(',');
    if (comma != std::string::npos) names.resize(comma);
    while (!names.empty() && names.front() == '-') names.erase(names.begin());
    return names;
  }

  CLI::App* sub_;
  std::string config_path_;
  std::vector<Binding> bindings_;
};

void create_parent_dirs(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Opens --out for writing, or falls back to stdout when no path was given.
// Binary mode keeps the RFC 4180 CRLF line endings byte-exact everywhere.
std::ostream& open_output(const std::string& out, std::ofstream& file) {
  if (out.empty()) return std::cout;
  const fs::path p(out);
  create_parent_dirs(p);
  file.open(p, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open output file: " + out);
  return file;
}

constexpr const char* kCrlf = "\r\n";

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  nlms::TrainConfig cfg;
  std::uint64_t seed = 0;
  std::string out = "runs/train";
  std::string dataset;
  bool use_generator = false;
  int fixed_empty = 0;  // 0 = keep the configured curriculum range
};

int cmd_train(TrainOpts& o) {
  if (!o.dataset.empty() && o.use_generator) {
    throw UsageError("--dataset and --generate are mutually exclusive");
  }
  o.cfg.seed = o.seed;
  if (o.fixed_empty != 0) {
    o.cfg.curriculum_start = o.fixed_empty;
    o.cfg.curriculum_end = o.fixed_empty;
  }
  try {
    o.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  nlms::PuzzleSource source;
  if (!o.dataset.empty()) {
    source = nlms::dataset_source(nlms::load_dataset(o.dataset, /*require_solved=*/true));
  } else {
    source = nlms::generator_source();
  }

  fs::create_directories(o.out);
  const fs::path out_dir(o.out);
  std::ofstream log(out_dir / "train_log.ndjson", std::ios::binary);
  if (!log) throw std::runtime_error("cannot open log file in " + o.out);

  nlms::NlmModel model(o.cfg.nlm, o.cfg.seed);
  const auto checkpoint_hook = [&](const nlms::NlmModel& m, int level, bool final) {
    const std::string name =
        final ? "checkpoint.json" : "checkpoint_level_" + std::to_string(level) + ".json";
    m.save((out_dir / name).string());
  };
  const auto log_hook = [&](const nlms::TrainEpochLog& e) {
    ordered_json j;
    j["epoch"] = e.epoch;
    j["batches"] = e.batches;
    j["curriculum_level"] = e.curriculum_level;
    j["rolling_solve_rate"] = e.rolling_solve_rate;
    j["mean_return"] = e.mean_return;
    j["wall_ms"] = e.wall_ms;
    log << j.dump() << "\n";
  };

  const nlms::TrainResult r = nlms::train(model, o.cfg, source, checkpoint_hook, log_hook);
  log.flush();
  if (!log) throw std::runtime_error("failed writing log file in " + o.out);
  std::cout << "trained: level=" << r.final_level << " batches=" << r.total_batches
            << " converged=" << (r.converged ? "yes" : "no") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  int empty = 3;
  int max_steps = 729;
  int puzzles = 100;
  bool deterministic = false;  // evaluation is always sequential
};

void check_eval_ranges(int empty, int max_steps, int puzzles) {
  if (puzzles < 1) throw UsageError("--puzzles must be >= 1");
  if (empty < 1 || empty > 81) throw UsageError("--empty must be in [1, 81]");
  if (max_steps < 1) throw UsageError("--max-steps must be >= 1");
}

int cmd_eval(const EvalOpts& o) {
  check_eval_ranges(o.empty, o.max_steps, o.puzzles);
  nlms::NlmModel model = nlms::NlmModel::load(o.checkpoint);
  const nlms::BenchmarkRecord rec =
      nlms::evaluate_cell(model, o.empty, o.max_steps, o.puzzles, o.seed);

  std::ofstream file;
  std::ostream& os = open_output(o.out, file);
  os << "n_empty,max_steps,n_puzzles,success_rate,mean_nlm_seconds,"
        "mean_backtracking_seconds,reset_count_total"
     << kCrlf;
  os << rec.n_empty << ',' << rec.max_steps << ',' << rec.n_puzzles << ','
     << fmt_double(rec.success_rate) << ',' << fmt_double(rec.mean_nlm_seconds) << ','
     << fmt_double(rec.mean_backtracking_seconds) << ',' << rec.reset_count_total << kCrlf;
  os.flush();
  if (!os) throw std::runtime_error("failed writing output");
  return 0;
}

// ---------------------------------------------------------------------------
// bench

int cmd_bench(const EvalOpts& o) {
  check_eval_ranges(o.empty, o.max_steps, o.puzzles);
  nlms::NlmModel model = nlms::NlmModel::load(o.checkpoint);
  std::vector<nlms::PuzzleOutcome> rows;
  nlms::evaluate_cell(model, o.empty, o.max_steps, o.puzzles, o.seed, &rows);

  std::ofstream file;
  std::ostream& os = open_output(o.out, file);
  os << "puzzle_id,n_empty,nlm_seconds,backtracking_seconds,nlm_resets,solved" << kCrlf;
  for (const nlms::PuzzleOutcome& row : rows) {
    os << row.puzzle_id << ',' << row.n_empty << ',' << fmt_double(row.nlm_seconds) << ','
       << fmt_double(row.backtracking_seconds) << ',' << row.resets << ','
       << (row.solved ? 1 : 0) << kCrlf;
  }
  os.flush();
  if (!os) throw std::runtime_error("failed writing output");
  return 0;
}

// ---------------------------------------------------------------------------
// gen

struct GenOpts {
  std::string out = "puzzles.txt";
  std::uint64_t seed = 0;
  int count = 100;
  int empty = 10;
};

// puzzles.txt -> puzzles.solutions.txt; extensionless paths get ".solutions".
fs::path solutions_path(const fs::path& out) {
  if (!out.has_extension()) return fs::path(out.string() + ".solutions");
  fs::path sibling = out;
  const std::string ext = out.extension().string();
  sibling.replace_extension();
  sibling += ".solutions" + ext;
  return sibling;
}

int cmd_gen(const GenOpts& o) {
  if (o.count < 1) throw UsageError("--count must be >= 1");
  if (o.empty < 1 || o.empty > 81) throw UsageError("--empty must be in [1, 81]");

  nlms::Rng rng(o.seed);
  std::vector<nlms::Grid> puzzles, solutions;
  puzzles.reserve(static_cast<std::size_t>(o.count));
  solutions.reserve(static_cast<std::size_t>(o.count));
  for (int i = 0; i < o.count; ++i) {
    nlms::Grid solved = nlms::generate_solved(rng);
    puzzles.push_back(nlms::blank_cells(solved, o.empty, rng));
    solutions.push_back(solved);
  }

  const fs::path out(o.out);
  create_parent_dirs(out);
  const fs::path sols = solutions_path(out);
  nlms::save_dataset(out.string(), puzzles);
  nlms::save_dataset(sols.string(), solutions);
  std::cout << "wrote " << o.count << " puzzles to " << out.string() << " (solutions: "
            << sols.string() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural-logic-machine Sudoku: REINFORCE training, greedy evaluation, "
               "backtracking benchmarks, and puzzle generation"};
  app.require_subcommand(1);

  // train ---------------------------------------------------------------
  TrainOpts t;
  ConfigurableCommand train_cmd(app, "train", "train a policy with REINFORCE");
  train_cmd.bind("--seed", t.seed, "rng seed for weights, puzzles, and sampling");
  train_cmd.bind("--out", t.out, "output directory for checkpoints and the ndjson log");
  train_cmd.bind("--dataset", t.dataset, "file of solved grids to blank for training");
  train_cmd.bind_flag("--generate", t.use_generator,
                      "draw fresh solved grids from the seeded generator (default)");
  train_cmd.bind("--empty", t.fixed_empty,
                 "train at one fixed difficulty (overrides the curriculum range)");
  train_cmd.bind("--max-steps", t.cfg.max_steps_train, "episode step limit during training");
  train_cmd.bind_flag("--deterministic", t.cfg.deterministic,
                      "log wall_ms as 0 for byte-stable output");
  train_cmd.bind("--epochs", t.cfg.epochs, "training epochs");
  train_cmd.bind("--batch-size", t.cfg.batch_size, "episodes per policy update");
  train_cmd.bind("--lr", t.cfg.learning_rate, "Adam learning rate");
  train_cmd.bind("--gamma", t.cfg.gamma, "reward discount factor");
  train_cmd.bind("--batches-per-epoch", t.cfg.batches_per_epoch, "updates per epoch");
  train_cmd.bind("--curriculum-start", t.cfg.curriculum_start, "initial empty-cell count");
  train_cmd.bind("--curriculum-end", t.cfg.curriculum_end, "final empty-cell count");
  train_cmd.bind("--threshold", t.cfg.promotion_threshold,
                 "rolling solve rate required to promote");
  train_cmd.bind("--window", t.cfg.eval_window, "episodes in the rolling solve-rate window");
  train_cmd.bind("--hidden", t.cfg.nlm.hidden_channels, "hidden channels per arity stream");
  train_cmd.bind("--depth", t.cfg.nlm.depth, "number of logic layers");
  train_cmd.bind_flag("--stop-when-converged", t.cfg.stop_when_converged,
                      "stop once the final level clears the threshold");
  train_cmd.bind("--patience", t.cfg.converged_patience_batches,
                 "extra consecutive passing batches required before stopping");
  train_cmd.bind("--wall-budget", t.cfg.wall_budget_seconds,
                 "stop after this many seconds (0 = unlimited)");

  // eval ------------------------------------------------------------------
  EvalOpts e;
  ConfigurableCommand eval_cmd(app, "eval",
                               "greedy success rate of a checkpoint on fresh puzzles");
  eval_cmd.bind("--checkpoint", e.checkpoint, "model checkpoint to evaluate")->required();
  eval_cmd.bind("--out", e.out, "CSV output path (default: stdout)");
  eval_cmd.bind("--seed", e.seed, "rng seed for the evaluation puzzle stream");
  eval_cmd.bind("--empty", e.empty, "empty cells per puzzle");
  eval_cmd.bind("--max-steps", e.max_steps, "episode step limit");
  eval_cmd.bind("--puzzles", e.puzzles, "number of puzzles");
  eval_cmd.bind_flag("--deterministic", e.deterministic, "force sequential evaluation order");

  // bench -----------------------------------------------------------------
  EvalOpts b;
  b.empty = 10;
  ConfigurableCommand bench_cmd(app, "bench",
                                "per-puzzle NLM vs backtracking timings as CSV");
  bench_cmd.bind("--checkpoint", b.checkpoint, "model checkpoint to benchmark")->required();
  bench_cmd.bind("--out", b.out, "CSV output path (default: stdout)");
  bench_cmd.bind("--seed", b.seed, "rng seed for the benchmark puzzle stream");
  bench_cmd.bind("--empty", b.empty, "empty cells per puzzle");
  bench_cmd.bind("--max-steps", b.max_steps, "episode step limit");
  bench_cmd.bind("--puzzles", b.puzzles, "number of puzzles");
  bench_cmd.bind_flag("--deterministic", b.deterministic, "force sequential benchmark order");

  // gen -------------------------------------------------------------------
  GenOpts g;
  ConfigurableCommand gen_cmd(app, "gen", "generate puzzles plus a sibling solutions file");
  gen_cmd.bind("--count,--puzzles", g.count, "number of puzzles to generate");
  gen_cmd.bind("--empty", g.empty, "empty cells per puzzle");
  gen_cmd.bind("--seed", g.seed, "rng seed; the same seed reproduces the files byte for byte");
  gen_cmd.bind("--out", g.out, "puzzle file path; solutions go to a sibling file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;  // help/version exit cleanly; bad flags are usage errors
  }

  try {
    if (train_cmd.parsed()) {
      train_cmd.apply_config();
      return cmd_train(t);
    }
    if (eval_cmd.parsed()) {
      eval_cmd.apply_config();
      return cmd_eval(e);
    }
    if (bench_cmd.parsed()) {
      bench_cmd.apply_config();
      return cmd_bench(b);
    }
    if (gen_cmd.parsed()) {
      gen_cmd.apply_config();
      return cmd_gen(g);
    }
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;  // unreachable: require_subcommand guarantees one branch above
}
