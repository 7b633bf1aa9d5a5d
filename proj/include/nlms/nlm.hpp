#pragma once

// The Neural Logic Machine reasoner: four arity-typed streams per layer that
// exchange information through expand/reduce, a permutation-closure step
// before each affine map, and a ternary output head yielding one logit per
// (row, column, value) action.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <nlms/rng.hpp>
#include <nlms/sudoku.hpp>
#include <nlms/tensor.hpp>

namespace nlms {

struct NlmConfig {
  int depth = 4;
  int hidden_channels = 8;
  static constexpr int max_arity = 3;
  static constexpr int object_count = 9;

  void validate() const {
    if (depth < 2) {
      throw std::invalid_argument("NlmConfig: depth must be >= 2, got " + std::to_string(depth));
    }
    if (hidden_channels < 4) {
      throw std::invalid_argument("NlmConfig: hidden_channels must be >= 4, got " +
                                  std::to_string(hidden_channels));
    }
  }

  bool operator==(const NlmConfig&) const = default;
};

struct ArityInputs {
  Tensor nullary;  // [C0], undefined when absent
  Tensor unary;    // [9, C1], undefined when absent
  Tensor binary;   // [9, 9, 2]
  Tensor ternary;  // [9, 9, 9, 1]
};

// Channel widths flowing into and out of every layer. Before each arity-a
// affine map the stream is closed under object-dimension permutations (all a!
// orderings concatenated), so the affine input width is a! times the raw
// concat width of own + expanded(a-1) + reduced(a+1) signals.
struct LayerPlan {
  std::array<int, 4> raw_in{};  // concat width before permutation closure
  std::array<int, 4> in{};      // affine fan-in: raw_in * a!
  std::array<int, 4> out{};     // hidden_channels where raw_in > 0, else 0
};

inline constexpr std::array<int, 4> kArityFactorial{1, 1, 2, 6};

// Input widths per arity for the Sudoku task: no nullary/unary inputs, the
// stacked row/column predicate (2 channels), the submatrix predicate (1).
inline constexpr std::array<int, 4> kSudokuInputWidths{0, 0, 2, 1};

inline std::vector<LayerPlan> channel_plan(const NlmConfig& cfg,
                                           std::array<int, 4> input_widths = kSudokuInputWidths) {
  cfg.validate();
  std::array<int, 4> stream = input_widths;
  std::vector<LayerPlan> plans;
  plans.reserve(static_cast<std::size_t>(cfg.depth));
  for (int l = 0; l < cfg.depth; ++l) {
    LayerPlan p;
    for (int a = 0; a <= 3; ++a) {
      int raw = stream[static_cast<std::size_t>(a)];
      if (a > 0) raw += stream[static_cast<std::size_t>(a - 1)];
      if (a < 3) raw += 2 * stream[static_cast<std::size_t>(a + 1)];
      p.raw_in[static_cast<std::size_t>(a)] = raw;
      p.in[static_cast<std::size_t>(a)] = raw * kArityFactorial[static_cast<std::size_t>(a)];
      p.out[static_cast<std::size_t>(a)] = raw > 0 ? cfg.hidden_channels : 0;
    }
    stream = p.out;
    plans.push_back(p);
  }
  return plans;
}

// Concatenates all permutations of the object dimensions along the channel
// axis, in lexicographic permutation order starting from the identity.
inline Tensor permutation_closure(const Tensor& t) {
  const int k = object_dims(t);
  if (k < 2) return t;
  std::vector<int> perm(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::vector<Tensor> views;
  views.push_back(t);
  while (std::next_permutation(perm.begin(), perm.end())) {
    views.push_back(permute_object_dims(t, perm));
  }
  std::vector<const Tensor*> parts;
  parts.reserve(views.size());
  for (const Tensor& v : views) parts.push_back(&v);
  return concat_channels(parts);
}

class NlmModel {
 public:
  struct Unit {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
  };

  NlmModel(NlmConfig cfg, std::uint64_t seed) : config_(cfg), seed_(seed) {
    cfg.validate();
    plan_ = channel_plan(cfg);
    graph_ = std::make_unique<Graph>();
    Rng rng(seed);
    layers_.resize(plan_.size());
    for (std::size_t l = 0; l < plan_.size(); ++l) {
      for (int a = 0; a <= 3; ++a) {
        const int in = plan_[l].in[static_cast<std::size_t>(a)];
        const int out = plan_[l].out[static_cast<std::size_t>(a)];
        if (in == 0) continue;
        layers_[l][static_cast<std::size_t>(a)] = make_unit(in, out, rng);
      }
    }
    head_ = make_unit(cfg.hidden_channels, 1, rng);
  }

  NlmModel(const NlmModel&) = delete;
  NlmModel& operator=(const NlmModel&) = delete;
  NlmModel(NlmModel&&) = default;
  NlmModel& operator=(NlmModel&&) = default;

  const NlmConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  Graph& graph() { return *graph_; }
  const std::vector<LayerPlan>& plan() const { return plan_; }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps;
    for (auto& layer : layers_) {
      for (auto& unit : layer) {
        if (unit.w.defined()) {
          ps.push_back(&unit.w);
          ps.push_back(&unit.b);
        }
      }
    }
    ps.push_back(&head_.w);
    ps.push_back(&head_.b);
    return ps;
  }

  Tensor forward(const PredicateSet& preds) {
    return forward_streams(preds.stacked_binary, preds.ternary);
  }

  Tensor forward(const ArityInputs& inputs) {
    if (inputs.nullary.defined() || inputs.unary.defined()) {
      throw std::invalid_argument("forward: nullary and unary inputs must be absent");
    }
    return forward_streams(inputs.binary, inputs.ternary);
  }

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["format_version"] = 1;
    doc["config"] = {{"depth", config_.depth},
                     {"hidden_channels", config_.hidden_channels},
                     {"max_arity", NlmConfig::max_arity},
                     {"object_count", NlmConfig::object_count}};
    doc["seed"] = seed_;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : layers_) {
      nlohmann::json units = nlohmann::json::array();
      for (int a = 0; a <= 3; ++a) {
        const Unit& u = layer[static_cast<std::size_t>(a)];
        if (!u.w.defined()) continue;
        units.push_back(unit_json(a, u));
      }
      layers.push_back({{"units", units}});
    }
    doc["layers"] = layers;
    doc["head"] = unit_json(3, head_);
    return doc;
  }

  static NlmModel from_json(const nlohmann::json& doc) {
    if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
      throw std::runtime_error("checkpoint: unsupported or missing format_version");
    }
    NlmConfig cfg;
    const auto& jc = doc.at("config");
    cfg.depth = jc.at("depth").get<int>();
    cfg.hidden_channels = jc.at("hidden_channels").get<int>();
    if (jc.at("max_arity").get<int>() != NlmConfig::max_arity ||
        jc.at("object_count").get<int>() != NlmConfig::object_count) {
      throw std::runtime_error("checkpoint: max_arity/object_count mismatch");
    }
    NlmModel model(cfg, doc.at("seed").get<std::uint64_t>());
    const auto& jlayers = doc.at("layers");
    if (jlayers.size() != model.plan_.size()) {
      throw std::runtime_error("checkpoint: expected " + std::to_string(model.plan_.size()) +
                               " layers, found " + std::to_string(jlayers.size()));
    }
    for (std::size_t l = 0; l < model.plan_.size(); ++l) {
      const auto& junits = jlayers[l].at("units");
      std::array<bool, 4> seen{};
      for (const auto& ju : junits) {
        const int a = ju.at("arity").get<int>();
        if (a < 0 || a > 3) throw std::runtime_error("checkpoint: arity out of range");
        const int in = model.plan_[l].in[static_cast<std::size_t>(a)];
        const int out = model.plan_[l].out[static_cast<std::size_t>(a)];
        if (in == 0) {
          throw std::runtime_error("checkpoint: layer " + std::to_string(l) + " arity " +
                                   std::to_string(a) + " should have no unit");
        }
        seen[static_cast<std::size_t>(a)] = true;
        load_unit(ju, in, out, model.layers_[l][static_cast<std::size_t>(a)], l, a);
      }
      for (int a = 0; a <= 3; ++a) {
        if ((model.plan_[l].in[static_cast<std::size_t>(a)] > 0) !=
            seen[static_cast<std::size_t>(a)]) {
          throw std::runtime_error("checkpoint: layer " + std::to_string(l) +
                                   " unit set violates channel accounting");
        }
      }
    }
    load_unit(doc.at("head"), cfg.hidden_channels, 1, model.head_, model.plan_.size(), 3);
    return model;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out << to_json().dump(2) << '\n';
  }

  static NlmModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("checkpoint parse error: " + std::string(e.what()));
    }
    return from_json(doc);
  }

 private:
  Unit make_unit(int in, int out, Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(static_cast<std::size_t>(in) * static_cast<std::size_t>(out));
    for (double& v : w) v = rng.uniform(-scale, scale);
    Unit u;
    u.w = Tensor::leaf({in, out}, std::move(w), *graph_);
    u.b = Tensor::leaf({out}, std::vector<double>(static_cast<std::size_t>(out), 0.0), *graph_);
    return u;
  }

  static nlohmann::json unit_json(int arity, const Unit& u) {
    const auto& ws = *u.w.storage();
    const auto& bs = *u.b.storage();
    return {{"arity", arity},
            {"in", u.w.shape()[0]},
            {"out", u.w.shape()[1]},
            {"weight", ws},
            {"bias", bs}};
  }

  static void load_unit(const nlohmann::json& ju, int in, int out, Unit& unit, std::size_t layer,
                        int arity) {
    const std::string where = "layer " + std::to_string(layer) + " arity " + std::to_string(arity);
    if (ju.at("in").get<int>() != in || ju.at("out").get<int>() != out) {
      throw std::runtime_error("checkpoint: " + where + " expects shape [" + std::to_string(in) +
                               "," + std::to_string(out) + "]");
    }
    auto w = ju.at("weight").get<std::vector<double>>();
    auto b = ju.at("bias").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != in * out || static_cast<int>(b.size()) != out) {
      throw std::runtime_error("checkpoint: " + where + " array length mismatch");
    }
    std::copy(w.begin(), w.end(), unit.w.storage()->begin());
    std::copy(b.begin(), b.end(), unit.b.storage()->begin());
  }

  Tensor forward_streams(const Tensor& binary, const Tensor& ternary) {
    if (binary.shape() != Shape{9, 9, 2}) {
      throw std::invalid_argument("forward: binary input must be [9,9,2], got " +
                                  shape_str(binary.shape()));
    }
    if (ternary.shape() != Shape{9, 9, 9, 1}) {
      throw std::invalid_argument("forward: ternary input must be [9,9,9,1], got " +
                                  shape_str(ternary.shape()));
    }
    std::array<Tensor, 4> prev;
    prev[2] = binary;
    prev[3] = ternary;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::array<Tensor, 4> next;
      for (int a = 0; a <= 3; ++a) {
        if (plan_[l].raw_in[static_cast<std::size_t>(a)] == 0) continue;
        std::vector<Tensor> parts;
        if (prev[static_cast<std::size_t>(a)].defined()) {
          parts.push_back(prev[static_cast<std::size_t>(a)]);
        }
        if (a > 0 && prev[static_cast<std::size_t>(a - 1)].defined()) {
          parts.push_back(expand_arity(prev[static_cast<std::size_t>(a - 1)]));
        }
        if (a < 3 && prev[static_cast<std::size_t>(a + 1)].defined()) {
          parts.push_back(reduce_arity(prev[static_cast<std::size_t>(a + 1)]));
        }
        Tensor x;
        if (parts.size() == 1) {
          x = parts[0];
        } else {
          std::vector<const Tensor*> ptrs;
          ptrs.reserve(parts.size());
          for (const Tensor& p : parts) ptrs.push_back(&p);
          x = concat_channels(ptrs);
        }
        x = permutation_closure(x);
        const Unit& u = layers_[l][static_cast<std::size_t>(a)];
        next[static_cast<std::size_t>(a)] = sigmoid(matmul_lastdim(x, u.w, u.b));
      }
      prev = next;
    }
    Tensor logits = matmul_lastdim(prev[3], head_.w, head_.b);  // [9,9,9,1]
    return reshape(logits, {9, 9, 9});
  }

  NlmConfig config_;
  std::uint64_t seed_ = 0;
  std::unique_ptr<Graph> graph_;
  std::vector<std::array<Unit, 4>> layers_;
  Unit head_;
  std::vector<LayerPlan> plan_;
};

// --- policy-level helpers ---------------------------------------------------

inline std::vector<std::uint8_t> action_mask(const std::array<std::uint8_t, 81>& empty_mask) {
  std::vector<std::uint8_t> mask(729, 0);
  for (int cell = 0; cell < 81; ++cell) {
    if (!empty_mask[static_cast<std::size_t>(cell)]) continue;
    for (int x = 0; x < 9; ++x) mask[static_cast<std::size_t>(cell * 9 + x)] = 1;
  }
  return mask;
}

inline long long action_index(int r, int c, int x) { return (r * 9 + c) * 9 + (x - 1); }

// Differentiable log pi(a|s): softmax over the logits of empty cells only.
inline Tensor log_prob(const Tensor& logits, const std::array<std::uint8_t, 81>& empty_mask,
                       int r, int c, int x) {
  if (r < 0 || r > 8 || c < 0 || c > 8 || x < 1 || x > 9) {
    throw std::invalid_argument("log_prob: action out of range");
  }
  if (!empty_mask[static_cast<std::size_t>(r * 9 + c)]) {
    throw std::invalid_argument("log_prob: action targets a filled cell (r=" + std::to_string(r) +
                                ", c=" + std::to_string(c) + ")");
  }
  return masked_log_softmax_pick(logits, action_mask(empty_mask), action_index(r, c, x));
}

// Plain (non-recorded) masked softmax over all 729 actions; masked-out
// actions get probability exactly 0.
inline std::vector<double> action_probabilities(const Tensor& logits,
                                                const std::array<std::uint8_t, 81>& empty_mask) {
  if (logits.size() != 729) {
    throw std::invalid_argument("action_probabilities: expected 729 logits, got " +
                                std::to_string(logits.size()));
  }
  std::vector<double> probs(729, 0.0);
  const double* x = logits.data();
  double m = -std::numeric_limits<double>::infinity();
  for (int cell = 0; cell < 81; ++cell) {
    if (!empty_mask[static_cast<std::size_t>(cell)]) continue;
    for (int i = cell * 9; i < cell * 9 + 9; ++i) m = std::max(m, x[i]);
  }
  if (m == -std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument("action_probabilities: no empty cells");
  }
  double s = 0.0;
  for (int cell = 0; cell < 81; ++cell) {
    if (!empty_mask[static_cast<std::size_t>(cell)]) continue;
    for (int i = cell * 9; i < cell * 9 + 9; ++i) {
      probs[static_cast<std::size_t>(i)] = std::exp(x[i] - m);
      s += probs[static_cast<std::size_t>(i)];
    }
  }
  for (double& p : probs) p /= s;
  return probs;
}

// Deterministic argmax policy; first index wins ties.
inline long long greedy_action(const Tensor& logits,
                               const std::array<std::uint8_t, 81>& empty_mask) {
  const double* x = logits.data();
  long long best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int cell = 0; cell < 81; ++cell) {
    if (!empty_mask[static_cast<std::size_t>(cell)]) continue;
    for (int i = cell * 9; i < cell * 9 + 9; ++i) {
      if (x[i] > best_v) {
        best_v = x[i];
        best = i;
      }
    }
  }
  if (best < 0) throw std::invalid_argument("greedy_action: no empty cells");
  return best;
}

// Inverse-CDF sample from the masked action distribution.
inline long long sample_action(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  long long last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = static_cast<long long>(i);
    if (u < acc) return last;
  }
  return last;  // numerical slack: u landed past the accumulated total
}

}  // namespace nlms
