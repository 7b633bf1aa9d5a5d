#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Dense row-major tensors of doubles with a reverse-mode tape, sized for the
// logic-machine forward/backward pass. Ops record onto a Graph when any input
// requires gradients; leaf tensors (parameters) keep persistent gradient
// buffers that accumulate across backward() calls until zeroed, while tape
// gradients are scratch reset on every backward().

namespace nlms {

using Shape = std::vector<int>;

inline long long numel(const Shape& shape) {
  long long n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Graph;
struct TensorAccess;

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(
            static_cast<std::size_t>(numel(shape_)), fill)) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(data))) {
    check_shape();
    if (static_cast<long long>(data_->size()) != numel(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_->size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  // Trainable leaf registered on a graph; defined after Graph.
  static Tensor leaf(Shape shape, std::vector<double> data, Graph& g);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  long long size() const { return data_ ? static_cast<long long>(data_->size()) : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

  double at(std::initializer_list<int> idx) const { return (*data_)[flat_index(idx)]; }
  double item() const { return (*data_)[0]; }

  bool requires_grad() const { return requires_grad_; }
  Graph* graph() const { return graph_; }
  int node() const { return node_; }

  // Gradient after backward(); empty span if this tensor never wanted one.
  std::span<const double> grad() const;
  void zero_grad();

  // Value copy detached from any graph. Shares storage; ops never mutate
  // their inputs, only the optimizer writes leaves it owns.
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  std::size_t flat_index(std::initializer_list<int> idx) const {
    std::size_t f = 0;
    std::size_t axis = 0;
    for (int i : idx) {
      f = f * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
      ++axis;
    }
    return f;
  }

 private:
  friend struct TensorAccess;

  void check_shape() const {
    for (int d : shape_) {
      if (d < 0) {
        throw std::invalid_argument("tensor shape must be non-negative: " + shape_str(shape_));
      }
    }
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  bool requires_grad_ = false;
  Graph* graph_ = nullptr;
  int node_ = -1;  // leaves: <= -2; tape nodes: >= 0; -1: not recorded
  std::uint64_t generation_ = 0;
};

// Ordered record of performed operations. Leaves live in a stable id space
// (ids <= -2) and survive clear_tape(); tape nodes (ids >= 0) are appended in
// topological order and hold a backward closure over the values they need.
class Graph {
 public:
  struct TapeNode {
    const char* kind;
    std::vector<int> inputs;  // node ids; -1 marks a constant input
    int output;               // own id
    std::function<void(Graph&)> backward;
  };

  static constexpr int kNone = -1;
  static bool is_leaf(int id) { return id <= -2; }
  static std::size_t leaf_index(int id) { return static_cast<std::size_t>(-id - 2); }

  int add_leaf(std::size_t len) {
    leaf_grads_.emplace_back(len, 0.0);
    return -static_cast<int>(leaf_grads_.size()) - 1;
  }

  int next_node_id() const { return static_cast<int>(tape_.size()); }

  int add_node(const char* kind, std::vector<int> inputs, std::size_t out_len,
               std::function<void(Graph&)> backward) {
    const int id = next_node_id();
    tape_.push_back(TapeNode{kind, std::move(inputs), id, std::move(backward)});
    tape_grad_lens_.push_back(out_len);
    tape_grads_.emplace_back();  // allocated lazily by backward_from
    return id;
  }

  void backward_from(int node) {
    if (node < 0 || node >= static_cast<int>(tape_.size())) {
      throw std::logic_error("backward: loss is not a recorded tape node");
    }
    std::vector<char> reachable(static_cast<std::size_t>(node) + 1, 0);
    reachable[static_cast<std::size_t>(node)] = 1;
    for (int i = node; i >= 0; --i) {
      if (!reachable[static_cast<std::size_t>(i)]) continue;
      for (int in : tape_[static_cast<std::size_t>(i)].inputs) {
        if (in >= 0) reachable[static_cast<std::size_t>(in)] = 1;
      }
    }
    for (int i = 0; i <= node; ++i) {
      if (!reachable[static_cast<std::size_t>(i)]) continue;
      tape_grads_[static_cast<std::size_t>(i)].assign(tape_grad_lens_[static_cast<std::size_t>(i)], 0.0);
    }
    tape_grads_[static_cast<std::size_t>(node)][0] = 1.0;
    for (int i = node; i >= 0; --i) {
      if (reachable[static_cast<std::size_t>(i)]) {
        tape_[static_cast<std::size_t>(i)].backward(*this);
      }
    }
  }

  std::vector<double>& grad_buf(int id) {
    return is_leaf(id) ? leaf_grads_[leaf_index(id)] : tape_grads_[static_cast<std::size_t>(id)];
  }

  // Drops recorded operations; leaves and their gradients persist.
  void clear_tape() {
    tape_.clear();
    tape_grads_.clear();
    tape_grad_lens_.clear();
    ++generation_;
  }

  std::size_t tape_size() const { return tape_.size(); }
  std::size_t leaf_count() const { return leaf_grads_.size(); }
  std::uint64_t generation() const { return generation_; }
  const TapeNode& tape_node(std::size_t i) const { return tape_[i]; }

 private:
  std::vector<TapeNode> tape_;
  std::vector<std::vector<double>> tape_grads_;
  std::vector<std::size_t> tape_grad_lens_;
  std::vector<std::vector<double>> leaf_grads_;
  std::uint64_t generation_ = 0;
};

struct TensorAccess {
  static void record(Tensor& t, Graph* g, int node) {
    t.requires_grad_ = true;
    t.graph_ = g;
    t.node_ = node;
    t.generation_ = g->generation();
  }
  static std::uint64_t generation(const Tensor& t) { return t.generation_; }
  static Tensor alias(const Tensor& src, Shape new_shape) {
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = src.data_;
    return t;
  }
};

inline Tensor Tensor::leaf(Shape shape, std::vector<double> data, Graph& g) {
  Tensor t(std::move(shape), std::move(data));
  TensorAccess::record(t, &g, g.add_leaf(t.data_->size()));
  return t;
}

inline std::span<const double> Tensor::grad() const {
  if (!requires_grad_ || graph_ == nullptr) return {};
  if (!Graph::is_leaf(node_) && generation_ != graph_->generation()) {
    throw std::logic_error("grad: tensor's tape entry was cleared");
  }
  const auto& g = graph_->grad_buf(node_);
  return {g.data(), g.size()};
}

inline void Tensor::zero_grad() {
  if (!requires_grad_ || graph_ == nullptr) return;
  auto& g = graph_->grad_buf(node_);
  std::fill(g.begin(), g.end(), 0.0);
}

inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (loss.graph() == nullptr || loss.node() < 0) {
    throw std::logic_error("backward: loss is not on a graph");
  }
  if (TensorAccess::generation(loss) != loss.graph()->generation()) {
    throw std::logic_error("backward: loss tape entry was cleared");
  }
  loss.graph()->backward_from(loss.node());
}

namespace detail {

inline Graph* common_graph(const std::vector<const Tensor*>& inputs) {
  Graph* g = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->requires_grad()) continue;
    if (g == nullptr) {
      g = t->graph();
    } else if (g != t->graph()) {
      throw std::logic_error("op inputs recorded on different graphs");
    }
  }
  return g;
}

// Records out = op(inputs) when any input wants gradients. The factory
// receives (input node ids, own node id) and returns the backward closure.
template <typename BackwardFactory>
Tensor finish_op(const char* kind, Tensor out, const std::vector<const Tensor*>& inputs,
                 BackwardFactory&& make_backward) {
  Graph* g = common_graph(inputs);
  if (g == nullptr) return out;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor* t : inputs) ids.push_back(t->requires_grad() ? t->node() : Graph::kNone);
  const int out_id = g->next_node_id();
  auto fn = make_backward(ids, out_id);
  g->add_node(kind, std::move(ids), static_cast<std::size_t>(out.size()), std::move(fn));
  TensorAccess::record(out, g, out_id);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

// Affine map along the last axis: out[..., j] = sum_k in[..., k]*w[k][j] + b[j].
inline Tensor matmul_lastdim(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() < 1 || weight.rank() != 2 || bias.rank() != 1 ||
      input.shape().back() != weight.shape()[0] || bias.shape()[0] != weight.shape()[1]) {
    throw std::invalid_argument(
        "matmul_lastdim: incompatible shapes input=" + shape_str(input.shape()) +
        " weight=" + shape_str(weight.shape()) + " bias=" + shape_str(bias.shape()));
  }
  const int d_in = weight.shape()[0];
  const int d_out = weight.shape()[1];
  const long long rows = input.size() / d_in;

  Shape out_shape(input.shape().begin(), input.shape().end() - 1);
  out_shape.push_back(d_out);
  Tensor out(std::move(out_shape));

  {
    const double* x = input.data();
    const double* w = weight.data();
    const double* b = bias.data();
    double* y = out.data();
    for (long long r = 0; r < rows; ++r) {
      const double* xr = x + r * d_in;
      double* yr = y + r * d_out;
      for (int j = 0; j < d_out; ++j) yr[j] = b[j];
      for (int k = 0; k < d_in; ++k) {
        const double xv = xr[k];
        if (xv == 0.0) continue;
        const double* wk = w + static_cast<long long>(k) * d_out;
        for (int j = 0; j < d_out; ++j) yr[j] += xv * wk[j];
      }
    }
  }

  return detail::finish_op(
      "matmul_lastdim", std::move(out), {&input, &weight, &bias},
      [xs = input.storage(), ws = weight.storage(), d_in, d_out,
       rows](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [xs, ws, xid = ids[0], wid = ids[1], bid = ids[2], out_id, d_in, d_out,
                rows](Graph& g) {
          const std::vector<double>& go = g.grad_buf(out_id);
          const double* x = xs->data();
          const double* w = ws->data();
          if (xid != Graph::kNone) {
            double* gx = g.grad_buf(xid).data();
            for (long long r = 0; r < rows; ++r) {
              const double* gor = go.data() + r * d_out;
              double* gxr = gx + r * d_in;
              for (int k = 0; k < d_in; ++k) {
                const double* wk = w + static_cast<long long>(k) * d_out;
                double s = 0.0;
                for (int j = 0; j < d_out; ++j) s += gor[j] * wk[j];
                gxr[k] += s;
              }
            }
          }
          if (wid != Graph::kNone) {
            double* gw = g.grad_buf(wid).data();
            for (long long r = 0; r < rows; ++r) {
              const double* gor = go.data() + r * d_out;
              const double* xr = x + r * d_in;
              for (int k = 0; k < d_in; ++k) {
                const double xv = xr[k];
                if (xv == 0.0) continue;
                double* gwk = gw + static_cast<long long>(k) * d_out;
                for (int j = 0; j < d_out; ++j) gwk[j] += xv * gor[j];
              }
            }
          }
          if (bid != Graph::kNone) {
            double* gb = g.grad_buf(bid).data();
            for (long long r = 0; r < rows; ++r) {
              const double* gor = go.data() + r * d_out;
              for (int j = 0; j < d_out; ++j) gb[j] += gor[j];
            }
          }
        };
      });
}

// Elementwise logistic function.
inline Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  const double* x = input.data();
  double* y = out.data();
  const long long n = input.size();
  for (long long i = 0; i < n; ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  auto ys = out.storage();
  return detail::finish_op(
      "sigmoid", std::move(out), {&input},
      [ys, n](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [ys, xid = ids[0], out_id, n](Graph& g) {
          if (xid == Graph::kNone) return;
          const std::vector<double>& go = g.grad_buf(out_id);
          double* gx = g.grad_buf(xid).data();
          const double* yv = ys->data();
          for (long long i = 0; i < n; ++i) gx[i] += go[i] * yv[i] * (1.0 - yv[i]);
        };
      });
}

// Softmax over the whole (flattened) tensor; output has the input's shape.
inline Tensor softmax_flat(const Tensor& input) {
  const long long n = input.size();
  if (n == 0) throw std::invalid_argument("softmax_flat: empty tensor");
  Tensor out(input.shape());
  {
    const double* x = input.data();
    double* p = out.data();
    double m = x[0];
    for (long long i = 1; i < n; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (long long i = 0; i < n; ++i) {
      p[i] = std::exp(x[i] - m);
      s += p[i];
    }
    const double inv = 1.0 / s;
    for (long long i = 0; i < n; ++i) p[i] *= inv;
  }
  auto ps = out.storage();
  return detail::finish_op(
      "softmax_flat", std::move(out), {&input},
      [ps, n](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [ps, xid = ids[0], out_id, n](Graph& g) {
          if (xid == Graph::kNone) return;
          const std::vector<double>& go = g.grad_buf(out_id);
          double* gx = g.grad_buf(xid).data();
          const double* p = ps->data();
          double dot = 0.0;
          for (long long i = 0; i < n; ++i) dot += go[i] * p[i];
          for (long long i = 0; i < n; ++i) gx[i] += p[i] * (go[i] - dot);
        };
      });
}

// Concatenation of any number of tensors along the channel (last) axis.
inline Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor& first = *parts.front();
  Shape lead(first.shape().begin(), first.shape().end() - 1);
  int total_c = 0;
  std::vector<int> widths;
  widths.reserve(parts.size());
  for (const Tensor* t : parts) {
    if (t->rank() != first.rank() ||
        !std::equal(lead.begin(), lead.end(), t->shape().begin())) {
      throw std::invalid_argument("concat: leading shapes differ, " + shape_str(first.shape()) +
                                  " vs " + shape_str(t->shape()));
    }
    widths.push_back(t->shape().back());
    total_c += t->shape().back();
  }
  const long long rows = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total_c);
  Tensor out(std::move(out_shape));
  {
    double* y = out.data();
    for (long long r = 0; r < rows; ++r) {
      double* yr = y + r * total_c;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        const int c = widths[p];
        std::memcpy(yr, parts[p]->data() + r * c, static_cast<std::size_t>(c) * sizeof(double));
        yr += c;
      }
    }
  }
  return detail::finish_op(
      "concat_lastdim", std::move(out), parts,
      [widths, total_c, rows](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [widths, total_c, rows, ids, out_id](Graph& g) {
          const std::vector<double>& go = g.grad_buf(out_id);
          int offset = 0;
          for (std::size_t p = 0; p < ids.size(); ++p) {
            const int c = widths[p];
            if (ids[p] != Graph::kNone) {
              double* gx = g.grad_buf(ids[p]).data();
              for (long long r = 0; r < rows; ++r) {
                const double* gor = go.data() + r * total_c + offset;
                double* gxr = gx + r * c;
                for (int j = 0; j < c; ++j) gxr[j] += gor[j];
              }
            }
            offset += c;
          }
        };
      });
}

inline Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  return concat_channels({&a, &b});
}

// Number of object dimensions under the "last axis is channels" convention.
inline int object_dims(const Tensor& t) { return t.rank() - 1; }

constexpr int kObjectCount = 9;
constexpr int kMaxArity = 3;

// Broadcast along a new trailing object dimension (inserted before the
// channel axis): out[..., j, c] = in[..., c] for every j.
inline Tensor expand_arity(const Tensor& input) {
  const int k = object_dims(input);
  if (k < 0) throw std::invalid_argument("expand_arity: tensor has no channel axis");
  if (k >= kMaxArity) {
    throw std::invalid_argument("expand_arity: arity limit, input already has " +
                                std::to_string(k) + " object dims " + shape_str(input.shape()));
  }
  const int c = input.shape().back();
  const long long rows = input.size() / c;
  Shape out_shape(input.shape().begin(), input.shape().end() - 1);
  out_shape.push_back(kObjectCount);
  out_shape.push_back(c);
  Tensor out(std::move(out_shape));
  {
    const double* x = input.data();
    double* y = out.data();
    for (long long r = 0; r < rows; ++r) {
      const double* xr = x + r * c;
      for (int j = 0; j < kObjectCount; ++j) {
        std::memcpy(y, xr, static_cast<std::size_t>(c) * sizeof(double));
        y += c;
      }
    }
  }
  return detail::finish_op(
      "expand_arity", std::move(out), {&input},
      [rows, c](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [xid = ids[0], out_id, rows, c](Graph& g) {
          if (xid == Graph::kNone) return;
          const double* go = g.grad_buf(out_id).data();
          double* gx = g.grad_buf(xid).data();
          for (long long r = 0; r < rows; ++r) {
            double* gxr = gx + r * c;
            const double* gor = go + r * kObjectCount * c;
            for (int j = 0; j < kObjectCount; ++j) {
              for (int cc = 0; cc < c; ++cc) gxr[cc] += gor[j * c + cc];
            }
          }
        };
      });
}

// Quantify out the last object dimension: channels double, first half is the
// max (existential), second half the min (universal) over that dimension.
// Gradient flows to the first extremal index on ties.
inline Tensor reduce_arity(const Tensor& input) {
  const int k = object_dims(input);
  if (k < 1) {
    throw std::invalid_argument("reduce_arity: no object dims to reduce in " +
                                shape_str(input.shape()));
  }
  const int c = input.shape().back();
  const int n = input.shape()[static_cast<std::size_t>(k - 1)];
  const long long blocks = input.size() / (static_cast<long long>(n) * c);
  Shape out_shape(input.shape().begin(), input.shape().end() - 2);
  out_shape.push_back(2 * c);
  Tensor out(std::move(out_shape));
  {
    const double* x = input.data();
    double* y = out.data();
    for (long long b = 0; b < blocks; ++b) {
      const double* xb = x + b * n * c;
      double* yb = y + b * 2 * c;
      for (int cc = 0; cc < c; ++cc) {
        double mx = xb[cc], mn = xb[cc];
        for (int j = 1; j < n; ++j) {
          const double v = xb[j * c + cc];
          if (v > mx) mx = v;
          if (v < mn) mn = v;
        }
        yb[cc] = mx;
        yb[c + cc] = mn;
      }
    }
  }
  return detail::finish_op(
      "reduce_arity", std::move(out), {&input},
      [xs = input.storage(), blocks, n,
       c](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [xs, xid = ids[0], out_id, blocks, n, c](Graph& g) {
          if (xid == Graph::kNone) return;
          const double* go = g.grad_buf(out_id).data();
          double* gx = g.grad_buf(xid).data();
          const double* x = xs->data();
          for (long long b = 0; b < blocks; ++b) {
            const double* xb = x + b * n * c;
            const double* gob = go + b * 2 * c;
            double* gxb = gx + b * n * c;
            for (int cc = 0; cc < c; ++cc) {
              int jmax = 0, jmin = 0;
              double mx = xb[cc], mn = xb[cc];
              for (int j = 1; j < n; ++j) {
                const double v = xb[j * c + cc];
                if (v > mx) { mx = v; jmax = j; }
                if (v < mn) { mn = v; jmin = j; }
              }
              gxb[jmax * c + cc] += gob[cc];
              gxb[jmin * c + cc] += gob[c + cc];
            }
          }
        };
      });
}

// Reorder object dimensions; perm[i] names the input axis that becomes output
// axis i. The channel axis stays last.
inline Tensor permute_object_dims(const Tensor& input, const std::vector<int>& perm) {
  const int k = object_dims(input);
  if (static_cast<int>(perm.size()) != k) {
    throw std::invalid_argument("permute_object_dims: perm size " +
                                std::to_string(perm.size()) + " != object dims " +
                                std::to_string(k));
  }
  {
    std::vector<char> seen(static_cast<std::size_t>(k), 0);
    for (int p : perm) {
      if (p < 0 || p >= k || seen[static_cast<std::size_t>(p)]) {
        throw std::invalid_argument("permute_object_dims: invalid permutation");
      }
      seen[static_cast<std::size_t>(p)] = 1;
    }
  }
  const int c = input.shape().back();
  Shape out_shape;
  for (int i = 0; i < k; ++i) out_shape.push_back(input.shape()[static_cast<std::size_t>(perm[i])]);
  out_shape.push_back(c);

  // out object strides measured in channel runs
  std::vector<long long> in_stride(static_cast<std::size_t>(k), 1);
  for (int i = k - 2; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] =
        in_stride[static_cast<std::size_t>(i + 1)] * input.shape()[static_cast<std::size_t>(i + 1)];
  }
  // for each output block index, the source block index
  const long long blocks = input.size() / c;
  std::vector<long long> src(static_cast<std::size_t>(blocks));
  {
    std::vector<int> idx(static_cast<std::size_t>(k), 0);
    for (long long b = 0; b < blocks; ++b) {
      long long s = 0;
      for (int i = 0; i < k; ++i) {
        s += static_cast<long long>(idx[static_cast<std::size_t>(i)]) *
             in_stride[static_cast<std::size_t>(perm[i])];
      }
      src[static_cast<std::size_t>(b)] = s;
      for (int i = k - 1; i >= 0; --i) {
        if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
        idx[static_cast<std::size_t>(i)] = 0;
      }
    }
  }

  Tensor out(std::move(out_shape));
  {
    const double* x = input.data();
    double* y = out.data();
    for (long long b = 0; b < blocks; ++b) {
      std::memcpy(y + b * c, x + src[static_cast<std::size_t>(b)] * c,
                  static_cast<std::size_t>(c) * sizeof(double));
    }
  }
  return detail::finish_op(
      "permute_object_dims", std::move(out), {&input},
      [src = std::move(src), blocks,
       c](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [src, xid = ids[0], out_id, blocks, c](Graph& g) {
          if (xid == Graph::kNone) return;
          const double* go = g.grad_buf(out_id).data();
          double* gx = g.grad_buf(xid).data();
          for (long long b = 0; b < blocks; ++b) {
            double* gxb = gx + src[static_cast<std::size_t>(b)] * c;
            const double* gob = go + b * c;
            for (int cc = 0; cc < c; ++cc) gxb[cc] += gob[cc];
          }
        };
      });
}

// Same data, new shape; storage is aliased, gradients pass through.
inline Tensor reshape(const Tensor& input, Shape new_shape) {
  if (numel(new_shape) != input.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(input.shape()) + " as " +
                                shape_str(new_shape));
  }
  Tensor out = TensorAccess::alias(input, std::move(new_shape));
  const long long n = input.size();
  return detail::finish_op(
      "reshape", std::move(out), {&input},
      [n](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [xid = ids[0], out_id, n](Graph& g) {
          if (xid == Graph::kNone) return;
          const double* go = g.grad_buf(out_id).data();
          double* gx = g.grad_buf(xid).data();
          for (long long i = 0; i < n; ++i) gx[i] += go[i];
        };
      });
}

// Log-probability of one element under a softmax restricted to unmasked
// elements; masked-out elements get probability exactly zero.
inline Tensor masked_log_softmax_pick(const Tensor& logits, const std::vector<std::uint8_t>& mask,
                                      long long pick) {
  if (static_cast<long long>(mask.size()) != logits.size()) {
    throw std::invalid_argument("masked_log_softmax_pick: mask length " +
                                std::to_string(mask.size()) + " != logit count " +
                                std::to_string(logits.size()));
  }
  if (pick < 0 || pick >= logits.size() || !mask[static_cast<std::size_t>(pick)]) {
    throw std::invalid_argument("masked_log_softmax_pick: picked element is masked out");
  }
  const long long n = logits.size();
  const double* x = logits.data();
  double m = -std::numeric_limits<double>::infinity();
  for (long long i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)] && x[i] > m) m = x[i];
  }
  double s = 0.0;
  for (long long i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)]) s += std::exp(x[i] - m);
  }
  const double lse = m + std::log(s);
  Tensor out(Shape{}, std::vector<double>{x[pick] - lse});
  return detail::finish_op(
      "masked_log_softmax_pick", std::move(out), {&logits},
      [xs = logits.storage(), mask, pick, lse,
       n](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [xs, mask, pick, lse, n, xid = ids[0], out_id](Graph& g) {
          if (xid == Graph::kNone) return;
          const double go = g.grad_buf(out_id)[0];
          double* gx = g.grad_buf(xid).data();
          const double* x = xs->data();
          for (long long i = 0; i < n; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            const double p = std::exp(x[i] - lse);
            gx[i] += go * ((i == pick ? 1.0 : 0.0) - p);
          }
        };
      });
}

// Dot product with a constant coefficient vector, collapsing to a scalar.
inline Tensor weighted_total(const Tensor& input, const std::vector<double>& coeffs) {
  if (static_cast<long long>(coeffs.size()) != input.size()) {
    throw std::invalid_argument("weighted_total: coefficient count " +
                                std::to_string(coeffs.size()) + " != element count " +
                                std::to_string(input.size()));
  }
  double v = 0.0;
  const double* x = input.data();
  for (std::size_t i = 0; i < coeffs.size(); ++i) v += coeffs[i] * x[i];
  Tensor out(Shape{}, std::vector<double>{v});
  return detail::finish_op(
      "weighted_total", std::move(out), {&input},
      [coeffs](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [coeffs, xid = ids[0], out_id](Graph& g) {
          if (xid == Graph::kNone) return;
          const double go = g.grad_buf(out_id)[0];
          double* gx = g.grad_buf(xid).data();
          for (std::size_t i = 0; i < coeffs.size(); ++i) gx[i] += go * coeffs[i];
        };
      });
}

// Scalar combination sum_i weights[i] * scalars[i]; the REINFORCE loss shell.
inline Tensor weighted_sum_scalars(const std::vector<Tensor>& scalars,
                                   const std::vector<double>& weights) {
  if (scalars.size() != weights.size()) {
    throw std::invalid_argument("weighted_sum_scalars: size mismatch");
  }
  if (scalars.empty()) throw std::invalid_argument("weighted_sum_scalars: no terms");
  double v = 0.0;
  std::vector<const Tensor*> parts;
  parts.reserve(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].size() != 1) {
      throw std::invalid_argument("weighted_sum_scalars: term " + std::to_string(i) +
                                  " is not scalar");
    }
    v += weights[i] * scalars[i].item();
    parts.push_back(&scalars[i]);
  }
  Tensor out(Shape{}, std::vector<double>{v});
  return detail::finish_op(
      "weighted_sum_scalars", std::move(out), parts,
      [weights](const std::vector<int>& ids, int out_id) -> std::function<void(Graph&)> {
        return [weights, ids, out_id](Graph& g) {
          const double go = g.grad_buf(out_id)[0];
          for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] != Graph::kNone) g.grad_buf(ids[i])[0] += go * weights[i];
          }
        };
      });
}

}  // namespace nlms
