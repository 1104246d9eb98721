#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "hpnet/tensor.hpp"

namespace hpnet::ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Records operations in execution order. backward() walks the record in
// reverse and accumulates one gradient per node that requires it.
// A tape is single-threaded; separate tapes may run concurrently.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Output value plus the closure that pushes its gradient to the inputs.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  // Zeroes every gradient, seeds d(root) = 1 (root must have one element)
  // and replays the tape backwards.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  // Gradient buffer for accumulation; allocated as zeros on first use.
  Tensor& grad_buffer(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  Tensor empty_;
};

// Gradient of v after backward(), or zeros when nothing flowed into it.
Tensor grad_of(Var v);

// ---- primitive ops -------------------------------------------------------

Var matmul(Var a, Var b);
// x[... x k] * w[k x n] + b[n]; leading dims of x are folded into rows.
Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var silu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
// sum_i w[i] * a[i] with constant weights
Var weighted_sum(Var a, std::span<const double> weights);
// rows of x (viewed as [rows x cols]) selected by index
Var gather_rows(Var x, std::span<const int> index);
// rows of x multiplied by a constant per-row factor
Var scale_rows(Var x, std::span<const double> factor);
// [a | b] along the last axis
Var concat_cols(Var a, Var b);
// softmax over the last axis. Masked entries (mask==0) are exactly 0.
// Throws MaskingError naming the row when every entry of a row is masked.
Var softmax(Var x, std::span<const std::uint8_t> mask = {});
// Inverted dropout with a caller-supplied keep mask (1 keep / 0 drop).
Var dropout(Var x, std::span<const std::uint8_t> keep, double rate);

// Per-row mean of the Huber penalty between pred and a constant target.
// Returns [rows].
Var huber_rows(Var pred, const Tensor& target, double delta);
// Per-row -log softmax(logits)[target]. Returns [rows].
Var cross_entropy_rows(Var logits, std::span<const int> target);

// Multi-head scaled dot-product attention over an explicit query-major edge
// list. Keys/values of edge e are key_src[src[e]] (+ key_edge[eid[e]]).
// Queries without edges produce zero rows. When trace is non-null it receives
// the per-edge weights averaged over heads.
struct EdgeList {
  std::vector<int> offsets;  // size num_queries + 1
  std::vector<int> src;
  std::vector<int> eid;

  std::size_t num_queries() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t num_edges() const { return src.size(); }
  bool has_keys(std::size_t q) const { return offsets[q + 1] > offsets[q]; }
};

Var graph_attention(Var q, Var key_src, std::optional<Var> key_edge, Var val_src, std::optional<Var> val_edge,
                    const EdgeList& edges, std::size_t heads, std::vector<double>* trace = nullptr);

}  // namespace hpnet::ad
