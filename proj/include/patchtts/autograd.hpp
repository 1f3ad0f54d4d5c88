#pragma once

// Tape-based reverse-mode differentiation over 2-D tensors.
//
// A Graph records every op applied to its Vars; backward() walks the tape in
// reverse. Parameter leaves accumulate directly into Parameter::grad. A Graph
// built with record=false evaluates values only and stores no closures,
// which is what inference uses.

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "patchtts/params.hpp"
#include "patchtts/tensor.hpp"

namespace patchtts {

class Graph;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Attention-score masks for softmax_rows. Causal keeps column j <= row i;
/// block-causal additionally requires i and j to share a block of `block`
/// rows (used for the fixed-length local decoder run over many frames).
struct Mask {
  enum Kind { kNone, kCausal, kBlockCausal };
  Kind kind = kNone;
  int block = 0;

  static Mask none() { return {}; }
  static Mask causal() { return {kCausal, 0}; }
  static Mask block_causal(int block) { return {kBlockCausal, block}; }
  bool allowed(int i, int j) const {
    switch (kind) {
      case kNone:
        return true;
      case kCausal:
        return j <= i;
      case kBlockCausal:
        return j <= i && i / block == j / block;
    }
    return true;
  }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  void backward(Var loss);

  bool recording() const { return record_; }
  size_t node_count() const { return nodes_.size(); }

  const Tensor& value(int id) const;
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(int id);
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  /// Appends an op result. Throws NumericError if `value` is not finite.
  Var emit(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var emit(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

// --- ops -------------------------------------------------------------------

Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var add(Var a, Var b);
/// x + row, broadcasting a 1 x c row over every row of x.
Var add_row(Var x, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var reciprocal(Var a);
Var exp(Var a);
/// log(max(x, 1e-12)).
Var log(Var a);
Var softplus(Var a);
/// log(p) - log(1 - p) with p = clamp(exp(logp), lo, hi).
Var log_odds(Var logp, double lo = 1e-9, double hi = 1.0 - 1e-9);
Var mish(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Row-wise softmax with max-subtraction; masked entries are exactly 0.
Var softmax_rows(Var x, Mask mask = Mask::none());
/// Selects rows of `table` (embedding lookup, row permutation).
Var gather_rows(Var table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, int start, int count);
Var slice_cols(Var x, int start, int count);
/// Multi-head attention restricted to consecutive blocks of `block` rows,
/// causal inside each block: row i sees rows j of its own block with j <= i.
/// q, k, v are R x d with R a multiple of `block` and d a multiple of
/// `n_heads`; scores are scaled by 1/sqrt(d / n_heads). Heads are
/// concatenated back into R x d.
Var block_causal_attention(Var q, Var k, Var v, int block, int n_heads);
/// Per-row -log softmax(logits)[target]; returns an n x 1 column.
Var cross_entropy_rows(Var logits, std::span<const int> targets);
Var sum(Var x);
Var mean(Var x);

/// Scalar cross-entropy on a single logit row.
double cross_entropy(std::span<const double> logits, int target);
/// Numerically safe softmax of one row.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace patchtts
