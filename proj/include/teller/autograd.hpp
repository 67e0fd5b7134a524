#pragma once

// Minimal reverse-mode differentiation over row-major matrices.
//
// A Tape records every operation as a node holding its forward value. Calling
// backward() on a 1x1 node walks the tape in reverse and accumulates gradients
// into the nodes that need them; parameter leaves flush their gradient into a
// caller-owned sink. Tapes are single-use and not thread-safe; use one per
// worker.

#include <functional>
#include <vector>

#include "teller/common.hpp"

namespace teller::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

struct AttentionSpec {
  int heads = 1;
  // Rows are split into consecutive groups of this length; attention never
  // crosses a group boundary. 0 means a single group spanning all rows.
  int group_len = 0;
  bool causal = false;
  // When > 0, row i only sees rows j with i - j < window.
  int window = 0;
  // Optional per-head linear recency penalty: score -= slope[h] * (i - j).
  std::vector<double> alibi_slopes;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives gradient.
  Var constant(Matrix value);
  // Leaf that records its gradient on the tape (read back with grad()).
  Var variable(Matrix value);
  // Leaf bound to a parameter; backward() adds into the matching sink in
  // `grads` (if any). The parameter must outlive the tape.
  Var param(const Parameter& p, Gradients* grads);

  const Matrix& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v (zeros if unreached).
  Matrix grad(Var v) const;

  void backward(Var scalar);

  std::size_t size() const { return nodes_.size(); }

  // --- internal API used by the op implementations ---
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, int)> backward;
    const Matrix& val() const { return ref ? *ref : value; }
  };
  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backward);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs(Var v) const { return node(v.id).needs_grad; }
  // grad buffer of `id`, allocated to the value's shape on first use.
  Matrix& grad_buffer(int id);

 private:
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
// x W + b with b broadcast across rows.
Var linear(Var x, Var w, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
Var hadamard(Var a, const Matrix& mask);
Var gelu(Var a);
Var tanh(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var attention(Var q, Var k, Var v, const AttentionSpec& spec);
Var gather_rows(Var table, const std::vector<int>& ids);
Var concat_cols(Var a, Var b);
// Builds a new matrix whose row r is row picks[r].second of parts[picks[r].first].
Var stack_rows(const std::vector<Var>& parts, const std::vector<std::pair<int, int>>& picks);
// Per-row softmax cross entropy; returns an n x 1 column.
Var cross_entropy_rows(Var logits, const std::vector<Token>& labels);
Var square(Var a);
Var sum(Var a);
Var sum_squares(Var a);
// Reinterprets the row-major storage with a new shape.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
Var stop_gradient(Var a);

// Elementwise activations shared with the non-taped inference paths.
double gelu_value(double x);
double gelu_derivative(double x);

// Row-wise layer norm without taping; matches layer_norm() forward.
void layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& out,
                     double eps = 1e-5);

// Numerically stable log-softmax of a single row.
RowVector log_softmax(const RowVector& logits);

}  // namespace teller::ad
