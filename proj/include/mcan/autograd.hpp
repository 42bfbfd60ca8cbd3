#pragma once

// Tape-based reverse-mode automatic differentiation over dense float64
// tensors. Every op appends a node to a Tape; backward() walks the tape in
// reverse creation order, which is a valid topological order by construction.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mcan::ag {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor scalar(double v);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  // Rank-1 tensors behave as a single row; rank-0 / {1} as 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Gradients keyed by the address of the parameter tensor they belong to.
using GradMap = std::unordered_map<const Tensor*, Tensor>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input; never receives a gradient entry in the GradMap.
  Var constant(Tensor t);
  // Trainable parameter, registered by address. Repeated calls with the same
  // tensor return the same node so gradients accumulate across uses.
  Var param(const Tensor& t);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Returns an entry for every
  // registered parameter (zero-filled when the loss does not depend on it).
  GradMap backward(Var loss);
  // Gradient of the last backward() w.r.t. any node.
  const std::vector<double>& grad(Var v) const;

  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var push(Tensor value, BackwardFn fn);
  std::vector<double>& grad_buffer(std::size_t id);
  const std::vector<double>& grad_of(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    const Tensor* param = nullptr;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
  std::vector<const Tensor*> param_order_;
};

// ---- primitive ops --------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T without materializing the transpose.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// a: m x n, bias: 1 x n (or rank-1 of length n), broadcast over rows.
Var add_row(Var a, Var bias);
Var relu(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
// m x n -> 1 x n
Var mean_rows(Var a);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var reshape(Var a, Shape shape);
// Single element (r, c) as a 1x1 tensor.
Var pick(Var a, std::size_t r, std::size_t c);

// Row-wise softmax. `keep` is an optional row-major 0/1 mask of the same
// shape as `logits`; masked entries are exactly 0 in the output.
Var softmax_rows(Var logits, std::span<const std::uint8_t> keep = {});
Var log_softmax_rows(Var logits, std::span<const std::uint8_t> keep = {});

// Causal mask for an n x n attention matrix: keep[i][k] = (k <= i).
std::vector<std::uint8_t> causal_mask(std::size_t n);

// ---- feed-forward nets ----------------------------------------------------

// Stack of affine layers with ReLU between consecutive layers (none after the
// last). weights[l] is out x in, biases[l] is 1 x out.
struct Ffn {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t in_width() const;
  std::size_t out_width() const;
};

Ffn make_ffn(std::span<const std::size_t> widths);
// x: m x in -> m x out
Var ffn_apply(const Ffn& net, Var x);
// Continues a net from the pre-activation of its first layer (ReLU, then the
// remaining affine layers). Lets callers build the first layer piecewise.
Var ffn_tail(const Ffn& net, Var first_preactivation);

// ---- optimizer ------------------------------------------------------------

void sgd_step(std::span<Tensor* const> params, const GradMap& grads, double lr);

}  // namespace mcan::ag
