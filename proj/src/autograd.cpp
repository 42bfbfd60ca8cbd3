#include "mcan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "mcan/errors.hpp"

namespace mcan::ag {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  for (auto s : shape_) {
    if (s == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero extent");
  }
  if (shape_size(shape_) != values_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() <= 1) return 1;
  return size() / shape_.back();
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, nullptr, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(const Tensor& t) {
  if (auto it = param_ids_.find(&t); it != param_ids_.end()) return Var{this, it->second};
  nodes_.push_back(Node{t, {}, nullptr, &t});
  std::size_t id = nodes_.size() - 1;
  param_ids_.emplace(&t, id);
  param_order_.push_back(&t);
  return Var{this, id};
}

Var Tape::push(Tensor value, BackwardFn fn) {
  nodes_.push_back(Node{std::move(value), {}, std::move(fn), nullptr});
  return Var{this, nodes_.size() - 1};
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

const std::vector<double>& Tape::grad(Var v) const {
  static const std::vector<double> empty;
  const auto& g = nodes_[v.id].grad;
  return g.empty() ? empty : g;
}

GradMap Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  GradMap out;
  for (const Tensor* p : param_order_) {
    auto& n = nodes_[param_ids_.at(p)];
    Tensor g = Tensor::zeros(p->shape());
    if (!n.grad.empty()) std::copy(n.grad.begin(), n.grad.end(), g.values().begin());
    out.emplace(p, std::move(g));
  }
  return out;
}

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw ContractError(std::string(op) + ": operands on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

Shape mat_shape(std::size_t r, std::size_t c) { return {r, c}; }

// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
  }
}

// out[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

void check_mask(const Tensor& logits, std::span<const std::uint8_t> keep) {
  if (!keep.empty() && keep.size() != logits.size()) {
    throw DimensionError("softmax mask has " + std::to_string(keep.size()) +
                         " entries for logits of shape " + shape_str(logits.shape()));
  }
}

// Fills `probs` with the masked softmax of each row and returns per-row
// log-normalizers (max + log sum exp).
std::vector<double> softmax_forward(const Tensor& logits, std::span<const std::uint8_t> keep,
                                    std::vector<double>& probs) {
  std::size_t m = logits.rows(), n = logits.cols();
  probs.assign(m * n, 0.0);
  std::vector<double> lse(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep.empty() && !keep[i * n + j]) continue;
      mx = std::max(mx, logits[i * n + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DegenerateRowError("softmax row " + std::to_string(i) + " has no unmasked finite entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep.empty() && !keep[i * n + j]) continue;
      double e = std::exp(logits[i * n + j] - mx);
      probs[i * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    lse[i] = mx + std::log(z);
  }
  return lse;
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tensor out = Tensor::zeros(mat_shape(m, n));
  gemm_nn(av.values().data(), bv.values().data(), out.values().data(), m, k, n);
  return a.tape->push(std::move(out), [a, b, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    gemm_nt(g.data(), t.value(b).values().data(), ga.data(), m, n, k);
    auto& gb = t.grad_buffer(b.id);
    gemm_tn(t.value(a).values().data(), g.data(), gb.data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b, "matmul_nt");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()) + "^T");
  }
  Tensor out = Tensor::zeros(mat_shape(m, n));
  gemm_nt(av.values().data(), bv.values().data(), out.values().data(), m, k, n);
  return a.tape->push(std::move(out), [a, b, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    gemm_nn(g.data(), t.value(b).values().data(), ga.data(), m, n, k);
    auto& gb = t.grad_buffer(b.id);
    gemm_tn(g.data(), t.value(a).values().data(), gb.data(), m, n, k);
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::zeros(mat_shape(n, m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return a.tape->push(std::move(out), [a, m, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.set_requires_grad(false);
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->push(std::move(out), [a, b](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.grad_buffer(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.set_requires_grad(false);
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->push(std::move(out), [a, b](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.grad_buffer(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  out.set_requires_grad(false);
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push(std::move(out), [a, b](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto av = t.value(a).values();
    const auto bv = t.value(b).values();
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    auto& gb = t.grad_buffer(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (auto& v : out.values()) v *= c;
  return a.tape->push(std::move(out), [a, c](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (auto& v : out.values()) v += c;
  return a.tape->push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var add_row(Var a, Var bias) {
  require_same_tape(a, bias, "add_row");
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n) {
    throw DimensionError("add_row: bias " + shape_str(bv.shape()) + " does not fit " +
                         shape_str(av.shape()));
  }
  Tensor out = Tensor::zeros(mat_shape(m, n));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
  return a.tape->push(std::move(out), [a, bias, m, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.grad_buffer(bias.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.tape->push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto av = t.value(a).values();
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

Var log(Var a) {
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (auto& v : out.values()) v = std::log(v);
  return a.tape->push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto av = t.value(a).values();
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
  });
}

Var sum(Var a) {
  const auto av = a.value().values();
  double s = 0.0;
  for (double v : av) s += v;
  return a.tape->push(Tensor::scalar(s), [a](Tape& t, std::size_t self) {
    double g = t.grad_of(self)[0];
    auto& ga = t.grad_buffer(a.id);
    for (auto& v : ga) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_rows(Var a) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::zeros(mat_shape(1, n));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  for (auto& v : out.values()) v /= static_cast<double>(m);
  return a.tape->push(std::move(out), [a, m, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b, "concat_cols");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts differ, " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  }
  std::size_t m = av.rows(), na = av.cols(), nb = bv.cols(), n = na + nb;
  Tensor out = Tensor::zeros(mat_shape(m, n));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.values().data() + i * na, na, out.values().data() + i * n);
    std::copy_n(bv.values().data() + i * nb, nb, out.values().data() + i * n + na);
  }
  return a.tape->push(std::move(out), [a, b, m, na, nb, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < na; ++j) ga[i * na + j] += g[i * n + j];
    auto& gb = t.grad_buffer(b.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < nb; ++j) gb[i * nb + j] += g[i * n + na + j];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  std::size_t m = av.rows(), n = av.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(av.shape()));
  }
  std::size_t w = end - begin;
  Tensor out = Tensor::zeros(mat_shape(m, w));
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.values().data() + i * n + begin, w, out.values().data() + i * w);
  return a.tape->push(std::move(out), [a, m, n, begin, w](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  std::size_t n = av.cols();
  if (rows.empty()) throw DimensionError("gather_rows: empty row list");
  Tensor out = Tensor::zeros(mat_shape(rows.size(), n));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw LookupError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                        shape_str(av.shape()));
    }
    std::copy_n(av.values().data() + rows[i] * n, n, out.values().data() + i * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape->push(std::move(out), [a, idx = std::move(idx), n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += g[i * n + j];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out(std::move(shape), std::vector<double>(a.value().values().begin(), a.value().values().end()));
  return a.tape->push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var pick(Var a, std::size_t r, std::size_t c) {
  const Tensor& av = a.value();
  if (r >= av.rows() || c >= av.cols()) {
    throw LookupError("pick: (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                      shape_str(av.shape()));
  }
  std::size_t at = r * av.cols() + c;
  return a.tape->push(Tensor::matrix(1, 1, {av[at]}), [a, at](Tape& t, std::size_t self) {
    t.grad_buffer(a.id)[at] += t.grad_of(self)[0];
  });
}

Var softmax_rows(Var logits, std::span<const std::uint8_t> keep) {
  const Tensor& lv = logits.value();
  check_mask(lv, keep);
  std::size_t m = lv.rows(), n = lv.cols();
  std::vector<double> probs;
  softmax_forward(lv, keep, probs);
  Tensor out(mat_shape(m, n), std::move(probs));
  return logits.tape->push(std::move(out), [logits, m, n](Tape& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto p = t.value(Var{&t, self}).values();
    auto& gl = t.grad_buffer(logits.id);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var log_softmax_rows(Var logits, std::span<const std::uint8_t> keep) {
  const Tensor& lv = logits.value();
  check_mask(lv, keep);
  std::size_t m = lv.rows(), n = lv.cols();
  std::vector<double> probs;
  auto lse = softmax_forward(lv, keep, probs);
  Tensor out = Tensor::zeros(mat_shape(m, n));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      bool kept = keep.empty() || keep[i * n + j];
      out[i * n + j] = kept ? lv[i * n + j] - lse[i] : -std::numeric_limits<double>::infinity();
    }
  std::vector<std::uint8_t> mask(keep.begin(), keep.end());
  return logits.tape->push(
      std::move(out), [logits, m, n, probs = std::move(probs), mask = std::move(mask)](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto& gl = t.grad_buffer(logits.id);
        for (std::size_t i = 0; i < m; ++i) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            if (mask.empty() || mask[i * n + j]) gsum += g[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            if (!mask.empty() && !mask[i * n + j]) continue;
            gl[i * n + j] += g[i * n + j] - probs[i * n + j] * gsum;
          }
        }
      });
}

std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> keep(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k <= i; ++k) keep[i * n + k] = 1;
  return keep;
}

std::size_t Ffn::in_width() const { return weights.front().cols(); }
std::size_t Ffn::out_width() const { return weights.back().rows(); }

Ffn make_ffn(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw ConfigError("make_ffn: need at least input and output widths");
  Ffn net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    net.weights.push_back(Tensor::zeros({widths[l + 1], widths[l]}, true));
    net.biases.push_back(Tensor::zeros({1, widths[l + 1]}, true));
  }
  return net;
}

Var ffn_tail(const Ffn& net, Var first_preactivation) {
  Tape& tape = *first_preactivation.tape;
  Var h = first_preactivation;
  for (std::size_t l = 1; l < net.weights.size(); ++l) {
    h = relu(h);
    h = add_row(matmul_nt(h, tape.param(net.weights[l])), tape.param(net.biases[l]));
  }
  return h;
}

Var ffn_apply(const Ffn& net, Var x) {
  if (net.weights.empty()) throw ConfigError("ffn_apply: network has no layers");
  if (x.cols() != net.in_width()) {
    throw DimensionError("ffn_apply: input width " + std::to_string(x.cols()) +
                         " does not match first layer width " + std::to_string(net.in_width()));
  }
  Tape& tape = *x.tape;
  Var h = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Var w = tape.param(net.weights[l]);
    Var b = tape.param(net.biases[l]);
    h = add_row(matmul_nt(h, w), b);
    if (l + 1 < net.weights.size()) h = relu(h);
  }
  return h;
}

void sgd_step(std::span<Tensor* const> params, const GradMap& grads, double lr) {
  for (Tensor* p : params) {
    auto it = grads.find(p);
    if (it == grads.end()) throw ContractError("sgd_step: no gradient for a parameter of shape " + shape_str(p->shape()));
    if (it->second.size() != p->size()) {
      throw DimensionError("sgd_step: gradient shape " + shape_str(it->second.shape()) +
                           " does not match parameter " + shape_str(p->shape()));
    }
  }
  for (Tensor* p : params) {
    const auto g = grads.at(p).values();
    auto v = p->values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

}  // namespace mcan::ag
