#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rfnet/common.hpp"
#include "rfnet/random.hpp"

namespace rfnet {

// ---------------------------------------------------------------------------
// Tensor: a shared handle to a dense double buffer with an optional gradient
// buffer of the same shape. Copying a Tensor copies the handle, not the data;
// the tape's backward closures rely on that to accumulate into the original
// buffers.
// ---------------------------------------------------------------------------

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until ensure_grad()
  bool requires_grad = false;
  std::string name;
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : d_(std::make_shared<TensorData>()) {
    d_->shape = std::move(shape);
    d_->value.assign(shape_numel(d_->shape), fill);
  }

  Tensor(Shape shape, std::vector<double> values)
      : d_(std::make_shared<TensorData>()) {
    d_->shape = std::move(shape);
    if (values.size() != shape_numel(d_->shape))
      throw ShapeError("Tensor: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(d_->shape));
    d_->value = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  bool valid() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t ndim() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }
  std::size_t rows() const { return d_->shape.at(0); }
  std::size_t cols() const { return d_->shape.at(1); }

  double* data() { return d_->value.data(); }
  const double* data() const { return d_->value.data(); }
  double& at(std::size_t i) { return d_->value[i]; }
  double at(std::size_t i) const { return d_->value[i]; }
  std::vector<double>& values() { return d_->value; }
  const std::vector<double>& values() const { return d_->value; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }
  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }
  double* grad() { return d_->grad.data(); }
  const double* grad() const { return d_->grad.data(); }
  std::vector<double>& grads() { return d_->grad; }

  const std::string& name() const { return d_->name; }
  Tensor& set_name(std::string n) {
    d_->name = std::move(n);
    return *this;
  }

  bool same_object(const Tensor& o) const { return d_ == o.d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Fill with independent uniform draws from [lo, hi).
inline void init_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
}

// ---------------------------------------------------------------------------
// Tape: records one node per primitive op in execution order. backward() seeds
// d(loss)/d(loss) = 1 and replays the closures in reverse; every closure adds
// into its inputs' grad buffers, so gradients from multiple uses of a tensor
// accumulate correctly.
// ---------------------------------------------------------------------------

struct TapeNode {
  const char* kind;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

class Tape {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  void record(const char* kind, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward) {
    nodes_.push_back(TapeNode{kind, std::move(inputs), std::move(output),
                              std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(std::size_t i) const { return nodes_[i]; }

  void backward(Tensor loss) {
    if (nodes_.empty()) throw ValueError("Tape::backward: empty tape");
    if (loss.size() != 1)
      throw ValueError("Tape::backward: loss must be a scalar, got shape " +
                       shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad()[0] = 1.0;
    for (std::size_t i = nodes_.size(); i > 0; --i) nodes_[i - 1].backward();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<TapeNode> nodes_;
  bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Op implementation helpers
// ---------------------------------------------------------------------------

namespace detail {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using MapCV = Eigen::Map<const Eigen::VectorXd>;

inline void require(bool cond, const char* op, const std::string& detail) {
  if (!cond) throw ShapeError(std::string(op) + ": " + detail);
}

// Propagate requires_grad and register the node. `backward` may assume the
// output grad buffer exists. Called only while recording.
inline void finish(Tape& tape, const char* kind, std::vector<Tensor> inputs,
                   Tensor& out, std::function<void()> backward) {
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  out.set_requires_grad(rg);
  out.ensure_grad();
  tape.record(kind, std::move(inputs), out, std::move(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops. Each validates shapes, computes the forward value, and (when
// the tape is recording) registers a backward closure.
// ---------------------------------------------------------------------------

// matmul(A, B): (r x c)·(c x k) -> (r x k), or (r x c)·(c) -> (r).
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 2, "matmul", "lhs must be 2-D, got " + shape_str(a.shape()));
  if (b.ndim() == 2) {
    detail::require(a.cols() == b.rows(), "matmul",
                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::size_t r = a.rows(), c = a.cols(), k = b.cols();
    Tensor out(Shape{r, k});
    detail::MapCM A(a.data(), r, c), B(b.data(), c, k);
    detail::MapM O(out.data(), r, k);
    O.noalias() = A * B;
    if (tape.recording()) {
      Tensor av = a, bv = b, ov = out;
      detail::finish(tape, "matmul", {a, b}, out, [av, bv, ov, r, c, k]() mutable {
        detail::MapCM A(av.data(), r, c), B(bv.data(), c, k), dO(ov.grad(), r, k);
        if (av.requires_grad()) {
          av.ensure_grad();
          detail::MapM dA(av.grad(), r, c);
          dA.noalias() += dO * B.transpose();
        }
        if (bv.requires_grad()) {
          bv.ensure_grad();
          detail::MapM dB(bv.grad(), c, k);
          dB.noalias() += A.transpose() * dO;
        }
      });
    }
    return out;
  }
  detail::require(b.ndim() == 1 && a.cols() == b.size(), "matmul",
                  shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::size_t r = a.rows(), c = a.cols();
  Tensor out(Shape{r});
  detail::MapCM A(a.data(), r, c);
  detail::MapCV x(b.data(), c);
  detail::MapV y(out.data(), r);
  y.noalias() = A * x;
  if (tape.recording()) {
    Tensor av = a, bv = b, ov = out;
    detail::finish(tape, "matmul", {a, b}, out, [av, bv, ov, r, c]() mutable {
      detail::MapCM A(av.data(), r, c);
      detail::MapCV x(bv.data(), c), dy(ov.grad(), r);
      if (av.requires_grad()) {
        av.ensure_grad();
        detail::MapM dA(av.grad(), r, c);
        dA.noalias() += dy * x.transpose();
      }
      if (bv.requires_grad()) {
        bv.ensure_grad();
        detail::MapV dx(bv.grad(), c);
        dx.noalias() += A.transpose() * dy;
      }
    });
  }
  return out;
}

// matmul_nt(A, B): A·Bᵀ with A (r x c), B (k x c) -> (r x k). Lets attention
// apply a (att x d) weight to annotation rows without materializing Bᵀ.
inline Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.cols(), "matmul_nt",
                  shape_str(a.shape()) + " x " + shape_str(b.shape()) + "ᵀ");
  std::size_t r = a.rows(), c = a.cols(), k = b.rows();
  Tensor out(Shape{r, k});
  detail::MapCM A(a.data(), r, c), B(b.data(), k, c);
  detail::MapM O(out.data(), r, k);
  O.noalias() = A * B.transpose();
  if (tape.recording()) {
    Tensor av = a, bv = b, ov = out;
    detail::finish(tape, "matmul_nt", {a, b}, out, [av, bv, ov, r, c, k]() mutable {
      detail::MapCM A(av.data(), r, c), B(bv.data(), k, c), dO(ov.grad(), r, k);
      if (av.requires_grad()) {
        av.ensure_grad();
        detail::MapM dA(av.grad(), r, c);
        dA.noalias() += dO * B;
      }
      if (bv.requires_grad()) {
        bv.ensure_grad();
        detail::MapM dB(bv.grad(), k, c);
        dB.noalias() += dO.transpose() * A;
      }
    });
  }
  return out;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(Tape& tape, const char* kind, const Tensor& a,
                          const Tensor& b, Fwd f, Bwd dfd) {
  require(a.shape() == b.shape(), kind,
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = f(a.at(i), b.at(i));
  if (tape.recording()) {
    Tensor av = a, bv = b, ov = out;
    finish(tape, kind, {a, b}, out, [av, bv, ov, dfd]() mutable {
      const bool ga = av.requires_grad(), gb = bv.requires_grad();
      if (ga) av.ensure_grad();
      if (gb) bv.ensure_grad();
      for (std::size_t i = 0; i < ov.size(); ++i) {
        auto [da, db] = dfd(av.at(i), bv.at(i));
        if (ga) av.grad()[i] += da * ov.grad()[i];
        if (gb) bv.grad()[i] += db * ov.grad()[i];
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      tape, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>(1.0, 1.0); });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      tape, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>(1.0, -1.0); });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      tape, "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>(y, x); });
}

inline Tensor scale(Tape& tape, const Tensor& a, double k) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * k;
  if (tape.recording()) {
    Tensor av = a, ov = out;
    detail::finish(tape, "scale", {a}, out, [av, ov, k]() mutable {
      if (!av.requires_grad()) return;
      av.ensure_grad();
      for (std::size_t i = 0; i < ov.size(); ++i) av.grad()[i] += k * ov.grad()[i];
    });
  }
  return out;
}

// add_rowvec(M, v): adds v to every row of M. Used to broadcast bias vectors.
inline Tensor add_rowvec(Tape& tape, const Tensor& m, const Tensor& v) {
  detail::require(m.ndim() == 2 && v.ndim() == 1 && m.cols() == v.size(), "add_rowvec",
                  shape_str(m.shape()) + " + " + shape_str(v.shape()));
  std::size_t r = m.rows(), c = m.cols();
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i * c + j) = m.at(i * c + j) + v.at(j);
  if (tape.recording()) {
    Tensor mv = m, vv = v, ov = out;
    detail::finish(tape, "add_rowvec", {m, v}, out, [mv, vv, ov, r, c]() mutable {
      if (mv.requires_grad()) {
        mv.ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) mv.grad()[i] += ov.grad()[i];
      }
      if (vv.requires_grad()) {
        vv.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) vv.grad()[j] += ov.grad()[i * c + j];
      }
    });
  }
  return out;
}

// concat(parts): concatenates 1-D tensors into one vector.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat", "no inputs");
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require(p.ndim() == 1, "concat", "inputs must be 1-D, got " + shape_str(p.shape()));
    n += p.size();
  }
  Tensor out(Shape{n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  if (tape.recording()) {
    std::vector<Tensor> ps = parts;
    Tensor ov = out;
    detail::finish(tape, "concat", parts, out, [ps, ov]() mutable {
      std::size_t off = 0;
      for (auto& p : ps) {
        if (p.requires_grad()) {
          p.ensure_grad();
          for (std::size_t i = 0; i < p.size(); ++i) p.grad()[i] += ov.grad()[off + i];
        }
        off += p.size();
      }
    });
  }
  return out;
}

// stack_cols(parts): stacks equal-length vectors as the columns of a matrix,
// giving the (d x T) layout the discriminative head scores against.
inline Tensor stack_cols(Tape& tape, const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "stack_cols", "no inputs");
  std::size_t d = parts[0].size();
  for (const auto& p : parts)
    detail::require(p.ndim() == 1 && p.size() == d, "stack_cols",
                    "inputs must be 1-D of equal length");
  std::size_t t = parts.size();
  Tensor out(Shape{d, t});
  for (std::size_t j = 0; j < t; ++j)
    for (std::size_t i = 0; i < d; ++i) out.at(i * t + j) = parts[j].at(i);
  if (tape.recording()) {
    std::vector<Tensor> ps = parts;
    Tensor ov = out;
    detail::finish(tape, "stack_cols", parts, out, [ps, ov, d, t]() mutable {
      for (std::size_t j = 0; j < t; ++j) {
        if (!ps[j].requires_grad()) continue;
        ps[j].ensure_grad();
        for (std::size_t i = 0; i < d; ++i) ps[j].grad()[i] += ov.grad()[i * t + j];
      }
    });
  }
  return out;
}

// stack_rows(parts): equal-length vectors become the rows of a (T x d)
// matrix, e.g. collected thought vectors turning into an attention target.
inline Tensor stack_rows(Tape& tape, const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "stack_rows", "no inputs");
  std::size_t d = parts[0].size();
  for (const auto& p : parts)
    detail::require(p.ndim() == 1 && p.size() == d, "stack_rows",
                    "inputs must be 1-D of equal length");
  std::size_t t = parts.size();
  Tensor out(Shape{t, d});
  for (std::size_t i = 0; i < t; ++i)
    std::copy(parts[i].data(), parts[i].data() + d, out.data() + i * d);
  if (tape.recording()) {
    std::vector<Tensor> ps = parts;
    Tensor ov = out;
    detail::finish(tape, "stack_rows", parts, out, [ps, ov, d]() mutable {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!ps[i].requires_grad()) continue;
        ps[i].ensure_grad();
        for (std::size_t j = 0; j < d; ++j) ps[i].grad()[j] += ov.grad()[i * d + j];
      }
    });
  }
  return out;
}

// slice(v, start, len): contiguous subvector of a 1-D tensor.
inline Tensor slice(Tape& tape, const Tensor& v, std::size_t start, std::size_t len) {
  detail::require(v.ndim() == 1, "slice", "input must be 1-D, got " + shape_str(v.shape()));
  detail::require(start + len <= v.size(), "slice",
                  "range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                      ") exceeds length " + std::to_string(v.size()));
  Tensor out(Shape{len});
  std::copy(v.data() + start, v.data() + start + len, out.data());
  if (tape.recording()) {
    Tensor vv = v, ov = out;
    detail::finish(tape, "slice", {v}, out, [vv, ov, start, len]() mutable {
      if (!vv.requires_grad()) return;
      vv.ensure_grad();
      for (std::size_t i = 0; i < len; ++i) vv.grad()[start + i] += ov.grad()[i];
    });
  }
  return out;
}

// gather_row(M, idx): copies row idx of a matrix (embedding lookup).
inline Tensor gather_row(Tape& tape, const Tensor& m, std::size_t idx) {
  detail::require(m.ndim() == 2, "gather_row", "input must be 2-D, got " + shape_str(m.shape()));
  if (idx >= m.rows())
    throw ValueError("gather_row: row " + std::to_string(idx) + " out of range " +
                     std::to_string(m.rows()));
  std::size_t c = m.cols();
  Tensor out(Shape{c});
  std::copy(m.data() + idx * c, m.data() + (idx + 1) * c, out.data());
  if (tape.recording()) {
    Tensor mv = m, ov = out;
    detail::finish(tape, "gather_row", {m}, out, [mv, ov, idx, c]() mutable {
      if (!mv.requires_grad()) return;
      mv.ensure_grad();
      for (std::size_t i = 0; i < c; ++i) mv.grad()[idx * c + i] += ov.grad()[i];
    });
  }
  return out;
}

// pick(v, idx): selects one element of a vector as a scalar.
inline Tensor pick(Tape& tape, const Tensor& v, std::size_t idx) {
  detail::require(v.ndim() == 1, "pick", "input must be 1-D, got " + shape_str(v.shape()));
  if (idx >= v.size())
    throw ValueError("pick: index " + std::to_string(idx) + " out of range " +
                     std::to_string(v.size()));
  Tensor out = Tensor::scalar(v.at(idx));
  if (tape.recording()) {
    Tensor vv = v, ov = out;
    detail::finish(tape, "pick", {v}, out, [vv, ov, idx]() mutable {
      if (!vv.requires_grad()) return;
      vv.ensure_grad();
      vv.grad()[idx] += ov.grad()[0];
    });
  }
  return out;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor elementwise_unary(Tape& tape, const char* kind, const Tensor& a, Fwd f, Bwd dfd) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = f(a.at(i));
  if (tape.recording()) {
    Tensor av = a, ov = out;
    finish(tape, kind, {a}, out, [av, ov, dfd]() mutable {
      if (!av.requires_grad()) return;
      av.ensure_grad();
      for (std::size_t i = 0; i < ov.size(); ++i)
        av.grad()[i] += dfd(av.at(i), ov.at(i)) * ov.grad()[i];
    });
  }
  return out;
}

}  // namespace detail

inline Tensor sigmoid(Tape& tape, const Tensor& a) {
  return detail::elementwise_unary(
      tape, "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(Tape& tape, const Tensor& a) {
  return detail::elementwise_unary(
      tape, "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

// softmax(v): numerically stable (max-subtracted) softmax over a 1-D tensor.
// Rejects non-finite input before recording anything.
inline Tensor softmax(Tape& tape, const Tensor& v) {
  detail::require(v.ndim() == 1 && v.size() > 0, "softmax",
                  "input must be a non-empty vector, got " + shape_str(v.shape()));
  if (!all_finite(v.data(), v.size()))
    throw ValueError("softmax: non-finite input");
  Tensor out(v.shape());
  double mx = *std::max_element(v.data(), v.data() + v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.at(i) = std::exp(v.at(i) - mx);
    z += out.at(i);
  }
  for (std::size_t i = 0; i < v.size(); ++i) out.at(i) /= z;
  if (tape.recording()) {
    Tensor vv = v, ov = out;
    detail::finish(tape, "softmax", {v}, out, [vv, ov]() mutable {
      if (!vv.requires_grad()) return;
      vv.ensure_grad();
      double dot = 0.0;
      for (std::size_t i = 0; i < ov.size(); ++i) dot += ov.grad()[i] * ov.at(i);
      for (std::size_t i = 0; i < ov.size(); ++i)
        vv.grad()[i] += ov.at(i) * (ov.grad()[i] - dot);
    });
  }
  return out;
}

// log_softmax(v): stable log-probabilities over a 1-D tensor.
inline Tensor log_softmax(Tape& tape, const Tensor& v) {
  detail::require(v.ndim() == 1 && v.size() > 0, "log_softmax",
                  "input must be a non-empty vector, got " + shape_str(v.shape()));
  if (!all_finite(v.data(), v.size()))
    throw ValueError("log_softmax: non-finite input");
  Tensor out(v.shape());
  double mx = *std::max_element(v.data(), v.data() + v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) z += std::exp(v.at(i) - mx);
  double lz = mx + std::log(z);
  for (std::size_t i = 0; i < v.size(); ++i) out.at(i) = v.at(i) - lz;
  if (tape.recording()) {
    Tensor vv = v, ov = out;
    detail::finish(tape, "log_softmax", {v}, out, [vv, ov]() mutable {
      if (!vv.requires_grad()) return;
      vv.ensure_grad();
      double gsum = 0.0;
      for (std::size_t i = 0; i < ov.size(); ++i) gsum += ov.grad()[i];
      for (std::size_t i = 0; i < ov.size(); ++i)
        vv.grad()[i] += ov.grad()[i] - std::exp(ov.at(i)) * gsum;
    });
  }
  return out;
}

// row_max(M): per-row maximum of a matrix; ties resolve to the first (lowest
// column index) maximum, and the subgradient flows only to that element.
inline Tensor row_max(Tape& tape, const Tensor& m) {
  detail::require(m.ndim() == 2 && m.cols() > 0, "row_max",
                  "input must be a non-empty 2-D tensor, got " + shape_str(m.shape()));
  std::size_t r = m.rows(), c = m.cols();
  Tensor out(Shape{r});
  std::vector<std::size_t> arg(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (m.at(i * c + j) > m.at(i * c + best)) best = j;
    arg[i] = best;
    out.at(i) = m.at(i * c + best);
  }
  if (tape.recording()) {
    Tensor mv = m, ov = out;
    detail::finish(tape, "row_max", {m}, out, [mv, ov, arg, c]() mutable {
      if (!mv.requires_grad()) return;
      mv.ensure_grad();
      for (std::size_t i = 0; i < ov.size(); ++i)
        mv.grad()[i * c + arg[i]] += ov.grad()[i];
    });
  }
  return out;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::scalar(0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  out.at(0) = s;
  if (tape.recording()) {
    Tensor av = a, ov = out;
    detail::finish(tape, "sum", {a}, out, [av, ov]() mutable {
      if (!av.requires_grad()) return;
      av.ensure_grad();
      for (std::size_t i = 0; i < av.size(); ++i) av.grad()[i] += ov.grad()[0];
    });
  }
  return out;
}

inline Tensor mean(Tape& tape, const Tensor& a) {
  detail::require(a.size() > 0, "mean", "empty input");
  Tensor out = Tensor::scalar(0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  out.at(0) = s / static_cast<double>(a.size());
  if (tape.recording()) {
    Tensor av = a, ov = out;
    detail::finish(tape, "mean", {a}, out, [av, ov]() mutable {
      if (!av.requires_grad()) return;
      av.ensure_grad();
      double k = 1.0 / static_cast<double>(av.size());
      for (std::size_t i = 0; i < av.size(); ++i) av.grad()[i] += k * ov.grad()[0];
    });
  }
  return out;
}

// wsum_rows(A, w): weighted sum of the rows of A (k x d) with weights w (k),
// i.e. the context vector z = Σᵢ wᵢ·Aᵢ.
inline Tensor wsum_rows(Tape& tape, const Tensor& a, const Tensor& w) {
  detail::require(a.ndim() == 2 && w.ndim() == 1 && a.rows() == w.size(), "wsum_rows",
                  shape_str(a.shape()) + " with weights " + shape_str(w.shape()));
  std::size_t k = a.rows(), d = a.cols();
  Tensor out(Shape{d});
  detail::MapCM A(a.data(), k, d);
  detail::MapCV W(w.data(), k);
  detail::MapV O(out.data(), d);
  O.noalias() = A.transpose() * W;
  if (tape.recording()) {
    Tensor av = a, wv = w, ov = out;
    detail::finish(tape, "wsum_rows", {a, w}, out, [av, wv, ov, k, d]() mutable {
      detail::MapCM A(av.data(), k, d);
      detail::MapCV W(wv.data(), k), dz(ov.grad(), d);
      if (wv.requires_grad()) {
        wv.ensure_grad();
        detail::MapV dW(wv.grad(), k);
        dW.noalias() += A * dz;
      }
      if (av.requires_grad()) {
        av.ensure_grad();
        detail::MapM dA(av.grad(), k, d);
        dA.noalias() += W * dz.transpose();
      }
    });
  }
  return out;
}

// dropout(x, p): inverted dropout on a 1-D tensor. In training mode each
// element is zeroed with probability p and survivors are scaled by 1/(1-p),
// so the expected value is unchanged and inference needs no rescaling. With
// p == 0 or training == false this is the identity and consumes no random
// draws, keeping RNG streams comparable across configurations.
inline Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ValueError("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  double keep = 1.0 - p;
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    mask[i] = rng.uniform01() < p ? 0.0 : 1.0 / keep;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = x.at(i) * mask[i];
  if (tape.recording()) {
    Tensor xv = x, ov = out;
    detail::finish(tape, "dropout", {x}, out, [xv, ov, mask]() mutable {
      if (!xv.requires_grad()) return;
      xv.ensure_grad();
      for (std::size_t i = 0; i < ov.size(); ++i) xv.grad()[i] += mask[i] * ov.grad()[i];
    });
  }
  return out;
}

// cross_entropy_smoothed(logits, gold, eps): label-smoothed cross entropy for
// one token. The target distribution mixes the one-hot gold label with a
// uniform prior over the whole vocabulary: q = (1-eps)·onehot + eps/V. The
// backward rule is the fused softmax(logits) - q.
inline Tensor cross_entropy_smoothed(Tape& tape, const Tensor& logits, std::size_t gold,
                                     double eps) {
  detail::require(logits.ndim() == 1 && logits.size() > 0, "cross_entropy_smoothed",
                  "logits must be a non-empty vector, got " + shape_str(logits.shape()));
  if (gold >= logits.size())
    throw ValueError("cross_entropy_smoothed: gold index " + std::to_string(gold) +
                     " out of range " + std::to_string(logits.size()));
  if (eps < 0.0 || eps > 1.0)
    throw ValueError("cross_entropy_smoothed: eps outside [0,1]");
  if (!all_finite(logits.data(), logits.size()))
    throw ValueError("cross_entropy_smoothed: non-finite logits");
  std::size_t n = logits.size();
  double mx = *std::max_element(logits.data(), logits.data() + n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(logits.at(i) - mx);
  double lz = mx + std::log(z);
  double u = eps / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double q = u + (i == gold ? 1.0 - eps : 0.0);
    if (q > 0.0) loss -= q * (logits.at(i) - lz);
  }
  Tensor out = Tensor::scalar(loss);
  if (tape.recording()) {
    Tensor lv = logits, ov = out;
    detail::finish(tape, "cross_entropy_smoothed", {logits}, out,
                   [lv, ov, gold, eps, lz, u]() mutable {
                     if (!lv.requires_grad()) return;
                     lv.ensure_grad();
                     double g = ov.grad()[0];
                     for (std::size_t i = 0; i < lv.size(); ++i) {
                       double p = std::exp(lv.at(i) - lz);
                       double q = u + (i == gold ? 1.0 - eps : 0.0);
                       lv.grad()[i] += g * (p - q);
                     }
                   });
  }
  return out;
}

// multilabel_margin(s, positives): Σ_{j∈P} Σ_{i∉P} max(0, 1 - (s_j - s_i)).
// The backward rule counts active hinge pairs per coordinate.
inline Tensor multilabel_margin(Tape& tape, const Tensor& s,
                                const std::vector<std::size_t>& positives) {
  detail::require(s.ndim() == 1, "multilabel_margin",
                  "scores must be 1-D, got " + shape_str(s.shape()));
  std::vector<char> is_pos(s.size(), 0);
  for (std::size_t j : positives) {
    if (j >= s.size())
      throw ValueError("multilabel_margin: positive index " + std::to_string(j) +
                       " out of range " + std::to_string(s.size()));
    is_pos[j] = 1;
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!is_pos[j]) continue;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (is_pos[i]) continue;
      double v = 1.0 - (s.at(j) - s.at(i));
      if (v > 0.0) loss += v;
    }
  }
  Tensor out = Tensor::scalar(loss);
  if (tape.recording()) {
    Tensor sv = s, ov = out;
    detail::finish(tape, "multilabel_margin", {s}, out, [sv, ov, is_pos]() mutable {
      if (!sv.requires_grad()) return;
      sv.ensure_grad();
      double g = ov.grad()[0];
      for (std::size_t j = 0; j < sv.size(); ++j) {
        if (!is_pos[j]) continue;
        for (std::size_t i = 0; i < sv.size(); ++i) {
          if (is_pos[i]) continue;
          if (1.0 - (sv.at(j) - sv.at(i)) > 0.0) {
            sv.grad()[j] -= g;
            sv.grad()[i] += g;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// tensor_kernels: a single dispatch surface over the primitive ops, so generic
// harnesses (finite-difference sweeps, linearity checks) can iterate the whole
// kernel inventory without naming each function.
// ---------------------------------------------------------------------------

enum class Kernel {
  kMatmul,
  kMatmulNT,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowvec,
  kConcat,
  kStackCols,
  kStackRows,
  kSlice,
  kGatherRow,
  kPick,
  kSigmoid,
  kTanh,
  kSoftmax,
  kLogSoftmax,
  kRowMax,
  kSum,
  kMean,
  kWsumRows,
  kCrossEntropySmoothed,
  kMultilabelMargin,
};

inline const char* kernel_name(Kernel k) {
  switch (k) {
    case Kernel::kMatmul: return "matmul";
    case Kernel::kMatmulNT: return "matmul_nt";
    case Kernel::kAdd: return "add";
    case Kernel::kSub: return "sub";
    case Kernel::kMul: return "mul";
    case Kernel::kScale: return "scale";
    case Kernel::kAddRowvec: return "add_rowvec";
    case Kernel::kConcat: return "concat";
    case Kernel::kStackCols: return "stack_cols";
    case Kernel::kStackRows: return "stack_rows";
    case Kernel::kSlice: return "slice";
    case Kernel::kGatherRow: return "gather_row";
    case Kernel::kPick: return "pick";
    case Kernel::kSigmoid: return "sigmoid";
    case Kernel::kTanh: return "tanh";
    case Kernel::kSoftmax: return "softmax";
    case Kernel::kLogSoftmax: return "log_softmax";
    case Kernel::kRowMax: return "row_max";
    case Kernel::kSum: return "sum";
    case Kernel::kMean: return "mean";
    case Kernel::kWsumRows: return "wsum_rows";
    case Kernel::kCrossEntropySmoothed: return "cross_entropy_smoothed";
    case Kernel::kMultilabelMargin: return "multilabel_margin";
  }
  return "?";
}

inline std::vector<Kernel> all_kernels() {
  return {Kernel::kMatmul,     Kernel::kMatmulNT,  Kernel::kAdd,
          Kernel::kSub,        Kernel::kMul,       Kernel::kScale,
          Kernel::kAddRowvec,  Kernel::kConcat,    Kernel::kStackCols,
          Kernel::kStackRows,  Kernel::kSlice,      Kernel::kGatherRow, Kernel::kPick,
          Kernel::kSigmoid,    Kernel::kTanh,      Kernel::kSoftmax,
          Kernel::kLogSoftmax, Kernel::kRowMax,    Kernel::kSum,
          Kernel::kMean,       Kernel::kWsumRows,  Kernel::kCrossEntropySmoothed,
          Kernel::kMultilabelMargin};
}

// Extra (non-tensor) arguments for kernels that need them.
struct KernelArgs {
  std::size_t index = 0;   // slice start / gather row / pick index / gold label
  std::size_t length = 0;  // slice length
  double scalar = 0.0;     // scale factor / smoothing eps
  std::vector<std::size_t> indices;  // multilabel positives
};

inline Tensor tensor_kernels(Tape& tape, Kernel kind, const std::vector<Tensor>& in,
                             const KernelArgs& args = {}) {
  auto one = [&](const char* op) -> const Tensor& {
    if (in.size() != 1) throw ShapeError(std::string(op) + ": expects 1 input");
    return in[0];
  };
  auto two = [&](const char* op) -> std::pair<const Tensor&, const Tensor&> {
    if (in.size() != 2) throw ShapeError(std::string(op) + ": expects 2 inputs");
    return {in[0], in[1]};
  };
  switch (kind) {
    case Kernel::kMatmul: {
      auto [a, b] = two("matmul");
      return matmul(tape, a, b);
    }
    case Kernel::kMatmulNT: {
      auto [a, b] = two("matmul_nt");
      return matmul_nt(tape, a, b);
    }
    case Kernel::kAdd: {
      auto [a, b] = two("add");
      return add(tape, a, b);
    }
    case Kernel::kSub: {
      auto [a, b] = two("sub");
      return sub(tape, a, b);
    }
    case Kernel::kMul: {
      auto [a, b] = two("mul");
      return mul(tape, a, b);
    }
    case Kernel::kScale:
      return scale(tape, one("scale"), args.scalar);
    case Kernel::kAddRowvec: {
      auto [a, b] = two("add_rowvec");
      return add_rowvec(tape, a, b);
    }
    case Kernel::kConcat:
      return concat(tape, in);
    case Kernel::kStackCols:
      return stack_cols(tape, in);
    case Kernel::kStackRows:
      return stack_rows(tape, in);
    case Kernel::kSlice:
      return slice(tape, one("slice"), args.index, args.length);
    case Kernel::kGatherRow:
      return gather_row(tape, one("gather_row"), args.index);
    case Kernel::kPick:
      return pick(tape, one("pick"), args.index);
    case Kernel::kSigmoid:
      return sigmoid(tape, one("sigmoid"));
    case Kernel::kTanh:
      return tanh(tape, one("tanh"));
    case Kernel::kSoftmax:
      return softmax(tape, one("softmax"));
    case Kernel::kLogSoftmax:
      return log_softmax(tape, one("log_softmax"));
    case Kernel::kRowMax:
      return row_max(tape, one("row_max"));
    case Kernel::kSum:
      return sum(tape, one("sum"));
    case Kernel::kMean:
      return mean(tape, one("mean"));
    case Kernel::kWsumRows: {
      auto [a, b] = two("wsum_rows");
      return wsum_rows(tape, a, b);
    }
    case Kernel::kCrossEntropySmoothed:
      return cross_entropy_smoothed(tape, one("cross_entropy_smoothed"), args.index,
                                    args.scalar);
    case Kernel::kMultilabelMargin:
      return multilabel_margin(tape, one("multilabel_margin"), args.indices);
  }
  throw ValueError("tensor_kernels: unknown kernel");
}

}  // namespace rfnet
