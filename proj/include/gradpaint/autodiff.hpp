#pragma once

// Reverse-mode automatic differentiation on a linear tape.
//
// Every primitive appends one node; inputs always have smaller indices than
// the node that consumes them, so the tape is a topological order and the
// backward sweep is a single reverse pass in index order. A tape and its
// Vars belong to one thread.

#include <cstdint>
#include <optional>
#include <vector>

#include "gradpaint/tensor.hpp"

namespace gradpaint::ad {

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  Square,
  Sqrt,
  Exp,
  Log,
  Sum,
  SumAxis,
  Mean,
  LogSumExp,
  Norm2,
  Conv2d,
  Shift,
  Clamp,
  BroadcastTo,
  Reshape,
  MatMul,
  Take,
};

const char* op_name(Op op);

enum class Pad : std::uint8_t { Zero, Replicate };

struct TapeNode {
  Op op = Op::Constant;
  std::int64_t lhs = -1;
  std::int64_t rhs = -1;
  Tensor value;
  bool requires_grad = false;
  // Per-primitive parameters needed by the backward rule.
  double p0 = 0.0;
  double p1 = 0.0;
  std::int64_t axis = 0;
  std::int64_t offset = 0;
  Pad pad = Pad::Zero;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Tape& tape() const { return *tape_; }
  std::size_t index() const noexcept { return index_; }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  /// With tracing off every result is recorded as a constant: values are
  /// computed by the same kernels, but nothing is differentiable.
  explicit Tape(bool tracing = true) : tracing_(tracing) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  bool tracing() const noexcept { return tracing_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeNode& node(std::size_t i) const { return nodes_.at(i); }

  Var push(TapeNode node);

 private:
  std::vector<TapeNode> nodes_;
  bool tracing_;
};

/// Cotangents for the leaves reached by a backward sweep.
class GradientMap {
 public:
  GradientMap() = default;
  GradientMap(const Tape* tape, std::vector<std::optional<Tensor>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  /// Gradient w.r.t. a leaf; zeros of the leaf's shape if the root does not
  /// depend on it.
  Tensor operator[](const Var& leaf) const;
  bool contains(const Var& leaf) const;

 private:
  const Tape* tape_ = nullptr;
  std::vector<std::optional<Tensor>> grads_;
};

/// d(root)/d(leaf) for all leaves; root must hold a single element.
GradientMap backward(const Var& root);
/// Vector-Jacobian product with an explicit seed of the root's shape.
GradientMap backward(const Var& root, const Tensor& seed);

// --- primitives -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var square(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sum(const Var& a);
Var sum_axis(const Var& a, std::size_t axis);
Var mean(const Var& a);
Var logsumexp(const Var& a, std::size_t axis);
Var norm2(const Var& a);
/// x: (H, W, Cin); w: (KH, KW, Cin, Cout) with odd KH, KW. Stride 1,
/// zero padding, output (H, W, Cout).
Var conv2d(const Var& x, const Var& w);
/// out[..., k, ...] = a[..., k + offset, ...]; out-of-range reads give zero
/// (Pad::Zero) or the nearest edge element (Pad::Replicate).
Var shift(const Var& a, std::size_t axis, std::int64_t offset, Pad pad);
Var clamp(const Var& a, double lo, double hi);
/// Numpy-style broadcasting of `a` to `shape`.
Var broadcast_to(const Var& a, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
Var matmul(const Var& a, const Var& b);
/// Selects one index along `axis` and drops that axis.
Var take(const Var& a, std::size_t axis, std::size_t index);
/// Same value, recorded as a constant.
Var detach(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

}  // namespace gradpaint::ad
