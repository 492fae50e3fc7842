#include "gradpaint/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gradpaint::ad {

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.n = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d != axis) out.push_back(shape[d]);
  }
  return out;
}

// Flat source index for every flat output index under numpy broadcasting.
std::vector<std::size_t> broadcast_map(const Shape& src, const Shape& dst) {
  if (src.size() > dst.size()) {
    throw std::invalid_argument("broadcast_to: cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
  }
  const std::size_t rank = dst.size();
  const std::size_t lead = rank - src.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t acc = 1;
  for (std::size_t d = rank; d-- > lead;) {
    const std::size_t se = src[d - lead];
    if (se != dst[d] && se != 1) {
      throw std::invalid_argument("broadcast_to: cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
    }
    stride[d] = (se == 1) ? 0 : acc;
    acc *= se;
  }
  const std::size_t total = shape_numel(dst);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < total; ++i) {
    map[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offset += stride[d];
      if (idx[d] < dst[d]) break;
      offset -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

std::size_t shift_source(std::int64_t k, std::int64_t offset, std::size_t n, Pad pad, bool& valid) {
  std::int64_t src = k + offset;
  const auto last = static_cast<std::int64_t>(n) - 1;
  valid = true;
  if (src < 0 || src > last) {
    if (pad == Pad::Zero) {
      valid = false;
      return 0;
    }
    src = std::clamp<std::int64_t>(src, 0, last);
  }
  return static_cast<std::size_t>(src);
}

Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  return a.tape();
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a.shape(), b.shape(), op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

Var record(Tape& tape, Op op, Tensor value, const Var* lhs, const Var* rhs = nullptr) {
  TapeNode n;
  n.op = op;
  n.value = std::move(value);
  n.lhs = lhs ? static_cast<std::int64_t>(lhs->index()) : -1;
  n.rhs = rhs ? static_cast<std::int64_t>(rhs->index()) : -1;
  n.requires_grad = (lhs && lhs->requires_grad()) || (rhs && rhs->requires_grad());
  return tape.push(std::move(n));
}

Var record_param(Tape& tape, Op op, Tensor value, const Var& in, double p0, double p1 = 0.0, std::int64_t axis = 0,
                 std::int64_t offset = 0, Pad pad = Pad::Zero) {
  TapeNode n;
  n.op = op;
  n.value = std::move(value);
  n.lhs = static_cast<std::int64_t>(in.index());
  n.requires_grad = in.requires_grad();
  n.p0 = p0;
  n.p1 = p1;
  n.axis = axis;
  n.offset = offset;
  n.pad = pad;
  return tape.push(std::move(n));
}

Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.data()[p * n];
      double* orow = &out.data()[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

struct ConvDims {
  std::size_t h, w, cin, kh, kw, cout;
  std::int64_t ph, pw;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w) {
  if (x.ndim() != 3 || w.ndim() != 4 || w.shape()[2] != x.shape()[2] || w.shape()[0] % 2 == 0 ||
      w.shape()[1] % 2 == 0) {
    throw std::invalid_argument("conv2d: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  }
  ConvDims d{x.shape()[0], x.shape()[1], x.shape()[2], w.shape()[0], w.shape()[1], w.shape()[3], 0, 0};
  d.ph = static_cast<std::int64_t>(d.kh / 2);
  d.pw = static_cast<std::int64_t>(d.kw / 2);
  return d;
}

Tensor conv2d_kernel(const Tensor& x, const Tensor& w) {
  const ConvDims d = conv_dims(x, w);
  Tensor out(Shape{d.h, d.w, d.cout});
  const auto H = static_cast<std::int64_t>(d.h), W = static_cast<std::int64_t>(d.w);
  for (std::int64_t i = 0; i < H; ++i) {
    for (std::int64_t j = 0; j < W; ++j) {
      double* o = &out.data()[(static_cast<std::size_t>(i * W + j)) * d.cout];
      for (std::size_t a = 0; a < d.kh; ++a) {
        const std::int64_t si = i + static_cast<std::int64_t>(a) - d.ph;
        if (si < 0 || si >= H) continue;
        for (std::size_t b = 0; b < d.kw; ++b) {
          const std::int64_t sj = j + static_cast<std::int64_t>(b) - d.pw;
          if (sj < 0 || sj >= W) continue;
          const double* xs = &x.data()[static_cast<std::size_t>(si * W + sj) * d.cin];
          const double* wk = &w.data()[(a * d.kw + b) * d.cin * d.cout];
          for (std::size_t c = 0; c < d.cin; ++c) {
            const double xv = xs[c];
            const double* wrow = wk + c * d.cout;
            for (std::size_t q = 0; q < d.cout; ++q) o[q] += xv * wrow[q];
          }
        }
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g, Tensor* gx, Tensor* gw) {
  const ConvDims d = conv_dims(x, w);
  const auto H = static_cast<std::int64_t>(d.h), W = static_cast<std::int64_t>(d.w);
  for (std::int64_t i = 0; i < H; ++i) {
    for (std::int64_t j = 0; j < W; ++j) {
      const double* go = &g.data()[static_cast<std::size_t>(i * W + j) * d.cout];
      for (std::size_t a = 0; a < d.kh; ++a) {
        const std::int64_t si = i + static_cast<std::int64_t>(a) - d.ph;
        if (si < 0 || si >= H) continue;
        for (std::size_t b = 0; b < d.kw; ++b) {
          const std::int64_t sj = j + static_cast<std::int64_t>(b) - d.pw;
          if (sj < 0 || sj >= W) continue;
          const std::size_t xoff = static_cast<std::size_t>(si * W + sj) * d.cin;
          const std::size_t woff = (a * d.kw + b) * d.cin * d.cout;
          for (std::size_t c = 0; c < d.cin; ++c) {
            const double* wrow = &w.data()[woff + c * d.cout];
            if (gx) {
              double s = 0.0;
              for (std::size_t q = 0; q < d.cout; ++q) s += go[q] * wrow[q];
              (*gx)[xoff + c] += s;
            }
            if (gw) {
              const double xv = x[xoff + c];
              double* gwrow = &gw->data()[woff + c * d.cout];
              for (std::size_t q = 0; q < d.cout; ++q) gwrow[q] += xv * go[q];
            }
          }
        }
      }
    }
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sum: return "sum";
    case Op::SumAxis: return "sum_axis";
    case Op::Mean: return "mean";
    case Op::LogSumExp: return "logsumexp";
    case Op::Norm2: return "norm2";
    case Op::Conv2d: return "conv2d";
    case Op::Shift: return "shift";
    case Op::Clamp: return "clamp";
    case Op::BroadcastTo: return "broadcast_to";
    case Op::Reshape: return "reshape";
    case Op::MatMul: return "matmul";
    case Op::Take: return "take";
  }
  return "?";
}

// --- Tape / Var -------------------------------------------------------------

const Tensor& Var::value() const { return tape_->node(index_).value; }

bool Var::requires_grad() const { return tape_->node(index_).requires_grad; }

Var Tape::push(TapeNode node) {
  if (!tracing_) {
    node.op = Op::Constant;
    node.lhs = node.rhs = -1;
    node.requires_grad = false;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  TapeNode n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  TapeNode n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Tensor GradientMap::operator[](const Var& leaf) const {
  if (leaf.index() < grads_.size() && grads_[leaf.index()]) return *grads_[leaf.index()];
  return Tensor(leaf.shape());
}

bool GradientMap::contains(const Var& leaf) const {
  return leaf.index() < grads_.size() && grads_[leaf.index()].has_value();
}

// --- primitives ---------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "add");
  return record(t, Op::Add, map_binary(a.value(), b.value(), "add", [](double x, double y) { return x + y; }), &a, &b);
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "sub");
  return record(t, Op::Sub, map_binary(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }), &a, &b);
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "mul");
  return record(t, Op::Mul, map_binary(a.value(), b.value(), "mul", [](double x, double y) { return x * y; }), &a, &b);
}

Var div(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "div");
  return record(t, Op::Div, map_binary(a.value(), b.value(), "div", [](double x, double y) { return x / y; }), &a, &b);
}

Var scale(const Var& a, double c) {
  return record_param(a.tape(), Op::Scale, map_unary(a.value(), [c](double x) { return c * x; }), a, c);
}

Var add_scalar(const Var& a, double c) {
  return record_param(a.tape(), Op::AddScalar, map_unary(a.value(), [c](double x) { return x + c; }), a, c);
}

Var square(const Var& a) {
  return record(a.tape(), Op::Square, map_unary(a.value(), [](double x) { return x * x; }), &a);
}

Var sqrt(const Var& a) {
  return record(a.tape(), Op::Sqrt, map_unary(a.value(), [](double x) { return std::sqrt(x); }), &a);
}

Var exp(const Var& a) {
  return record(a.tape(), Op::Exp, map_unary(a.value(), [](double x) { return std::exp(x); }), &a);
}

Var log(const Var& a) {
  return record(a.tape(), Op::Log, map_unary(a.value(), [](double x) { return std::log(x); }), &a);
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return record(a.tape(), Op::Sum, Tensor::scalar(s), &a);
}

Var sum_axis(const Var& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis, "sum_axis");
  Tensor out(drop_axis(a.shape(), axis));
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.n; ++k) {
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.n + k) * sp.inner + i];
    }
  }
  return record_param(a.tape(), Op::SumAxis, std::move(out), a, 0.0, 0.0, static_cast<std::int64_t>(axis));
}

Var mean(const Var& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor " + shape_str(a.shape()));
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return record(a.tape(), Op::Mean, Tensor::scalar(s / static_cast<double>(a.size())), &a);
}

Var logsumexp(const Var& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis, "logsumexp");
  Tensor out(drop_axis(a.shape(), axis));
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) m = std::max(m, x[(o * sp.n + k) * sp.inner + i]);
      if (!std::isfinite(m)) {
        out[o * sp.inner + i] = m;
        continue;
      }
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) s += std::exp(x[(o * sp.n + k) * sp.inner + i] - m);
      out[o * sp.inner + i] = m + std::log(s);
    }
  }
  return record_param(a.tape(), Op::LogSumExp, std::move(out), a, 0.0, 0.0, static_cast<std::int64_t>(axis));
}

Var norm2(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return record(a.tape(), Op::Norm2, Tensor::scalar(std::sqrt(s)), &a);
}

Var conv2d(const Var& x, const Var& w) {
  Tape& t = same_tape(x, w, "conv2d");
  return record(t, Op::Conv2d, conv2d_kernel(x.value(), w.value()), &x, &w);
}

Var shift(const Var& a, std::size_t axis, std::int64_t offset, Pad pad) {
  const auto sp = split_axis(a.shape(), axis, "shift");
  const Tensor& x = a.value();
  Tensor out(a.shape());
  for (std::size_t k = 0; k < sp.n; ++k) {
    bool valid = false;
    const std::size_t src = shift_source(static_cast<std::int64_t>(k), offset, sp.n, pad, valid);
    if (!valid) continue;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        out[(o * sp.n + k) * sp.inner + i] = x[(o * sp.n + src) * sp.inner + i];
      }
    }
  }
  return record_param(a.tape(), Op::Shift, std::move(out), a, 0.0, 0.0, static_cast<std::int64_t>(axis), offset, pad);
}

Var clamp(const Var& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return record_param(a.tape(), Op::Clamp, map_unary(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }),
                      a, lo, hi);
}

Var broadcast_to(const Var& a, const Shape& shape) {
  const auto map = broadcast_map(a.shape(), shape);
  Tensor out(shape);
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = x[map[i]];
  return record(a.tape(), Op::BroadcastTo, std::move(out), &a);
}

Var reshape(const Var& a, const Shape& shape) {
  return record(a.tape(), Op::Reshape, a.value().reshaped(shape), &a);
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "matmul");
  return record(t, Op::MatMul, matmul_kernel(a.value(), b.value()), &a, &b);
}

Var take(const Var& a, std::size_t axis, std::size_t index) {
  const auto sp = split_axis(a.shape(), axis, "take");
  if (index >= sp.n) throw std::out_of_range("take: index out of range for shape " + shape_str(a.shape()));
  Tensor out(drop_axis(a.shape(), axis));
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] = x[(o * sp.n + index) * sp.inner + i];
  }
  return record_param(a.tape(), Op::Take, std::move(out), a, 0.0, 0.0, static_cast<std::int64_t>(axis),
                      static_cast<std::int64_t>(index));
}

Var detach(const Var& a) { return a.tape().constant(a.value()); }

// --- backward -----------------------------------------------------------------

namespace {

Tensor& slot(std::vector<std::optional<Tensor>>& grads, const Tape& tape, std::int64_t idx) {
  auto& g = grads[static_cast<std::size_t>(idx)];
  if (!g) g.emplace(tape.node(static_cast<std::size_t>(idx)).value.shape());
  return *g;
}

bool wants(const Tape& tape, std::int64_t idx) {
  return idx >= 0 && tape.node(static_cast<std::size_t>(idx)).requires_grad;
}

void propagate(const Tape& tape, const TapeNode& n, const Tensor& g, std::vector<std::optional<Tensor>>& grads) {
  const bool wl = wants(tape, n.lhs);
  const bool wr = wants(tape, n.rhs);
  if (!wl && !wr) return;
  const Tensor* a = n.lhs >= 0 ? &tape.node(static_cast<std::size_t>(n.lhs)).value : nullptr;
  const Tensor* b = n.rhs >= 0 ? &tape.node(static_cast<std::size_t>(n.rhs)).value : nullptr;
  const Tensor& y = n.value;

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::Add:
      if (wl) {
        auto& ga = slot(grads, tape, n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wr) {
        auto& gb = slot(grads, tape, n.rhs);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
      return;
    case Op::Sub:
      if (wl) {
        auto& ga = slot(grads, tape, n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wr) {
        auto& gb = slot(grads, tape, n.rhs);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
      return;
    case Op::Mul:
      if (wl) {
        auto& ga = slot(grads, tape, n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*b)[i];
      }
      if (wr) {
        auto& gb = slot(grads, tape, n.rhs);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*a)[i];
      }
      return;
    case Op::Div:
      if (wl) {
        auto& ga = slot(grads, tape, n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*b)[i];
      }
      if (wr) {
        auto& gb = slot(grads, tape, n.rhs);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * (*a)[i] / ((*b)[i] * (*b)[i]);
      }
      return;
    case Op::Scale: {
      auto& ga = slot(grads, tape, n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.p0 * g[i];
      return;
    }
    case Op::AddScalar:
    case Op::Reshape: {
      auto& ga = slot(grads, tape, n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      return;
    }
    case Op::Square: {
      auto& ga = slot(grads, tape, n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * (*a)[i] * g[i];
      return;
    }
    case Op::Sqrt: {
      auto& ga = slot(grads, tape, n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (2.0 * y[i]);
      return;
    }
    case Op::Exp: {
      auto& ga = slot(grads, tape, n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      return;
    }
    case Op::Log: {
      auto& ga = slot(grads, tape, n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*a)[i];
      return;
    }
    case Op::Sum: {
      auto& ga = slot(grads, tape, n.lhs);
      const double gv = g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
      return;
    }
    case Op::Mean: {
      auto& ga = slot(grads, tape, n.lhs);
      const double gv = g[0] / static_cast<double>(ga.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
      return;
    }
    case Op::SumAxis: {
      auto& ga = slot(grads, tape, n.lhs);
      const auto sp = split_axis(a->shape(), static_cast<std::size_t>(n.axis), "sum_axis");
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.n; ++k)
          for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
      return;
    }
    case Op::LogSumExp: {
      auto& ga = slot(grads, tape, n.lhs);
      const auto sp = split_axis(a->shape(), static_cast<std::size_t>(n.axis), "logsumexp");
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.n; ++k)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t src = (o * sp.n + k) * sp.inner + i;
            const double lse = y[o * sp.inner + i];
            if (!std::isfinite(lse)) continue;
            ga[src] += g[o * sp.inner + i] * std::exp((*a)[src] - lse);
          }
      return;
    }
    case Op::Norm2: {
      auto& ga = slot(grads, tape, n.lhs);
      const double nrm = y[0];
      if (nrm == 0.0) return;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * (*a)[i] / nrm;
      return;
    }
    case Op::Conv2d: {
      Tensor* gx = wl ? &slot(grads, tape, n.lhs) : nullptr;
      Tensor* gw = wr ? &slot(grads, tape, n.rhs) : nullptr;
      conv2d_backward(*a, *b, g, gx, gw);
      return;
    }
    case Op::Shift: {
      auto& ga = slot(grads, tape, n.lhs);
      const auto sp = split_axis(a->shape(), static_cast<std::size_t>(n.axis), "shift");
      for (std::size_t k = 0; k < sp.n; ++k) {
        bool valid = false;
        const std::size_t src = shift_source(static_cast<std::int64_t>(k), n.offset, sp.n, n.pad, valid);
        if (!valid) continue;
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i)
            ga[(o * sp.n + src) * sp.inner + i] += g[(o * sp.n + k) * sp.inner + i];
      }
      return;
    }
    case Op::Clamp: {
      auto& ga = slot(grads, tape, n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if ((*a)[i] > n.p0 && (*a)[i] < n.p1) ga[i] += g[i];
      }
      return;
    }
    case Op::BroadcastTo: {
      auto& ga = slot(grads, tape, n.lhs);
      const auto map = broadcast_map(a->shape(), y.shape());
      for (std::size_t i = 0; i < map.size(); ++i) ga[map[i]] += g[i];
      return;
    }
    case Op::MatMul: {
      const std::size_t m = a->shape()[0], k = a->shape()[1], nn = b->shape()[1];
      if (wl) {
        auto& ga = slot(grads, tape, n.lhs);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < nn; ++j) s += g[i * nn + j] * (*b)[p * nn + j];
            ga[i * k + p] += s;
          }
      }
      if (wr) {
        auto& gb = slot(grads, tape, n.rhs);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = (*a)[i * k + p];
            for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += av * g[i * nn + j];
          }
      }
      return;
    }
    case Op::Take: {
      auto& ga = slot(grads, tape, n.lhs);
      const auto sp = split_axis(a->shape(), static_cast<std::size_t>(n.axis), "take");
      const auto index = static_cast<std::size_t>(n.offset);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.n + index) * sp.inner + i] += g[o * sp.inner + i];
      return;
    }
  }
}

}  // namespace

GradientMap backward(const Var& root, const Tensor& seed) {
  const Tape& tape = root.tape();
  const TapeNode& rn = tape.node(root.index());
  if (!rn.requires_grad) {
    throw std::logic_error(std::string("backward: node ") + std::to_string(root.index()) + " (" + op_name(rn.op) +
                           ") is not traced");
  }
  require_same_shape(rn.value.shape(), seed.shape(), "backward seed");

  std::vector<std::optional<Tensor>> grads(root.index() + 1);
  grads[root.index()] = seed;
  for (std::size_t i = root.index() + 1; i-- > 0;) {
    if (!grads[i]) continue;
    const TapeNode& n = tape.node(i);
    if (!n.requires_grad || n.op == Op::Leaf) continue;
    propagate(tape, n, *grads[i], grads);
    grads[i].reset();
  }
  return GradientMap(&tape, std::move(grads));
}

GradientMap backward(const Var& root) {
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root of shape " + shape_str(root.shape()) + " needs an explicit seed");
  }
  return backward(root, Tensor(root.shape(), 1.0));
}

}  // namespace gradpaint::ad
