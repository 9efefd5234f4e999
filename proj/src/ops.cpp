#include "posedepth/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace posedepth {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Wraps a computed value into a tensor, recording it when any input carries
/// gradients.
Tensor finish(Shape shape, Buffer value, const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tape* tape = common_tape(inputs);
  if (!tape) return Tensor(std::move(shape), std::move(value));
  return tape->record(std::move(shape), std::move(value), inputs, std::move(backward));
}

Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw Error(ErrorCode::InvalidAxis, "axis out of range");
  return axis;
}

/// outer x extent x inner decomposition around one axis.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

/// For each flat output index, the flat index of the broadcast source.
std::vector<Index> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<Index> in_stride(r, 0);
  Index stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_stride[i + off] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  const Index n = numel(out);
  std::vector<Index> map(static_cast<std::size_t>(n));
  std::vector<Index> idx(r, 0);
  Index src = 0;
  for (Index flat = 0; flat < n; ++flat) {
    map[static_cast<std::size_t>(flat)] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        src += in_stride[d];
        break;
      }
      src -= in_stride[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
  return map;
}

/// Operand expanded to the output shape, plus the map needed to fold
/// gradients back (empty when no expansion happened).
struct Operand {
  std::shared_ptr<const Buffer> values;
  std::vector<Index> map;
};

Operand expand(const Tensor& t, const Shape& out) {
  if (t.shape() == out) return {t.shared_data(), {}};
  Operand op;
  op.map = broadcast_map(t.shape(), out);
  auto values = std::make_shared<Buffer>(static_cast<Index>(op.map.size()));
  const Buffer& src = t.data();
  for (std::size_t i = 0; i < op.map.size(); ++i) (*values)[static_cast<Index>(i)] = src[op.map[i]];
  op.values = std::move(values);
  return op;
}

void fold_into(Buffer& dst, const Buffer& full, const std::vector<Index>& map) {
  if (map.empty()) {
    dst += full;
    return;
  }
  for (std::size_t i = 0; i < map.size(); ++i) dst[map[i]] += full[static_cast<Index>(i)];
}

/// fwd(A, B) -> Y; bwd(A, B, Y, G, want_a, want_b) -> {dA, dB} at output size.
template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  Operand A = expand(a, out);
  Operand B = expand(b, out);
  Buffer y = fwd(*A.values, *B.values);
  auto fn = [A, B, bwd](const Buffer& g, std::span<Buffer* const> gin) {
    auto [da, db] = bwd(*A.values, *B.values, g, gin[0] != nullptr, gin[1] != nullptr);
    if (gin[0]) fold_into(*gin[0], da, A.map);
    if (gin[1]) fold_into(*gin[1], db, B.map);
  };
  return finish(std::move(out), std::move(y), {a, b}, fn);
}

/// bwd(X, Y, G) -> dX.
template <class Bwd>
Tensor unary_op(const Tensor& x, Buffer y, Bwd bwd) {
  auto xv = x.shared_data();
  auto yv = std::make_shared<const Buffer>(y);
  auto fn = [xv, yv, bwd](const Buffer& g, std::span<Buffer* const> gin) { *gin[0] += bwd(*xv, *yv, g); };
  return finish(x.shape(), std::move(y), {x}, fn);
}

void require_finite(const Buffer& y, const char* op) {
  if (!y.allFinite()) throw Error(ErrorCode::DomainError, std::string(op) + " produced a non-finite value");
}

}  // namespace

// Elementwise -----------------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Index ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const Index eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw Error(ErrorCode::ShapeMismatch, "cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[r - 1 - i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](const Buffer& x, const Buffer& y) -> Buffer { return x + y; },
      [](const Buffer&, const Buffer&, const Buffer& g, bool, bool) { return std::pair<Buffer, Buffer>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](const Buffer& x, const Buffer& y) -> Buffer { return x - y; },
      [](const Buffer&, const Buffer&, const Buffer& g, bool, bool) {
        return std::pair<Buffer, Buffer>{g, -g};
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](const Buffer& x, const Buffer& y) -> Buffer { return x * y; },
      [](const Buffer& x, const Buffer& y, const Buffer& g, bool wa, bool wb) {
        return std::pair<Buffer, Buffer>{wa ? Buffer(g * y) : Buffer(), wb ? Buffer(g * x) : Buffer()};
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  if ((b.data() == 0.0).any()) throw Error(ErrorCode::DomainError, "division by zero");
  return binary_op(
      a, b, [](const Buffer& x, const Buffer& y) -> Buffer { return x / y; },
      [](const Buffer& x, const Buffer& y, const Buffer& g, bool wa, bool wb) {
        return std::pair<Buffer, Buffer>{wa ? Buffer(g / y) : Buffer(), wb ? Buffer(-g * x / (y * y)) : Buffer()};
      });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](const Buffer& x, const Buffer& y) -> Buffer { return x.min(y); },
      [](const Buffer& x, const Buffer& y, const Buffer& g, bool, bool) {
        Buffer pick = (x <= y).cast<double>();
        return std::pair<Buffer, Buffer>{g * pick, g * (1.0 - pick)};
      });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](const Buffer& x, const Buffer& y) -> Buffer { return x.max(y); },
      [](const Buffer& x, const Buffer& y, const Buffer& g, bool, bool) {
        Buffer pick = (x >= y).cast<double>();
        return std::pair<Buffer, Buffer>{g * pick, g * (1.0 - pick)};
      });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, -x.data(), [](const Buffer&, const Buffer&, const Buffer& g) -> Buffer { return -g; });
}

Tensor abs(const Tensor& x) {
  return unary_op(x, x.data().abs(), [](const Buffer& v, const Buffer&, const Buffer& g) -> Buffer {
    return g * ((v > 0.0).cast<double>() - (v < 0.0).cast<double>());
  });
}

Tensor exp(const Tensor& x) {
  Buffer y = x.data().exp();
  require_finite(y, "exp");
  return unary_op(x, std::move(y), [](const Buffer&, const Buffer& out, const Buffer& g) -> Buffer { return g * out; });
}

Tensor log(const Tensor& x) {
  if ((x.data() <= 0.0).any()) throw Error(ErrorCode::DomainError, "log of a non-positive value");
  return unary_op(x, x.data().log(), [](const Buffer& v, const Buffer&, const Buffer& g) -> Buffer { return g / v; });
}

Tensor pow(const Tensor& x, double exponent) {
  const bool integral = exponent == std::floor(exponent);
  if (!integral && (x.data() < 0.0).any()) throw Error(ErrorCode::DomainError, "fractional power of a negative value");
  if (exponent < 0.0 && (x.data() == 0.0).any()) throw Error(ErrorCode::DomainError, "negative power of zero");
  Buffer y = x.data().pow(exponent);
  require_finite(y, "pow");
  return unary_op(x, std::move(y), [exponent](const Buffer& v, const Buffer&, const Buffer& g) -> Buffer {
    if (exponent == 0.0) return Buffer::Zero(v.size());
    return g * exponent * v.pow(exponent - 1.0);
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw Error(ErrorCode::InvalidArgument, "clamp with lo > hi");
  return unary_op(x, x.data().max(lo).min(hi), [lo, hi](const Buffer& v, const Buffer&, const Buffer& g) -> Buffer {
    return g * ((v >= lo) && (v <= hi)).cast<double>();
  });
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const std::optional<Tensor>& b, ElementwiseParams params) {
  auto rhs = [&]() -> const Tensor& {
    if (!b) throw Error(ErrorCode::InvalidArgument, "binary elementwise kind without second operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseKind::Add: return add(a, rhs());
    case ElementwiseKind::Sub: return sub(a, rhs());
    case ElementwiseKind::Mul: return mul(a, rhs());
    case ElementwiseKind::Div: return div(a, rhs());
    case ElementwiseKind::Min: return minimum(a, rhs());
    case ElementwiseKind::Max: return maximum(a, rhs());
    case ElementwiseKind::Neg: return neg(a);
    case ElementwiseKind::Abs: return abs(a);
    case ElementwiseKind::Exp: return exp(a);
    case ElementwiseKind::Log: return log(a);
    case ElementwiseKind::PowScalar: return pow(a, params.exponent);
    case ElementwiseKind::Clamp: return clamp(a, params.lo, params.hi);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown elementwise kind");
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& x) { return neg(x); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

// Activations -------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  return unary_op(x, x.data().max(0.0), [](const Buffer& v, const Buffer&, const Buffer& g) -> Buffer {
    return g * (v > 0.0).cast<double>();
  });
}

Tensor elu(const Tensor& x) {
  const Buffer& v = x.data();
  Buffer y = (v > 0.0).select(v, v.exp() - 1.0);
  return unary_op(x, std::move(y), [](const Buffer& in, const Buffer& out, const Buffer& g) -> Buffer {
    return g * (in > 0.0).select(Buffer::Ones(in.size()), out + 1.0);
  });
}

Tensor sigmoid(const Tensor& x) {
  const Buffer& v = x.data();
  // Branch on sign so neither exp overflows.
  Buffer y = (v >= 0.0).select(1.0 / (1.0 + (-v).exp()), v.exp() / (1.0 + v.exp()));
  return unary_op(x, std::move(y), [](const Buffer&, const Buffer& out, const Buffer& g) -> Buffer {
    return g * out * (1.0 - out);
  });
}

Tensor activation(ActivationKind kind, const Tensor& x) {
  switch (kind) {
    case ActivationKind::Elu: return elu(x);
    case ActivationKind::Sigmoid: return sigmoid(x);
    case ActivationKind::Relu: return relu(x);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown activation");
}

// Linear algebra and layout -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "matmul of " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer y(m * n);
  MatrixMap(y.data(), m, n).noalias() = ConstMatrixMap(a.data().data(), m, k) * ConstMatrixMap(b.data().data(), k, n);
  auto av = a.shared_data();
  auto bv = b.shared_data();
  auto fn = [av, bv, m, k, n](const Buffer& g, std::span<Buffer* const> gin) {
    ConstMatrixMap G(g.data(), m, n);
    if (gin[0]) MatrixMap(gin[0]->data(), m, k).noalias() += G * ConstMatrixMap(bv->data(), k, n).transpose();
    if (gin[1]) MatrixMap(gin[1]->data(), k, n).noalias() += ConstMatrixMap(av->data(), m, k).transpose() * G;
  };
  return finish({m, n}, std::move(y), {a, b}, fn);
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "transpose needs a rank-2 tensor");
  const Index m = x.dim(0), n = x.dim(1);
  Buffer y(m * n);
  MatrixMap(y.data(), n, m) = ConstMatrixMap(x.data().data(), m, n).transpose();
  auto fn = [m, n](const Buffer& g, std::span<Buffer* const> gin) {
    MatrixMap(gin[0]->data(), m, n) += ConstMatrixMap(g.data(), n, m).transpose();
  };
  return finish({n, m}, std::move(y), {x}, fn);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  if (!x.requires_grad()) return x.with_shape(std::move(shape));
  auto fn = [](const Buffer& g, std::span<Buffer* const> gin) { *gin[0] += g; };
  return finish(std::move(shape), x.data(), {x}, fn);
}

Tensor slice(const Tensor& x, Index axis, Index start, Index length) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > s.extent) {
    throw Error(ErrorCode::IndexOutOfRange, "slice out of range for " + to_string(x.shape()));
  }
  Shape out = x.shape();
  out[static_cast<std::size_t>(axis)] = length;
  Buffer y(s.outer * length * s.inner);
  const Buffer& v = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    y.segment(o * length * s.inner, length * s.inner) = v.segment((o * s.extent + start) * s.inner, length * s.inner);
  }
  auto fn = [s, start, length](const Buffer& g, std::span<Buffer* const> gin) {
    for (Index o = 0; o < s.outer; ++o) {
      gin[0]->segment((o * s.extent + start) * s.inner, length * s.inner) += g.segment(o * length * s.inner, length * s.inner);
    }
  };
  return finish(std::move(out), std::move(y), {x}, fn);
}

Tensor concat(std::span<const Tensor> parts, Index axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of no tensors");
  const Index rank = parts[0].rank();
  axis = normalize_axis(axis, rank);
  Shape out = parts[0].shape();
  Index total = 0;
  std::vector<Index> extents;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw Error(ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (Index d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != out[static_cast<std::size_t>(d)]) {
        throw Error(ErrorCode::ShapeMismatch, "concat extent mismatch: " + to_string(p.shape()));
      }
    }
    extents.push_back(p.shape()[static_cast<std::size_t>(axis)]);
    total += extents.back();
  }
  out[static_cast<std::size_t>(axis)] = total;
  const AxisSplit s = split_at(out, axis);
  Buffer y(numel(out));
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Index len = extents[i] * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      y.segment(o * total * s.inner + offset * s.inner, len) = parts[i].data().segment(o * len, len);
    }
    offset += extents[i];
  }
  auto fn = [s, total, extents](const Buffer& g, std::span<Buffer* const> gin) {
    Index off = 0;
    for (std::size_t i = 0; i < extents.size(); ++i) {
      const Index len = extents[i] * s.inner;
      if (gin[i]) {
        for (Index o = 0; o < s.outer; ++o) gin[i]->segment(o * len, len) += g.segment(o * total * s.inner + off * s.inner, len);
      }
      off += extents[i];
    }
  };
  return finish(std::move(out), std::move(y), std::vector<Tensor>(parts.begin(), parts.end()), fn);
}

Tensor concat(std::initializer_list<Tensor> parts, Index axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor detach(const Tensor& x) { return x.detached(); }

// Reductions ------------------------------------------------------------------------

Tensor reduce(ReduceKind kind, const Tensor& x, std::vector<Index> axes) {
  const Index rank = x.rank();
  for (Index& a : axes) a = normalize_axis(a, rank);
  std::vector<Index> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::InvalidAxis, "duplicated reduction axis");
  }
  if (sorted.empty()) throw Error(ErrorCode::InvalidAxis, "no reduction axis given");

  if (kind == ReduceKind::MinOverAxis) {
    if (sorted.size() != 1) throw Error(ErrorCode::InvalidAxis, "min_over_axis takes exactly one axis");
    return min_over_axis(x, sorted[0]);
  }

  Shape out;
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  for (Index a : sorted) reduced[static_cast<std::size_t>(a)] = true;
  Index count = 1;
  for (Index d = 0; d < rank; ++d) {
    if (reduced[static_cast<std::size_t>(d)]) count *= x.shape()[static_cast<std::size_t>(d)];
    else out.push_back(x.shape()[static_cast<std::size_t>(d)]);
  }
  if (out.empty()) out = {1};

  // Map every input element to its output slot.
  Shape keep = x.shape();
  for (Index a : sorted) keep[static_cast<std::size_t>(a)] = 1;
  auto map = std::make_shared<std::vector<Index>>();
  if (numel(out) == 1) {
    map->assign(static_cast<std::size_t>(x.numel()), 0);
  } else {
    // broadcast_map(keep -> x.shape) gives, for each input index, the index in the kept layout.
    *map = broadcast_map(keep, x.shape());
  }

  const double scale = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(count) : 1.0;
  Buffer y = Buffer::Zero(numel(out));
  const Buffer& v = x.data();
  if (numel(out) == 1) {
    y[0] = v.sum() * scale;
  } else {
    for (std::size_t i = 0; i < map->size(); ++i) y[(*map)[i]] += v[static_cast<Index>(i)];
    y *= scale;
  }
  auto fn = [map, scale](const Buffer& g, std::span<Buffer* const> gin) {
    Buffer& gx = *gin[0];
    for (std::size_t i = 0; i < map->size(); ++i) gx[static_cast<Index>(i)] += g[(*map)[i]] * scale;
  };
  return finish(std::move(out), std::move(y), {x}, fn);
}

Tensor sum(const Tensor& x) {
  std::vector<Index> axes(static_cast<std::size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), Index{0});
  return reduce(ReduceKind::Sum, x, axes);
}

Tensor sum(const Tensor& x, std::vector<Index> axes) { return reduce(ReduceKind::Sum, x, std::move(axes)); }

Tensor mean(const Tensor& x) {
  std::vector<Index> axes(static_cast<std::size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), Index{0});
  return reduce(ReduceKind::Mean, x, axes);
}

Tensor mean(const Tensor& x, std::vector<Index> axes) { return reduce(ReduceKind::Mean, x, std::move(axes)); }

Tensor min_over_axis(const Tensor& x, Index axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out = x.shape();
  out.erase(out.begin() + axis);
  if (out.empty()) out = {1};
  Buffer y(s.outer * s.inner);
  auto arg = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(s.outer * s.inner));
  const Buffer& v = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Index best = 0;
      double bv = v[o * s.extent * s.inner + i];
      for (Index k = 1; k < s.extent; ++k) {
        const double c = v[(o * s.extent + k) * s.inner + i];
        if (c < bv) {
          bv = c;
          best = k;
        }
      }
      y[o * s.inner + i] = bv;
      (*arg)[static_cast<std::size_t>(o * s.inner + i)] = (o * s.extent + best) * s.inner + i;
    }
  }
  auto fn = [arg](const Buffer& g, std::span<Buffer* const> gin) {
    for (std::size_t j = 0; j < arg->size(); ++j) (*gin[0])[(*arg)[j]] += g[static_cast<Index>(j)];
  };
  return finish(std::move(out), std::move(y), {x}, fn);
}

Tensor softmax(const Tensor& x, Index axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  const Buffer& v = x.data();
  Buffer y(v.size());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.extent; ++k) m = std::max(m, v[base + k * s.inner]);
      double z = 0.0;
      for (Index k = 0; k < s.extent; ++k) {
        const double e = std::exp(v[base + k * s.inner] - m);
        y[base + k * s.inner] = e;
        z += e;
      }
      for (Index k = 0; k < s.extent; ++k) y[base + k * s.inner] /= z;
    }
  }
  auto yv = std::make_shared<const Buffer>(y);
  auto fn = [yv, s](const Buffer& g, std::span<Buffer* const> gin) {
    const Buffer& p = *yv;
    Buffer& gx = *gin[0];
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (Index k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * p[base + k * s.inner];
        for (Index k = 0; k < s.extent; ++k) {
          gx[base + k * s.inner] += p[base + k * s.inner] * (g[base + k * s.inner] - dot);
        }
      }
    }
  };
  return finish(x.shape(), std::move(y), {x}, fn);
}

// Image operations ------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, Index stride,
              Index padding) {
  if (input.rank() != 3 || weight.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "conv2d expects CxHxW input and 4-d weight");
  const Index cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) throw Error(ErrorCode::ShapeMismatch, "conv2d channel mismatch");
  if (weight.dim(3) != k || k % 2 == 0) throw Error(ErrorCode::ShapeMismatch, "conv2d needs a square odd kernel");
  if (stride < 1 || padding < 0) throw Error(ErrorCode::InvalidArgument, "conv2d stride/padding");
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) throw Error(ErrorCode::ShapeMismatch, "conv2d bias shape");
  const Index span_h = h + 2 * padding - k, span_w = w + 2 * padding - k;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw Error(ErrorCode::NonIntegralOutputSize, "conv2d output size for input " + to_string(input.shape()));
  }
  const Index ho = span_h / stride + 1, wo = span_w / stride + 1;
  const Index kk = cin * k * k, pix = ho * wo;

  // im2col: rows (c, ki, kj), columns output pixels.
  auto col = std::make_shared<RowMatrix>(RowMatrix::Zero(kk, pix));
  const double* in = input.data().data();
  for (Index c = 0; c < cin; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        double* row = col->row((c * k + ki) * k + kj).data();
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride + ki - padding;
          if (iy < 0 || iy >= h) continue;
          const double* src = in + (c * h + iy) * w;
          double* dst = row + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride + kj - padding;
            if (ix >= 0 && ix < w) dst[ox] = src[ix];
          }
        }
      }
    }
  }

  Buffer y(cout * pix);
  MatrixMap Y(y.data(), cout, pix);
  Y.noalias() = ConstMatrixMap(weight.data().data(), cout, kk) * (*col);
  if (bias) {
    for (Index o = 0; o < cout; ++o) Y.row(o).array() += bias->data()[o];
  }

  auto wv = weight.shared_data();
  auto fn = [col, wv, cin, h, w, cout, k, kk, ho, wo, pix, stride, padding](const Buffer& g,
                                                                            std::span<Buffer* const> gin) {
    ConstMatrixMap G(g.data(), cout, pix);
    if (gin[1]) MatrixMap(gin[1]->data(), cout, kk).noalias() += G * col->transpose();
    if (gin.size() > 2 && gin[2]) gin[2]->matrix() += G.rowwise().sum();
    if (gin[0]) {
      RowMatrix gcol = ConstMatrixMap(wv->data(), cout, kk).transpose() * G;
      double* gi = gin[0]->data();
      for (Index c = 0; c < cin; ++c) {
        for (Index ki = 0; ki < k; ++ki) {
          for (Index kj = 0; kj < k; ++kj) {
            const double* row = gcol.row((c * k + ki) * k + kj).data();
            for (Index oy = 0; oy < ho; ++oy) {
              const Index iy = oy * stride + ki - padding;
              if (iy < 0 || iy >= h) continue;
              double* dst = gi + (c * h + iy) * w;
              const double* src = row + oy * wo;
              for (Index ox = 0; ox < wo; ++ox) {
                const Index ix = ox * stride + kj - padding;
                if (ix >= 0 && ix < w) dst[ix] += src[ox];
              }
            }
          }
        }
      }
    }
  };
  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return finish({cout, ho, wo}, std::move(y), inputs, fn);
}

namespace {

/// Snaps coordinates within this distance of a lattice point onto it so that
/// lattice-aligned sampling is bit-exact.
constexpr double kLatticeSnap = 1e-9;

struct Tap {
  Index i0;         // lower lattice index
  double weight;    // fraction toward i0 + 1
  bool in_range;    // coordinate inside [0, n-1] before clamping
};

Tap make_tap(double p, Index n) {
  Tap t{0, 0.0, true};
  if (!std::isfinite(p)) return {0, 0.0, false};
  const double r = std::round(p);
  if (std::abs(p - r) < kLatticeSnap) p = r;
  if (p < 0.0 || p > static_cast<double>(n - 1)) {
    t.in_range = false;
    p = std::clamp(p, 0.0, static_cast<double>(n - 1));
  }
  if (n == 1) return {0, 0.0, t.in_range};
  Index i0 = static_cast<Index>(std::floor(p));
  i0 = std::min(i0, n - 2);
  t.i0 = i0;
  t.weight = p - static_cast<double>(i0);
  return t;
}

}  // namespace

SampleResult grid_sample_bilinear(const Tensor& image, const Tensor& grid) {
  if (image.rank() != 3 || grid.rank() != 3 || grid.dim(0) != 2) {
    throw Error(ErrorCode::ShapeMismatch, "grid_sample expects CxHxW image and 2xHxW grid");
  }
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const Index ho = grid.dim(1), wo = grid.dim(2), pix = ho * wo;
  const Buffer& gv = grid.data();
  auto taps = std::make_shared<std::vector<std::pair<Tap, Tap>>>(static_cast<std::size_t>(pix));
  Buffer valid(pix);
  const double sx = 0.5 * static_cast<double>(w - 1), sy = 0.5 * static_cast<double>(h - 1);
  for (Index p = 0; p < pix; ++p) {
    const Tap tx = make_tap((gv[p] + 1.0) * sx, w);
    const Tap ty = make_tap((gv[pix + p] + 1.0) * sy, h);
    (*taps)[static_cast<std::size_t>(p)] = {tx, ty};
    valid[p] = (tx.in_range && ty.in_range) ? 1.0 : 0.0;
  }

  const Index x_step = w > 1 ? 1 : 0, y_step = h > 1 ? w : 0;
  const Buffer& iv = image.data();
  Buffer y(c * pix);
  for (Index ch = 0; ch < c; ++ch) {
    const double* src = iv.data() + ch * h * w;
    for (Index p = 0; p < pix; ++p) {
      const auto& [tx, ty] = (*taps)[static_cast<std::size_t>(p)];
      const Index base = ty.i0 * w + tx.i0;
      const double i00 = src[base], i01 = src[base + x_step];
      const double i10 = src[base + y_step], i11 = src[base + y_step + x_step];
      const double top = i00 + tx.weight * (i01 - i00);
      const double bot = i10 + tx.weight * (i11 - i10);
      y[ch * pix + p] = top + ty.weight * (bot - top);
    }
  }

  auto img = image.shared_data();
  auto fn = [taps, img, c, h, w, pix, sx, sy, x_step, y_step](const Buffer& g, std::span<Buffer* const> gin) {
    for (Index ch = 0; ch < c; ++ch) {
      const double* src = img->data() + ch * h * w;
      for (Index p = 0; p < pix; ++p) {
        const auto& [tx, ty] = (*taps)[static_cast<std::size_t>(p)];
        const double go = g[ch * pix + p];
        if (go == 0.0) continue;
        const Index base = ty.i0 * w + tx.i0;
        const double ax = tx.weight, ay = ty.weight;
        if (gin[0]) {
          double* gi = gin[0]->data() + ch * h * w;
          gi[base] += go * (1.0 - ax) * (1.0 - ay);
          gi[base + x_step] += go * ax * (1.0 - ay);
          gi[base + y_step] += go * (1.0 - ax) * ay;
          gi[base + y_step + x_step] += go * ax * ay;
        }
        if (gin[1]) {
          const double i00 = src[base], i01 = src[base + x_step];
          const double i10 = src[base + y_step], i11 = src[base + y_step + x_step];
          double* gg = gin[1]->data();
          if (tx.in_range && x_step) gg[p] += go * sx * ((1.0 - ay) * (i01 - i00) + ay * (i11 - i10));
          if (ty.in_range && y_step) {
            const double top = i00 + ax * (i01 - i00);
            const double bot = i10 + ax * (i11 - i10);
            gg[pix + p] += go * sy * (bot - top);
          }
        }
      }
    }
  };
  Tensor out = finish({c, ho, wo}, std::move(y), {image, grid}, fn);
  return {out, Tensor({ho, wo}, std::move(valid))};
}

Tensor identity_grid(Index height, Index width) {
  if (height < 2 || width < 2) throw Error(ErrorCode::ShapeMismatch, "identity grid needs extents >= 2");
  Buffer g(2 * height * width);
  for (Index yy = 0; yy < height; ++yy) {
    for (Index xx = 0; xx < width; ++xx) {
      g[yy * width + xx] = 2.0 * static_cast<double>(xx) / static_cast<double>(width - 1) - 1.0;
      g[height * width + yy * width + xx] = 2.0 * static_cast<double>(yy) / static_cast<double>(height - 1) - 1.0;
    }
  }
  return Tensor({2, height, width}, std::move(g));
}

Tensor upsample_bilinear(const Tensor& x, Index factor) {
  if (x.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "upsample expects CxHxW");
  if (factor < 1) throw Error(ErrorCode::InvalidArgument, "upsample factor must be a positive integer");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index ho = h * factor, wo = w * factor;
  auto axis_taps = [](Index n_in, Index n_out) {
    std::vector<Tap> taps(static_cast<std::size_t>(n_out));
    const double scale = n_out > 1 ? static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1) : 0.0;
    for (Index i = 0; i < n_out; ++i) taps[static_cast<std::size_t>(i)] = make_tap(static_cast<double>(i) * scale, n_in);
    return taps;
  };
  auto ty = std::make_shared<std::vector<Tap>>(axis_taps(h, ho));
  auto tx = std::make_shared<std::vector<Tap>>(axis_taps(w, wo));
  const Index x_step = w > 1 ? 1 : 0, y_step = h > 1 ? w : 0;
  const Buffer& v = x.data();
  Buffer y(c * ho * wo);
  for (Index ch = 0; ch < c; ++ch) {
    const double* src = v.data() + ch * h * w;
    for (Index oy = 0; oy < ho; ++oy) {
      const Tap& a = (*ty)[static_cast<std::size_t>(oy)];
      for (Index ox = 0; ox < wo; ++ox) {
        const Tap& b = (*tx)[static_cast<std::size_t>(ox)];
        const Index base = a.i0 * w + b.i0;
        const double top = src[base] + b.weight * (src[base + x_step] - src[base]);
        const double bot = src[base + y_step] + b.weight * (src[base + y_step + x_step] - src[base + y_step]);
        y[(ch * ho + oy) * wo + ox] = top + a.weight * (bot - top);
      }
    }
  }
  auto fn = [ty, tx, c, h, w, ho, wo, x_step, y_step](const Buffer& g, std::span<Buffer* const> gin) {
    for (Index ch = 0; ch < c; ++ch) {
      double* gi = gin[0]->data() + ch * h * w;
      for (Index oy = 0; oy < ho; ++oy) {
        const Tap& a = (*ty)[static_cast<std::size_t>(oy)];
        for (Index ox = 0; ox < wo; ++ox) {
          const Tap& b = (*tx)[static_cast<std::size_t>(ox)];
          const double go = g[(ch * ho + oy) * wo + ox];
          const Index base = a.i0 * w + b.i0;
          gi[base] += go * (1.0 - b.weight) * (1.0 - a.weight);
          gi[base + x_step] += go * b.weight * (1.0 - a.weight);
          gi[base + y_step] += go * (1.0 - b.weight) * a.weight;
          gi[base + y_step + x_step] += go * b.weight * a.weight;
        }
      }
    }
  };
  return finish({c, ho, wo}, std::move(y), {x}, fn);
}

Tensor avg_pool2d(const Tensor& x, Index kernel_h, Index kernel_w) {
  if (x.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "avg_pool2d expects CxHxW");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (kernel_h < 1 || kernel_w < 1 || h % kernel_h != 0 || w % kernel_w != 0) {
    throw Error(ErrorCode::ShapeMismatch, "avg_pool2d window does not tile " + to_string(x.shape()));
  }
  const Index ho = h / kernel_h, wo = w / kernel_w;
  const double scale = 1.0 / static_cast<double>(kernel_h * kernel_w);
  const Buffer& v = x.data();
  Buffer y = Buffer::Zero(c * ho * wo);
  for (Index ch = 0; ch < c; ++ch)
    for (Index iy = 0; iy < h; ++iy)
      for (Index ix = 0; ix < w; ++ix) y[(ch * ho + iy / kernel_h) * wo + ix / kernel_w] += v[(ch * h + iy) * w + ix];
  y *= scale;
  auto fn = [c, h, w, ho, wo, kernel_h, kernel_w, scale](const Buffer& g, std::span<Buffer* const> gin) {
    Buffer& gi = *gin[0];
    for (Index ch = 0; ch < c; ++ch)
      for (Index iy = 0; iy < h; ++iy)
        for (Index ix = 0; ix < w; ++ix)
          gi[(ch * h + iy) * w + ix] += scale * g[(ch * ho + iy / kernel_h) * wo + ix / kernel_w];
  };
  return finish({c, ho, wo}, std::move(y), {x}, fn);
}

namespace {

Index reflect(Index i, Index n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

/// One separable box pass along rows (axis_w = true) or columns. `transpose`
/// applies the adjoint.
void box_pass(const double* src, double* dst, Index c, Index h, Index w, Index radius, bool along_w, bool transpose) {
  const double scale = 1.0 / static_cast<double>(2 * radius + 1);
  for (Index ch = 0; ch < c; ++ch) {
    const double* s = src + ch * h * w;
    double* d = dst + ch * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        for (Index o = -radius; o <= radius; ++o) {
          const Index j = along_w ? y * w + reflect(x + o, w) : reflect(y + o, h) * w + x;
          if (transpose) d[j] += scale * s[y * w + x];
          else d[y * w + x] += scale * s[j];
        }
      }
    }
  }
}

}  // namespace

Tensor box_filter(const Tensor& x, Index window) {
  if (x.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "box_filter expects CxHxW");
  if (window < 1 || window % 2 == 0) throw Error(ErrorCode::InvalidArgument, "box_filter window must be odd");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2), r = window / 2;
  if (r >= h || r >= w) throw Error(ErrorCode::ShapeMismatch, "box_filter window larger than image");
  Buffer tmp = Buffer::Zero(x.numel());
  Buffer y = Buffer::Zero(x.numel());
  box_pass(x.data().data(), tmp.data(), c, h, w, r, true, false);
  box_pass(tmp.data(), y.data(), c, h, w, r, false, false);
  auto fn = [c, h, w, r](const Buffer& g, std::span<Buffer* const> gin) {
    Buffer t = Buffer::Zero(g.size());
    box_pass(g.data(), t.data(), c, h, w, r, false, true);
    box_pass(t.data(), gin[0]->data(), c, h, w, r, true, true);
  };
  return finish(x.shape(), std::move(y), {x}, fn);
}

}  // namespace posedepth
