// Copyright 2026 The FGAes Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fgaes/ndiff.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace fgaes::nd {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

int NormalizeAxis(int axis, int rank, const char* op, const Shape& shape) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(op, {shape}, "axis " + std::to_string(axis));
  }
  return a;
}

// Splits shape around axis into (outer, extent, inner) products.
struct AxisSplit {
  std::size_t outer = 1;
  int extent = 1;
  std::size_t inner = 1;
};

AxisSplit SplitAt(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) {
    s.inner *= shape[i];
  }
  return s;
}

Shape DropAxis(const Shape& shape, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

Shape BroadcastShape(const char* op, const Shape& a, const Shape& b) {
  const int rank = static_cast<int>(std::max(a.size(), b.size()));
  Shape out(rank);
  for (int i = 0; i < rank; ++i) {
    const int ai = i - (rank - static_cast<int>(a.size()));
    const int bi = i - (rank - static_cast<int>(b.size()));
    const int da = ai >= 0 ? a[ai] : 1;
    const int db = bi >= 0 ? b[bi] : 1;
    if (da != db && da != 1 && db != 1) throw ShapeError(op, {a, b});
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `shape` laid against `out`, with zero stride on
// broadcast dimensions.
std::vector<std::size_t> BroadcastStrides(const Shape& shape,
                                          const Shape& out) {
  const int rank = static_cast<int>(out.size());
  const int offset = rank - static_cast<int>(shape.size());
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (int i = rank - 1; i >= 0; --i) {
    const int si = i - offset;
    if (si < 0) continue;
    strides[i] = shape[si] == 1 ? 0 : stride;
    stride *= shape[si];
  }
  return strides;
}

// Maps every flat output index to a flat input index under broadcasting.
std::vector<std::size_t> BroadcastIndex(const Shape& shape, const Shape& out) {
  const std::size_t n = ShapeSize(out);
  std::vector<std::size_t> index(n);
  if (shape == out) {
    for (std::size_t i = 0; i < n; ++i) index[i] = i;
    return index;
  }
  const std::size_t in_size = ShapeSize(shape);
  if (in_size == 1) return std::vector<std::size_t>(n, 0);
  const auto strides = BroadcastStrides(shape, out);
  const int rank = static_cast<int>(out.size());
  std::vector<int> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = offset;
    for (int d = rank - 1; d >= 0; --d) {
      ++counter[d];
      offset += strides[d];
      if (counter[d] < out[d]) break;
      offset -= strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

double Gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double GeluGrad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

bool IsInteger(double p) { return std::floor(p) == p; }

}  // namespace

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t ShapeSize(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

ShapeError::ShapeError(const std::string& op, const std::vector<Shape>& shapes,
                       const std::string& detail)
    : std::invalid_argument([&] {
        std::string msg = op + ": incompatible shapes";
        for (const auto& s : shapes) msg += " " + ShapeToString(s);
        if (!detail.empty()) msg += " (" + detail + ")";
        return msg;
      }()),
      op_(op) {}

Tensor::Tensor() : shape_{1}, data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ShapeError("tensor", {shape_}, "empty shape");
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor", {shape_}, "non-positive extent");
  }
  data_.assign(ShapeSize(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ShapeError("tensor", {shape_}, "empty shape");
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor", {shape_}, "non-positive extent");
  }
  if (ShapeSize(shape_) != data_.size()) {
    throw ShapeError("tensor", {shape_},
                     "data length " + std::to_string(data_.size()));
  }
}

Tensor Tensor::Scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::Vector(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return Tensor({n}, std::move(values));
}

Tensor Tensor::Matrix(int rows, int cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

int Tensor::dim(int axis) const {
  return shape_[NormalizeAxis(axis, rank(), "dim", shape_)];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item", {shape_});
  return data_[0];
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (ShapeSize(shape) != data_.size()) {
    throw ShapeError("reshape", {shape_, shape});
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

const char* OpName(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSlice: return "slice";
    case OpKind::kConcat: return "concat";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kPower: return "power";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kCosineSimilarity: return "cosine_similarity";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(id); }

Gradients::Gradients(const Tape* tape, std::map<int, Tensor> leaf_grads)
    : tape_(tape), leaf_grads_(std::move(leaf_grads)) {}

Tensor Gradients::of(Var v) const {
  if (v.tape != tape_) {
    throw std::invalid_argument("gradient requested for a foreign tape");
  }
  auto it = leaf_grads_.find(v.id);
  if (it != leaf_grads_.end()) return it->second;
  return Tensor(tape_->value(v.id).shape(), 0.0);
}

Var Tape::Push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::Leaf(Tensor value) {
  return Push(Node{OpKind::kLeaf, {}, {}, std::move(value), true, {}});
}

Var Tape::Constant(Tensor value) {
  return Push(Node{OpKind::kConstant, {}, {}, std::move(value), false, {}});
}

Var Tape::Apply(OpKind kind, std::span<const Var> inputs,
                const OpAttrs& attrs) {
  const char* op = OpName(kind);
  for (const Var& v : inputs) {
    if (v.tape != this) {
      throw std::invalid_argument(std::string(op) +
                                  ": input belongs to another tape");
    }
  }
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[inputs[i].id].value;
  };
  auto require_arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(op) + ": expects " +
                                  std::to_string(n) + " inputs");
    }
  };

  Node node{kind, {}, attrs, Tensor(), false, {}};
  for (const Var& v : inputs) {
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }

  switch (kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      throw std::invalid_argument("use Tape::Leaf or Tape::Constant");

    case OpKind::kAdd:
    case OpKind::kMul: {
      require_arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Shape out_shape = BroadcastShape(op, a.shape(), b.shape());
      Tensor out(out_shape);
      auto o = out.mutable_values();
      const bool add = kind == OpKind::kAdd;
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < o.size(); ++i) {
          o[i] = add ? a[i] + b[i] : a[i] * b[i];
        }
      } else {
        const auto ia = BroadcastIndex(a.shape(), out_shape);
        const auto ib = BroadcastIndex(b.shape(), out_shape);
        for (std::size_t i = 0; i < o.size(); ++i) {
          o[i] = add ? a[ia[i]] + b[ib[i]] : a[ia[i]] * b[ib[i]];
        }
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kMatMul: {
      require_arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError(op, {a.shape(), b.shape()});
      }
      const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
      Tensor out({m, n});
      double* o = out.mutable_values().data();
      const double* pa = a.values().data();
      const double* pb = b.values().data();
      for (int i = 0; i < m; ++i) {
        double* row = o + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const double av = pa[static_cast<std::size_t>(i) * k + p];
          if (av == 0.0) continue;
          const double* brow = pb + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) row[j] += av * brow[j];
        }
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kTranspose: {
      require_arity(1);
      const Tensor& a = in(0);
      if (a.rank() != 2) throw ShapeError(op, {a.shape()}, "rank-2 only");
      const int m = a.dim(0), n = a.dim(1);
      Tensor out({n, m});
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kReshape: {
      require_arity(1);
      node.value = in(0).Reshaped(attrs.shape);
      break;
    }

    case OpKind::kSlice: {
      require_arity(1);
      const Tensor& a = in(0);
      const int axis = NormalizeAxis(attrs.axis, a.rank(), op, a.shape());
      if (attrs.start < 0 || attrs.length <= 0 ||
          attrs.start + attrs.length > a.dim(axis)) {
        throw ShapeError(op, {a.shape()},
                         "range [" + std::to_string(attrs.start) + ", " +
                             std::to_string(attrs.start + attrs.length) +
                             ") on axis " + std::to_string(axis));
      }
      node.attrs.axis = axis;
      const AxisSplit s = SplitAt(a.shape(), axis);
      Shape out_shape = a.shape();
      out_shape[axis] = attrs.length;
      Tensor out(out_shape);
      auto o = out.mutable_values();
      const std::size_t chunk = attrs.length * s.inner;
      for (std::size_t r = 0; r < s.outer; ++r) {
        const std::size_t src = (r * s.extent + attrs.start) * s.inner;
        std::copy_n(a.values().begin() + src, chunk, o.begin() + r * chunk);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kConcat: {
      if (inputs.empty()) throw std::invalid_argument("concat: no inputs");
      const Tensor& first = in(0);
      const int axis =
          NormalizeAxis(attrs.axis, first.rank(), op, first.shape());
      node.attrs.axis = axis;
      Shape out_shape = first.shape();
      out_shape[axis] = 0;
      std::vector<Shape> shapes;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Shape& s = in(i).shape();
        shapes.push_back(s);
        if (s.size() != first.shape().size()) throw ShapeError(op, shapes);
        for (int d = 0; d < first.rank(); ++d) {
          if (d != axis && s[d] != first.shape()[d]) {
            throw ShapeError(op, shapes);
          }
        }
        out_shape[axis] += s[axis];
      }
      const AxisSplit so = SplitAt(out_shape, axis);
      Tensor out(out_shape);
      auto o = out.mutable_values();
      int offset = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        const std::size_t chunk = t.dim(axis) * so.inner;
        for (std::size_t r = 0; r < so.outer; ++r) {
          std::copy_n(t.values().begin() + r * chunk, chunk,
                      o.begin() + (r * so.extent + offset) * so.inner);
        }
        offset += t.dim(axis);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
      require_arity(1);
      const Tensor& a = in(0);
      const int axis = NormalizeAxis(attrs.axis, a.rank(), op, a.shape());
      node.attrs.axis = axis;
      const AxisSplit s = SplitAt(a.shape(), axis);
      Tensor out(a.shape());
      auto o = out.mutable_values();
      const auto x = a.values();
      for (std::size_t r = 0; r < s.outer; ++r) {
        for (std::size_t c = 0; c < s.inner; ++c) {
          const std::size_t base = r * s.extent * s.inner + c;
          double mx = x[base];
          for (int k = 1; k < s.extent; ++k) {
            mx = std::max(mx, x[base + k * s.inner]);
          }
          double total = 0.0;
          for (int k = 0; k < s.extent; ++k) {
            total += std::exp(x[base + k * s.inner] - mx);
          }
          const double lse = mx + std::log(total);
          for (int k = 0; k < s.extent; ++k) {
            const std::size_t idx = base + k * s.inner;
            o[idx] = kind == OpKind::kSoftmax ? std::exp(x[idx] - lse)
                                              : x[idx] - lse;
          }
        }
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kLog:
    case OpKind::kExp:
    case OpKind::kGelu:
    case OpKind::kSqrt: {
      require_arity(1);
      const Tensor& a = in(0);
      Tensor out(a.shape());
      auto o = out.mutable_values();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a[i];
        switch (kind) {
          case OpKind::kLog:
            if (!(v > 0.0)) {
              throw DomainError("log: non-positive input " +
                                std::to_string(v));
            }
            o[i] = std::log(v);
            break;
          case OpKind::kExp: o[i] = std::exp(v); break;
          case OpKind::kGelu: o[i] = Gelu(v); break;
          default:
            if (!(v >= 0.0)) {
              throw DomainError("sqrt: negative input " + std::to_string(v));
            }
            o[i] = std::sqrt(v);
        }
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kPower: {
      require_arity(1);
      const Tensor& a = in(0);
      const double p = attrs.exponent;
      const bool integral = IsInteger(p);
      Tensor out(a.shape());
      auto o = out.mutable_values();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a[i];
        if (!integral && v < 0.0) {
          throw DomainError("power: negative base with fractional exponent");
        }
        if (p < 0.0 && v == 0.0) {
          throw DomainError("power: zero base with negative exponent");
        }
        o[i] = std::pow(v, p);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kMean:
    case OpKind::kSum: {
      require_arity(1);
      const Tensor& a = in(0);
      double scale = 1.0;
      if (attrs.axis == kAllAxes) {
        double total = 0.0;
        for (double v : a.values()) total += v;
        if (kind == OpKind::kMean) scale = 1.0 / static_cast<double>(a.size());
        node.value = Tensor::Scalar(total * scale);
        break;
      }
      const int axis = NormalizeAxis(attrs.axis, a.rank(), op, a.shape());
      node.attrs.axis = axis;
      const AxisSplit s = SplitAt(a.shape(), axis);
      if (kind == OpKind::kMean) scale = 1.0 / s.extent;
      Tensor out(DropAxis(a.shape(), axis));
      auto o = out.mutable_values();
      for (std::size_t r = 0; r < s.outer; ++r) {
        for (std::size_t c = 0; c < s.inner; ++c) {
          double total = 0.0;
          for (int k = 0; k < s.extent; ++k) {
            total += a[(r * s.extent + k) * s.inner + c];
          }
          o[r * s.inner + c] = total * scale;
        }
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kLayerNorm: {
      require_arity(3);
      const Tensor& x = in(0);
      const Tensor& gain = in(1);
      const Tensor& bias = in(2);
      const int d = x.shape().back();
      if (gain.size() != static_cast<std::size_t>(d) ||
          bias.size() != static_cast<std::size_t>(d)) {
        throw ShapeError(op, {x.shape(), gain.shape(), bias.shape()});
      }
      const std::size_t rows = x.size() / d;
      Tensor out(x.shape());
      auto o = out.mutable_values();
      // saved = [xhat (rows*d), rstd (rows)]
      node.saved.assign(x.size() + rows, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.values().data() + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= d;
        const double rstd = 1.0 / std::sqrt(var + attrs.eps);
        node.saved[x.size() + r] = rstd;
        for (int j = 0; j < d; ++j) {
          const double xh = (row[j] - mean) * rstd;
          node.saved[r * d + j] = xh;
          o[r * d + j] = xh * gain[j] + bias[j];
        }
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::kCosineSimilarity: {
      require_arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape()) throw ShapeError(op, {a.shape(), b.shape()});
      const int d = a.shape().back();
      const std::size_t rows = a.size() / d;
      Shape out_shape(a.shape().begin(), a.shape().end() - 1);
      if (out_shape.empty()) out_shape.push_back(1);
      Tensor out(out_shape);
      // saved = [dot, |a|, |b|] per row
      node.saved.assign(rows * 3, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int j = 0; j < d; ++j) {
          const double av = a[r * d + j], bv = b[r * d + j];
          dot += av * bv;
          na += av * av;
          nb += bv * bv;
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        node.saved[3 * r] = dot;
        node.saved[3 * r + 1] = na;
        node.saved[3 * r + 2] = nb;
        out[r] = dot / (na * nb + attrs.eps);
      }
      node.value = std::move(out);
      break;
    }
  }
  return Push(std::move(node));
}

void Tape::Propagate(const Node& node, std::span<const double> g,
                     std::vector<std::vector<double>>& grads) const {
  auto needs = [&](std::size_t i) {
    return nodes_[node.inputs[i]].requires_grad;
  };
  auto slot = [&](std::size_t i) -> std::vector<double>& {
    auto& s = grads[node.inputs[i]];
    if (s.empty()) s.assign(nodes_[node.inputs[i]].value.size(), 0.0);
    return s;
  };
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[node.inputs[i]].value;
  };
  const Tensor& out = node.value;
  const bool single = node.inputs.size() == 1;
  if (single && !needs(0)) return;

  switch (node.kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      return;

    case OpKind::kAdd:
    case OpKind::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool add = node.kind == OpKind::kAdd;
      if (a.shape() == b.shape()) {
        if (needs(0)) {
          auto& ga = slot(0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += add ? g[i] : g[i] * b[i];
          }
        }
        if (needs(1)) {
          auto& gb = slot(1);
          for (std::size_t i = 0; i < g.size(); ++i) {
            gb[i] += add ? g[i] : g[i] * a[i];
          }
        }
        return;
      }
      const auto ia = BroadcastIndex(a.shape(), out.shape());
      const auto ib = BroadcastIndex(b.shape(), out.shape());
      if (needs(0)) {
        auto& ga = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[ia[i]] += add ? g[i] : g[i] * b[ib[i]];
        }
      }
      if (needs(1)) {
        auto& gb = slot(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[ib[i]] += add ? g[i] : g[i] * a[ia[i]];
        }
      }
      return;
    }

    case OpKind::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
      // dA = G B^T
      if (needs(0)) {
      auto& ga = slot(0);
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const double* brow = b.values().data() + static_cast<std::size_t>(p) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + p] += acc;
        }
      }
      }
      // dB = A^T G
      if (!needs(1)) return;
      auto& gb = slot(1);
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const double av = a[static_cast<std::size_t>(i) * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
      return;
    }

    case OpKind::kTranspose: {
      const int m = in(0).dim(0), n = in(0).dim(1);
      auto& ga = slot(0);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          ga[static_cast<std::size_t>(i) * n + j] +=
              g[static_cast<std::size_t>(j) * m + i];
        }
      }
      return;
    }

    case OpKind::kReshape: {
      auto& ga = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      return;
    }

    case OpKind::kSlice: {
      const Tensor& a = in(0);
      const AxisSplit s = SplitAt(a.shape(), node.attrs.axis);
      const std::size_t chunk = node.attrs.length * s.inner;
      auto& ga = slot(0);
      for (std::size_t r = 0; r < s.outer; ++r) {
        const std::size_t dst = (r * s.extent + node.attrs.start) * s.inner;
        for (std::size_t i = 0; i < chunk; ++i) {
          ga[dst + i] += g[r * chunk + i];
        }
      }
      return;
    }

    case OpKind::kConcat: {
      const int axis = node.attrs.axis;
      const AxisSplit so = SplitAt(out.shape(), axis);
      int offset = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const Tensor& t = in(i);
        const std::size_t chunk = t.dim(axis) * so.inner;
        auto& gi = slot(i);
        for (std::size_t r = 0; r < so.outer; ++r) {
          const std::size_t src = (r * so.extent + offset) * so.inner;
          for (std::size_t c = 0; c < chunk; ++c) {
            gi[r * chunk + c] += g[src + c];
          }
        }
        offset += t.dim(axis);
      }
      return;
    }

    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
      const AxisSplit s = SplitAt(out.shape(), node.attrs.axis);
      auto& ga = slot(0);
      const bool log_form = node.kind == OpKind::kLogSoftmax;
      for (std::size_t r = 0; r < s.outer; ++r) {
        for (std::size_t c = 0; c < s.inner; ++c) {
          const std::size_t base = r * s.extent * s.inner + c;
          double acc = 0.0;
          for (int k = 0; k < s.extent; ++k) {
            const std::size_t idx = base + k * s.inner;
            acc += log_form ? g[idx] : g[idx] * out[idx];
          }
          for (int k = 0; k < s.extent; ++k) {
            const std::size_t idx = base + k * s.inner;
            if (log_form) {
              ga[idx] += g[idx] - std::exp(out[idx]) * acc;
            } else {
              ga[idx] += out[idx] * (g[idx] - acc);
            }
          }
        }
      }
      return;
    }

    case OpKind::kLog: {
      const Tensor& a = in(0);
      auto& ga = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
      return;
    }

    case OpKind::kExp: {
      auto& ga = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i];
      return;
    }

    case OpKind::kGelu: {
      const Tensor& a = in(0);
      auto& ga = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * GeluGrad(a[i]);
      return;
    }

    case OpKind::kSqrt: {
      auto& ga = slot(0);
      // d sqrt(x) at x = 0 is taken as 0 (subgradient convention).
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (out[i] > 0.0) ga[i] += g[i] * 0.5 / out[i];
      }
      return;
    }

    case OpKind::kPower: {
      const Tensor& a = in(0);
      const double p = node.attrs.exponent;
      auto& ga = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] == 0.0 && p < 1.0) continue;
        ga[i] += g[i] * p * std::pow(a[i], p - 1.0);
      }
      return;
    }

    case OpKind::kMean:
    case OpKind::kSum: {
      const Tensor& a = in(0);
      auto& ga = slot(0);
      if (node.attrs.axis == kAllAxes) {
        const double scale =
            node.kind == OpKind::kMean ? 1.0 / static_cast<double>(a.size()) : 1.0;
        for (double& v : ga) v += g[0] * scale;
        return;
      }
      const AxisSplit s = SplitAt(a.shape(), node.attrs.axis);
      const double scale = node.kind == OpKind::kMean ? 1.0 / s.extent : 1.0;
      for (std::size_t r = 0; r < s.outer; ++r) {
        for (std::size_t c = 0; c < s.inner; ++c) {
          const double gv = g[r * s.inner + c] * scale;
          for (int k = 0; k < s.extent; ++k) {
            ga[(r * s.extent + k) * s.inner + c] += gv;
          }
        }
      }
      return;
    }

    case OpKind::kLayerNorm: {
      const Tensor& x = in(0);
      const Tensor& gain = in(1);
      const int d = x.shape().back();
      const std::size_t rows = x.size() / d;
      const double* xhat = node.saved.data();
      const double* rstd = node.saved.data() + x.size();
      auto& gx = slot(0);
      auto& gg = slot(1);
      auto& gbias = slot(2);
      std::vector<double> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (int j = 0; j < d; ++j) {
          const std::size_t idx = r * d + j;
          gg[j] += g[idx] * xhat[idx];
          gbias[j] += g[idx];
          dxhat[j] = g[idx] * gain[j];
          mean_d += dxhat[j];
          mean_dx += dxhat[j] * xhat[idx];
        }
        mean_d /= d;
        mean_dx /= d;
        for (int j = 0; j < d; ++j) {
          const std::size_t idx = r * d + j;
          gx[idx] += rstd[r] * (dxhat[j] - mean_d - xhat[idx] * mean_dx);
        }
      }
      return;
    }

    case OpKind::kCosineSimilarity: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const int d = a.shape().back();
      const std::size_t rows = a.size() / d;
      auto& ga = slot(0);
      auto& gb = slot(1);
      for (std::size_t r = 0; r < rows; ++r) {
        const double dot = node.saved[3 * r];
        const double na = node.saved[3 * r + 1];
        const double nb = node.saved[3 * r + 2];
        const double denom = na * nb + node.attrs.eps;
        const double gr = g[r];
        for (int j = 0; j < d; ++j) {
          const std::size_t idx = r * d + j;
          // d denom / d a_j = nb * a_j / na
          const double dda = na > 0.0 ? nb * a[idx] / na : 0.0;
          const double ddb = nb > 0.0 ? na * b[idx] / nb : 0.0;
          ga[idx] += gr * (b[idx] / denom - dot * dda / (denom * denom));
          gb[idx] += gr * (a[idx] / denom - dot * ddb / (denom * denom));
        }
      }
      return;
    }
  }
}

Gradients Tape::Backward(Var loss) const {
  if (loss.tape != this) {
    throw std::invalid_argument("backward: loss belongs to another tape");
  }
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1) {
    throw ShapeError("backward", {lv.shape()}, "loss must be scalar");
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.id].assign(1, 1.0);
  for (int id = loss.id; id >= 0; --id) {
    const Node& node = nodes_[id];
    if (grads[id].empty()) continue;
    if (node.kind == OpKind::kLeaf || node.kind == OpKind::kConstant) continue;
    Propagate(node, grads[id], grads);
    // Interior gradients are no longer needed once propagated.
    std::vector<double>().swap(grads[id]);
  }
  std::map<int, Tensor> leaves;
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
    if (nodes_[id].kind != OpKind::kLeaf) continue;
    const Shape& shape = nodes_[id].value.shape();
    if (grads[id].empty()) {
      leaves.emplace(id, Tensor(shape, 0.0));
    } else {
      leaves.emplace(id, Tensor(shape, std::move(grads[id])));
    }
  }
  return Gradients(this, std::move(leaves));
}

Var Add(Var a, Var b) { return a.tape->Apply(OpKind::kAdd, {a, b}); }

Var Sub(Var a, Var b) { return Add(a, Scale(b, -1.0)); }

Var Mul(Var a, Var b) { return a.tape->Apply(OpKind::kMul, {a, b}); }

Var Scale(Var a, double c) {
  return Mul(a, a.tape->Constant(Tensor::Scalar(c)));
}

Var AddScalar(Var a, double c) {
  return Add(a, a.tape->Constant(Tensor::Scalar(c)));
}

Var MatMul(Var a, Var b) { return a.tape->Apply(OpKind::kMatMul, {a, b}); }

Var Transpose(Var a) { return a.tape->Apply(OpKind::kTranspose, {a}); }

Var Reshape(Var a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return a.tape->Apply(OpKind::kReshape, {a}, attrs);
}

Var Slice(Var a, int axis, int start, int length) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.start = start;
  attrs.length = length;
  return a.tape->Apply(OpKind::kSlice, {a}, attrs);
}

Var Concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  OpAttrs attrs;
  attrs.axis = axis;
  return parts.front().tape->Apply(OpKind::kConcat, parts, attrs);
}

Var Softmax(Var a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return a.tape->Apply(OpKind::kSoftmax, {a}, attrs);
}

Var LogSoftmax(Var a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return a.tape->Apply(OpKind::kLogSoftmax, {a}, attrs);
}

Var Log(Var a) { return a.tape->Apply(OpKind::kLog, {a}); }

Var Exp(Var a) { return a.tape->Apply(OpKind::kExp, {a}); }

Var Mean(Var a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return a.tape->Apply(OpKind::kMean, {a}, attrs);
}

Var Sum(Var a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return a.tape->Apply(OpKind::kSum, {a}, attrs);
}

Var LayerNorm(Var x, Var gain, Var bias, double eps) {
  OpAttrs attrs;
  attrs.eps = eps;
  return x.tape->Apply(OpKind::kLayerNorm, {x, gain, bias}, attrs);
}

Var Gelu(Var a) { return a.tape->Apply(OpKind::kGelu, {a}); }

Var Power(Var a, double exponent) {
  OpAttrs attrs;
  attrs.exponent = exponent;
  return a.tape->Apply(OpKind::kPower, {a}, attrs);
}

Var Sqrt(Var a) { return a.tape->Apply(OpKind::kSqrt, {a}); }

Var CosineSimilarity(Var a, Var b, double eps) {
  OpAttrs attrs;
  attrs.eps = eps;
  return a.tape->Apply(OpKind::kCosineSimilarity, {a, b}, attrs);
}

namespace {

double Evaluate(const ScalarFn& fn, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.Leaf(p));
  return fn(tape, leaves).value().item();
}

}  // namespace

GradCheckResult GradCheck(const ScalarFn& fn, const std::vector<Tensor>& params,
                          double eps) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : params) leaves.push_back(tape.Leaf(p));
  const Var loss = fn(tape, leaves);
  const double base = loss.value().item();
  const Gradients grads = tape.Backward(loss);

  const double again = Evaluate(fn, params);
  if (again != base) {
    throw std::runtime_error("grad_check: function is not deterministic");
  }

  GradCheckResult result;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor analytic = grads.of(leaves[p]);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      probe[p][i] = orig + eps;
      const double up = Evaluate(fn, probe);
      probe[p][i] = orig - eps;
      const double down = Evaluate(fn, probe);
      probe[p][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double ga = analytic[i];
      const double err = std::abs(ga - numeric) /
                         std::max({1.0, std::abs(ga), std::abs(numeric)});
      ++result.coordinates;
      if (result.worst_param < 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = static_cast<int>(p);
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace fgaes::nd
