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

// Dense double-precision tensors with tape-based reverse-mode
// differentiation over a closed set of operations.
//
// A Tape records every operation applied to the Vars it owns. Backward()
// walks the record once in reverse insertion order and returns gradients
// for every leaf. Tensors are plain values; a Tape belongs to one thread.

#ifndef FGAES_NDIFF_H_
#define FGAES_NDIFF_H_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgaes::nd {

using Shape = std::vector<int>;

std::string ShapeToString(const Shape& shape);
std::size_t ShapeSize(const Shape& shape);

// Raised when operand shapes do not conform to an op's rules.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::vector<Shape>& shapes,
             const std::string& detail = "");
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

// Raised when an op is evaluated outside its mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tensor {
 public:
  // A single zero; shape {1}.
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Scalar(double value);
  static Tensor Vector(std::vector<double> values);
  static Tensor Matrix(int rows, int cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<const double> values() const { return data_; }
  std::span<double> mutable_values() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  // Row-major element access for rank-2 tensors.
  double at(int r, int c) const { return data_[r * shape_[1] + c]; }
  double& at(int r, int c) { return data_[r * shape_[1] + c]; }

  // Value of a size-1 tensor.
  double item() const;

  Tensor Reshaped(Shape shape) const;
  bool AllFinite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class OpKind {
  kLeaf,
  kConstant,
  kAdd,
  kMul,
  kMatMul,
  kTranspose,
  kReshape,
  kSlice,
  kConcat,
  kSoftmax,
  kLogSoftmax,
  kLog,
  kExp,
  kMean,
  kSum,
  kLayerNorm,
  kGelu,
  kPower,
  kSqrt,
  kCosineSimilarity,
};

const char* OpName(OpKind kind);

// Reduce every element rather than one axis.
inline constexpr int kAllAxes = std::numeric_limits<int>::min();

struct OpAttrs {
  int axis = -1;
  int start = 0;
  int length = 0;
  double exponent = 1.0;
  double eps = 1e-5;
  Shape shape;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Gradients produced by Tape::Backward. Leaves not reached by the loss and
// constants report zeros of their own shape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::map<int, Tensor> leaf_grads);

  Tensor of(Var v) const;
  // Leaf node id -> gradient, zero-filled for unreachable leaves.
  const std::map<int, Tensor>& leaves() const { return leaf_grads_; }

 private:
  const Tape* tape_ = nullptr;
  std::map<int, Tensor> leaf_grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A differentiable input (parameter or variable under test).
  Var Leaf(Tensor value);
  // A value the loss does not differentiate with respect to.
  Var Constant(Tensor value);

  // Records op_kind applied to inputs and returns the result node.
  Var Apply(OpKind kind, std::span<const Var> inputs,
            const OpAttrs& attrs = {});
  Var Apply(OpKind kind, std::initializer_list<Var> inputs,
            const OpAttrs& attrs = {}) {
    return Apply(kind, std::span<const Var>(inputs.begin(), inputs.size()),
                 attrs);
  }

  // Gradients of a size-1 loss with respect to every node.
  Gradients Backward(Var loss) const;

  const Tensor& value(int id) const { return nodes_[id].value; }
  OpKind kind(int id) const { return nodes_[id].kind; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    OpAttrs attrs;
    Tensor value;
    // True when some leaf is an ancestor of this node.
    bool requires_grad = false;
    // Per-op saved context, e.g. normalized activations for layer_norm.
    std::vector<double> saved;
  };

  Var Push(Node node);
  // Accumulates the input gradients of node given its output gradient.
  // Slots of grads are empty until first touched.
  void Propagate(const Node& node, std::span<const double> out_grad,
                 std::vector<std::vector<double>>& grads) const;

  std::vector<Node> nodes_;
};

// Convenience wrappers over Tape::Apply.
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);
Var Scale(Var a, double c);
Var AddScalar(Var a, double c);
Var MatMul(Var a, Var b);
Var Transpose(Var a);
Var Reshape(Var a, Shape shape);
Var Slice(Var a, int axis, int start, int length);
Var Concat(std::span<const Var> parts, int axis);
Var Softmax(Var a, int axis = -1);
Var LogSoftmax(Var a, int axis = -1);
Var Log(Var a);
Var Exp(Var a);
Var Mean(Var a, int axis = kAllAxes);
Var Sum(Var a, int axis = kAllAxes);
Var LayerNorm(Var x, Var gain, Var bias, double eps = 1e-5);
Var Gelu(Var a);
Var Power(Var a, double exponent);
Var Sqrt(Var a);
Var CosineSimilarity(Var a, Var b, double eps = 1e-8);

// Function of the given leaves producing a size-1 Var on the same tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  // Index into params and flat coordinate of the worst disagreement.
  int worst_param = -1;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Compares analytic gradients against central differences. The per
// coordinate error is |g_a - g_n| / max(1, |g_a|, |g_n|).
// Throws std::runtime_error if fn is not deterministic.
GradCheckResult GradCheck(const ScalarFn& fn, const std::vector<Tensor>& params,
                          double eps = 1e-5);

}  // namespace fgaes::nd

#endif  // FGAES_NDIFF_H_
