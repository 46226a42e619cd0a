#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// Values are dense row-major tensors of rank 0 (scalar), 1 (vector) or
// 2 (matrix). Every operation evaluates eagerly and appends one node to the
// tape together with its adjoint rule. Tape::backward() sweeps the nodes in
// reverse id order exactly once and leaves the tape untouched, so a single
// recording can be differentiated against any number of seeds.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace latentfoil::ad {

enum class Rank { scalar, vector, matrix };

struct Shape {
  Rank rank = Rank::scalar;
  std::size_t rows = 1;
  std::size_t cols = 1;

  static Shape scalar() { return {}; }
  static Shape vector(std::size_t n) { return {Rank::vector, n, 1}; }
  static Shape matrix(std::size_t r, std::size_t c) { return {Rank::matrix, r, c}; }

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape::scalar(), v); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * shape.cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape.cols + c]; }
};

enum class Op {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  scale,
  shift,
  sin,
  cos,
  exp,
  log,
  power,
  sqrt,
  tanh,
  silu,
  atan2,
  sum,
  mean,
  matvec,
  matmul,
  conv1d,
  concat,
  slice,
  gather,
  broadcast,
  reshape,
};

const char* op_name(Op op);

class Tape;

// Handle to a node of a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  // Value of a scalar (or any single-element) node.
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Adjoints produced by one backward sweep, indexed by node.
class Gradients {
 public:
  // Adjoint of `v`; zero-filled when the sweep never reached it.
  const Tensor& operator[](Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  mutable std::vector<Tensor> adjoints_;
};

class Tape {
 public:
  // Accumulates the adjoint of one node into the adjoints of its inputs.
  // Entries of `grad_in` are null for inputs that do not need a gradient.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that receives an adjoint.
  Var variable(Tensor value);
  // Leaf excluded from differentiation.
  Var constant(Tensor value);

  // Returns the leaf registered under `key`, creating it on first use. Lets a
  // parameter block be attached once per tape no matter how many times a
  // model is applied.
  Var intern(const void* key, const Tensor& value, bool differentiable);
  // The leaf registered under `key`, if any.
  std::optional<Var> interned(const void* key) const;

  Var record(Op op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  Op op(std::size_t id) const { return nodes_[id].op; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool owns(Var v) const { return v.tape_ == this && v.id_ < nodes_.size(); }

  // Reverse sweep from `output`. A scalar output may use the implicit seed;
  // other outputs need a seed of matching shape (vector-Jacobian product).
  Gradients backward(Var output, double seed = 1.0) const;
  Gradients backward(Var output, const Tensor& seed) const;

 private:
  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::size_t> interned_;
};

// ---- elementwise --------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var shift(Var a, double c);
Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var log(Var a);
Var power(Var a, double p);
Var sqrt(Var a);
Var tanh(Var a);
Var silu(Var a);
Var atan2(Var y, Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double c) { return shift(a, c); }
inline Var operator+(double c, Var a) { return shift(a, c); }
inline Var operator-(Var a, double c) { return shift(a, -c); }
inline Var operator-(double c, Var a) { return shift(scale(a, -1.0), c); }

// ---- reductions and linear algebra --------------------------------------

Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);
// (r x c) * (c) -> (r)
Var matvec(Var m, Var v);
// (r x k) * (k x c) -> (r x c)
Var matmul(Var a, Var b);

// Same-padded stride-1 convolution over the length axis.
// input: (c_in x L); weight: (c_out x c_in*k) with k odd, laid out as
// weight[o][i*k + j]; bias: vector(c_out). Output: (c_out x L).
Var conv1d(Var input, Var weight, Var bias);

// ---- structure ----------------------------------------------------------

enum class Axis { rows, cols };

// Vectors concatenate end to end. Matrices stack along `axis`.
Var concat(Var a, Var b, Axis axis = Axis::rows);
// Contiguous flat range [offset, offset + shape.size()) viewed as `shape`.
Var slice(Var a, std::size_t offset, Shape shape);
// Picks flat elements by index into a vector.
Var gather(Var a, std::vector<std::size_t> indices);

enum class Broadcast {
  fill,         // scalar -> any shape
  repeat_cols,  // vector(n) -> matrix(n, c), out[i][j] = v[i]
  repeat_rows,  // vector(m) -> matrix(r, m), out[i][j] = v[j]
};
Var broadcast(Var a, Shape target, Broadcast mode);
Var reshape(Var a, Shape shape);

}  // namespace latentfoil::ad
