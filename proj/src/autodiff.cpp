#include "latentfoil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "latentfoil/errors.hpp"

namespace latentfoil::ad {

std::string to_string(const Shape& s) {
  std::ostringstream out;
  switch (s.rank) {
    case Rank::scalar: out << "scalar"; break;
    case Rank::vector: out << "vector(" << s.rows << ")"; break;
    case Rank::matrix: out << "matrix(" << s.rows << "," << s.cols << ")"; break;
  }
  return out.str();
}

Tensor::Tensor(Shape s, double fill) : shape(s), data(s.size(), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.size()) {
    throw InvalidArgument("tensor data size " + std::to_string(data.size()) +
                          " does not match " + to_string(shape));
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const auto n = v.size();
  return Tensor(Shape::vector(n), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape::matrix(rows, cols), std::move(v));
}

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::scale: return "scale";
    case Op::shift: return "shift";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::power: return "power";
    case Op::sqrt: return "sqrt";
    case Op::tanh: return "tanh";
    case Op::silu: return "silu";
    case Op::atan2: return "atan2";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::matvec: return "matvec";
    case Op::matmul: return "matmul";
    case Op::conv1d: return "conv1d";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::gather: return "gather";
    case Op::broadcast: return "broadcast";
    case Op::reshape: return "reshape";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw InvalidArgument("use of an unbound Var");
  return tape_->value(id_);
}

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw InvalidArgument("item() on non-scalar " + to_string(v.shape));
  return v.data[0];
}

const Tensor& Gradients::operator[](Var v) const {
  if (tape_ == nullptr || !tape_->owns(v)) throw InvalidArgument("gradient query for a Var of another tape");
  auto& slot = adjoints_[v.id()];
  if (slot.empty()) slot = Tensor(tape_->value(v.id()).shape);
  return slot;
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{Op::leaf, {}, std::move(value), true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{Op::constant, {}, std::move(value), false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::intern(const void* key, const Tensor& value, bool differentiable) {
  if (auto it = interned_.find(key); it != interned_.end()) return Var(this, it->second);
  Var v = differentiable ? variable(value) : constant(value);
  interned_.emplace(key, v.id());
  return v;
}

std::optional<Var> Tape::interned(const void* key) const {
  if (auto it = interned_.find(key); it != interned_.end()) return Var(const_cast<Tape*>(this), it->second);
  return std::nullopt;
}

Var Tape::record(Op op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node node{op, {}, std::move(value), false, {}};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (!owns(in)) throw InvalidArgument(std::string(op_name(op)) + ": input belongs to another tape");
    node.inputs.push_back(in.id());
    node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var output, double seed) const {
  if (!owns(output)) throw InvalidArgument("backward: output is not on this tape");
  const auto& shape = nodes_[output.id()].value.shape;
  if (shape.size() != 1) {
    throw InvalidArgument("backward: implicit seed needs a scalar output, got " + to_string(shape));
  }
  return backward(output, Tensor(shape, seed));
}

Gradients Tape::backward(Var output, const Tensor& seed) const {
  if (!owns(output)) throw InvalidArgument("backward: output is not on this tape");
  const auto& out_shape = nodes_[output.id()].value.shape;
  if (seed.shape.size() != out_shape.size()) {
    throw InvalidArgument("backward: seed " + to_string(seed.shape) + " does not match output " +
                          to_string(out_shape));
  }
  Gradients grads;
  grads.tape_ = this;
  grads.adjoints_.resize(nodes_.size());
  grads.adjoints_[output.id()] = Tensor(out_shape, seed.data);

  std::vector<Tensor*> ptrs;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.needs_grad || !node.backward) continue;
    const Tensor& g = grads.adjoints_[id];
    if (g.empty()) continue;
    ptrs.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].needs_grad) continue;
      auto& slot = grads.adjoints_[in];
      if (slot.empty()) slot = Tensor(nodes_[in].value.shape);
      ptrs[k] = &slot;
    }
    node.backward(g, ptrs);
  }
  return grads;
}

namespace {

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (!(a == b)) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

// Elementwise unary op: value f(x), local derivative df(x, f(x)).
template <class F, class DF>
Var unary(Op op, Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  Tape& tape = a.tape();
  const Var in = a;
  const std::size_t self = tape.size();
  return tape.record(op, {a}, std::move(out),
                     [&tape, in, self, df](const Tensor& g, std::span<Tensor* const> gin) {
                       const Tensor& xv = in.value();
                       const Tensor& yv = tape.value(self);
                       Tensor& ga = *gin[0];
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
                     });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(Op::add, {a, b}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gin) {
    for (auto* t : gin) {
      if (t == nullptr) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.tape().record(Op::sub, {a, b}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(Op::mul, {a, b}, std::move(out), [a, b](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& xv = a.value();
    const Tensor& yv = b.value();
    if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * yv[i];
    if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * xv[i];
  });
}

Var div(Var a, Var b) {
  require_same_shape("div", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  return a.tape().record(Op::div, {a, b}, std::move(out), [a, b](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& xv = a.value();
    const Tensor& yv = b.value();
    if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] / yv[i];
    if (gin[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i] * xv[i] / (yv[i] * yv[i]);
    }
  });
}

Var scale(Var a, double s) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
  return a.tape().record(Op::scale, {a}, std::move(out), [s](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
  });
}

Var shift(Var a, double c) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + c;
  return a.tape().record(Op::shift, {a}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

Var sin(Var a) {
  return unary(Op::sin, a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(Op::cos, a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var exp(Var a) {
  return unary(Op::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(Op::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var power(Var a, double p) {
  return unary(
      Op::power, a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var sqrt(Var a) {
  return unary(Op::sqrt, a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var tanh(Var a) {
  return unary(Op::tanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var silu(Var a) {
  return unary(
      Op::silu, a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var atan2(Var y, Var x) {
  require_same_shape("atan2", y.shape(), x.shape());
  const Tensor& yv = y.value();
  const Tensor& xv = x.value();
  Tensor out(yv.shape);
  for (std::size_t i = 0; i < yv.size(); ++i) out[i] = std::atan2(yv[i], xv[i]);
  return y.tape().record(Op::atan2, {y, x}, std::move(out), [y, x](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& a = y.value();
    const Tensor& b = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double r2 = a[i] * a[i] + b[i] * b[i];
      if (gin[0]) (*gin[0])[i] += g[i] * b[i] / r2;
      if (gin[1]) (*gin[1])[i] -= g[i] * a[i] / r2;
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape().record(Op::sum, {a}, Tensor::scalar(s), [](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(Var a) {
  const auto n = a.value().size();
  if (n == 0) throw InvalidArgument("mean of an empty tensor");
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const double inv = 1.0 / static_cast<double>(n);
  return a.tape().record(Op::mean, {a}, Tensor::scalar(s * inv), [inv](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * inv;
  });
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var matvec(Var m, Var v) {
  const Tensor& M = m.value();
  const Tensor& x = v.value();
  if (M.shape.rank != Rank::matrix || M.shape.cols != x.size()) {
    throw InvalidArgument("matvec: " + to_string(M.shape) + " times " + to_string(x.shape));
  }
  const std::size_t r = M.shape.rows;
  const std::size_t c = M.shape.cols;
  Tensor out(Shape::vector(r));
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = &M.data[i * c];
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
  return m.tape().record(Op::matvec, {m, v}, std::move(out), [m, v, r, c](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& Mv = m.value();
    const Tensor& xv = v.value();
    if (gin[0]) {
      Tensor& gm = *gin[0];
      for (std::size_t i = 0; i < r; ++i) {
        double* row = &gm.data[i * c];
        for (std::size_t j = 0; j < c; ++j) row[j] += g[i] * xv[j];
      }
    }
    if (gin[1]) {
      Tensor& gv = *gin[1];
      for (std::size_t i = 0; i < r; ++i) {
        const double* row = &Mv.data[i * c];
        for (std::size_t j = 0; j < c; ++j) gv[j] += row[j] * g[i];
      }
    }
  });
}

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape.rank != Rank::matrix || B.shape.rank != Rank::matrix || A.shape.cols != B.shape.rows) {
    throw InvalidArgument("matmul: " + to_string(A.shape) + " times " + to_string(B.shape));
  }
  const std::size_t r = A.shape.rows;
  const std::size_t k = A.shape.cols;
  const std::size_t c = B.shape.cols;
  Tensor out(Shape::matrix(r, c));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.data[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B.data[p * c];
      double* orow = &out.data[i * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += aip * brow[j];
    }
  }
  return a.tape().record(Op::matmul, {a, b}, std::move(out), [a, b, r, k, c](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& Av = a.value();
    const Tensor& Bv = b.value();
    if (gin[0]) {  // gA = g * B^T
      Tensor& ga = *gin[0];
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = &Bv.data[p * c];
          const double* grow = &g.data[i * c];
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
          ga.data[i * k + p] += acc;
        }
      }
    }
    if (gin[1]) {  // gB = A^T * g
      Tensor& gb = *gin[1];
      for (std::size_t i = 0; i < r; ++i) {
        const double* grow = &g.data[i * c];
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av.data[i * k + p];
          double* brow = &gb.data[p * c];
          for (std::size_t j = 0; j < c; ++j) brow[j] += aip * grow[j];
        }
      }
    }
  });
}

Var conv1d(Var input, Var weight, Var bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& bv = bias.value();
  if (x.shape.rank != Rank::matrix) throw InvalidArgument("conv1d: input must be (channels x length)");
  const std::size_t cin = x.shape.rows;
  const std::size_t len = x.shape.cols;
  const std::size_t cout = w.shape.rows;
  if (w.shape.rank != Rank::matrix || cin == 0 || w.shape.cols % cin != 0) {
    throw InvalidArgument("conv1d: weight " + to_string(w.shape) + " incompatible with input " + to_string(x.shape));
  }
  const std::size_t k = w.shape.cols / cin;
  if (k % 2 == 0) throw InvalidArgument("conv1d: kernel width must be odd");
  if (bv.size() != cout) throw InvalidArgument("conv1d: bias length must equal output channels");
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto L = static_cast<std::ptrdiff_t>(len);

  Tensor out(Shape::matrix(cout, len));
  for (std::size_t o = 0; o < cout; ++o) {
    double* orow = &out.data[o * len];
    for (std::size_t l = 0; l < len; ++l) orow[l] = bv[o];
    for (std::size_t i = 0; i < cin; ++i) {
      const double* xrow = &x.data[i * len];
      for (std::size_t j = 0; j < k; ++j) {
        const double wv = w.data[o * cin * k + i * k + j];
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - half;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - off);
        for (std::ptrdiff_t l = lo; l < hi; ++l) orow[l] += wv * xrow[l + off];
      }
    }
  }
  return input.tape().record(
      Op::conv1d, {input, weight, bias}, std::move(out),
      [input, weight, cin, cout, k, len, half, L](const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& xv = input.value();
        const Tensor& wv = weight.value();
        for (std::size_t o = 0; o < cout; ++o) {
          const double* grow = &g.data[o * len];
          if (gin[2]) {
            double acc = 0.0;
            for (std::size_t l = 0; l < len; ++l) acc += grow[l];
            (*gin[2])[o] += acc;
          }
          for (std::size_t i = 0; i < cin; ++i) {
            const double* xrow = &xv.data[i * len];
            for (std::size_t j = 0; j < k; ++j) {
              const std::size_t widx = o * cin * k + i * k + j;
              const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - half;
              const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
              const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - off);
              if (gin[1]) {
                double acc = 0.0;
                for (std::ptrdiff_t l = lo; l < hi; ++l) acc += grow[l] * xrow[l + off];
                (*gin[1])[widx] += acc;
              }
              if (gin[0]) {
                const double w = wv.data[widx];
                double* gx = &gin[0]->data[i * len];
                for (std::ptrdiff_t l = lo; l < hi; ++l) gx[l + off] += w * grow[l];
              }
            }
          }
        }
      });
}

Var concat(Var a, Var b, Axis axis) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Shape shape;
  if (x.shape.rank == Rank::vector && y.shape.rank == Rank::vector) {
    shape = Shape::vector(x.size() + y.size());
    axis = Axis::rows;
  } else if (x.shape.rank == Rank::matrix && y.shape.rank == Rank::matrix) {
    if (axis == Axis::rows) {
      if (x.shape.cols != y.shape.cols) throw InvalidArgument("concat rows: column counts differ");
      shape = Shape::matrix(x.shape.rows + y.shape.rows, x.shape.cols);
    } else {
      if (x.shape.rows != y.shape.rows) throw InvalidArgument("concat cols: row counts differ");
      shape = Shape::matrix(x.shape.rows, x.shape.cols + y.shape.cols);
    }
  } else {
    throw InvalidArgument("concat: " + to_string(x.shape) + " with " + to_string(y.shape));
  }
  Tensor out(shape);
  const std::size_t r = x.shape.rows;
  const std::size_t c1 = x.shape.cols;
  const std::size_t c2 = y.shape.cols;
  if (axis == Axis::rows) {
    std::copy(x.data.begin(), x.data.end(), out.data.begin());
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(x.size()));
  } else {
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(&x.data[i * c1], c1, &out.data[i * (c1 + c2)]);
      std::copy_n(&y.data[i * c2], c2, &out.data[i * (c1 + c2) + c1]);
    }
  }
  const std::size_t nx = x.size();
  return a.tape().record(Op::concat, {a, b}, std::move(out),
                         [axis, r, c1, c2, nx](const Tensor& g, std::span<Tensor* const> gin) {
                           if (axis == Axis::rows) {
                             if (gin[0]) for (std::size_t i = 0; i < nx; ++i) (*gin[0])[i] += g[i];
                             if (gin[1]) for (std::size_t i = nx; i < g.size(); ++i) (*gin[1])[i - nx] += g[i];
                             return;
                           }
                           for (std::size_t i = 0; i < r; ++i) {
                             const double* grow = &g.data[i * (c1 + c2)];
                             if (gin[0]) for (std::size_t j = 0; j < c1; ++j) gin[0]->data[i * c1 + j] += grow[j];
                             if (gin[1]) for (std::size_t j = 0; j < c2; ++j) gin[1]->data[i * c2 + j] += grow[c1 + j];
                           }
                         });
}

Var slice(Var a, std::size_t offset, Shape shape) {
  const Tensor& x = a.value();
  if (offset + shape.size() > x.size()) {
    throw InvalidArgument("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + shape.size()) +
                          ") exceeds " + to_string(x.shape));
  }
  Tensor out(shape);
  std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(offset), shape.size(), out.data.begin());
  return a.tape().record(Op::slice, {a}, std::move(out), [offset](const Tensor& g, std::span<Tensor* const> gin) {
    double* dst = &gin[0]->data[offset];
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var gather(Var a, std::vector<std::size_t> indices) {
  const Tensor& x = a.value();
  Tensor out(Shape::vector(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) throw InvalidArgument("gather: index out of range");
    out[i] = x[indices[i]];
  }
  return a.tape().record(Op::gather, {a}, std::move(out),
                         [idx = std::move(indices)](const Tensor& g, std::span<Tensor* const> gin) {
                           for (std::size_t i = 0; i < idx.size(); ++i) (*gin[0])[idx[i]] += g[i];
                         });
}

Var broadcast(Var a, Shape target, Broadcast mode) {
  const Tensor& x = a.value();
  Tensor out(target);
  const std::size_t r = target.rows;
  const std::size_t c = target.cols;
  switch (mode) {
    case Broadcast::fill:
      if (x.size() != 1) throw InvalidArgument("broadcast fill: source must be scalar");
      std::fill(out.data.begin(), out.data.end(), x[0]);
      break;
    case Broadcast::repeat_cols:
      if (x.shape.rank == Rank::matrix || x.size() != r || target.rank != Rank::matrix) {
        throw InvalidArgument("broadcast repeat_cols: " + to_string(x.shape) + " -> " + to_string(target));
      }
      for (std::size_t i = 0; i < r; ++i) std::fill_n(&out.data[i * c], c, x[i]);
      break;
    case Broadcast::repeat_rows:
      if (x.shape.rank == Rank::matrix || x.size() != c || target.rank != Rank::matrix) {
        throw InvalidArgument("broadcast repeat_rows: " + to_string(x.shape) + " -> " + to_string(target));
      }
      for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data.begin(), c, &out.data[i * c]);
      break;
  }
  return a.tape().record(Op::broadcast, {a}, std::move(out), [mode, r, c](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    switch (mode) {
      case Broadcast::fill:
        for (double v : g.data) ga[0] += v;
        break;
      case Broadcast::repeat_cols:
        for (std::size_t i = 0; i < r; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += g.data[i * c + j];
          ga[i] += acc;
        }
        break;
      case Broadcast::repeat_rows:
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) ga[j] += g.data[i * c + j];
        }
        break;
    }
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (x.size() != shape.size()) {
    throw InvalidArgument("reshape: " + to_string(x.shape) + " -> " + to_string(shape));
  }
  return a.tape().record(Op::reshape, {a}, Tensor(shape, x.data), [](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

}  // namespace latentfoil::ad
