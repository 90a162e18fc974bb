#include "milkt/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "milkt/kernels.hpp"
#include "milkt/parallel.hpp"

namespace milkt::ad {
namespace {

std::atomic<int> g_fault{-1};

double fault_factor(Op op) {
  return g_fault.load(std::memory_order_relaxed) == static_cast<int>(op) ? 1.5 : 1.0;
}

Tape& same_tape(Var a, Var b, const char* what) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument(std::string(what) + ": operands live on different tapes");
  }
  return *a.tape;
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw std::invalid_argument("operation on a detached Var");
  return *a.tape;
}

Var unary(Var a, Op op, Matrix out, double scalar = 0.0, std::size_t index = 0,
          std::optional<Matrix> aux = std::nullopt) {
  Tape& t = tape_of(a);
  Tape::Node n;
  n.op = op;
  n.parents = {a.id};
  n.own = std::move(out);
  n.requires_grad = t.requires_grad(a);
  n.scalar = scalar;
  n.index = index;
  n.aux = std::move(aux);
  return t.push(std::move(n));
}

Var binary(Var a, Var b, Op op, Matrix out) {
  Tape& t = same_tape(a, b, op_name(op).data());
  Tape::Node n;
  n.op = op;
  n.parents = {a.id, b.id};
  n.own = std::move(out);
  n.requires_grad = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(n));
}

template <class F>
Matrix map(const Matrix& x, F f) {
  Matrix out(x.rows(), x.cols());
  const double* in = x.data().data();
  double* o = out.data().data();
  parallel_for(x.size(), [&](std::size_t i) { o[i] = f(in[i]); });
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::hadamard: return "hadamard";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::abs: return "abs";
    case Op::sign: return "sign";
    case Op::pow_const: return "pow_const";
    case Op::scale: return "scale";
    case Op::dropout: return "dropout";
    case Op::softmax_row: return "softmax_row";
    case Op::concat_rows: return "concat_rows";
    case Op::sum: return "sum";
    case Op::rss: return "rss";
    case Op::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape_of(*this).value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw std::out_of_range("Var does not belong to this tape");
  }
  return nodes_[v.id];
}

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value) {
  Node n;
  n.ref = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::input(const Matrix& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

const Matrix& Tape::value(Var v) const { return node(v).value(); }

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad) n.grad.emplace(n.value().rows(), n.value().cols());
  return *n.grad;
}

const Matrix& Tape::grad(Var v) {
  node(v);
  return grad_slot(v.id);
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.reset();
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value().rows() != 1 || root.value().cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + root.value().shape_str());
  }
  for (auto& n : nodes_) {
    if (n.op != Op::leaf) n.grad.reset();
  }
  if (!root.requires_grad) return;
  grad_slot(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.op == Op::leaf || !n.requires_grad || !n.grad) continue;
    propagate(i);
  }
}

void Tape::propagate(std::size_t id) {
  // nodes_ is never resized during backward, so references into it stay valid.
  Node& n = nodes_[id];
  const Matrix& g = *n.grad;
  const Matrix& y = n.value();
  const double ff = fault_factor(n.op);
  auto wants = [&](std::size_t k) { return nodes_[n.parents[k]].requires_grad; };
  auto pval = [&](std::size_t k) -> const Matrix& { return nodes_[n.parents[k]].value(); };
  auto pgrad = [&](std::size_t k) -> Matrix& { return grad_slot(n.parents[k]); };

  auto elementwise_chain = [&](auto deriv) {
    if (!wants(0)) return;
    const Matrix& x = pval(0);
    Matrix& dx = pgrad(0);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += ff * g[i] * deriv(x[i], y[i]);
  };

  switch (n.op) {
    case Op::leaf:
      break;
    case Op::matmul: {
      const Matrix& a = pval(0);
      const Matrix& b = pval(1);
      if (wants(0)) {
        Matrix& da = pgrad(0);
        if (ff != 1.0) {
          Matrix tmp(a.rows(), a.cols());
          kernels::gemm_nt(g.data(), b.data(), tmp.data(), a.rows(), b.cols(), b.rows());
          for (std::size_t i = 0; i < tmp.size(); ++i) da[i] += ff * tmp[i];
        } else {
          kernels::gemm_nt(g.data(), b.data(), da.data(), a.rows(), b.cols(), b.rows());
        }
      }
      if (wants(1)) {
        Matrix& db = pgrad(1);
        kernels::gemm_tn(a.data(), g.data(), db.data(), a.rows(), a.cols(), b.cols());
      }
      break;
    }
    case Op::transpose: {
      if (!wants(0)) break;
      Matrix& dx = pgrad(0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) dx(c, r) += ff * g(r, c);
      break;
    }
    case Op::add:
    case Op::sub: {
      const double sb = n.op == Op::add ? 1.0 : -1.0;
      if (wants(0)) {
        Matrix& da = pgrad(0);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += ff * g[i];
      }
      if (wants(1)) {
        Matrix& db = pgrad(1);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += sb * g[i];
      }
      break;
    }
    case Op::hadamard: {
      const Matrix& a = pval(0);
      const Matrix& b = pval(1);
      if (wants(0)) {
        Matrix& da = pgrad(0);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += ff * g[i] * b[i];
      }
      if (wants(1)) {
        Matrix& db = pgrad(1);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
      }
      break;
    }
    case Op::tanh:
      elementwise_chain([](double, double out) { return 1.0 - out * out; });
      break;
    case Op::sigmoid:
      elementwise_chain([](double, double out) { return out * (1.0 - out); });
      break;
    case Op::relu:
      elementwise_chain([](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
      break;
    case Op::abs:
      elementwise_chain([](double in, double) { return sign_of(in); });
      break;
    case Op::sign:
      break;
    case Op::pow_const: {
      const double e = n.scalar;
      // At a zero base with exponent < 1 the derivative is unbounded; use 0.
      elementwise_chain([e](double in, double) {
        if (in == 0.0 && e < 1.0) return 0.0;
        return e * std::pow(in, e - 1.0);
      });
      break;
    }
    case Op::scale: {
      const double s = n.scalar;
      elementwise_chain([s](double, double) { return s; });
      break;
    }
    case Op::dropout: {
      if (!wants(0)) break;
      Matrix& dx = pgrad(0);
      if (n.aux) {
        const Matrix& mask = *n.aux;
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += ff * g[i] * mask[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += ff * g[i];
      }
      break;
    }
    case Op::softmax_row: {
      if (!wants(0)) break;
      Matrix& dx = pgrad(0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += ff * y(r, c) * (g(r, c) - dot);
      }
      break;
    }
    case Op::concat_rows: {
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        if (!wants(k)) continue;
        Matrix& dx = pgrad(k);
        const auto src = g.row(k);
        for (std::size_t c = 0; c < g.cols(); ++c) dx[c] += ff * src[c];
      }
      break;
    }
    case Op::sum: {
      if (!wants(0)) break;
      Matrix& dx = pgrad(0);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ff * g[0];
      break;
    }
    case Op::rss: {
      const Matrix& a = pval(0);
      const Matrix& b = pval(1);
      if (wants(0)) {
        Matrix& da = pgrad(0);
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += ff * 2.0 * (a[i] - b[i]) * g[0];
      }
      if (wants(1)) {
        Matrix& db = pgrad(1);
        for (std::size_t i = 0; i < a.size(); ++i) db[i] -= ff * 2.0 * (a[i] - b[i]) * g[0];
      }
      break;
    }
    case Op::cross_entropy: {
      if (!wants(0)) break;
      const Matrix& p = pval(0);
      const double py = p[n.index];
      if (py > kProbClamp) pgrad(0)[n.index] += ff * (-g[0] / py);
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + av.shape_str() + " vs " +
                     bv.shape_str());
  }
  Matrix out(av.rows(), bv.cols());
  kernels::gemm_nn(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.cols());
  return binary(a, b, Op::matmul, std::move(out));
}

Var transpose(Var a) { return unary(a, Op::transpose, a.value().transposed()); }

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return binary(a, b, Op::add, a.value() + b.value());
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return binary(a, b, Op::sub, a.value() - b.value());
}

Var hadamard(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "hadamard");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return binary(a, b, Op::hadamard, std::move(out));
}

Var tanh(Var a) {
  return unary(a, Op::tanh, map(a.value(), [](double x) { return std::tanh(x); }));
}

Var sigmoid(Var a) { return unary(a, Op::sigmoid, map(a.value(), stable_sigmoid)); }

Var relu(Var a) {
  return unary(a, Op::relu, map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }));
}

Var abs(Var a) {
  return unary(a, Op::abs, map(a.value(), [](double x) { return std::abs(x); }));
}

Var sign(Var a) { return unary(a, Op::sign, map(a.value(), sign_of)); }

Var pow_const(Var a, double exponent) {
  const Matrix& x = a.value();
  if (exponent != std::floor(exponent)) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] < 0.0) {
        throw DomainError("pow_const: negative base " + std::to_string(x[i]) +
                          " with non-integer exponent " + std::to_string(exponent));
      }
    }
  }
  return unary(a, Op::pow_const, map(x, [exponent](double v) { return std::pow(v, exponent); }),
               exponent);
}

Var scale(Var a, double factor) {
  return unary(a, Op::scale, factor * a.value(), factor);
}

Var dropout(Var a, double rate, bool train, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return unary(a, Op::dropout, a.value());
  const Matrix& x = a.value();
  Matrix mask(x.rows(), x.cols());
  std::bernoulli_distribution keep(1.0 - rate);
  const double kept = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? kept : 0.0;
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return unary(a, Op::dropout, std::move(out), rate, 0, std::move(mask));
}

Var softmax_row(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (auto& v : o) v /= z;
  }
  return unary(a, Op::softmax_row, std::move(out));
}

Var concat_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("concat_rows: empty input list");
  Tape& t = tape_of(rows.front());
  const std::size_t d = rows.front().value().cols();
  Matrix out(rows.size(), d);
  Tape::Node n;
  n.op = Op::concat_rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Var r = rows[i];
    if (r.tape != &t) throw std::invalid_argument("concat_rows: operands on different tapes");
    const Matrix& v = r.value();
    if (v.rows() != 1 || v.cols() != d) {
      throw ShapeError("concat_rows: expected [1x" + std::to_string(d) + "] rows, got " +
                       v.shape_str() + " at position " + std::to_string(i));
    }
    std::copy(v.data().begin(), v.data().end(), out.row(i).begin());
    n.parents.push_back(r.id);
    n.requires_grad = n.requires_grad || t.requires_grad(r);
  }
  n.own = std::move(out);
  return t.push(std::move(n));
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return unary(a, Op::sum, Matrix(1, 1, s));
}

Var rss_loss(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "rss_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  return binary(a, b, Op::rss, Matrix(1, 1, s));
}

Var cross_entropy_loss(Var probs, std::size_t label) {
  const Matrix& p = probs.value();
  if (p.rows() != 1) throw ShapeError("cross_entropy_loss: expected a row, got " + p.shape_str());
  if (label >= p.cols()) {
    throw std::out_of_range("cross_entropy_loss: label " + std::to_string(label) +
                            " out of range for " + std::to_string(p.cols()) + " classes");
  }
  const double loss = -std::log(std::max(p[label], kProbClamp));
  return unary(probs, Op::cross_entropy, Matrix(1, 1, loss), 0.0, label);
}

namespace debug {

void inject_backward_fault(std::optional<Op> op) {
  g_fault.store(op ? static_cast<int>(*op) : -1, std::memory_order_relaxed);
}

std::optional<Op> injected_fault() {
  const int v = g_fault.load(std::memory_order_relaxed);
  if (v < 0) return std::nullopt;
  return static_cast<Op>(v);
}

}  // namespace debug

}  // namespace milkt::ad
