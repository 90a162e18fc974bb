#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "milkt/matrix.hpp"

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation in creation order, which is always a valid
// topological order. Vars are lightweight handles (tape, index). Leaves may
// own their value or borrow it from a caller-held Matrix (parameters), in which
// case the Matrix must outlive the Tape and stay unchanged while it is in use.
//
// Gradients accumulate additively into leaves: calling backward() twice
// without zero_grad() doubles leaf gradients. Interior gradients are recomputed
// on every call.
namespace milkt::ad {

enum class Op : std::uint8_t {
  leaf,
  matmul,
  transpose,
  add,
  sub,
  hadamard,
  tanh,
  sigmoid,
  relu,
  abs,
  sign,
  pow_const,
  scale,
  dropout,
  softmax_row,
  concat_rows,
  sum,
  rss,
  cross_entropy,
};

std::string_view op_name(Op op);

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  /// Borrowed leaf with requires_grad set. `value` must outlive the tape.
  Var parameter(const Matrix& value);
  /// Borrowed leaf without gradient (e.g. an input bag).
  Var input(const Matrix& value);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. v; zero if none reached it.
  const Matrix& grad(Var v);
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  Op op(Var v) const { return node(v).op; }
  std::span<const std::size_t> parents(Var v) const { return node(v).parents; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss);
  void zero_grad();

  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> parents;
    Matrix own;
    const Matrix* ref = nullptr;
    std::optional<Matrix> grad;
    bool requires_grad = false;
    double scalar = 0.0;      // exponent, scale factor
    std::size_t index = 0;    // class index for cross_entropy
    std::optional<Matrix> aux;  // dropout mask

    const Matrix& value() const { return ref ? *ref : own; }
  };

  /// Appends an op result. Used by the op implementations.
  Var push(Node node);
  const Node& node(Var v) const;

 private:
  Matrix& grad_slot(std::size_t id);
  void propagate(std::size_t id);

  std::vector<Node> nodes_;
};

// Operations. All operands must live on the same tape. No broadcasting.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var abs(Var a);
/// Zero gradient everywhere.
Var sign(Var a);
/// Elementwise a^exponent. Negative bases need an integer exponent.
Var pow_const(Var a, double exponent);
Var scale(Var a, double factor);
/// Inverted dropout; the exact identity when `train` is false.
Var dropout(Var a, double rate, bool train, std::mt19937_64& rng);
/// Row-wise softmax, max-subtracted.
Var softmax_row(Var a);
/// Stacks 1 x d rows into an m x d matrix.
Var concat_rows(std::span<const Var> rows);
Var sum(Var a);
/// Residual sum of squares, sum_i (a_i - b_i)^2, as a 1x1.
Var rss_loss(Var a, Var b);
/// -ln(max(p[label], 1e-12)) for a 1 x c probability row.
Var cross_entropy_loss(Var probs, std::size_t label);

inline constexpr double kProbClamp = 1e-12;

namespace debug {
/// Scales the backward pass of `op` by 1.5 when set. Used to verify that the
/// gradient checker notices a broken derivative.
void inject_backward_fault(std::optional<Op> op);
std::optional<Op> injected_fault();
}  // namespace debug

}  // namespace milkt::ad
