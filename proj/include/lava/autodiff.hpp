#pragma once

#include "lava/types.hpp"

#include <Eigen/Cholesky>

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

namespace lava::ad {

// Dense kernels shared by the tape and by untaped forward paths. Every
// kernel validates operand shapes and rejects non-finite results.
namespace ops {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix cmul(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix transpose(const Matrix& a);
Matrix relu(const Matrix& a);
Matrix concat_cols(const Matrix& a, const Matrix& b);
Matrix append_ones(const Matrix& a);
Matrix sum(const Matrix& a);
Matrix mse(const Matrix& pred, const Matrix& target);
Matrix outer(const Matrix& a, const Matrix& b);

/// Solves a x = b for symmetric positive-definite a via Cholesky. The input
/// is symmetrized after a 1e-9 symmetry check, so the map is well defined
/// entrywise. If a factorization handle is supplied it receives the factor.
Matrix spd_solve(const Matrix& a, const Matrix& b,
                 Eigen::LLT<Matrix>* factor = nullptr);

/// Index of the first nonpositive Cholesky pivot, -1 if factorization works.
Index failing_pivot(const Matrix& a);

}  // namespace ops

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  CMul,
  Scale,
  Transpose,
  Relu,
  ConcatCols,
  AppendOnes,
  Sum,
  Mse,
  Outer,
  SpdSolve,
};

class Tape;

/// Handle to a recorded node. Values are immutable once recorded.
class Var {
public:
  Var() = default;
  const Matrix& value() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Define-by-run recording of matrix primitives. Node ids are assigned in
/// creation order, which is a topological order of the graph. A tape is
/// confined to one thread; values are safe to share once recorded.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);

  /// Records one primitive and returns its forward value node.
  Var apply(Op kind, Var a);
  Var apply(Op kind, Var a, Var b);
  Var apply_scale(Var a, double factor);

  /// Reverse sweep from a 1x1 root. Seeds the root adjoint with 1 and
  /// accumulates leaf adjoints in reverse creation order. Clears any
  /// adjoints from a previous sweep first.
  void backward(Var root);

  const Matrix& value(Var v) const;
  /// Adjoint accumulated for v by the last backward pass (zeros if the
  /// node does not influence the root).
  Matrix grad(Var v) const;
  /// Leaf adjoints keyed by node id.
  std::unordered_map<int, Matrix> leaf_gradients() const;

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    double factor = 1.0;  // Scale payload
    Matrix value;
    Matrix adjoint;  // lazily sized
    std::shared_ptr<Eigen::LLT<Matrix>> chol;  // SpdSolve only
  };

  Var record(Node node);
  Matrix& adjoint_of(int id);
  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

// Primitive sugar. All record onto the operands' tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double factor);
Var transpose(Var a);
Var relu(Var a);
Var concat_cols(Var a, Var b);
Var append_ones(Var a);
Var sum(Var a);
Var mse(Var pred, Var target);
Var outer(Var a, Var b);
Var spd_solve(Var a, Var b);

}  // namespace lava::ad
