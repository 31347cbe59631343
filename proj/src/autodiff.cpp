#include "lava/autodiff.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace lava::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a) +
                         " and " + shape_str(b) + " do not match");
  }
}

}  // namespace

namespace ops {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a) + " * " +
                         shape_str(b) + " do not agree");
  }
  Matrix out = a * b;
  check_finite(out, "matmul");
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix out = a + b;
  check_finite(out, "add");
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "subtract");
  Matrix out = a - b;
  check_finite(out, "subtract");
  return out;
}

Matrix cmul(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "elementwise-multiply");
  Matrix out = a.cwiseProduct(b);
  check_finite(out, "elementwise-multiply");
  return out;
}

Matrix scale(const Matrix& a, double factor) {
  Matrix out = factor * a;
  check_finite(out, "scalar-scale");
  return out;
}

Matrix transpose(const Matrix& a) { return a.transpose(); }

Matrix relu(const Matrix& a) { return a.cwiseMax(0.0); }

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat-columns: row counts " + shape_str(a) +
                         " and " + shape_str(b) + " differ");
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Matrix append_ones(const Matrix& a) {
  Matrix out(a.rows(), a.cols() + 1);
  out.leftCols(a.cols()) = a;
  out.col(a.cols()).setOnes();
  return out;
}

Matrix sum(const Matrix& a) {
  Matrix out(1, 1);
  out(0, 0) = a.sum();
  check_finite(out, "sum");
  return out;
}

Matrix mse(const Matrix& pred, const Matrix& target) {
  check_same_shape(pred, target, "mean-squared-error");
  Matrix out(1, 1);
  out(0, 0) = (pred - target).squaredNorm() / static_cast<double>(pred.rows());
  check_finite(out, "mean-squared-error");
  return out;
}

Matrix outer(const Matrix& a, const Matrix& b) {
  if (a.rows() != 1 || b.rows() != 1) {
    throw DimensionError("outer-product: expects row vectors, got " +
                         shape_str(a) + " and " + shape_str(b));
  }
  Matrix out = a.transpose() * b;
  check_finite(out, "outer-product");
  return out;
}

Index failing_pivot(const Matrix& a) {
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index k = 0; k < n; ++k) {
    double d = a(k, k) - l.row(k).head(k).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d)) return k;
    l(k, k) = std::sqrt(d);
    for (Index i = k + 1; i < n; ++i) {
      l(i, k) = (a(i, k) - l.row(i).head(k).dot(l.row(k).head(k))) / l(k, k);
    }
  }
  return -1;
}

Matrix spd_solve(const Matrix& a, const Matrix& b, Eigen::LLT<Matrix>* factor) {
  if (a.rows() != a.cols()) {
    throw DimensionError("spd_solve: matrix is " + shape_str(a) +
                         ", expected square");
  }
  if (a.rows() != b.rows()) {
    throw DimensionError("spd_solve: a is " + shape_str(a) + " but b is " +
                         shape_str(b));
  }
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if (asym > 1e-9 * scale) {
    throw ContractError("spd_solve: matrix is not symmetric (max asymmetry " +
                        std::to_string(asym) + ")");
  }
  Matrix sym = 0.5 * (a + a.transpose());
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success) {
    throw SingularMatrixError("spd_solve: Cholesky factorization failed",
                              failing_pivot(sym));
  }
  Matrix out = llt.solve(b);
  check_finite(out, "spd_solve");
  if (factor != nullptr) *factor = std::move(llt);
  return out;
}

}  // namespace ops

const Matrix& Var::value() const {
  if (!valid()) throw ContractError("Var::value on an empty handle");
  return tape_->value(*this);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() < 0 ||
      v.id() >= static_cast<int>(nodes_.size())) {
    throw ContractError("variable does not belong to this tape");
  }
}

Var Tape::record(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Matrix value) {
  check_finite(value, "leaf");
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return record(std::move(n));
}

Var Tape::apply(Op kind, Var a) {
  check_owned(a);
  Node n;
  n.op = kind;
  n.a = a.id();
  const Matrix& av = nodes_[a.id()].value;
  switch (kind) {
    case Op::Transpose: n.value = ops::transpose(av); break;
    case Op::Relu: n.value = ops::relu(av); break;
    case Op::AppendOnes: n.value = ops::append_ones(av); break;
    case Op::Sum: n.value = ops::sum(av); break;
    default:
      throw ContractError("apply: op is not unary");
  }
  return record(std::move(n));
}

Var Tape::apply(Op kind, Var a, Var b) {
  check_owned(a);
  check_owned(b);
  Node n;
  n.op = kind;
  n.a = a.id();
  n.b = b.id();
  const Matrix& av = nodes_[a.id()].value;
  const Matrix& bv = nodes_[b.id()].value;
  switch (kind) {
    case Op::MatMul: n.value = ops::matmul(av, bv); break;
    case Op::Add: n.value = ops::add(av, bv); break;
    case Op::Sub: n.value = ops::sub(av, bv); break;
    case Op::CMul: n.value = ops::cmul(av, bv); break;
    case Op::ConcatCols: n.value = ops::concat_cols(av, bv); break;
    case Op::Mse: n.value = ops::mse(av, bv); break;
    case Op::Outer: n.value = ops::outer(av, bv); break;
    case Op::SpdSolve: {
      auto chol = std::make_shared<Eigen::LLT<Matrix>>();
      n.value = ops::spd_solve(av, bv, chol.get());
      n.chol = std::move(chol);
      break;
    }
    default:
      throw ContractError("apply: op is not binary");
  }
  return record(std::move(n));
}

Var Tape::apply_scale(Var a, double factor) {
  check_owned(a);
  Node n;
  n.op = Op::Scale;
  n.a = a.id();
  n.factor = factor;
  n.value = ops::scale(nodes_[a.id()].value, factor);
  return record(std::move(n));
}

const Matrix& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

Matrix& Tape::adjoint_of(int id) {
  Matrix& adj = nodes_[id].adjoint;
  if (adj.size() == 0) {
    adj = Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  }
  return adj;
}

Matrix Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id()];
  if (n.adjoint.size() == 0) {
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.adjoint;
}

std::unordered_map<int, Matrix> Tape::leaf_gradients() const {
  std::unordered_map<int, Matrix> out;
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    if (nodes_[i].op == Op::Leaf) {
      out.emplace(i, grad(Var(const_cast<Tape*>(this), i)));
    }
  }
  return out;
}

void Tape::backward(Var root) {
  check_owned(root);
  const Matrix& rv = nodes_[root.id()].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractError("backward: root must be 1x1, got " + shape_str(rv));
  }
  for (Node& n : nodes_) n.adjoint.resize(0, 0);
  adjoint_of(root.id())(0, 0) = 1.0;

  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.op == Op::Leaf || n.adjoint.size() == 0) continue;
    const Matrix& g = n.adjoint;
    const Matrix& av = nodes_[n.a].value;
    switch (n.op) {
      case Op::MatMul: {
        const Matrix& bv = nodes_[n.b].value;
        adjoint_of(n.a).noalias() += g * bv.transpose();
        adjoint_of(n.b).noalias() += av.transpose() * g;
        break;
      }
      case Op::Add:
        adjoint_of(n.a) += g;
        adjoint_of(n.b) += g;
        break;
      case Op::Sub:
        adjoint_of(n.a) += g;
        adjoint_of(n.b) -= g;
        break;
      case Op::CMul: {
        const Matrix& bv = nodes_[n.b].value;
        adjoint_of(n.a) += g.cwiseProduct(bv);
        adjoint_of(n.b) += g.cwiseProduct(av);
        break;
      }
      case Op::Scale:
        adjoint_of(n.a) += n.factor * g;
        break;
      case Op::Transpose:
        adjoint_of(n.a) += g.transpose();
        break;
      case Op::Relu:
        adjoint_of(n.a) +=
            g.cwiseProduct((av.array() > 0.0).cast<double>().matrix());
        break;
      case Op::ConcatCols: {
        const Matrix& bv = nodes_[n.b].value;
        adjoint_of(n.a) += g.leftCols(av.cols());
        adjoint_of(n.b) += g.rightCols(bv.cols());
        break;
      }
      case Op::AppendOnes:
        adjoint_of(n.a) += g.leftCols(av.cols());
        break;
      case Op::Sum:
        adjoint_of(n.a).array() += g(0, 0);
        break;
      case Op::Mse: {
        const Matrix& bv = nodes_[n.b].value;
        const double w = 2.0 * g(0, 0) / static_cast<double>(av.rows());
        adjoint_of(n.a) += w * (av - bv);
        adjoint_of(n.b) -= w * (av - bv);
        break;
      }
      case Op::Outer: {
        const Matrix& bv = nodes_[n.b].value;
        adjoint_of(n.a) += (g * bv.transpose()).transpose();
        adjoint_of(n.b) += av * g;
        break;
      }
      case Op::SpdSolve: {
        // X = a^-1 b. adjoint(b) = a^-1 g; adjoint(a) = -sym(a^-1 g X^T).
        const Matrix& x = n.value;
        Matrix gb = n.chol->solve(g);
        Matrix ga = -gb * x.transpose();
        adjoint_of(n.a) += 0.5 * (ga + ga.transpose());
        adjoint_of(n.b) += gb;
        break;
      }
      case Op::Leaf:
        break;
    }
  }
}

Var matmul(Var a, Var b) { return a.tape()->apply(Op::MatMul, a, b); }
Var add(Var a, Var b) { return a.tape()->apply(Op::Add, a, b); }
Var sub(Var a, Var b) { return a.tape()->apply(Op::Sub, a, b); }
Var cmul(Var a, Var b) { return a.tape()->apply(Op::CMul, a, b); }
Var scale(Var a, double factor) { return a.tape()->apply_scale(a, factor); }
Var transpose(Var a) { return a.tape()->apply(Op::Transpose, a); }
Var relu(Var a) { return a.tape()->apply(Op::Relu, a); }
Var concat_cols(Var a, Var b) { return a.tape()->apply(Op::ConcatCols, a, b); }
Var append_ones(Var a) { return a.tape()->apply(Op::AppendOnes, a); }
Var sum(Var a) { return a.tape()->apply(Op::Sum, a); }
Var mse(Var pred, Var target) {
  return pred.tape()->apply(Op::Mse, pred, target);
}
Var outer(Var a, Var b) { return a.tape()->apply(Op::Outer, a, b); }
Var spd_solve(Var a, Var b) { return a.tape()->apply(Op::SpdSolve, a, b); }

}  // namespace lava::ad
