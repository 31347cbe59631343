#include "lava/adaptation.hpp"

#include "lava/autodiff.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <string>

namespace lava {

Matrix inner_step(const Matrix& prior, const Matrix& gradient, double alpha) {
  if (!(alpha > 0.0)) {
    throw ContractError("inner_step: alpha must be positive");
  }
  if (!gradient.allFinite()) {
    throw NumericError("inner_step: gradient is not finite");
  }
  return ad::ops::sub(prior, ad::ops::scale(gradient, alpha));
}

Matrix head_point_hessian(const Matrix& z) {
  return ad::ops::scale(ad::ops::outer(z, z), 2.0);
}

Matrix context_point_hessian(const std::function<double(const Matrix&)>& loss,
                             const Matrix& phi, double step) {
  if (phi.rows() != 1) {
    throw ContractError("context_point_hessian: phi must be a row vector");
  }
  const Index c = phi.cols();
  if (c > 16) {
    throw ContractError("context_point_hessian: context dim exceeds 16");
  }
  auto probe = [&](const Matrix& at) {
    const double v = loss(at);
    if (!std::isfinite(v)) {
      throw NumericError("context_point_hessian: loss not finite at probe");
    }
    return v;
  };
  const double f0 = probe(phi);
  Matrix h(c, c);
  for (Index i = 0; i < c; ++i) {
    Matrix p = phi;
    p(0, i) = phi(0, i) + step;
    const double fp = probe(p);
    p(0, i) = phi(0, i) - step;
    const double fm = probe(p);
    h(i, i) = (fp - 2.0 * f0 + fm) / (step * step);
    for (Index j = i + 1; j < c; ++j) {
      Matrix q = phi;
      q(0, i) = phi(0, i) + step;
      q(0, j) = phi(0, j) + step;
      const double fpp = probe(q);
      q(0, j) = phi(0, j) - step;
      const double fpm = probe(q);
      q(0, i) = phi(0, i) - step;
      const double fmm = probe(q);
      q(0, j) = phi(0, j) + step;
      const double fmp = probe(q);
      h(i, j) = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
      h(j, i) = h(i, j);
    }
  }
  return 0.5 * (h + h.transpose());
}

Matrix psd_project(const Matrix& h) {
  if (h.rows() != h.cols()) {
    throw DimensionError("psd_project: matrix must be square");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (h + h.transpose()));
  if (es.eigenvalues().minCoeff() >= 0.0) {
    return 0.5 * (h + h.transpose());
  }
  const Matrix clipped = es.eigenvalues().cwiseMax(0.0).asDiagonal();
  Matrix out = es.eigenvectors() * clipped * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

Matrix regularize(const Matrix& h, double eps) {
  if (!(eps > 0.0)) {
    throw ContractError("regularize: eps must be positive");
  }
  if (h.rows() != h.cols()) {
    throw DimensionError("regularize: matrix must be square");
  }
  const double asym = (h - h.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * std::max(1.0, h.cwiseAbs().maxCoeff())) {
    throw ContractError("regularize: matrix is not symmetric");
  }
  Matrix shifted = h;
  shifted.diagonal().array() += eps;
  return ad::ops::scale(shifted, 1.0 / (1.0 + eps));
}

AdaptationResult fuse(const std::vector<PointPosterior>& posteriors) {
  if (posteriors.empty()) {
    throw ContractError("fuse: need at least one posterior");
  }
  const Index m = posteriors.front().precision.rows();
  const Index k = posteriors.front().adapted.rows();
  for (const auto& p : posteriors) {
    if (p.precision.rows() != m || p.precision.cols() != m ||
        p.adapted.rows() != k || p.adapted.cols() != m) {
      throw DimensionError("fuse: posterior shapes disagree");
    }
  }
  Matrix s = Matrix::Zero(m, m);
  Matrix rhs = Matrix::Zero(m, k);
  for (const auto& p : posteriors) {  // fixed support-index order
    s += p.precision;
    rhs.noalias() += p.precision * p.adapted.transpose();
  }
  AdaptationResult out;
  out.fused = ad::ops::spd_solve(s, rhs).transpose();
  out.points = posteriors;
  out.condition_number = condition_number(s);
  return out;
}

Matrix average_adapt(const Matrix& prior, const std::vector<Matrix>& gradients,
                     double alpha) {
  if (gradients.empty()) {
    throw ContractError("average_adapt: need at least one gradient");
  }
  Matrix mean = Matrix::Zero(prior.rows(), prior.cols());
  for (const auto& g : gradients) {
    if (g.rows() != prior.rows() || g.cols() != prior.cols()) {
      throw DimensionError("average_adapt: gradient shape mismatch");
    }
    mean += g;
  }
  mean /= static_cast<double>(gradients.size());
  return inner_step(prior, mean, alpha);
}

std::vector<Matrix> min_variance_weights(
    const std::vector<Matrix>& covariances) {
  if (covariances.empty()) {
    throw ContractError("min_variance_weights: need at least one covariance");
  }
  const Index m = covariances.front().rows();
  const Matrix eye = Matrix::Identity(m, m);
  std::vector<Matrix> precisions;
  precisions.reserve(covariances.size());
  Matrix total = Matrix::Zero(m, m);
  for (const auto& cov : covariances) {
    if (cov.rows() != m || cov.cols() != m) {
      throw DimensionError("min_variance_weights: covariance shape mismatch");
    }
    Matrix p = ad::ops::spd_solve(cov, eye);
    total += p;
    precisions.push_back(std::move(p));
  }
  std::vector<Matrix> weights;
  weights.reserve(precisions.size());
  for (const auto& p : precisions) {
    weights.push_back(ad::ops::spd_solve(total, p));
  }
  return weights;
}

double condition_number(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (smax == 0.0) return std::numeric_limits<double>::infinity();
  const double rank_floor = smax * static_cast<double>(m.rows()) *
                            std::numeric_limits<double>::epsilon();
  if (smin <= rank_floor) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

}  // namespace lava
