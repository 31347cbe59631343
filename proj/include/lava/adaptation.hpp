#pragma once

#include "lava/types.hpp"

#include <functional>
#include <vector>

namespace lava {

/// One support point's Laplace posterior. In last-layer mode the precision
/// is the (d+1)x(d+1) Kronecker factor of the full k(d+1) Hessian (the
/// identity block over output rows is never materialized); in context mode
/// it is the c x c curvature of the point loss.
struct PointPosterior {
  Matrix adapted;        // theta_i (k x (d+1)) or phi_i (1 x c)
  Matrix precision;      // regularized, symmetric positive-definite
  Matrix raw_precision;  // curvature before regularization (PSD)
};

struct AdaptationResult {
  Matrix fused;  // precision-weighted combination of the adapted params
  std::vector<PointPosterior> points;
  double condition_number = 1.0;  // kappa of the summed precision
};

/// prior - alpha * gradient.
Matrix inner_step(const Matrix& prior, const Matrix& gradient, double alpha);

/// Kronecker factor 2 z^T z of the squared-error Hessian for one padded
/// feature row z (1 x (d+1)).
Matrix head_point_hessian(const Matrix& z);

/// Central-finite-difference Hessian of a scalar loss at phi (1 x c),
/// symmetrized. Treated as a constant in any outer backward pass.
Matrix context_point_hessian(const std::function<double(const Matrix&)>& loss,
                             const Matrix& phi, double step = 1e-4);

/// Nearest PSD matrix: negative eigenvalues clipped to zero. The exact
/// squared-error Hessian of a piecewise-linear network is PSD wherever it
/// exists; finite-difference estimates probing across activation kinks can
/// pick up spurious negative curvature, which this removes so the
/// regularizer's PSD precondition holds.
Matrix psd_project(const Matrix& h);

/// (h + eps I) / (1 + eps); shifts eigenvalues to (lambda + eps)/(1 + eps).
Matrix regularize(const Matrix& h, double eps);

/// Precision-weighted fusion: solves (sum H_i) fused^T = sum H_i adapted_i^T
/// row-wise. Requires at least one posterior, all precisions SPD.
AdaptationResult fuse(const std::vector<PointPosterior>& posteriors);

/// Single gradient step on the mean support loss; equals the mean of the
/// per-point inner steps by linearity.
Matrix average_adapt(const Matrix& prior, const std::vector<Matrix>& gradients,
                     double alpha);

/// Minimum-variance combination weights W_i = (sum_j S_j^-1)^-1 S_i^-1 for
/// covariances S_i. The weights sum to the identity.
std::vector<Matrix> min_variance_weights(const std::vector<Matrix>& covariances);

/// Ratio of extreme singular values; +inf for numerically rank-deficient
/// input.
double condition_number(const Matrix& m);

}  // namespace lava
