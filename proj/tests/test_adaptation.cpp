#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lava/adaptation.hpp"
#include "lava/autodiff.hpp"
#include "lava/rng.hpp"
#include "oracles.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <vector>

using namespace lava;
using lava::testing::fd_hessian;
using lava::testing::random_matrix;
using lava::testing::random_spd;

TEST_CASE("inner_step examples") {
  Rng rng(1);
  Matrix prior = random_matrix(2, 3, rng);
  CHECK(inner_step(prior, Matrix::Zero(2, 3), 0.1) == prior);

  Matrix p(1, 2), g(1, 2), want(1, 2);
  p << 1.0, 1.0;
  g << 2.0, -2.0;
  want << 0.8, 1.2;
  CHECK(inner_step(p, g, 0.1).isApprox(want, 1e-15));

  CHECK_THROWS_AS(inner_step(p, g, 0.0), ContractError);
  Matrix bad(1, 2);
  bad << std::numeric_limits<double>::quiet_NaN(), 0.0;
  CHECK_THROWS_AS(inner_step(p, bad, 0.1), NumericError);
}

TEST_CASE("zero residual leaves the head at its prior") {
  // theta0 z = y implies a zero per-point gradient
  Rng rng(2);
  Matrix theta = random_matrix(2, 4, rng);
  Matrix z = random_matrix(1, 4, rng);
  Matrix y = (theta * z.transpose()).transpose();
  Matrix grad = 2.0 * (theta * z.transpose() - y.transpose()) * z;
  CHECK(inner_step(theta, grad, 0.1) == theta);
}

TEST_CASE("head_point_hessian structure") {
  const int d = 4;
  Matrix z = Matrix::Zero(1, d + 1);
  z(0, d) = 1.0;
  Matrix g = head_point_hessian(z);
  Matrix want = Matrix::Zero(d + 1, d + 1);
  want(d, d) = 2.0;
  CHECK(g == want);

  Rng rng(3);
  Matrix zr = random_matrix(1, 6, rng);
  Matrix gr = head_point_hessian(zr);
  CHECK(gr.isApprox(gr.transpose(), 1e-15));
  CHECK(gr.trace() == doctest::Approx(2.0 * zr.squaredNorm()).epsilon(1e-12));
  Eigen::JacobiSVD<Matrix> svd(gr);
  CHECK(svd.singularValues()(0) > 1e-12);
  CHECK(svd.singularValues()(1) < 1e-12);  // rank one
}

TEST_CASE("head_point_hessian matches the finite-difference hessian") {
  // loss(theta) = ||theta z - y||^2 with k=1, d=3
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix z = random_matrix(1, 4, rng);
    Matrix y = random_matrix(1, 1, rng);
    Matrix theta = random_matrix(1, 4, rng);
    auto loss = [&](const Matrix& th) {
      return (th * z.transpose() - y).squaredNorm();
    };
    Matrix fd = fd_hessian(loss, theta, 1e-4);
    Matrix got = head_point_hessian(z);
    CHECK((fd - got).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("context_point_hessian on quadratics") {
  auto norm2 = [](const Matrix& phi) { return phi.squaredNorm(); };
  Matrix phi = Matrix::Zero(1, 3);
  phi << 0.3, -0.4, 1.0;
  Matrix h = context_point_hessian(norm2, phi);
  CHECK((h - 2.0 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-6);

  Rng rng(5);
  Matrix a = random_spd(3, rng, 0.2);
  auto quad = [&](const Matrix& p) { return (p * a * p.transpose())(0, 0); };
  Matrix hq = context_point_hessian(quad, phi);
  CHECK((hq - 2.0 * a).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("context_point_hessian is symmetric and stable under step halving") {
  // random two-layer network loss over a 2-d context
  Rng rng(6);
  Matrix w1 = random_matrix(4, 5, rng, -0.9, 0.9);
  Matrix b1 = random_matrix(1, 5, rng, -0.2, 0.2);
  Matrix w2 = random_matrix(5, 1, rng, -0.9, 0.9);
  Matrix x = random_matrix(1, 2, rng);
  Matrix y = random_matrix(1, 1, rng);
  auto loss = [&](const Matrix& phi) {
    Matrix in(1, 4);
    in << x, phi;
    Matrix h = (in * w1 + b1).cwiseMax(0.0);
    return (h * w2 - y).squaredNorm();
  };
  Matrix phi(1, 2);
  phi << 0.35, -0.15;
  Matrix h1 = context_point_hessian(loss, phi, 1e-4);
  Matrix h2 = context_point_hessian(loss, phi, 5e-5);
  CHECK(h1.isApprox(h1.transpose(), 1e-12));
  const double denom = std::max(1.0, h1.cwiseAbs().maxCoeff());
  CHECK((h1 - h2).cwiseAbs().maxCoeff() / denom < 1e-4);
}

TEST_CASE("context_point_hessian rejects non-finite losses") {
  auto bad = [](const Matrix&) {
    return std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(context_point_hessian(bad, Matrix::Zero(1, 2)),
                  NumericError);
}

TEST_CASE("regularize examples") {
  CHECK(regularize(Matrix::Identity(3, 3), 0.7)
            .isApprox(Matrix::Identity(3, 3), 1e-15));

  Matrix h = Matrix::Zero(2, 2);
  h(0, 0) = 3.0;
  h(1, 1) = 1.0;
  Matrix got = regularize(h, 0.1);
  CHECK(got(0, 0) == doctest::Approx(3.1 / 1.1).epsilon(1e-14));
  CHECK(got(1, 1) == doctest::Approx(1.0).epsilon(1e-14));

  Matrix zero = Matrix::Zero(4, 4);
  Matrix floor = regularize(zero, 0.25);
  CHECK(floor.isApprox(Matrix::Identity(4, 4) * (0.25 / 1.25), 1e-15));

  CHECK_THROWS_AS(regularize(h, 0.0), ContractError);
  CHECK_THROWS_AS(regularize(h, -1.0), ContractError);
}

TEST_CASE("regularized precisions satisfy the eigenvalue floor") {
  Rng rng(7);
  const double eps = 0.1;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix z = random_matrix(1, 5, rng);
    Matrix reg = regularize(head_point_hessian(z), eps);
    Eigen::SelfAdjointEigenSolver<Matrix> es(reg);
    CHECK(es.eigenvalues().minCoeff() >= eps / (1.0 + eps) - 1e-9);
  }
}

TEST_CASE("fuse with one posterior returns it exactly") {
  Rng rng(8);
  PointPosterior p;
  p.adapted = random_matrix(2, 3, rng);
  p.raw_precision = random_spd(3, rng);
  p.precision = p.raw_precision;
  AdaptationResult r = fuse({p});
  CHECK((r.fused - p.adapted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fuse with equal precisions averages the adapted params") {
  Rng rng(9);
  Matrix shared = random_spd(4, rng, 0.5);
  std::vector<PointPosterior> posts;
  Matrix mean = Matrix::Zero(2, 4);
  for (int i = 0; i < 5; ++i) {
    PointPosterior p;
    p.adapted = random_matrix(2, 4, rng);
    p.precision = shared;
    p.raw_precision = shared;
    mean += p.adapted;
    posts.push_back(p);
  }
  mean /= 5.0;
  AdaptationResult r = fuse(posts);
  CHECK((r.fused - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fused mean matches the brute-force density-product argmax") {
  // two 2-d Gaussians on a 2001x2001 grid over [-0.5, 1.5]^2
  Matrix h1 = Matrix::Zero(2, 2), h2 = Matrix::Zero(2, 2);
  h1(0, 0) = 10.0;
  h1(1, 1) = 0.1;
  h2(0, 0) = 0.1;
  h2(1, 1) = 10.0;
  Matrix m1(1, 2), m2(1, 2);
  m1 << 1.0, 0.0;
  m2 << 0.0, 1.0;

  PointPosterior p1{m1, h1, h1};
  PointPosterior p2{m2, h2, h2};
  AdaptationResult r = fuse({p1, p2});

  // grid oracle: maximize the product of the two (unnormalized) densities,
  // i.e. minimize the sum of quadratic forms
  const int n = 2001;
  const double lo = -0.5, hi = 1.5;
  double best = std::numeric_limits<double>::infinity();
  double bx = 0.0, by = 0.0;
  for (int iy = 0; iy < n; ++iy) {
    const double y = lo + (hi - lo) * iy / (n - 1);
    for (int ix = 0; ix < n; ++ix) {
      const double x = lo + (hi - lo) * ix / (n - 1);
      const double d1x = x - m1(0, 0), d1y = y - m1(0, 1);
      const double d2x = x - m2(0, 0), d2y = y - m2(0, 1);
      const double e = h1(0, 0) * d1x * d1x + h1(1, 1) * d1y * d1y +
                       h2(0, 0) * d2x * d2x + h2(1, 1) * d2y * d2y;
      if (e < best) {
        best = e;
        bx = x;
        by = y;
      }
    }
  }
  CHECK(std::abs(r.fused(0, 0) - bx) <= 1e-3);
  CHECK(std::abs(r.fused(0, 1) - by) <= 1e-3);
}

TEST_CASE("fusion solves its own stationarity condition") {
  // gradient of sum_i (theta - theta_i) H_i (theta - theta_i)^T at the
  // fused point vanishes
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<PointPosterior> posts;
    const int n = 2 + static_cast<int>(rng.uniform() * 4);
    for (int i = 0; i < n; ++i) {
      PointPosterior p;
      p.adapted = random_matrix(1, 3, rng);
      p.raw_precision = random_spd(3, rng, 0.2);
      p.precision = p.raw_precision;
      posts.push_back(p);
    }
    AdaptationResult r = fuse(posts);
    Matrix grad = Matrix::Zero(1, 3);
    for (const auto& p : posts) {
      grad += 2.0 * (r.fused - p.adapted) * p.precision;
    }
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("fused params solve the fusion system to high relative residual") {
  Rng rng(11);
  std::vector<PointPosterior> posts;
  for (int i = 0; i < 6; ++i) {
    PointPosterior p;
    p.adapted = random_matrix(2, 5, rng);
    p.raw_precision = random_spd(5, rng, 0.05);
    p.precision = p.raw_precision;
    posts.push_back(p);
  }
  AdaptationResult r = fuse(posts);
  Matrix s = Matrix::Zero(5, 5);
  Matrix rhs = Matrix::Zero(5, 2);
  for (const auto& p : posts) {
    s += p.precision;
    rhs += p.precision * p.adapted.transpose();
  }
  CHECK((s * r.fused.transpose() - rhs).norm() / rhs.norm() < 1e-8);
}

TEST_CASE("row-wise kronecker fusion equals the full vectorized solve") {
  Rng rng(12);
  for (int k : {2, 3}) {
    const int d = 4;  // head columns d+1
    const int m = d + 1;
    const int n = 6;
    std::vector<PointPosterior> posts;
    Matrix s_full = Matrix::Zero(k * m, k * m);
    Matrix rhs_full = Matrix::Zero(k * m, 1);
    for (int i = 0; i < n; ++i) {
      Matrix z = random_matrix(1, m, rng);
      PointPosterior p;
      p.adapted = random_matrix(k, m, rng);
      p.raw_precision = head_point_hessian(z);
      p.precision = regularize(p.raw_precision, 0.1);
      posts.push_back(p);

      // full Hessian I_k (x) G over the row-major vec of theta
      Matrix full = Matrix::Zero(k * m, k * m);
      for (int r = 0; r < k; ++r) {
        full.block(r * m, r * m, m, m) = p.precision;
      }
      s_full += full;
      Matrix vec(k * m, 1);
      for (int r = 0; r < k; ++r) {
        vec.block(r * m, 0, m, 1) = p.adapted.row(r).transpose();
      }
      rhs_full += full * vec;
    }
    AdaptationResult r = fuse(posts);
    Matrix vec_full = ad::ops::spd_solve(s_full, rhs_full);
    Matrix fused_full(k, m);
    for (int row = 0; row < k; ++row) {
      fused_full.row(row) = vec_full.block(row * m, 0, m, 1).transpose();
    }
    CHECK((r.fused - fused_full).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("average_adapt examples") {
  Rng rng(13);
  Matrix prior = random_matrix(2, 3, rng);
  std::vector<Matrix> grads;
  Matrix mean_of_steps = Matrix::Zero(2, 3);
  const double alpha = 0.1;
  for (int i = 0; i < 7; ++i) {
    grads.push_back(random_matrix(2, 3, rng));
    mean_of_steps += inner_step(prior, grads.back(), alpha);
  }
  mean_of_steps /= 7.0;
  CHECK((average_adapt(prior, grads, alpha) - mean_of_steps)
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  std::vector<Matrix> zeros(3, Matrix::Zero(2, 3));
  CHECK(average_adapt(prior, zeros, alpha) == prior);

  std::vector<Matrix> one = {grads[0]};
  CHECK(average_adapt(prior, one, alpha) == inner_step(prior, grads[0], alpha));
}

TEST_CASE("min_variance_weights examples") {
  // equal covariances -> uniform weights
  Rng rng(14);
  Matrix shared = random_spd(3, rng);
  std::vector<Matrix> covs(4, shared);
  auto w = min_variance_weights(covs);
  for (const auto& wi : w) {
    CHECK((wi - Matrix::Identity(3, 3) / 4.0).cwiseAbs().maxCoeff() < 1e-10);
  }

  // scalar case sigma^2 = (1, 4): weights 0.8 and 0.2
  std::vector<Matrix> scalars = {Matrix::Constant(1, 1, 1.0),
                                 Matrix::Constant(1, 1, 4.0)};
  auto ws = min_variance_weights(scalars);
  CHECK(ws[0](0, 0) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(ws[1](0, 0) == doctest::Approx(0.2).epsilon(1e-12));

  // non-SPD input
  Matrix indef = Matrix::Identity(2, 2);
  indef(1, 1) = -1.0;
  CHECK_THROWS_AS(min_variance_weights({indef}), SingularMatrixError);
}

namespace {

double trace_variance(const std::vector<Matrix>& weights,
                      const std::vector<Matrix>& covs) {
  double tr = 0.0;
  for (std::size_t i = 0; i < covs.size(); ++i) {
    tr += (weights[i] * covs[i] * weights[i].transpose()).trace();
  }
  return tr;
}

}  // namespace

TEST_CASE("optimal weights beat random constraint-satisfying perturbations") {
  Rng rng(15);
  const int m = 2, n = 3;
  std::vector<Matrix> covs;
  for (int i = 0; i < n; ++i) covs.push_back(random_spd(m, rng, 0.2));
  auto wstar = min_variance_weights(covs);

  Matrix sum_w = Matrix::Zero(m, m);
  for (const auto& wi : wstar) sum_w += wi;
  CHECK((sum_w - Matrix::Identity(m, m)).cwiseAbs().maxCoeff() < 1e-9);

  const double best = trace_variance(wstar, covs);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Matrix> deltas;
    Matrix mean_delta = Matrix::Zero(m, m);
    for (int i = 0; i < n; ++i) {
      deltas.push_back(random_matrix(m, m, rng, -0.2, 0.2));
      mean_delta += deltas.back();
    }
    mean_delta /= static_cast<double>(n);
    std::vector<Matrix> perturbed;
    for (int i = 0; i < n; ++i) {
      perturbed.push_back(wstar[i] + deltas[i] - mean_delta);  // sums to I
    }
    CHECK(trace_variance(perturbed, covs) >= best - 1e-12);
  }
}

TEST_CASE("prop-1 weights dominate uniform averaging over 1000 draws") {
  Rng rng(16);
  for (int draw = 0; draw < 1000; ++draw) {
    const int m = 1 + static_cast<int>(rng.uniform() * 4);
    const int n = 2 + static_cast<int>(rng.uniform() * 5);
    std::vector<Matrix> covs;
    for (int i = 0; i < n; ++i) covs.push_back(random_spd(m, rng, 0.1));
    Matrix prec_sum = Matrix::Zero(m, m);
    double uniform_tr = 0.0;
    for (const auto& c : covs) {
      prec_sum += ad::ops::spd_solve(c, Matrix::Identity(m, m));
      uniform_tr += c.trace();
    }
    uniform_tr /= static_cast<double>(n) * n;
    const double opt_tr =
        ad::ops::spd_solve(prec_sum, Matrix::Identity(m, m)).trace();
    CHECK(opt_tr <= uniform_tr + 1e-10);
  }

  // equality when all covariances agree
  Rng rng2(17);
  Matrix shared = random_spd(3, rng2);
  Matrix prec = ad::ops::spd_solve(shared, Matrix::Identity(3, 3));
  const double opt = ad::ops::spd_solve(Matrix(4.0 * prec),
                                        Matrix::Identity(3, 3))
                         .trace();
  CHECK(opt == doctest::Approx(shared.trace() / 4.0).epsilon(1e-10));
}

TEST_CASE("monte-carlo fused covariance matches the analytic precision sum") {
  Rng rng(18);
  const int m = 2, n = 3, draws = 100000;
  std::vector<Matrix> covs;
  std::vector<Matrix> chols;
  std::vector<Matrix> precs;
  Matrix prec_sum = Matrix::Zero(m, m);
  for (int i = 0; i < n; ++i) {
    covs.push_back(random_spd(m, rng, 0.3));
    chols.push_back(Eigen::LLT<Matrix>(covs.back()).matrixL());
    precs.push_back(ad::ops::spd_solve(covs.back(), Matrix::Identity(m, m)));
    prec_sum += precs.back();
  }
  Matrix star(1, m);
  star << 0.7, -0.2;

  Matrix fused_samples(draws, m);
  Matrix uniform_samples(draws, m);
  for (int s = 0; s < draws; ++s) {
    std::vector<PointPosterior> posts;
    Matrix mean = Matrix::Zero(1, m);
    for (int i = 0; i < n; ++i) {
      Matrix eps(m, 1);
      for (int j = 0; j < m; ++j) eps(j, 0) = rng.normal();
      Matrix sample = star + (chols[i] * eps).transpose();
      posts.push_back({sample, precs[i], precs[i]});
      mean += sample;
    }
    fused_samples.row(s) = fuse(posts).fused.row(0);
    uniform_samples.row(s) = mean / static_cast<double>(n);
  }

  auto cov_trace = [&](const Matrix& samples) {
    Matrix centered = samples.rowwise() - samples.colwise().mean();
    return centered.squaredNorm() / static_cast<double>(draws - 1);
  };
  const double fused_tr = cov_trace(fused_samples);
  const double uniform_tr = cov_trace(uniform_samples);
  const double analytic_tr =
      ad::ops::spd_solve(prec_sum, Matrix::Identity(m, m)).trace();
  CHECK(std::abs(fused_tr - analytic_tr) / analytic_tr < 0.03);
  CHECK(fused_tr < uniform_tr);
}

TEST_CASE("condition_number basics") {
  CHECK(condition_number(Matrix::Identity(3, 3)) == doctest::Approx(1.0));
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 9.0;
  d(1, 1) = 1.0;
  CHECK(condition_number(d) == doctest::Approx(9.0).epsilon(1e-12));

  // rank-deficient sums report the infinity sentinel
  Rng rng(19);
  Matrix z1 = random_matrix(1, 5, rng);
  Matrix z2 = random_matrix(1, 5, rng);
  Matrix sum = head_point_hessian(z1) + head_point_hessian(z2);
  CHECK(std::isinf(condition_number(sum)));
}

TEST_CASE("fuse rejects bad inputs") {
  CHECK_THROWS_AS(fuse({}), ContractError);
  Rng rng(20);
  PointPosterior a{random_matrix(1, 3, rng), random_spd(3, rng),
                   random_spd(3, rng)};
  PointPosterior b{random_matrix(1, 2, rng), random_spd(2, rng),
                   random_spd(2, rng)};
  CHECK_THROWS_AS(fuse({a, b}), DimensionError);
}
