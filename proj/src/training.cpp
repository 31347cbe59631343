#include "lava/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>
#include <utility>

namespace lava {

TrainMode parse_train_mode(const std::string& name) {
  if (name == "lava-last-layer") return TrainMode::LavaLastLayer;
  if (name == "lava-context") return TrainMode::LavaContext;
  if (name == "anil-baseline") return TrainMode::AnilBaseline;
  if (name == "cavia-baseline") return TrainMode::CaviaBaseline;
  throw ConfigError("unknown mode: " + name +
                    " (expected lava-last-layer, lava-context, "
                    "anil-baseline or cavia-baseline)");
}

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::LavaLastLayer: return "lava-last-layer";
    case TrainMode::LavaContext: return "lava-context";
    case TrainMode::AnilBaseline: return "anil-baseline";
    case TrainMode::CaviaBaseline: return "cavia-baseline";
  }
  throw ConfigError("unknown mode id");
}

bool is_lava_mode(TrainMode mode) {
  return mode == TrainMode::LavaLastLayer || mode == TrainMode::LavaContext;
}

bool is_context_mode(TrainMode mode) {
  return mode == TrainMode::LavaContext || mode == TrainMode::CaviaBaseline;
}

Architecture HyperConfig::make_arch() const {
  Architecture arch;
  arch.input_dim = task.input_dim();
  arch.output_dim = task.output_dim();
  arch.hidden = hidden;
  if (is_context_mode(mode)) {
    arch.mode = AdaptMode::Context;
    arch.context_dim = context_dim;
  } else {
    arch.mode = AdaptMode::LastLayer;
    arch.context_dim = 0;
  }
  return arch;
}

void HyperConfig::validate() const {
  if (!(alpha > 0.0) || !(eta > 0.0) || !(epsilon > 0.0)) {
    throw ConfigError("config: alpha, eta and epsilon must be positive");
  }
  if (meta_batch < 1 || epochs < 0 || tasks_per_epoch < 1) {
    throw ConfigError("config: meta-batch and tasks-per-epoch must be >= 1");
  }
  if (inner_steps < 1) {
    throw ConfigError("config: inner steps must be >= 1");
  }
  if (is_lava_mode(mode) && inner_steps != 1) {
    throw ConfigError("config: lava modes use a single inner step");
  }
  if (clip_norm < 0.0) {
    throw ConfigError("config: clip norm must be nonnegative");
  }
  if (workers < 1) {
    throw ConfigError("config: workers must be >= 1");
  }
  task.validate();
  try {
    make_arch().validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (is_context_mode(mode) && context_dim < 2) {
    throw ConfigError("config: context modes need a context dim in {2,4,8,16}");
  }
}

HyperConfig HyperConfig::normalized() const {
  HyperConfig out = *this;
  if (is_lava_mode(out.mode)) out.inner_steps = 1;
  return out;
}

ParamGrads ParamGrads::zeros_like(const MetaParams& params) {
  ParamGrads g;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    g.weights.push_back(
        Matrix::Zero(params.weights[i].rows(), params.weights[i].cols()));
    g.biases.push_back(
        Matrix::Zero(params.biases[i].rows(), params.biases[i].cols()));
  }
  if (params.arch.mode == AdaptMode::LastLayer) {
    g.head = Matrix::Zero(params.head.rows(), params.head.cols());
  } else {
    g.context = Matrix::Zero(params.context.rows(), params.context.cols());
  }
  return g;
}

std::vector<Matrix*> ParamGrads::tensors() {
  std::vector<Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  out.push_back(head.size() > 0 ? &head : &context);
  return out;
}

std::vector<const Matrix*> ParamGrads::tensors() const {
  std::vector<const Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  out.push_back(head.size() > 0 ? &head : &context);
  return out;
}

void ParamGrads::accumulate(const ParamGrads& other, double weight) {
  auto mine = tensors();
  auto theirs = other.tensors();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    *mine[i] += weight * (*theirs[i]);
  }
}

void ParamGrads::scale_all(double factor) {
  for (Matrix* t : tensors()) *t *= factor;
}

double ParamGrads::global_norm() const {
  double sq = 0.0;
  for (const Matrix* t : tensors()) sq += t->squaredNorm();
  return std::sqrt(sq);
}

Matrix context_point_grad(const MetaParams& meta, const Matrix& phi,
                          const Matrix& x, const Matrix& y) {
  const Architecture& arch = meta.arch;
  const std::size_t n_hidden = arch.hidden.size();
  Matrix h = arch.context_dim == 0 ? x : ad::ops::concat_cols(x, phi);
  std::vector<Matrix> masks(n_hidden);
  for (std::size_t l = 0; l < n_hidden; ++l) {
    Matrix pre = h * meta.weights[l] + meta.biases[l];
    masks[l] = (pre.array() > 0.0).cast<double>();
    h = pre.cwiseMax(0.0);
  }
  const std::size_t last = meta.weights.size() - 1;
  Matrix out = h * meta.weights[last] + meta.biases[last];
  Matrix v = 2.0 * (out - y);  // 1 x k
  v = v * meta.weights[last].transpose();
  for (std::size_t l = n_hidden; l-- > 0;) {
    v = v.cwiseProduct(masks[l]);
    v = v * meta.weights[l].transpose();
  }
  Matrix grad = v.rightCols(arch.context_dim);
  if (!grad.allFinite()) {
    throw NumericError("context_point_grad: gradient is not finite");
  }
  return grad;
}

AdaptationResult adapt(const MetaParams& meta, const Matrix& support_x,
                       const Matrix& support_y, const HyperConfig& cfg) {
  const int n = static_cast<int>(support_x.rows());
  switch (cfg.mode) {
    case TrainMode::LavaLastLayer: {
      const Matrix z_all = features(meta, support_x);
      const Index dim = z_all.cols();
      std::vector<PointPosterior> posts;
      posts.reserve(n);
      for (int i = 0; i < n; ++i) {
        const Matrix z = z_all.row(i);
        const Matrix r = head_forward(meta.head, z) - support_y.row(i);
        const Matrix grad = 2.0 * r.transpose() * z;
        PointPosterior p;
        p.adapted = inner_step(meta.head, grad, cfg.alpha);
        p.raw_precision = head_point_hessian(z);
        p.precision = regularize(p.raw_precision, cfg.epsilon);
        posts.push_back(std::move(p));
      }
      (void)dim;
      return fuse(posts);
    }
    case TrainMode::LavaContext: {
      std::vector<PointPosterior> posts;
      posts.reserve(n);
      for (int i = 0; i < n; ++i) {
        const Matrix x = support_x.row(i);
        const Matrix y = support_y.row(i);
        const Matrix grad = context_point_grad(meta, meta.context, x, y);
        PointPosterior p;
        p.adapted = inner_step(meta.context, grad, cfg.alpha);
        auto loss = [&](const Matrix& phi) {
          return ad::ops::mse(context_forward(meta, phi, x), y)(0, 0);
        };
        p.raw_precision = psd_project(context_point_hessian(loss, p.adapted));
        p.precision = regularize(p.raw_precision, cfg.epsilon);
        posts.push_back(std::move(p));
      }
      return fuse(posts);
    }
    case TrainMode::AnilBaseline: {
      const Matrix z_all = features(meta, support_x);
      Matrix theta = meta.head;
      for (int s = 0; s < cfg.inner_steps; ++s) {
        const Matrix r = z_all * theta.transpose() - support_y;
        const Matrix grad =
            (2.0 / static_cast<double>(n)) * r.transpose() * z_all;
        theta = inner_step(theta, grad, cfg.alpha);
      }
      AdaptationResult out;
      out.fused = std::move(theta);
      return out;
    }
    case TrainMode::CaviaBaseline: {
      Matrix phi = meta.context;
      for (int s = 0; s < cfg.inner_steps; ++s) {
        Matrix grad = Matrix::Zero(1, phi.cols());
        for (int i = 0; i < n; ++i) {
          grad +=
              context_point_grad(meta, phi, support_x.row(i), support_y.row(i));
        }
        grad /= static_cast<double>(n);
        phi = inner_step(phi, grad, cfg.alpha);
      }
      AdaptationResult out;
      out.fused = std::move(phi);
      return out;
    }
  }
  throw ConfigError("adapt: unknown mode");
}

Matrix predict_adapted(const MetaParams& meta, const Matrix& adapted,
                       const Matrix& x, const HyperConfig& cfg) {
  if (is_context_mode(cfg.mode)) {
    return context_forward(meta, adapted, x);
  }
  return head_forward(adapted, features(meta, x));
}

namespace {

struct TaskGraph {
  ad::Var loss;
  Matrix fused_value;
  double kappa = 1.0;
};

// Backpropagates v (1 x width of layer l output) through the ReLU body down
// to the first layer's input, multiplying by stored masks; returns the
// gradient w.r.t. the body input (1 x mlp_input_dim).
ad::Var body_input_grad(ad::Tape& tape, const Architecture& arch,
                        const ParamVars& pv, ad::Var v,
                        const std::vector<Matrix>& masks) {
  for (std::size_t l = arch.hidden.size(); l-- > 0;) {
    v = ad::cmul(v, tape.leaf(masks[l]));
    v = ad::matmul(v, ad::transpose(pv.weights[l]));
  }
  return v;
}

// Forward for one point in context mode recording pre-activation masks.
ad::Var context_point_forward(ad::Tape& tape, const Architecture& arch,
                              const ParamVars& pv, ad::Var phi, ad::Var x,
                              std::vector<Matrix>& masks) {
  ad::Var h = arch.context_dim == 0 ? x : ad::concat_cols(x, phi);
  masks.clear();
  for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
    ad::Var pre = ad::add(ad::matmul(h, pv.weights[l]), pv.biases[l]);
    masks.push_back((pre.value().array() > 0.0).cast<double>());
    h = ad::relu(pre);
  }
  const std::size_t last = pv.weights.size() - 1;
  return ad::add(ad::matmul(h, pv.weights[last]), pv.biases[last]);
}

// Gradient of ||f(x, phi) - y||^2 w.r.t. phi as a tape expression. ReLU
// masks enter as constants, so differentiating this expression w.r.t. the
// body weights and phi is exact away from activation kinks.
ad::Var context_point_grad_var(ad::Tape& tape, const Architecture& arch,
                               const ParamVars& pv, ad::Var phi, ad::Var x,
                               ad::Var y, ad::Var selector) {
  std::vector<Matrix> masks;
  ad::Var out = context_point_forward(tape, arch, pv, phi, x, masks);
  ad::Var v = ad::scale(ad::sub(out, y), 2.0);
  const std::size_t last = pv.weights.size() - 1;
  v = ad::matmul(v, ad::transpose(pv.weights[last]));
  v = body_input_grad(tape, arch, pv, v, masks);
  return ad::matmul(v, selector);  // keep the context columns
}

// Builds the last-layer fusion in batched form. With per-point inner steps
// theta_i = theta0 - 2a r_i^T z_i and regularized precisions
// G_i = (2 z_i^T z_i + eps I)/(1+eps), linearity and the rank-1 identity
// G_i z_i^T = c_i z_i^T with c_i = (2 |z_i|^2 + eps)/(1+eps) collapse the
// fusion system to
//   S = (2 Z^T Z + N eps I)/(1+eps),
//   sum_i G_i theta_i^T = S theta0^T - 2a Z^T diag(c) R,
// the same solve the per-point adapt() path performs.
TaskGraph build_lava_last_layer(ad::Tape& tape, const MetaParams& meta,
                                const ParamVars& pv, const TaskBatch& task,
                                const HyperConfig& cfg) {
  const Architecture& arch = meta.arch;
  const int n = static_cast<int>(task.support_x.rows());
  const Index dim = arch.head_cols();
  const Index k = arch.output_dim;
  const double reg_scale = 1.0 / (1.0 + cfg.epsilon);

  ad::Var theta_t = ad::transpose(pv.head);
  ad::Var zs = features(tape, arch, pv, tape.leaf(task.support_x));
  ad::Var resid = ad::sub(ad::matmul(zs, theta_t), tape.leaf(task.support_y));

  ad::Var sum_prec = ad::scale(
      ad::add(ad::scale(ad::matmul(ad::transpose(zs), zs), 2.0),
              tape.leaf(n * cfg.epsilon * Matrix::Identity(dim, dim))),
      reg_scale);

  // per-point row norms |z_i|^2 and the rank-1 coefficients c_i
  ad::Var norms =
      ad::matmul(ad::cmul(zs, zs), tape.leaf(Matrix::Ones(dim, 1)));
  ad::Var coeff = ad::scale(
      ad::add(ad::scale(norms, 2.0),
              tape.leaf(cfg.epsilon * Matrix::Ones(n, 1))),
      reg_scale);
  ad::Var weighted_resid =
      ad::cmul(ad::matmul(coeff, tape.leaf(Matrix::Ones(1, k))), resid);
  ad::Var rhs = ad::sub(ad::matmul(sum_prec, theta_t),
                        ad::scale(ad::matmul(ad::transpose(zs), weighted_resid),
                                  2.0 * cfg.alpha));

  ad::Var fused_t = ad::spd_solve(sum_prec, rhs);
  ad::Var zq = features(tape, arch, pv, tape.leaf(task.query_x));
  ad::Var pred = ad::matmul(zq, fused_t);
  TaskGraph g;
  g.loss = ad::mse(pred, tape.leaf(task.query_y));
  g.fused_value = fused_t.value().transpose();
  g.kappa = condition_number(sum_prec.value());
  return g;
}

TaskGraph build_anil(ad::Tape& tape, const MetaParams& meta,
                     const ParamVars& pv, const TaskBatch& task,
                     const HyperConfig& cfg) {
  const Architecture& arch = meta.arch;
  const double n = static_cast<double>(task.support_x.rows());
  ad::Var zs = features(tape, arch, pv, tape.leaf(task.support_x));
  ad::Var ys = tape.leaf(task.support_y);
  ad::Var theta = pv.head;
  for (int s = 0; s < cfg.inner_steps; ++s) {
    ad::Var resid = ad::sub(ad::matmul(zs, ad::transpose(theta)), ys);
    ad::Var grad =
        ad::scale(ad::matmul(ad::transpose(resid), zs), 2.0 / n);
    theta = ad::sub(theta, ad::scale(grad, cfg.alpha));
  }
  ad::Var zq = features(tape, arch, pv, tape.leaf(task.query_x));
  ad::Var pred = ad::matmul(zq, ad::transpose(theta));
  TaskGraph g;
  g.loss = ad::mse(pred, tape.leaf(task.query_y));
  g.fused_value = theta.value();
  return g;
}

TaskGraph build_lava_context(ad::Tape& tape, const MetaParams& meta,
                             const ParamVars& pv, const TaskBatch& task,
                             const HyperConfig& cfg) {
  const Architecture& arch = meta.arch;
  const int n = static_cast<int>(task.support_x.rows());
  const int c = arch.context_dim;
  Matrix sel = Matrix::Zero(arch.mlp_input_dim(), c);
  sel.bottomRows(c).setIdentity();
  ad::Var selector = tape.leaf(sel);

  Matrix sum_prec_value = Matrix::Zero(c, c);
  std::vector<ad::Var> phis;
  std::vector<Matrix> precisions;
  phis.reserve(n);
  precisions.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Matrix xi = task.support_x.row(i);
    const Matrix yi = task.support_y.row(i);
    ad::Var x = tape.leaf(xi);
    ad::Var y = tape.leaf(yi);
    ad::Var grad =
        context_point_grad_var(tape, arch, pv, pv.context, x, y, selector);
    ad::Var phi_i = ad::sub(pv.context, ad::scale(grad, cfg.alpha));
    // Curvature by central differences at the adapted context; constant in
    // the outer backward pass.
    auto loss = [&](const Matrix& phi) {
      return ad::ops::mse(context_forward(meta, phi, xi), yi)(0, 0);
    };
    Matrix prec = regularize(
        psd_project(context_point_hessian(loss, phi_i.value())), cfg.epsilon);
    sum_prec_value += prec;
    precisions.push_back(std::move(prec));
    phis.push_back(phi_i);
  }
  ad::Var rhs;
  for (int i = 0; i < n; ++i) {
    ad::Var contrib =
        ad::matmul(tape.leaf(precisions[i]), ad::transpose(phis[i]));
    rhs = rhs.valid() ? ad::add(rhs, contrib) : contrib;
  }
  ad::Var fused_t = ad::spd_solve(tape.leaf(sum_prec_value), rhs);
  ad::Var phi_hat = ad::transpose(fused_t);
  ad::Var pred = context_forward(tape, arch, pv, phi_hat,
                                 tape.leaf(task.query_x));
  TaskGraph g;
  g.loss = ad::mse(pred, tape.leaf(task.query_y));
  g.fused_value = phi_hat.value();
  g.kappa = condition_number(sum_prec_value);
  return g;
}

TaskGraph build_cavia(ad::Tape& tape, const MetaParams& meta,
                      const ParamVars& pv, const TaskBatch& task,
                      const HyperConfig& cfg) {
  const Architecture& arch = meta.arch;
  const int n = static_cast<int>(task.support_x.rows());
  const int c = arch.context_dim;
  Matrix sel = Matrix::Zero(arch.mlp_input_dim(), c);
  sel.bottomRows(c).setIdentity();
  ad::Var selector = tape.leaf(sel);

  std::vector<ad::Var> xs, ys;
  xs.reserve(n);
  ys.reserve(n);
  for (int i = 0; i < n; ++i) {
    xs.push_back(tape.leaf(task.support_x.row(i)));
    ys.push_back(tape.leaf(task.support_y.row(i)));
  }
  ad::Var phi = pv.context;
  for (int s = 0; s < cfg.inner_steps; ++s) {
    ad::Var grad;
    for (int i = 0; i < n; ++i) {
      ad::Var gi =
          context_point_grad_var(tape, arch, pv, phi, xs[i], ys[i], selector);
      grad = grad.valid() ? ad::add(grad, gi) : gi;
    }
    grad = ad::scale(grad, 1.0 / static_cast<double>(n));
    phi = ad::sub(phi, ad::scale(grad, cfg.alpha));
  }
  ad::Var pred =
      context_forward(tape, arch, pv, phi, tape.leaf(task.query_x));
  TaskGraph g;
  g.loss = ad::mse(pred, tape.leaf(task.query_y));
  g.fused_value = phi.value();
  return g;
}

struct TaskOutcome {
  ParamGrads grads;
  double loss = 0.0;
  double kappa = 1.0;
  Matrix fused;
};

TaskOutcome process_task(const MetaParams& meta, const TaskBatch& task,
                         const HyperConfig& cfg) {
  ad::Tape tape;
  tape.reserve(64 + 40 * static_cast<std::size_t>(task.support_x.rows()));
  ParamVars pv = param_leaves(tape, meta);
  TaskGraph g;
  switch (cfg.mode) {
    case TrainMode::LavaLastLayer:
      g = build_lava_last_layer(tape, meta, pv, task, cfg);
      break;
    case TrainMode::AnilBaseline:
      g = build_anil(tape, meta, pv, task, cfg);
      break;
    case TrainMode::LavaContext:
      g = build_lava_context(tape, meta, pv, task, cfg);
      break;
    case TrainMode::CaviaBaseline:
      g = build_cavia(tape, meta, pv, task, cfg);
      break;
  }
  tape.backward(g.loss);
  TaskOutcome out;
  out.grads.head = Matrix();
  out.grads.context = Matrix();
  for (std::size_t l = 0; l < pv.weights.size(); ++l) {
    out.grads.weights.push_back(tape.grad(pv.weights[l]));
    out.grads.biases.push_back(tape.grad(pv.biases[l]));
  }
  if (meta.arch.mode == AdaptMode::LastLayer) {
    out.grads.head = tape.grad(pv.head);
  } else {
    out.grads.context = tape.grad(pv.context);
  }
  out.loss = g.loss.value()(0, 0);
  out.kappa = g.kappa;
  out.fused = std::move(g.fused_value);
  return out;
}

}  // namespace

OuterResult outer_gradient(const MetaParams& meta,
                           const std::vector<TaskBatch>& batch,
                           const HyperConfig& cfg) {
  if (batch.empty()) {
    throw ContractError("outer_gradient: empty meta-batch");
  }
  const int n_tasks = static_cast<int>(batch.size());
  std::vector<TaskOutcome> outcomes(n_tasks);
  std::vector<std::exception_ptr> errors(n_tasks);

  const int workers = std::max(1, std::min(cfg.workers, n_tasks));
  if (workers == 1) {
    for (int i = 0; i < n_tasks; ++i) {
      try {
        outcomes[i] = process_task(meta, batch[i], cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (int i = w; i < n_tasks; i += workers) {
          try {
            outcomes[i] = process_task(meta, batch[i], cfg);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  for (int i = 0; i < n_tasks; ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        throw NumericError("meta-batch task " + std::to_string(i) +
                           " failed: " + e.what());
      }
    }
  }

  OuterResult out;
  out.grads = ParamGrads::zeros_like(meta);
  const double w = 1.0 / static_cast<double>(n_tasks);
  double kappa_sum = 0.0;
  for (int i = 0; i < n_tasks; ++i) {  // fixed task-index order
    out.grads.accumulate(outcomes[i].grads, w);
    out.task_losses.push_back(outcomes[i].loss);
    out.mean_query_mse += w * outcomes[i].loss;
    kappa_sum += outcomes[i].kappa;
  }
  out.mean_condition_number = kappa_sum * w;

  if (n_tasks >= 2) {
    const Index p = outcomes[0].fused.size();
    Matrix flat(n_tasks, p);
    for (int i = 0; i < n_tasks; ++i) {
      Index c = 0;
      for (Index r = 0; r < outcomes[i].fused.rows(); ++r) {
        for (Index j = 0; j < outcomes[i].fused.cols(); ++j) {
          flat(i, c++) = outcomes[i].fused(r, j);
        }
      }
    }
    const Matrix centered = flat.rowwise() - flat.colwise().mean();
    const double trace =
        centered.squaredNorm() / static_cast<double>(n_tasks - 1);
    out.log_var_adapted = std::log10(std::max(trace, 1e-30));
  }
  return out;
}

AdamState AdamState::init(const MetaParams& params) {
  AdamState s;
  for (const Matrix* t : params.tensors()) {
    s.m.push_back(Matrix::Zero(t->rows(), t->cols()));
    s.v.push_back(Matrix::Zero(t->rows(), t->cols()));
  }
  return s;
}

void adam_step(AdamState& state, MetaParams& params, const ParamGrads& grads,
               double eta) {
  auto p = params.tensors();
  auto g = grads.tensors();
  if (p.size() != g.size() || p.size() != state.m.size()) {
    throw ContractError("adam_step: state does not mirror the parameters");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * (*g[i]);
    state.v[i] = state.beta2 * state.v[i] +
                 (1.0 - state.beta2) * g[i]->cwiseProduct(*g[i]);
    const Matrix mhat = state.m[i] / bc1;
    const Matrix vhat = state.v[i] / bc2;
    *p[i] -= eta * mhat.cwiseQuotient(
                       vhat.cwiseSqrt() +
                       Matrix::Constant(vhat.rows(), vhat.cols(), state.delta));
  }
}

TrainResult meta_train(const HyperConfig& raw_cfg,
                       const EpochCallback& on_epoch) {
  const HyperConfig cfg = raw_cfg.normalized();
  cfg.validate();
  TrainResult result;
  result.params = init_params(cfg.make_arch(), cfg.seed);
  AdamState adam = AdamState::init(result.params);

  std::uint64_t iter = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.tasks_per_epoch) *
                   cfg.meta_batch);
    double log_var_sum = 0.0;
    double kappa_sum = 0.0;
    for (int b = 0; b < cfg.tasks_per_epoch; ++b) {
      std::vector<TaskBatch> tasks;
      tasks.reserve(cfg.meta_batch);
      for (int j = 0; j < cfg.meta_batch; ++j) {
        tasks.push_back(sample_task_batch(
            cfg.task, cfg.seed,
            iter * static_cast<std::uint64_t>(cfg.meta_batch) + j));
      }
      OuterResult r;
      try {
        r = outer_gradient(result.params, tasks, cfg);
      } catch (const NumericError& e) {
        throw TrainingAbort("meta-training aborted at epoch " +
                                std::to_string(epoch) + ": " + e.what(),
                            result.params, epoch);
      }
      if (cfg.clip_norm > 0.0) {
        const double norm = r.grads.global_norm();
        if (norm > cfg.clip_norm) {
          r.grads.scale_all(cfg.clip_norm / norm);
        }
      }
      adam_step(adam, result.params, r.grads, cfg.eta);
      losses.insert(losses.end(), r.task_losses.begin(), r.task_losses.end());
      log_var_sum += r.log_var_adapted;
      kappa_sum += r.mean_condition_number;
      ++iter;
    }
    EpochLog row;
    row.epoch = epoch;
    const double n = static_cast<double>(losses.size());
    double mean = 0.0;
    for (double v : losses) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : losses) var += (v - mean) * (v - mean);
    row.mean_query_mse = mean;
    row.std_query_mse = losses.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    row.mean_log_var_adapted = log_var_sum / cfg.tasks_per_epoch;
    row.mean_condition_number = kappa_sum / cfg.tasks_per_epoch;
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.log.push_back(row);
    if (on_epoch) on_epoch(row, result.params);
  }
  return result;
}

EvalStats evaluate(const MetaParams& meta, const std::vector<TaskBatch>& tasks,
                   const HyperConfig& cfg) {
  if (tasks.empty()) {
    throw ContractError("evaluate: task list is empty");
  }
  EvalStats stats;
  for (const TaskBatch& task : tasks) {
    const AdaptationResult ar =
        adapt(meta, task.support_x, task.support_y, cfg);
    const Matrix pred = predict_adapted(meta, ar.fused, task.query_x, cfg);
    stats.per_task.push_back(ad::ops::mse(pred, task.query_y)(0, 0));
  }
  const double n = static_cast<double>(stats.per_task.size());
  for (double v : stats.per_task) stats.mean_mse += v;
  stats.mean_mse /= n;
  double var = 0.0;
  for (double v : stats.per_task) {
    var += (v - stats.mean_mse) * (v - stats.mean_mse);
  }
  stats.std_mse = stats.per_task.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return stats;
}

void write_train_log_csv(const std::string& path,
                         const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open training log for writing: " + path);
  out << "epoch,mean_query_mse,std_query_mse,mean_log_var_adapted,"
         "mean_condition_number,wall_time_s\n";
  out.precision(17);
  for (const EpochLog& row : log) {
    out << row.epoch << ',' << row.mean_query_mse << ',' << row.std_query_mse
        << ',' << row.mean_log_var_adapted << ',' << row.mean_condition_number
        << ',' << row.wall_time_s << '\n';
  }
}

}  // namespace lava
