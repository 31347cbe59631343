#include "lava/metrics.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace lava {

namespace {

Matrix flatten_row_major(const Matrix& m) {
  Matrix flat(1, m.size());
  Index c = 0;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) flat(0, c++) = m(i, j);
  }
  return flat;
}

double log10_floored(double v) { return std::log10(std::max(v, 1e-30)); }

}  // namespace

VarianceReport estimate_adaptation_variance(const MetaParams& meta,
                                            const Task& task, int resamples,
                                            int n_support,
                                            const HyperConfig& cfg,
                                            std::uint64_t resample_seed) {
  if (resamples < 2) {
    throw ContractError("estimate_adaptation_variance: need >= 2 resamples");
  }
  TaskSpec spec = cfg.task;
  spec.family = task.family;
  spec.n_support = n_support;
  spec.n_query = 1;  // a query side is sampled but unused

  VarianceReport report;
  Matrix flat;
  for (int r = 0; r < resamples; ++r) {
    Rng rng(derive_seed(resample_seed, seed_component::probe, r));
    TaskBatch batch = sample_support_query(task, spec, n_support, 1, rng);
    AdaptationResult ar = adapt(meta, batch.support_x, batch.support_y, cfg);
    const Matrix row = flatten_row_major(ar.fused);
    if (flat.size() == 0) flat.resize(resamples, row.cols());
    flat.row(r) = row;
    report.adapted.push_back(std::move(ar.fused));
  }
  const Matrix centered = flat.rowwise() - flat.colwise().mean();
  report.covariance =
      centered.transpose() * centered / static_cast<double>(resamples - 1);
  report.log_variance = log10_floored(report.covariance.trace());
  return report;
}

LandscapeResult loss_landscape_grid(const MetaParams& meta,
                                    const TaskBatch& task,
                                    const GridSpec& grid,
                                    const HyperConfig& cfg) {
  if (cfg.mode != TrainMode::LavaContext &&
      cfg.mode != TrainMode::CaviaBaseline) {
    throw ContractError("loss_landscape_grid: requires a context mode");
  }
  if (meta.arch.context_dim != 2) {
    throw ContractError("loss_landscape_grid: requires context dim 2");
  }
  if (grid.width < 2 || grid.height < 2) {
    throw ContractError("loss_landscape_grid: grid must be at least 2x2");
  }

  LandscapeResult out;
  out.grid = grid;
  const int n = static_cast<int>(task.support_x.rows());
  Matrix phi(1, 2);
  for (int i = 0; i < n; ++i) {
    const Matrix xi = task.support_x.row(i);
    const Matrix yi = task.support_y.row(i);
    Matrix surface(grid.height, grid.width);
    for (int gy = 0; gy < grid.height; ++gy) {
      phi(0, 1) = grid.y_lo + (grid.y_hi - grid.y_lo) * gy / (grid.height - 1);
      for (int gx = 0; gx < grid.width; ++gx) {
        phi(0, 0) = grid.x_lo + (grid.x_hi - grid.x_lo) * gx / (grid.width - 1);
        surface(gy, gx) =
            log10_floored(ad::ops::mse(context_forward(meta, phi, xi), yi)(0, 0));
      }
    }
    out.log_mse.push_back(std::move(surface));
  }

  HyperConfig lava_cfg = cfg;
  lava_cfg.mode = TrainMode::LavaContext;
  lava_cfg.inner_steps = 1;
  const AdaptationResult ar =
      adapt(meta, task.support_x, task.support_y, lava_cfg);
  out.prior = meta.context;
  out.fused = ar.fused;
  Matrix sum_prec = Matrix::Zero(2, 2);
  for (const auto& p : ar.points) {
    out.adapted.push_back(p.adapted);
    out.precisions.push_back(p.precision);
    sum_prec += p.precision;
  }
  Matrix weight_sum = Matrix::Zero(2, 2);
  for (const auto& p : ar.points) {
    weight_sum += ad::ops::spd_solve(sum_prec, p.precision);
  }
  out.weight_partition_error =
      (weight_sum - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff();
  return out;
}

std::pair<double, double> condition_numbers(const AdaptationResult& result) {
  if (result.points.empty()) {
    throw ContractError("condition_numbers: result carries no posteriors");
  }
  const Index m = result.points.front().precision.rows();
  Matrix raw = Matrix::Zero(m, m);
  Matrix reg = Matrix::Zero(m, m);
  for (const auto& p : result.points) {
    raw += p.raw_precision;
    reg += p.precision;
  }
  return {condition_number(raw), condition_number(reg)};
}

std::vector<NoiseRow> noise_robustness(const MetaParams& meta,
                                       const std::vector<double>& sigmas,
                                       const std::vector<int>& supports,
                                       int n_tasks, const HyperConfig& cfg,
                                       std::uint64_t seed) {
  if (n_tasks < 1) {
    throw ContractError("noise_robustness: need at least one task");
  }
  std::vector<NoiseRow> rows;
  for (int n_support : supports) {
    TaskSpec spec = cfg.task;
    spec.n_support = n_support;
    spec.noise_sigma = 0.0;
    HyperConfig eval_cfg = cfg;
    eval_cfg.task = spec;
    for (double sigma : sigmas) {
      NoiseRow row;
      row.sigma = sigma;
      row.n_support = n_support;
      for (int t = 0; t < n_tasks; ++t) {
        const TaskBatch clean = sample_task_batch(spec, seed, t);
        Rng noise_rng(derive_seed(
            seed, seed_component::noise,
            static_cast<std::uint64_t>(t) * 1000003ULL +
                static_cast<std::uint64_t>(n_support)));
        const TaskBatch noisy = add_label_noise(clean, sigma, noise_rng);

        const AdaptationResult a_clean =
            adapt(meta, clean.support_x, clean.support_y, eval_cfg);
        const AdaptationResult a_noisy =
            adapt(meta, noisy.support_x, noisy.support_y, eval_cfg);
        row.mse_clean += ad::ops::mse(predict_adapted(meta, a_clean.fused,
                                                      clean.query_x, eval_cfg),
                                      clean.query_y)(0, 0);
        row.mse_noisy += ad::ops::mse(predict_adapted(meta, a_noisy.fused,
                                                      noisy.query_x, eval_cfg),
                                      noisy.query_y)(0, 0);
      }
      row.mse_clean /= n_tasks;
      row.mse_noisy /= n_tasks;
      row.delta = row.mse_noisy - row.mse_clean;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<TimingRow> timing_benchmark(const TimingSpec& spec,
                                        const HyperConfig& base) {
  std::vector<TimingRow> rows;
  for (TrainMode mode : spec.modes) {
    const std::vector<int> steps =
        is_lava_mode(mode) ? std::vector<int>{1} : spec.step_counts;
    for (int step_count : steps) {
      for (int support : spec.supports) {
        HyperConfig cfg = base;
        cfg.mode = mode;
        cfg.inner_steps = step_count;
        cfg.task.n_support = support;
        cfg = cfg.normalized();
        cfg.validate();

        MetaParams params = init_params(cfg.make_arch(), cfg.seed);
        AdamState adam = AdamState::init(params);
        std::uint64_t iter = 0;
        auto run_iteration = [&]() {
          std::vector<TaskBatch> tasks;
          tasks.reserve(cfg.meta_batch);
          for (int j = 0; j < cfg.meta_batch; ++j) {
            tasks.push_back(sample_task_batch(
                cfg.task, cfg.seed,
                iter * static_cast<std::uint64_t>(cfg.meta_batch) + j));
          }
          OuterResult r = outer_gradient(params, tasks, cfg);
          adam_step(adam, params, r.grads, cfg.eta);
          ++iter;
        };
        for (int i = 0; i < spec.warmup; ++i) run_iteration();
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < spec.iters; ++i) run_iteration();
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count();

        std::vector<TaskBatch> eval_tasks;
        for (int t = 0; t < spec.eval_tasks; ++t) {
          eval_tasks.push_back(sample_task_batch(
              cfg.task, derive_seed(cfg.seed, seed_component::eval_tasks), t));
        }
        TimingRow row;
        row.mode = train_mode_name(mode);
        row.steps = is_lava_mode(mode) ? 1 : step_count;
        row.support = support;
        row.s_per_iter = elapsed / spec.iters;
        row.mse = evaluate(params, eval_tasks, cfg).mean_mse;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::vector<VarianceCurveRow> variance_during_training(
    const HyperConfig& cfg, int resamples, std::uint64_t probe_seed,
    int probe_every) {
  if (probe_every < 1) {
    throw ContractError("variance_during_training: probe_every must be >= 1");
  }
  Rng task_rng(derive_seed(probe_seed, seed_component::probe, 0xfeed));
  const Task probe_task = sample_task(cfg.task, task_rng);

  std::vector<VarianceCurveRow> rows;
  const std::string mode = train_mode_name(cfg.mode);
  auto probe = [&](const EpochLog& row, const MetaParams& params) {
    if (row.epoch % probe_every != 0) return;
    const VarianceReport report = estimate_adaptation_variance(
        params, probe_task, resamples, cfg.task.n_support, cfg, probe_seed);
    rows.push_back({row.epoch, mode, report.log_variance});
  };
  meta_train(cfg, probe);
  return rows;
}

void write_variance_csv(const std::string& path,
                        const std::vector<VarianceCurveRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "epoch,mode,log_var\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.mode << ',' << r.log_var << '\n';
  }
}

void write_landscape_csv(const std::string& path, const LandscapeResult& r) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "point_idx,cx,cy,log_mse\n";
  out.precision(17);
  for (std::size_t p = 0; p < r.log_mse.size(); ++p) {
    const Matrix& surf = r.log_mse[p];
    for (Index gy = 0; gy < surf.rows(); ++gy) {
      const double cy =
          r.grid.y_lo + (r.grid.y_hi - r.grid.y_lo) * gy / (surf.rows() - 1);
      for (Index gx = 0; gx < surf.cols(); ++gx) {
        const double cx =
            r.grid.x_lo + (r.grid.x_hi - r.grid.x_lo) * gx / (surf.cols() - 1);
        out << p << ',' << cx << ',' << cy << ',' << surf(gy, gx) << '\n';
      }
    }
  }
}

void write_ellipses_csv(const std::string& path, const LandscapeResult& r) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "point_idx,h11,h12,h22,mean_x,mean_y\n";
  out.precision(17);
  for (std::size_t p = 0; p < r.precisions.size(); ++p) {
    const Matrix& h = r.precisions[p];
    out << p << ',' << h(0, 0) << ',' << h(0, 1) << ',' << h(1, 1) << ','
        << r.adapted[p](0, 0) << ',' << r.adapted[p](0, 1) << '\n';
  }
}

void write_landscape_markers_csv(const std::string& path,
                                 const LandscapeResult& r) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "kind,x,y\n";
  out.precision(17);
  out << "prior," << r.prior(0, 0) << ',' << r.prior(0, 1) << '\n';
  out << "fused," << r.fused(0, 0) << ',' << r.fused(0, 1) << '\n';
  for (std::size_t p = 0; p < r.adapted.size(); ++p) {
    out << "point_" << p << ',' << r.adapted[p](0, 0) << ','
        << r.adapted[p](0, 1) << '\n';
  }
}

void write_noise_csv(const std::string& path,
                     const std::vector<NoiseRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "sigma,n_support,mse_noisy,mse_clean,delta\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.sigma << ',' << r.n_support << ',' << r.mse_noisy << ','
        << r.mse_clean << ',' << r.delta << '\n';
  }
}

void write_timing_csv(const std::string& path,
                      const std::vector<TimingRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "mode,steps,support,s_per_iter,mse\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.mode << ',' << r.steps << ',' << r.support << ',' << r.s_per_iter
        << ',' << r.mse << '\n';
  }
}

}  // namespace lava
