#pragma once

#include "lava/training.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace lava {

/// Spread of adapted parameters across resampled supports of one task.
/// log_variance is log10 of the covariance trace (floored at 1e-30).
struct VarianceReport {
  std::vector<Matrix> adapted;
  Matrix covariance;
  double log_variance = 0.0;
};

VarianceReport estimate_adaptation_variance(const MetaParams& meta,
                                            const Task& task, int resamples,
                                            int n_support,
                                            const HyperConfig& cfg,
                                            std::uint64_t resample_seed);

struct GridSpec {
  double x_lo = -2.0, x_hi = 2.0;
  double y_lo = -2.0, y_hi = 2.0;
  int width = 101, height = 101;
};

/// Per-support-point log10 MSE over a 2-D grid of context values, with the
/// prior, per-point and fused adaptation markers and per-point precisions.
struct LandscapeResult {
  GridSpec grid;
  std::vector<Matrix> log_mse;     // per point, height x width
  Matrix prior;                    // 1 x 2
  std::vector<Matrix> adapted;     // per point, 1 x 2
  Matrix fused;                    // 1 x 2
  std::vector<Matrix> precisions;  // per point, 2 x 2 (regularized)
  double weight_partition_error = 0.0;  // max-abs of sum(W_i) - I
};

LandscapeResult loss_landscape_grid(const MetaParams& meta,
                                    const TaskBatch& task,
                                    const GridSpec& grid,
                                    const HyperConfig& cfg);

/// (kappa of summed raw precisions, kappa of summed regularized precisions).
std::pair<double, double> condition_numbers(const AdaptationResult& result);

struct NoiseRow {
  double sigma = 0.0;
  int n_support = 0;
  double mse_noisy = 0.0;
  double mse_clean = 0.0;
  double delta = 0.0;
};

/// Query-MSE change when the support labels are corrupted before adaptation.
std::vector<NoiseRow> noise_robustness(const MetaParams& meta,
                                       const std::vector<double>& sigmas,
                                       const std::vector<int>& supports,
                                       int n_tasks, const HyperConfig& cfg,
                                       std::uint64_t seed);

struct TimingRow {
  std::string mode;
  int steps = 0;
  int support = 0;
  double s_per_iter = 0.0;
  double mse = 0.0;
};

struct TimingSpec {
  std::vector<TrainMode> modes;
  std::vector<int> step_counts = {1};
  std::vector<int> supports = {10};
  int iters = 100;
  int warmup = 10;
  int eval_tasks = 100;
};

/// Mean per-meta-iteration wall time (warm-up excluded) and the query MSE
/// reached after the fixed iteration budget, per configuration.
std::vector<TimingRow> timing_benchmark(const TimingSpec& spec,
                                        const HyperConfig& base);

struct VarianceCurveRow {
  int epoch = 0;
  std::string mode;
  double log_var = 0.0;
};

/// Trains under cfg and probes the adapted-parameter variance on one fixed
/// task every probe_every epochs (same resampled supports at every probe).
std::vector<VarianceCurveRow> variance_during_training(
    const HyperConfig& cfg, int resamples, std::uint64_t probe_seed,
    int probe_every = 1);

// Plot-ready CSV emissions.
void write_variance_csv(const std::string& path,
                        const std::vector<VarianceCurveRow>& rows);
void write_landscape_csv(const std::string& path, const LandscapeResult& r);
void write_ellipses_csv(const std::string& path, const LandscapeResult& r);
void write_landscape_markers_csv(const std::string& path,
                                 const LandscapeResult& r);
void write_noise_csv(const std::string& path,
                     const std::vector<NoiseRow>& rows);
void write_timing_csv(const std::string& path,
                      const std::vector<TimingRow>& rows);

}  // namespace lava
