#pragma once

#include "lava/adaptation.hpp"
#include "lava/models.hpp"
#include "lava/tasks.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lava {

enum class TrainMode : std::uint8_t {
  LavaLastLayer,
  LavaContext,
  AnilBaseline,
  CaviaBaseline,
};

TrainMode parse_train_mode(const std::string& name);
std::string train_mode_name(TrainMode mode);
bool is_lava_mode(TrainMode mode);
bool is_context_mode(TrainMode mode);

struct HyperConfig {
  double alpha = 0.1;    // inner step size
  double eta = 1e-3;     // outer learning rate
  double epsilon = 0.1;  // Hessian regularizer
  int meta_batch = 10;
  int epochs = 10;
  int tasks_per_epoch = 100;  // meta-batches per epoch
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::LavaLastLayer;
  int inner_steps = 1;    // baselines only; lava modes force 1
  double clip_norm = 0.0;  // global-norm gradient clip, 0 disables
  int workers = 1;
  TaskSpec task;
  std::vector<int> hidden = {64, 64, 64};
  int context_dim = 2;

  Architecture make_arch() const;
  void validate() const;
  /// Copy with lava modes forced to a single inner step.
  HyperConfig normalized() const;
};

/// Gradients (or any additive delta) mirroring MetaParams' tensor layout.
struct ParamGrads {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  Matrix head;
  Matrix context;

  static ParamGrads zeros_like(const MetaParams& params);
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  void accumulate(const ParamGrads& other, double weight);
  void scale_all(double factor);
  double global_norm() const;
};

/// Per-task adaptation on the support set (plain, untaped path).
AdaptationResult adapt(const MetaParams& meta, const Matrix& support_x,
                       const Matrix& support_y, const HyperConfig& cfg);

/// Predictions on x given adapted parameters from adapt().
Matrix predict_adapted(const MetaParams& meta, const Matrix& adapted,
                       const Matrix& x, const HyperConfig& cfg);

/// Gradient of phi -> ||f(x, phi) - y||^2 for a single point (1 x c).
Matrix context_point_grad(const MetaParams& meta, const Matrix& phi,
                          const Matrix& x, const Matrix& y);

struct OuterResult {
  ParamGrads grads;       // mean over the meta-batch
  double mean_query_mse = 0.0;
  std::vector<double> task_losses;
  double mean_condition_number = 1.0;
  double log_var_adapted = 0.0;  // log10 trace of across-task fused-param cov
};

/// Gradient of the mean query MSE over the meta-batch w.r.t. all meta
/// parameters, via one tape per task.
OuterResult outer_gradient(const MetaParams& meta,
                           const std::vector<TaskBatch>& batch,
                           const HyperConfig& cfg);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double delta = 1e-8;

  static AdamState init(const MetaParams& params);
};

void adam_step(AdamState& state, MetaParams& params, const ParamGrads& grads,
               double eta);

struct EpochLog {
  int epoch = 0;
  double mean_query_mse = 0.0;
  double std_query_mse = 0.0;
  double mean_log_var_adapted = 0.0;
  double mean_condition_number = 0.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  MetaParams params;
  std::vector<EpochLog> log;
};

/// Raised when a meta-step hits a non-finite value; carries the last
/// parameters that produced finite losses so callers can checkpoint them.
class TrainingAbort : public NumericError {
public:
  TrainingAbort(const std::string& msg, MetaParams last_good, int epoch)
      : NumericError(msg),
        last_good_(std::make_shared<MetaParams>(std::move(last_good))),
        epoch_(epoch) {}
  const MetaParams& last_good() const { return *last_good_; }
  int epoch() const { return epoch_; }

private:
  std::shared_ptr<MetaParams> last_good_;
  int epoch_ = 0;
};

using EpochCallback =
    std::function<void(const EpochLog& row, const MetaParams& params)>;

TrainResult meta_train(const HyperConfig& cfg,
                       const EpochCallback& on_epoch = {});

struct EvalStats {
  double mean_mse = 0.0;
  double std_mse = 0.0;
  std::vector<double> per_task;
};

EvalStats evaluate(const MetaParams& meta, const std::vector<TaskBatch>& tasks,
                   const HyperConfig& cfg);

void write_train_log_csv(const std::string& path,
                         const std::vector<EpochLog>& log);

}  // namespace lava
