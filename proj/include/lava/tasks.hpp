#pragma once

#include "lava/rng.hpp"
#include "lava/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lava {

enum class TaskFamily : std::uint8_t {
  Sine,
  FitzhughNagumo,
  MassSpring,
  Pendulum,
  VanDerPol,
  Cartpole,
  CsvSeries,
};

TaskFamily parse_task_family(const std::string& name);
std::string task_family_name(TaskFamily family);

struct CsvSeries {
  std::vector<double> time;
  std::vector<double> value;
};

/// Loads a UTF-8, comma-separated file with a header row naming the time and
/// value columns.
CsvSeries load_csv_series(const std::string& path,
                          const std::string& time_column,
                          const std::string& value_column);

struct TaskSpec {
  TaskFamily family = TaskFamily::Sine;
  int n_support = 10;
  int n_query = 25;
  double noise_sigma = 0.0;

  /// Optional override of the input sampling box (applied to every input
  /// dimension); family defaults are used when unset.
  std::optional<std::pair<double, double>> input_range;

  std::string csv_path;
  std::string csv_time_column = "time";
  std::string csv_value_column = "value";

  // Cartpole trajectory generation.
  double cartpole_dt = 0.02;
  double cartpole_horizon = 8.0;

  int input_dim() const;
  int output_dim() const;
  void validate() const;
};

/// One concrete task: descriptor parameters plus, for CSV tasks, the series
/// and window placement.
struct Task {
  TaskFamily family = TaskFamily::Sine;
  std::vector<double> params;
  std::shared_ptr<const CsvSeries> series;
  int window_start = 0;
  int window_size = 0;
};

struct TaskBatch {
  Matrix support_x, support_y;
  Matrix query_x, query_y;
};

Task sample_sine_task(Rng& rng);
Task sample_ode_task(TaskFamily system, const TaskSpec& spec, Rng& rng);
Task sample_task(const TaskSpec& spec, Rng& rng);

/// Analytic task relation y(x) for noiseless generators; row in, row out.
Matrix task_targets(const Task& task, const Matrix& x);

TaskBatch sample_support_query(const Task& task, const TaskSpec& spec, int n,
                               int m, Rng& rng);

/// Adds N(0, sigma^2) to the support targets; the query set is untouched.
TaskBatch add_label_noise(const TaskBatch& batch, double sigma, Rng& rng);

/// Stateless (seed, index) -> batch, including label noise when configured.
TaskBatch sample_task_batch(const TaskSpec& spec, std::uint64_t seed,
                            std::uint64_t index);

}  // namespace lava
