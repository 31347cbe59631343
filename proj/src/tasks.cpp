#include "lava/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

namespace lava {

TaskFamily parse_task_family(const std::string& name) {
  if (name == "sine") return TaskFamily::Sine;
  if (name == "fitzhugh-nagumo") return TaskFamily::FitzhughNagumo;
  if (name == "mass-spring") return TaskFamily::MassSpring;
  if (name == "pendulum") return TaskFamily::Pendulum;
  if (name == "van-der-pol") return TaskFamily::VanDerPol;
  if (name == "cartpole") return TaskFamily::Cartpole;
  if (name == "csv") return TaskFamily::CsvSeries;
  throw ConfigError("unknown task family: " + name);
}

std::string task_family_name(TaskFamily family) {
  switch (family) {
    case TaskFamily::Sine: return "sine";
    case TaskFamily::FitzhughNagumo: return "fitzhugh-nagumo";
    case TaskFamily::MassSpring: return "mass-spring";
    case TaskFamily::Pendulum: return "pendulum";
    case TaskFamily::VanDerPol: return "van-der-pol";
    case TaskFamily::Cartpole: return "cartpole";
    case TaskFamily::CsvSeries: return "csv";
  }
  throw ConfigError("unknown task family id");
}

int TaskSpec::input_dim() const {
  switch (family) {
    case TaskFamily::Sine: return 1;
    case TaskFamily::FitzhughNagumo:
    case TaskFamily::MassSpring:
    case TaskFamily::Pendulum:
    case TaskFamily::VanDerPol: return 2;
    case TaskFamily::Cartpole: return 6;
    case TaskFamily::CsvSeries: return 1;
  }
  throw ConfigError("unknown task family id");
}

int TaskSpec::output_dim() const {
  switch (family) {
    case TaskFamily::Sine: return 1;
    case TaskFamily::FitzhughNagumo:
    case TaskFamily::MassSpring:
    case TaskFamily::Pendulum:
    case TaskFamily::VanDerPol: return 2;
    case TaskFamily::Cartpole: return 1;
    case TaskFamily::CsvSeries: return 1;
  }
  throw ConfigError("unknown task family id");
}

void TaskSpec::validate() const {
  if (n_support < 1 || n_query < 1) {
    throw ConfigError("task: support and query sizes must be >= 1");
  }
  if (noise_sigma < 0.0) {
    throw ConfigError("task: noise sigma must be nonnegative");
  }
  if (family == TaskFamily::CsvSeries && csv_path.empty()) {
    throw ConfigError("task: csv family requires a file path");
  }
  if (family == TaskFamily::Cartpole &&
      (cartpole_dt <= 0.0 || cartpole_horizon <= cartpole_dt)) {
    throw ConfigError("task: cartpole horizon must exceed the step size");
  }
}

namespace {

constexpr double kPi = std::numbers::pi;

// Cartpole constants; only the cart mass varies across tasks.
constexpr double kPoleMass = 0.1;
constexpr double kPoleLength = 0.5;
constexpr double kGravity = 9.8;

struct CartpoleState {
  double x, theta, xdot, thetadot;
};

double cartpole_control(const Task& t, double time) {
  return t.params[1] * std::sin(t.params[2] * time + t.params[3]) +
         t.params[4] * std::sin(t.params[5] * time + t.params[6]);
}

// Solves M(q) qdd = [u + mp l thd^2 sin(th); mp g l sin(th)].
void cartpole_accel(double cart_mass, const CartpoleState& s, double u,
                    double& xdd, double& thdd) {
  const double mp = kPoleMass, l = kPoleLength, g = kGravity;
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  const double m11 = cart_mass + mp;
  const double m12 = mp * l * ct;
  const double m22 = mp * l * l;
  const double b1 = u + mp * l * s.thetadot * s.thetadot * st;
  const double b2 = mp * g * l * st;
  const double det = m11 * m22 - m12 * m12;
  xdd = (m22 * b1 - m12 * b2) / det;
  thdd = (m11 * b2 - m12 * b1) / det;
}

double cartpole_inverse_dynamics(double cart_mass, double theta,
                                 double thetadot, double xdd, double thdd) {
  const double mp = kPoleMass, l = kPoleLength;
  const double ct = std::cos(theta), st = std::sin(theta);
  return (cart_mass + mp) * xdd + mp * l * ct * thdd -
         mp * l * thetadot * thetadot * st;
}

std::vector<CartpoleState> cartpole_trajectory(const Task& t, double dt,
                                               double horizon) {
  const double mc = t.params[0];
  const int steps = static_cast<int>(std::floor(horizon / dt));
  std::vector<CartpoleState> out;
  out.reserve(steps + 1);
  CartpoleState s{0.0, t.params[7], 0.0, 0.0};
  out.push_back(s);
  auto deriv = [&](const CartpoleState& st, double time, double d[4]) {
    double xdd = 0.0, thdd = 0.0;
    cartpole_accel(mc, st, cartpole_control(t, time), xdd, thdd);
    d[0] = st.xdot;
    d[1] = st.thetadot;
    d[2] = xdd;
    d[3] = thdd;
  };
  for (int i = 0; i < steps; ++i) {
    const double time = i * dt;
    double k1[4], k2[4], k3[4], k4[4];
    deriv(s, time, k1);
    CartpoleState s2{s.x + 0.5 * dt * k1[0], s.theta + 0.5 * dt * k1[1],
                     s.xdot + 0.5 * dt * k1[2], s.thetadot + 0.5 * dt * k1[3]};
    deriv(s2, time + 0.5 * dt, k2);
    CartpoleState s3{s.x + 0.5 * dt * k2[0], s.theta + 0.5 * dt * k2[1],
                     s.xdot + 0.5 * dt * k2[2], s.thetadot + 0.5 * dt * k2[3]};
    deriv(s3, time + 0.5 * dt, k3);
    CartpoleState s4{s.x + dt * k3[0], s.theta + dt * k3[1],
                     s.xdot + dt * k3[2], s.thetadot + dt * k3[3]};
    deriv(s4, time + dt, k4);
    s.x += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
    s.theta += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
    s.xdot += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]);
    s.thetadot += dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]);
    out.push_back(s);
  }
  return out;
}

// Per-dimension input sampling boxes (family defaults).
std::vector<std::pair<double, double>> input_box(const Task& task,
                                                 const TaskSpec& spec) {
  if (spec.input_range) {
    const int d = spec.input_dim();
    return std::vector<std::pair<double, double>>(d, *spec.input_range);
  }
  switch (task.family) {
    case TaskFamily::Sine: return {{-5.0, 5.0}};
    case TaskFamily::FitzhughNagumo: return {{-2.5, 2.5}, {-2.5, 2.5}};
    case TaskFamily::MassSpring: return {{-1.0, 1.0}, {-1.0, 1.0}};
    case TaskFamily::Pendulum: return {{-kPi / 2, kPi / 2}, {-1.0, 1.0}};
    case TaskFamily::VanDerPol: return {{-3.0, 3.0}, {-3.0, 3.0}};
    default:
      throw ContractError("input_box: family has no sampling box");
  }
}

std::shared_ptr<const CsvSeries> cached_series(const TaskSpec& spec) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const CsvSeries>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(spec.csv_path);
  if (it != cache.end()) return it->second;
  auto series = std::make_shared<const CsvSeries>(load_csv_series(
      spec.csv_path, spec.csv_time_column, spec.csv_value_column));
  cache.emplace(spec.csv_path, series);
  return series;
}

}  // namespace

Task sample_sine_task(Rng& rng) {
  Task t;
  t.family = TaskFamily::Sine;
  t.params = {rng.uniform(0.1, 5.0), rng.uniform(0.0, kPi)};
  return t;
}

Task sample_ode_task(TaskFamily system, const TaskSpec& spec, Rng& rng) {
  Task t;
  t.family = system;
  switch (system) {
    case TaskFamily::FitzhughNagumo:
      t.params = {rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0),
                  rng.uniform(0.1, 2.0)};
      break;
    case TaskFamily::MassSpring:
      t.params = {rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5)};
      break;
    case TaskFamily::Pendulum:
      t.params = {rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
                  rng.uniform(0.5, 1.5)};
      break;
    case TaskFamily::VanDerPol:
      t.params = {rng.uniform(0.1, 5.0)};
      break;
    case TaskFamily::Cartpole:
      t.params = {rng.uniform(0.5, 1.5),  rng.uniform(-3.0, 3.0),
                  rng.uniform(0.5, 2.5),  rng.uniform(0.0, 2 * kPi),
                  rng.uniform(-3.0, 3.0), rng.uniform(0.5, 2.5),
                  rng.uniform(0.0, 2 * kPi), rng.uniform(-0.5, 0.5)};
      break;
    default:
      throw ConfigError("sample_ode_task: not an ODE system: " +
                        task_family_name(system));
  }
  (void)spec;
  return t;
}

Task sample_task(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  switch (spec.family) {
    case TaskFamily::Sine: return sample_sine_task(rng);
    case TaskFamily::CsvSeries: {
      Task t;
      t.family = TaskFamily::CsvSeries;
      t.series = cached_series(spec);
      t.window_size = spec.n_support + spec.n_query;
      const int rows = static_cast<int>(t.series->value.size());
      if (t.window_size > rows) {
        throw IngestionError("csv task: window of " +
                             std::to_string(t.window_size) +
                             " rows exceeds series length " +
                             std::to_string(rows));
      }
      const int max_start = rows - t.window_size;
      t.window_start =
          static_cast<int>(rng.uniform() * static_cast<double>(max_start + 1));
      t.window_start = std::min(t.window_start, max_start);
      return t;
    }
    default:
      return sample_ode_task(spec.family, spec, rng);
  }
}

Matrix task_targets(const Task& task, const Matrix& x) {
  Matrix y;
  switch (task.family) {
    case TaskFamily::Sine: {
      y.resize(x.rows(), 1);
      for (Index i = 0; i < x.rows(); ++i) {
        y(i, 0) = task.params[0] * std::sin(x(i, 0) + task.params[1]);
      }
      break;
    }
    case TaskFamily::FitzhughNagumo: {
      const double a = task.params[0], b = task.params[1], c = task.params[2];
      y.resize(x.rows(), 2);
      for (Index i = 0; i < x.rows(); ++i) {
        const double u = x(i, 0), v = x(i, 1);
        y(i, 0) = c * (u - u * u * u / 3.0 + v);
        y(i, 1) = -(1.0 / c) * (u - a + b * v);
      }
      break;
    }
    case TaskFamily::MassSpring: {
      const double m = task.params[0], k = task.params[1];
      y.resize(x.rows(), 2);
      for (Index i = 0; i < x.rows(); ++i) {
        y(i, 0) = -x(i, 1) / m;
        y(i, 1) = -k * x(i, 0);
      }
      break;
    }
    case TaskFamily::Pendulum: {
      const double m = task.params[0], l = task.params[1], g = task.params[2];
      y.resize(x.rows(), 2);
      for (Index i = 0; i < x.rows(); ++i) {
        y(i, 0) = x(i, 1) / (m * l * l);
        y(i, 1) = -m * g * l * std::sin(x(i, 0));
      }
      break;
    }
    case TaskFamily::VanDerPol: {
      const double mu = task.params[0];
      y.resize(x.rows(), 2);
      for (Index i = 0; i < x.rows(); ++i) {
        const double xv = x(i, 0), yv = x(i, 1);
        y(i, 0) = yv;
        y(i, 1) = mu * (1.0 - xv * xv) * yv - xv;
      }
      break;
    }
    case TaskFamily::Cartpole: {
      y.resize(x.rows(), 1);
      for (Index i = 0; i < x.rows(); ++i) {
        y(i, 0) = cartpole_inverse_dynamics(task.params[0], x(i, 1), x(i, 3),
                                            x(i, 4), x(i, 5));
      }
      break;
    }
    case TaskFamily::CsvSeries:
      throw ContractError("task_targets: csv tasks carry measured targets");
  }
  return y;
}

namespace {

void fill_sampled_points(const Task& task, const TaskSpec& spec, Matrix& x,
                         Matrix& y, Rng& rng) {
  const auto box = input_box(task, spec);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      x(i, j) = rng.uniform(box[j].first, box[j].second);
    }
  }
  y = task_targets(task, x);
}

void fill_cartpole_points(const Task& task, const TaskSpec& spec, Matrix& x,
                          Matrix& y, Rng& rng) {
  const auto traj =
      cartpole_trajectory(task, spec.cartpole_dt, spec.cartpole_horizon);
  const double mc = task.params[0];
  for (Index i = 0; i < x.rows(); ++i) {
    const int idx = std::min<int>(
        static_cast<int>(rng.uniform() * static_cast<double>(traj.size())),
        static_cast<int>(traj.size()) - 1);
    const CartpoleState& s = traj[idx];
    double xdd = 0.0, thdd = 0.0;
    cartpole_accel(mc, s, cartpole_control(task, idx * spec.cartpole_dt), xdd,
                   thdd);
    x(i, 0) = s.x;
    x(i, 1) = s.theta;
    x(i, 2) = s.xdot;
    x(i, 3) = s.thetadot;
    x(i, 4) = xdd;
    x(i, 5) = thdd;
  }
  y = task_targets(task, x);
}

}  // namespace

TaskBatch sample_support_query(const Task& task, const TaskSpec& spec, int n,
                               int m, Rng& rng) {
  if (n < 1 || m < 1) {
    throw ContractError("sample_support_query: sizes must be >= 1");
  }
  TaskBatch batch;
  const int d = spec.input_dim();
  const int k = spec.output_dim();
  batch.support_x.resize(n, d);
  batch.support_y.resize(n, k);
  batch.query_x.resize(m, d);
  batch.query_y.resize(m, k);

  if (task.family == TaskFamily::CsvSeries) {
    if (n + m != task.window_size) {
      throw ContractError("sample_support_query: csv window is sized for " +
                          std::to_string(task.window_size) + " rows");
    }
    std::vector<int> pos(task.window_size);
    for (int i = 0; i < task.window_size; ++i) pos[i] = i;
    for (int i = task.window_size - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform() * (i + 1));
      std::swap(pos[i], pos[std::min(j, i)]);
    }
    const double denom =
        task.window_size > 1 ? static_cast<double>(task.window_size - 1) : 1.0;
    for (int i = 0; i < n + m; ++i) {
      const int p = pos[i];
      const double t = static_cast<double>(p) / denom;
      const double v = task.series->value[task.window_start + p];
      if (i < n) {
        batch.support_x(i, 0) = t;
        batch.support_y(i, 0) = v;
      } else {
        batch.query_x(i - n, 0) = t;
        batch.query_y(i - n, 0) = v;
      }
    }
    return batch;
  }

  if (task.family == TaskFamily::Cartpole) {
    fill_cartpole_points(task, spec, batch.support_x, batch.support_y, rng);
    fill_cartpole_points(task, spec, batch.query_x, batch.query_y, rng);
    return batch;
  }

  fill_sampled_points(task, spec, batch.support_x, batch.support_y, rng);
  fill_sampled_points(task, spec, batch.query_x, batch.query_y, rng);
  return batch;
}

TaskBatch add_label_noise(const TaskBatch& batch, double sigma, Rng& rng) {
  if (sigma < 0.0) {
    throw ContractError("add_label_noise: sigma must be nonnegative");
  }
  TaskBatch out = batch;
  if (sigma == 0.0) return out;
  for (Index i = 0; i < out.support_y.rows(); ++i) {
    for (Index j = 0; j < out.support_y.cols(); ++j) {
      out.support_y(i, j) += rng.normal(0.0, sigma);
    }
  }
  return out;
}

TaskBatch sample_task_batch(const TaskSpec& spec, std::uint64_t seed,
                            std::uint64_t index) {
  Rng rng(derive_seed(seed, seed_component::tasks, index));
  Task task = sample_task(spec, rng);
  TaskBatch batch =
      sample_support_query(task, spec, spec.n_support, spec.n_query, rng);
  if (spec.noise_sigma > 0.0) {
    batch = add_label_noise(batch, spec.noise_sigma, rng);
  }
  return batch;
}

CsvSeries load_csv_series(const std::string& path,
                          const std::string& time_column,
                          const std::string& value_column) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open csv file: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw IngestionError("csv file is empty: " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();

  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.push_back("");
    return cells;
  };

  const auto header = split(line);
  int time_idx = -1, value_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == time_column) time_idx = static_cast<int>(i);
    if (header[i] == value_column) value_idx = static_cast<int>(i);
  }
  if (time_idx < 0) {
    throw IngestionError("csv is missing column '" + time_column + "'");
  }
  if (value_idx < 0) {
    throw IngestionError("csv is missing column '" + value_column + "'");
  }

  CsvSeries series;
  int row = 1;  // header line
  auto parse_cell = [&](const std::string& cell, int line_no,
                        const std::string& col) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      throw IngestionError("csv row " + std::to_string(line_no) +
                           ": cannot parse '" + cell + "' in column " + col);
    }
    while (used < cell.size() &&
           (cell[used] == ' ' || cell[used] == '\t')) {
      ++used;
    }
    if (used != cell.size()) {
      throw IngestionError("csv row " + std::to_string(line_no) +
                           ": cannot parse '" + cell + "' in column " + col);
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    const int needed = std::max(time_idx, value_idx);
    if (static_cast<int>(cells.size()) <= needed) {
      throw IngestionError("csv row " + std::to_string(row) +
                           ": expected at least " + std::to_string(needed + 1) +
                           " cells");
    }
    series.time.push_back(parse_cell(cells[time_idx], row, time_column));
    series.value.push_back(parse_cell(cells[value_idx], row, value_column));
  }
  return series;
}

}  // namespace lava
