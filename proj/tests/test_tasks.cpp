#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lava/tasks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>

using namespace lava;

TEST_CASE("sine task formula and ranges") {
  Task t;
  t.family = TaskFamily::Sine;
  t.params = {1.0, 0.0};
  Matrix x = Matrix::Zero(1, 1);
  CHECK(task_targets(t, x)(0, 0) == 0.0);

  t.params = {2.0, std::numbers::pi / 2.0};
  CHECK(task_targets(t, x)(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Task s = sample_sine_task(rng);
    CHECK(s.params[0] >= 0.1);
    CHECK(s.params[0] <= 5.0);
    CHECK(s.params[1] >= 0.0);
    CHECK(s.params[1] <= std::numbers::pi);
  }
}

TEST_CASE("ode vector fields match the stated dynamics") {
  TaskSpec spec;

  // mass-spring m=1, k=1 at (x=1, xdot=0) -> (0, -1)
  Task ms;
  ms.family = TaskFamily::MassSpring;
  ms.params = {1.0, 1.0};
  Matrix state(1, 2);
  state << 1.0, 0.0;
  Matrix field = task_targets(ms, state);
  CHECK(field(0, 0) == 0.0);
  CHECK(field(0, 1) == -1.0);

  // van der pol equilibrium at the origin
  Task vdp;
  vdp.family = TaskFamily::VanDerPol;
  vdp.params = {3.7};
  state << 0.0, 0.0;
  field = task_targets(vdp, state);
  CHECK(field(0, 0) == 0.0);
  CHECK(field(0, 1) == 0.0);

  // fitzhugh-nagumo with a=b=c=1 at the origin -> (0, 1)
  Task fhn;
  fhn.family = TaskFamily::FitzhughNagumo;
  fhn.params = {1.0, 1.0, 1.0};
  field = task_targets(fhn, state);
  CHECK(field(0, 0) == 0.0);
  CHECK(field(0, 1) == 1.0);
}

TEST_CASE("ode parameter ranges") {
  Rng rng(2);
  TaskSpec spec;
  for (int i = 0; i < 100; ++i) {
    Task fhn = sample_ode_task(TaskFamily::FitzhughNagumo, spec, rng);
    for (double p : fhn.params) {
      CHECK(p >= 0.1);
      CHECK(p <= 2.0);
    }
    Task ms = sample_ode_task(TaskFamily::MassSpring, spec, rng);
    for (double p : ms.params) {
      CHECK(p >= 0.5);
      CHECK(p <= 1.5);
    }
    Task vdp = sample_ode_task(TaskFamily::VanDerPol, spec, rng);
    CHECK(vdp.params[0] >= 0.1);
    CHECK(vdp.params[0] <= 5.0);
  }
  CHECK_THROWS_AS(sample_ode_task(TaskFamily::Sine, spec, rng), ConfigError);
}

TEST_CASE("support and query shapes and determinism") {
  TaskSpec spec;
  spec.family = TaskFamily::Pendulum;
  spec.n_support = 10;
  spec.n_query = 25;
  TaskBatch a = sample_task_batch(spec, 77, 4);
  TaskBatch b = sample_task_batch(spec, 77, 4);
  TaskBatch c = sample_task_batch(spec, 77, 5);
  CHECK(a.support_x.rows() == 10);
  CHECK(a.support_x.cols() == 2);
  CHECK(a.query_x.rows() == 25);
  CHECK(a.query_y.cols() == 2);
  CHECK(a.support_x == b.support_x);
  CHECK(a.query_y == b.query_y);
  CHECK(a.support_x != c.support_x);
}

TEST_CASE("generated targets satisfy the analytic relation exactly") {
  Rng rng(3);
  for (TaskFamily family :
       {TaskFamily::Sine, TaskFamily::FitzhughNagumo, TaskFamily::MassSpring,
        TaskFamily::Pendulum, TaskFamily::VanDerPol, TaskFamily::Cartpole}) {
    TaskSpec spec;
    spec.family = family;
    spec.n_support = 6;
    spec.n_query = 4;
    Task task = sample_task(spec, rng);
    TaskBatch batch = sample_support_query(task, spec, 6, 4, rng);
    CHECK(batch.support_y == task_targets(task, batch.support_x));
    CHECK(batch.query_y == task_targets(task, batch.query_x));
  }
}

TEST_CASE("pendulum states stay inside the sampling box") {
  TaskSpec spec;
  spec.family = TaskFamily::Pendulum;
  spec.n_support = 50;
  spec.n_query = 1;
  TaskBatch batch = sample_task_batch(spec, 5, 0);
  CHECK(batch.support_x.col(0).minCoeff() >= -std::numbers::pi / 2);
  CHECK(batch.support_x.col(0).maxCoeff() <= std::numbers::pi / 2);
  CHECK(batch.support_x.col(1).minCoeff() >= -1.0);
  CHECK(batch.support_x.col(1).maxCoeff() <= 1.0);
}

TEST_CASE("cartpole control is recoverable from the emitted samples") {
  TaskSpec spec;
  spec.family = TaskFamily::Cartpole;
  spec.n_support = 8;
  spec.n_query = 8;
  TaskBatch batch = sample_task_batch(spec, 11, 0);
  CHECK(batch.support_x.cols() == 6);
  CHECK(batch.support_y.cols() == 1);
  CHECK(batch.support_x.allFinite());
  CHECK(batch.support_y.allFinite());
}

TEST_CASE("label noise touches only the support set") {
  TaskSpec spec;
  spec.family = TaskFamily::Sine;
  TaskBatch clean = sample_task_batch(spec, 9, 2);

  Rng rng(4);
  TaskBatch same = add_label_noise(clean, 0.0, rng);
  CHECK(same.support_y == clean.support_y);
  CHECK(same.query_y == clean.query_y);

  TaskBatch noisy = add_label_noise(clean, 3.0, rng);
  CHECK(noisy.query_y == clean.query_y);
  CHECK(noisy.support_x == clean.support_x);
  CHECK((noisy.support_y - clean.support_y).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("noise sampler has the configured spread") {
  // empirical std over 1e5 entries within [2.97, 3.03] for sigma = 3
  TaskSpec spec;
  spec.family = TaskFamily::Sine;
  spec.n_support = 1000;
  spec.n_query = 1;
  Rng rng(5);
  double sq_sum = 0.0;
  double sum = 0.0;
  long count = 0;
  for (int rep = 0; rep < 100; ++rep) {
    TaskBatch clean = sample_task_batch(spec, 13, rep);
    TaskBatch noisy = add_label_noise(clean, 3.0, rng);
    Matrix delta = noisy.support_y - clean.support_y;
    sum += delta.sum();
    sq_sum += delta.squaredNorm();
    count += delta.size();
  }
  const double mean = sum / count;
  const double std = std::sqrt(sq_sum / count - mean * mean);
  CHECK(std >= 2.97);
  CHECK(std <= 3.03);
}

namespace {

std::string write_temp_csv(const std::string& name, const std::string& body) {
  std::ofstream out(name);
  out << body;
  return name;
}

}  // namespace

TEST_CASE("csv loader parses well-formed series") {
  const std::string path = write_temp_csv(
      "tasks_ok.csv", "time,extra,value\n0,9,1.5\n1,9,2.5\n2,9,3.5\n3,9,4.5\n");
  CsvSeries s = load_csv_series(path, "time", "value");
  CHECK(s.time.size() == 4);
  CHECK(s.value[2] == 3.5);
  std::remove(path.c_str());
}

TEST_CASE("csv loader error paths") {
  const std::string path =
      write_temp_csv("tasks_bad.csv", "time,value\n0,1.5\n1,oops\n");
  CHECK_THROWS_WITH_AS(load_csv_series(path, "time", "missing"),
                       doctest::Contains("missing"), IngestionError);
  try {
    load_csv_series(path, "time", "value");
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    CHECK(std::string(e.what()).find("oops") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv tasks split windows into support and query") {
  std::string body = "time,value\n";
  for (int i = 0; i < 100; ++i) {
    body += std::to_string(i) + "," + std::to_string(0.5 * i) + "\n";
  }
  const std::string path = write_temp_csv("tasks_series.csv", body);

  TaskSpec spec;
  spec.family = TaskFamily::CsvSeries;
  spec.csv_path = path;
  spec.n_support = 10;
  spec.n_query = 25;
  TaskBatch batch = sample_task_batch(spec, 21, 0);
  CHECK(batch.support_x.rows() == 10);
  CHECK(batch.query_x.rows() == 25);
  CHECK(batch.support_x.minCoeff() >= 0.0);
  CHECK(batch.support_x.maxCoeff() <= 1.0);

  // window exceeding the file length
  TaskSpec big = spec;
  big.n_support = 80;
  big.n_query = 40;
  CHECK_THROWS_AS(sample_task_batch(big, 21, 0), IngestionError);

  // constant series pass through unchanged
  std::string const_body = "time,value\n";
  for (int i = 0; i < 50; ++i) {
    const_body += std::to_string(i) + ",7.25\n";
  }
  const std::string cpath = write_temp_csv("tasks_const.csv", const_body);
  TaskSpec cspec = spec;
  cspec.csv_path = cpath;
  TaskBatch cbatch = sample_task_batch(cspec, 22, 0);
  CHECK(cbatch.support_y == Matrix::Constant(10, 1, 7.25));
  CHECK(cbatch.query_y == Matrix::Constant(25, 1, 7.25));

  std::remove(path.c_str());
  std::remove(cpath.c_str());
}

TEST_CASE("task family names round trip") {
  for (TaskFamily f :
       {TaskFamily::Sine, TaskFamily::FitzhughNagumo, TaskFamily::MassSpring,
        TaskFamily::Pendulum, TaskFamily::VanDerPol, TaskFamily::Cartpole,
        TaskFamily::CsvSeries}) {
    CHECK(parse_task_family(task_family_name(f)) == f);
  }
  CHECK_THROWS_AS(parse_task_family("nonsense"), ConfigError);
}
