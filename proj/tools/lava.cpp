// Command-line entry point: training, evaluation and the diagnostic
// experiments, all resolved into reproducible runs under one output
// directory. Exit codes: 0 success, 2 usage/config, 3 numeric failure.

#include <CLI11.hpp>

#include "lava/metrics.hpp"

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace lava;

namespace {

constexpr const char* kVersion = "lava 0.1.0";

std::string iso_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

struct CommonOpts {
  std::string out = "lava_run";
  std::uint64_t seed = 0;
  int workers = 1;
};

struct TrainOpts {
  std::string mode = "lava-last-layer";
  std::string task = "sine";
  int support = 10;
  int query = 25;
  int epochs = 10;
  int tasks_per_epoch = 100;
  int meta_batch = 10;
  double alpha = 0.1;
  double eta = 1e-3;
  double epsilon = 0.1;
  int inner_steps = 1;
  int context_dim = 2;
  std::vector<int> hidden = {64, 64, 64};
  double clip_norm = 0.0;
  double noise_sigma = 0.0;
  std::string csv_path;
  std::string time_col = "time";
  std::string value_col = "value";
};

void add_train_options(CLI::App* sub, TrainOpts& t) {
  sub->add_option("--mode", t.mode,
                  "adaptation mode: lava-last-layer, lava-context, "
                  "anil-baseline, cavia-baseline");
  sub->add_option("--task", t.task,
                  "task family: sine, fitzhugh-nagumo, mass-spring, pendulum, "
                  "van-der-pol, cartpole, csv");
  sub->add_option("--support", t.support, "support points per task");
  sub->add_option("--query", t.query, "query points per task");
  sub->add_option("--epochs", t.epochs, "training epochs");
  sub->add_option("--tasks-per-epoch", t.tasks_per_epoch,
                  "meta-batches per epoch");
  sub->add_option("--meta-batch", t.meta_batch, "tasks per meta-update");
  sub->add_option("--alpha", t.alpha, "inner step size");
  sub->add_option("--eta", t.eta, "outer learning rate");
  sub->add_option("--epsilon", t.epsilon, "precision regularizer");
  sub->add_option("--inner-steps", t.inner_steps,
                  "inner gradient steps (baselines)");
  sub->add_option("--context-dim", t.context_dim,
                  "context size for context modes");
  sub->add_option("--hidden", t.hidden, "hidden layer widths")
      ->delimiter(',');
  sub->add_option("--clip-norm", t.clip_norm,
                  "global gradient norm clip (0 = off)");
  sub->add_option("--noise-sigma", t.noise_sigma,
                  "gaussian label noise on support targets");
  sub->add_option("--csv", t.csv_path, "csv file for the csv task family");
  sub->add_option("--time-col", t.time_col, "csv time column name");
  sub->add_option("--value-col", t.value_col, "csv value column name");
}

HyperConfig make_config(const CommonOpts& common, const TrainOpts& t) {
  HyperConfig cfg;
  cfg.mode = parse_train_mode(t.mode);
  cfg.task.family = parse_task_family(t.task);
  cfg.task.n_support = t.support;
  cfg.task.n_query = t.query;
  cfg.task.noise_sigma = t.noise_sigma;
  cfg.task.csv_path = t.csv_path;
  cfg.task.csv_time_column = t.time_col;
  cfg.task.csv_value_column = t.value_col;
  cfg.epochs = t.epochs;
  cfg.tasks_per_epoch = t.tasks_per_epoch;
  cfg.meta_batch = t.meta_batch;
  cfg.alpha = t.alpha;
  cfg.eta = t.eta;
  cfg.epsilon = t.epsilon;
  cfg.inner_steps = t.inner_steps;
  cfg.context_dim = t.context_dim;
  cfg.hidden = t.hidden;
  cfg.clip_norm = t.clip_norm;
  cfg.seed = common.seed;
  cfg.workers = common.workers;
  return cfg.normalized();
}

void write_manifest(const CommonOpts& common, CLI::App& app,
                    const std::string& command) {
  fs::create_directories(common.out);
  std::ofstream out(fs::path(common.out) / "manifest.ini");
  if (!out) throw ConfigError("cannot write manifest under " + common.out);
  // resolved config first; the [run] metadata section last so it does not
  // capture the top-level keys when the manifest is replayed as a config
  out << app.config_to_str(true, false);
  out << "\n[run]\n";
  out << "command=" << command << "\n";
  out << "version=" << kVersion << "\n";
  out << "output_dir=" << common.out << "\n";
  out << "started_at=" << iso_now() << "\n";
}

std::vector<TaskBatch> eval_task_list(const TaskSpec& spec, std::uint64_t seed,
                                      int n_tasks) {
  std::vector<TaskBatch> tasks;
  tasks.reserve(n_tasks);
  for (int t = 0; t < n_tasks; ++t) {
    tasks.push_back(sample_task_batch(spec, seed, t));
  }
  return tasks;
}

TrainMode default_eval_mode(const MetaParams& params) {
  return params.arch.mode == AdaptMode::Context ? TrainMode::LavaContext
                                                : TrainMode::LavaLastLayer;
}

void check_task_matches_checkpoint(const MetaParams& params,
                                   const TaskSpec& spec) {
  if (spec.input_dim() != params.arch.input_dim) {
    throw ConfigError("task input dim " + std::to_string(spec.input_dim()) +
                      " does not match checkpoint input dim " +
                      std::to_string(params.arch.input_dim));
  }
  if (spec.output_dim() != params.arch.output_dim) {
    throw ConfigError("task output dim " + std::to_string(spec.output_dim()) +
                      " does not match checkpoint output dim " +
                      std::to_string(params.arch.output_dim));
  }
}

int cmd_train(const CommonOpts& common, const TrainOpts& topts, CLI::App& app,
              int eval_tasks) {
  HyperConfig cfg = make_config(common, topts);
  cfg.validate();
  write_manifest(common, app, "train");
  const fs::path out_dir(common.out);

  save_checkpoint(out_dir / "checkpoint_init.bin",
                  init_params(cfg.make_arch(), cfg.seed));
  if (cfg.epochs == 0) {
    std::cout << "no training epochs requested; wrote initial checkpoint\n";
    return 0;
  }
  std::ofstream log_csv(out_dir / "train_log.csv");
  log_csv << "epoch,mean_query_mse,std_query_mse,mean_log_var_adapted,"
             "mean_condition_number,wall_time_s\n";
  log_csv.precision(17);
  const auto stream_row = [&log_csv](const EpochLog& row, const MetaParams&) {
    log_csv << row.epoch << ',' << row.mean_query_mse << ','
            << row.std_query_mse << ',' << row.mean_log_var_adapted << ','
            << row.mean_condition_number << ',' << row.wall_time_s << '\n';
    log_csv.flush();
  };
  try {
    TrainResult result = meta_train(cfg, stream_row);
    save_checkpoint(out_dir / "checkpoint_final.bin", result.params);
    std::cout << "trained " << cfg.epochs << " epochs; final query mse "
              << result.log.back().mean_query_mse << "\n";
    if (eval_tasks > 0) {
      const auto tasks = eval_task_list(
          cfg.task, derive_seed(cfg.seed, seed_component::eval_tasks),
          eval_tasks);
      const EvalStats stats = evaluate(result.params, tasks, cfg);
      std::cout << "eval on " << eval_tasks << " fresh tasks: mse "
                << stats.mean_mse << " +/- " << stats.std_mse << "\n";
    }
  } catch (const TrainingAbort& abort) {
    const fs::path ckpt = out_dir / "checkpoint_abort.bin";
    save_checkpoint(ckpt, abort.last_good());
    std::cerr << "numeric failure: " << abort.what()
              << "\nlast good parameters saved to " << ckpt << "\n";
    return 3;
  }
  return 0;
}

int cmd_eval(const CommonOpts& common, const TrainOpts& topts, CLI::App& app,
             const std::string& checkpoint, const std::string& mode_flag,
             int n_tasks, int n_seeds) {
  MetaParams params = load_checkpoint(checkpoint);
  HyperConfig cfg = make_config(common, topts);
  cfg.mode = mode_flag.empty() ? default_eval_mode(params)
                               : parse_train_mode(mode_flag);
  cfg.context_dim = params.arch.context_dim;
  cfg.hidden = params.arch.hidden;
  cfg = cfg.normalized();
  check_task_matches_checkpoint(params, cfg.task);
  if (n_tasks < 1 || n_seeds < 1) {
    throw ConfigError("eval: --n-tasks and --seeds must be >= 1");
  }

  write_manifest(common, app, "eval");
  std::ofstream csv(fs::path(common.out) / "eval.csv");
  csv << "seed,n_tasks,mean_mse,std_mse_across_tasks\n";
  csv.precision(17);

  std::vector<double> seed_means;
  double task_std_single = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    const std::uint64_t stream =
        derive_seed(common.seed, seed_component::eval_tasks, s);
    const EvalStats stats =
        evaluate(params, eval_task_list(cfg.task, stream, n_tasks), cfg);
    seed_means.push_back(stats.mean_mse);
    if (s == 0) task_std_single = stats.std_mse;
    csv << s << ',' << n_tasks << ',' << stats.mean_mse << ','
        << stats.std_mse << '\n';
  }
  double mean = 0.0;
  for (double v : seed_means) mean += v;
  mean /= seed_means.size();
  double std_over_seeds = 0.0;
  if (seed_means.size() > 1) {
    double var = 0.0;
    for (double v : seed_means) var += (v - mean) * (v - mean);
    std_over_seeds = std::sqrt(var / (seed_means.size() - 1));
  } else {
    std_over_seeds = task_std_single;
  }
  std::cout << "mse " << mean << " +/- " << std_over_seeds << " ("
            << n_seeds << " seeds x " << n_tasks << " tasks)\n";
  return 0;
}

struct ExperimentOpts {
  std::string name;
  std::string checkpoint;
  std::vector<std::string> modes;
  int resamples = 100;
  int probe_every = 1;
  double grid_lo = -2.0;
  double grid_hi = 2.0;
  int grid_size = 101;
  std::vector<double> sigmas = {0.0, 1.0, 3.0};
  std::vector<int> supports = {1, 5, 10, 20};
  int n_tasks = 100;
  int iters = 200;
  int warmup = 20;
  std::vector<int> steps = {1, 2, 3};
};

int cmd_experiment(const CommonOpts& common, const TrainOpts& topts,
                   CLI::App& app, const ExperimentOpts& ex) {
  const std::set<std::string> known = {"variance", "landscape", "condition",
                                       "noise", "timing"};
  if (!known.count(ex.name)) {
    std::string names;
    for (const auto& n : known) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown experiment '" + ex.name + "' (expected one of " +
                      names + ")");
  }
  write_manifest(common, app, "experiment " + ex.name);
  const fs::path out_dir(common.out);

  if (ex.name == "variance") {
    std::vector<std::string> modes = ex.modes;
    if (modes.empty()) modes = {"lava-context", "cavia-baseline"};
    std::vector<VarianceCurveRow> rows;
    for (const std::string& mode : modes) {
      TrainOpts t = topts;
      t.mode = mode;
      HyperConfig cfg = make_config(common, t);
      cfg.validate();
      auto mode_rows = variance_during_training(
          cfg, ex.resamples, derive_seed(common.seed, seed_component::probe),
          ex.probe_every);
      rows.insert(rows.end(), mode_rows.begin(), mode_rows.end());
    }
    write_variance_csv(out_dir / "variance.csv", rows);
    std::cout << "wrote " << (out_dir / "variance.csv").string() << " ("
              << rows.size() << " rows)\n";
    return 0;
  }

  if (ex.name == "landscape") {
    if (ex.checkpoint.empty()) {
      throw ConfigError("landscape: --checkpoint is required");
    }
    MetaParams params = load_checkpoint(ex.checkpoint);
    HyperConfig cfg = make_config(common, topts);
    cfg.mode = TrainMode::LavaContext;
    cfg.context_dim = params.arch.context_dim;
    cfg.hidden = params.arch.hidden;
    check_task_matches_checkpoint(params, cfg.task);
    GridSpec grid;
    grid.x_lo = grid.y_lo = ex.grid_lo;
    grid.x_hi = grid.y_hi = ex.grid_hi;
    grid.width = grid.height = ex.grid_size;
    const TaskBatch batch = sample_task_batch(
        cfg.task, derive_seed(common.seed, seed_component::probe), 0);
    const LandscapeResult r = loss_landscape_grid(params, batch, grid, cfg);
    write_landscape_csv(out_dir / "landscape.csv", r);
    write_ellipses_csv(out_dir / "ellipses.csv", r);
    write_landscape_markers_csv(out_dir / "landscape_markers.csv", r);
    std::cout << "wrote landscape.csv, ellipses.csv, landscape_markers.csv\n";
    return 0;
  }

  if (ex.name == "condition") {
    HyperConfig cfg = make_config(common, topts);
    cfg.validate();
    MetaParams params = ex.checkpoint.empty()
                            ? init_params(cfg.make_arch(), cfg.seed)
                            : load_checkpoint(ex.checkpoint);
    if (!ex.checkpoint.empty()) check_task_matches_checkpoint(params, cfg.task);
    const TaskBatch batch = sample_task_batch(
        cfg.task, derive_seed(common.seed, seed_component::probe), 0);
    const AdaptationResult ar =
        adapt(params, batch.support_x, batch.support_y, cfg);
    const auto [raw, reg] = condition_numbers(ar);
    std::ofstream csv(out_dir / "condition.csv");
    csv << "mode,support,kappa_raw,kappa_regularized\n";
    csv.precision(17);
    csv << train_mode_name(cfg.mode) << ',' << cfg.task.n_support << ',' << raw
        << ',' << reg << '\n';
    std::cout << "kappa raw " << raw << ", regularized " << reg << "\n";
    return 0;
  }

  if (ex.name == "noise") {
    if (ex.checkpoint.empty()) {
      throw ConfigError("noise: --checkpoint is required");
    }
    MetaParams params = load_checkpoint(ex.checkpoint);
    HyperConfig cfg = make_config(common, topts);
    cfg.mode = default_eval_mode(params);
    cfg.context_dim = params.arch.context_dim;
    cfg.hidden = params.arch.hidden;
    cfg = cfg.normalized();
    check_task_matches_checkpoint(params, cfg.task);
    const auto rows = noise_robustness(params, ex.sigmas, ex.supports,
                                       ex.n_tasks, cfg, common.seed);
    write_noise_csv(out_dir / "noise.csv", rows);
    std::cout << "wrote " << (out_dir / "noise.csv").string() << " ("
              << rows.size() << " rows)\n";
    return 0;
  }

  // timing
  TimingSpec spec;
  spec.step_counts = ex.steps;
  spec.supports = ex.supports;
  spec.iters = ex.iters;
  spec.warmup = ex.warmup;
  spec.eval_tasks = ex.n_tasks;
  std::vector<std::string> modes = ex.modes;
  if (modes.empty()) {
    modes = {"lava-last-layer", "anil-baseline", "cavia-baseline"};
  }
  for (const std::string& m : modes) spec.modes.push_back(parse_train_mode(m));
  HyperConfig cfg = make_config(common, topts);
  const auto rows = timing_benchmark(spec, cfg);
  write_timing_csv(out_dir / "timing.csv", rows);
  std::cout << "wrote " << (out_dir / "timing.csv").string() << " ("
            << rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LAVA meta-learning engine"};
  app.option_defaults()->always_capture_default(true);
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "flat key-value config file; command-line "
                                 "flags override file values");
  app.require_subcommand(0, 1);
  app.fallthrough(true);  // --out/--seed/--workers also match after a subcommand

  CommonOpts common;
  app.add_option("--out", common.out, "output directory for run artifacts")
      ->envname("LAVA_OUT_DIR");
  app.add_option("--seed", common.seed, "global seed");
  app.add_option("--workers", common.workers,
                 "parallel task workers per meta-batch");

  TrainOpts topts;
  int train_eval_tasks = 0;
  CLI::App* train = app.add_subcommand("train", "meta-train a model");
  train->configurable(true);
  add_train_options(train, topts);
  train->add_option("--eval-tasks", train_eval_tasks,
                    "evaluate on this many fresh tasks after training");

  TrainOpts eopts;
  std::string eval_checkpoint;
  std::string eval_mode;
  int eval_n_tasks = 200;
  int eval_seeds = 5;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on fresh tasks");
  eval_cmd->configurable(true);
  add_train_options(eval_cmd, eopts);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint")
      ->required();
  eval_cmd->add_option("--eval-mode", eval_mode,
                       "override the adaptation mode (defaults to the lava "
                       "mode matching the checkpoint)");
  eval_cmd->add_option("--n-tasks", eval_n_tasks, "tasks per seed");
  eval_cmd->add_option("--seeds", eval_seeds, "evaluation seeds");

  TrainOpts xopts;
  ExperimentOpts ex;
  CLI::App* experiment = app.add_subcommand(
      "experiment", "diagnostic experiments: variance, landscape, condition, "
                    "noise, timing");
  experiment->configurable(true);
  add_train_options(experiment, xopts);
  experiment->add_option("name", ex.name, "experiment name")->required();
  experiment->add_option("--checkpoint", ex.checkpoint, "model checkpoint");
  experiment->add_option("--modes", ex.modes, "modes to run")->delimiter(',');
  experiment->add_option("--resamples", ex.resamples,
                         "support resamples per probe");
  experiment->add_option("--probe-every", ex.probe_every,
                         "epochs between variance probes");
  experiment->add_option("--grid-lo", ex.grid_lo, "landscape grid lower bound");
  experiment->add_option("--grid-hi", ex.grid_hi, "landscape grid upper bound");
  experiment->add_option("--grid-size", ex.grid_size,
                         "landscape grid points per axis");
  experiment->add_option("--sigmas", ex.sigmas, "noise levels")
      ->delimiter(',');
  experiment->add_option("--supports", ex.supports, "support sizes")
      ->delimiter(',');
  experiment->add_option("--n-tasks", ex.n_tasks, "tasks per configuration");
  experiment->add_option("--iters", ex.iters, "timed meta-iterations");
  experiment->add_option("--warmup", ex.warmup, "warm-up meta-iterations");
  experiment->add_option("--steps", ex.steps, "inner-step counts")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) {
      return cmd_train(common, topts, app, train_eval_tasks);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(common, eopts, app, eval_checkpoint, eval_mode,
                      eval_n_tasks, eval_seeds);
    }
    if (experiment->parsed()) {
      return cmd_experiment(common, xopts, app, ex);
    }
    std::cerr << app.help();
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const SingularMatrixError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
