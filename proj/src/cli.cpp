#include "selectfusion/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "selectfusion/csv.hpp"
#include "selectfusion/degradation.hpp"
#include "selectfusion/error.hpp"
#include "selectfusion/harness.hpp"
#include "selectfusion/kernels.hpp"
#include "selectfusion/report.hpp"
#include "selectfusion/simulator.hpp"

namespace selectfusion {

namespace {

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out_dir = ".";
  bool quiet = false;
};

struct SimulateFlags {
  std::size_t episodes = 96;
  std::size_t length = 100;
  std::size_t obs_dim = 32;
  std::size_t window = 10;
  std::string profile = "random-smooth";
  double sigma_a = 0.1;
  double sigma_gyro = 0.05;
  double sigma_accel = 0.1;
};

struct DegradeFlags {
  std::string input;
  std::string spec = "all-5pct";
  std::vector<std::string> splits{"train", "val", "test"};
};

struct TrainFlags {
  std::string data;
  std::string fusion;
  std::string task;
  std::optional<int> epochs;
};

struct EvalFlags {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::optional<std::size_t> eval_seeds;
  std::string mask_log;
};

struct ReportFlags {
  std::vector<std::string> runs;
};

SplitSizes split_sizes(std::size_t episodes) {
  SplitSizes s;
  s.val = episodes / 6;
  s.test = episodes / 6;
  s.train = episodes - s.val - s.test;
  return s;
}

int do_simulate(const GlobalFlags& g, const SimulateFlags& f, std::ostream& out) {
  SimulatorConfig cfg;
  cfg.seed = g.seed.value_or(0);
  cfg.episode_length = f.length;
  cfg.obs_dim = f.obs_dim;
  cfg.window = f.window;
  cfg.trajectory.profile = parse_motion_profile(f.profile);
  cfg.noise.sigma_a = f.sigma_a;
  cfg.noise.sigma_gyro = f.sigma_gyro;
  cfg.noise.sigma_accel = f.sigma_accel;
  const SplitSizes sizes = split_sizes(f.episodes);
  simulate_dataset(cfg, sizes, g.out_dir);
  if (!g.quiet) {
    out << "wrote " << sizes.train << "/" << sizes.val << "/" << sizes.test << " train/val/test episodes to " << g.out_dir
        << '\n';
  }
  return kExitOk;
}

int do_degrade(const GlobalFlags& g, const DegradeFlags& f, std::ostream& out) {
  std::string text = f.spec;
  if (g.seed) text += ",seed=" + std::to_string(*g.seed);
  const DegradationSpec spec = parse_degradation_spec(text);
  degrade_dataset(f.input, g.out_dir, spec, f.splits);
  if (!g.quiet) out << "degraded dataset written to " << g.out_dir << '\n';
  return kExitOk;
}

int do_train(const GlobalFlags& g, const TrainFlags& f, std::ostream& out) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.fusion.empty()) cfg.fusion = parse_fusion(f.fusion);
  if (!f.task.empty()) cfg.task = parse_task(f.task);
  if (f.epochs) cfg.epochs = *f.epochs;
  TrainOptions opts;
  opts.quiet = g.quiet;
  opts.log = &out;
  const TrainResult r = train(cfg, std::filesystem::path(g.out_dir), opts);
  if (!g.quiet) {
    out << "final train loss " << format_double(r.metrics.train_loss.back()) << "; checkpoints in "
        << (std::filesystem::path(g.out_dir) / "checkpoints").string() << '\n';
  }
  return kExitOk;
}

int do_eval(const GlobalFlags& g, const EvalFlags& f, std::ostream& out) {
  const Model model = load_model(f.checkpoint);
  const std::filesystem::path data = f.data.empty() ? model.config.data_dir : std::filesystem::path(f.data);
  if (data.empty()) throw Error(ErrorCode::DatasetMissing, "no dataset given (--data) and none recorded in the checkpoint");
  const Dataset ds = load_split(data, f.split);
  EvalOptions opts;
  opts.eval_seeds = f.eval_seeds;
  opts.seed = g.seed;
  std::optional<MaskLogMode> mode;
  if (!f.mask_log.empty()) mode = parse_mask_log(f.mask_log);
  const EvalResult r = evaluate_to_dir(model, ds, g.out_dir, opts, mode);
  if (!g.quiet) {
    out << "t_rmse " << format_double(r.mean.t_rmse) << " +- " << format_double(r.std.t_rmse) << " m, r_rmse "
        << format_double(r.mean.r_rmse) << " +- " << format_double(r.std.r_rmse) << " deg";
    if (r.mean.t_drift) out << ", drift " << format_double(*r.mean.t_drift) << " % / " << format_double(*r.mean.r_drift) << " deg/100m";
    out << " over " << r.runs.size() << " evaluation run(s)\n";
  }
  return kExitOk;
}

int do_report(const GlobalFlags& g, const ReportFlags& f, std::ostream& out, std::ostream& err) {
  std::vector<std::filesystem::path> runs(f.runs.begin(), f.runs.end());
  const ReportResult r = generate_report(runs, g.out_dir);
  if (!g.quiet) {
    for (const auto& w : r.warnings) err << "warning: " << w << '\n';
    out << "wrote " << r.written.size() << " report files to " << g.out_dir << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  kernels::configure_threads_from_env();

  CLI::App app{"Selective sensor fusion laboratory", "selectfusion"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--seed", g.seed, "Seed for every random stream of the subcommand");
  app.add_option("--config", g.config, "Experiment config file (INI)");
  app.add_option("--out-dir", g.out_dir, "Directory all outputs are written to")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress non-error output");

  SimulateFlags sf;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic train/val/test dataset");
  sim->add_option("--episodes", sf.episodes, "Total episodes, split 4:1:1")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--length", sf.length, "Frames per episode")->check(CLI::Range(std::size_t{2}, std::size_t{1000000}))->capture_default_str();
  sim->add_option("--obs-dim", sf.obs_dim, "Modality a dimension")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--window", sf.window, "Inertial samples per frame")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--profile", sf.profile, "Motion profile")
      ->check(CLI::IsMember({"constant-velocity", "piecewise-turns", "random-smooth"}))
      ->capture_default_str();
  sim->add_option("--sigma-a", sf.sigma_a, "Modality a noise std")->check(CLI::NonNegativeNumber)->capture_default_str();
  sim->add_option("--sigma-gyro", sf.sigma_gyro, "Gyro noise std")->check(CLI::NonNegativeNumber)->capture_default_str();
  sim->add_option("--sigma-accel", sf.sigma_accel, "Accel noise std")->check(CLI::NonNegativeNumber)->capture_default_str();

  DegradeFlags df;
  auto* deg = app.add_subcommand("degrade", "Apply sensor degradations to a dataset");
  deg->add_option("--input", df.input, "Source dataset directory")->required();
  deg->add_option("--spec", df.spec, "Presets and overrides, e.g. all-5pct or none,missing_a=0.3")->capture_default_str();
  deg->add_option("--splits", df.splits, "Splits to degrade")->delimiter(',')->capture_default_str();

  TrainFlags tf;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--data", tf.data, "Dataset directory (overrides data.dir)");
  trn->add_option("--fusion", tf.fusion, "Fusion strategy")->check(CLI::IsMember({"none-a", "none-b", "direct", "soft", "hard"}));
  trn->add_option("--task", tf.task, "Task")->check(CLI::IsMember({"relative-odometry", "global-relocalization"}));
  trn->add_option("--epochs", tf.epochs, "Training epochs")->check(CLI::PositiveNumber);

  EvalFlags ef;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  evl->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  evl->add_option("--data", ef.data, "Dataset directory (default: the one used for training)");
  evl->add_option("--split", ef.split, "Split to evaluate")->capture_default_str();
  evl->add_option("--eval-seeds", ef.eval_seeds, "Stochastic evaluation runs for hard fusion")->check(CLI::PositiveNumber);
  evl->add_option("--mask-log", ef.mask_log, "Mask log granularity")->check(CLI::IsMember({"frame", "feature"}));

  ReportFlags rf;
  auto* rep = app.add_subcommand("report", "Render plots and tables from run directories");
  rep->add_option("runs", rf.runs, "Run directories")->required();

  for (auto* sub : {sim, deg, trn, evl, rep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) return do_simulate(g, sf, out);
    if (*deg) return do_degrade(g, df, out);
    if (*trn) return do_train(g, tf, out);
    if (*evl) return do_eval(g, ef, out);
    if (*rep) return do_report(g, rf, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace selectfusion
