#pragma once

// Experiment orchestration: configuration, model assembly per fusion
// strategy, truncated-BPTT training, evaluation and mask statistics.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selectfusion/fusion.hpp"
#include "selectfusion/geometry.hpp"
#include "selectfusion/nn.hpp"
#include "selectfusion/simulator.hpp"

namespace selectfusion {

enum class Task { RelativeOdometry, GlobalRelocalization };
/// none-a / none-b are the single-modality baselines.
enum class FusionChoice { NoneA, NoneB, Direct, Soft, Hard };
enum class MaskLogMode { Frame, Feature };

std::string to_string(Task t);
std::string to_string(FusionChoice f);
std::string to_string(MaskLogMode m);
Task parse_task(const std::string& s);
FusionChoice parse_fusion(const std::string& s);
MaskLogMode parse_mask_log(const std::string& s);

struct ExperimentConfig {
  Task task = Task::RelativeOdometry;
  FusionChoice fusion = FusionChoice::Hard;
  std::uint64_t seed = 0;

  std::size_t d = 64;
  std::size_t visual_hidden = 64;
  std::size_t visual_layers = 2;
  std::size_t inertial_hidden = 32;
  std::size_t inertial_layers = 1;
  std::size_t temporal_hidden = 64;
  bool shared_class_layer = true;

  LossConfig loss;

  std::size_t batch_size = 16;
  double lr = 1e-4;
  int epochs = 50;
  std::size_t tbptt = 20;  // frames per truncated-backprop segment
  double tau_start = 1.0;
  double tau_end = 0.5;
  std::size_t eval_seeds = 5;
  MaskLogMode mask_log = MaskLogMode::Frame;

  std::filesystem::path data_dir;

  /// Throws InvalidConfig naming the offending field.
  void validate() const;
  TemperatureSchedule schedule() const;
};

/// INI text with sections [experiment], [model], [loss], [training], [data].
std::string to_ini(const ExperimentConfig& cfg);
/// Unknown sections or keys are rejected.
ExperimentConfig parse_experiment_config(const std::string& ini_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct DataDims {
  std::size_t obs_dim = 32;
  std::size_t window = 10;
};

DataDims dataset_dims(const Dataset& ds);

/// Encoders, fusion and temporal model wired per fusion choice, with the
/// parameter store holding their weights plus the fixed input scales
/// ("input.a_scale" [D_A], "input.b_scale" [6]).
struct Model {
  ExperimentConfig config;
  DataDims dims;
  FeedForwardEncoder encoder_a;
  BiLstmEncoder encoder_b;
  FusionParams fusion;
  TemporalModel temporal;
  ParameterStore params;

  bool uses_a() const { return config.fusion != FusionChoice::NoneB; }
  bool uses_b() const { return config.fusion != FusionChoice::NoneA; }
  std::size_t fused_dim() const;
  std::size_t output_dim() const { return config.task == Task::RelativeOdometry ? 6 : 7; }
};

/// Deterministic in (config, dims): parameters are drawn from the config seed.
Model build_model(const ExperimentConfig& cfg, const DataDims& dims);

/// Per-channel RMS of the training inputs, stored as non-trainable scales.
void fit_input_scales(Model& model, const Dataset& train);

/// Frames 1..N-1 of a batch of equal-length episodes, time-major.
struct SequenceOutput {
  std::vector<Tensor> outputs;  // per time step, [B, output_dim]
  std::optional<FusionMask> mask;  // [T*B, d] rows, time-major, when the model fuses
};

struct ForwardOptions {
  double tau = 0.5;
  Rng* rng = nullptr;  // hard fusion noise
  HardGradient hard_gradient = HardGradient::StraightThrough;
};

/// Runs frames [first, last) (indices into frames 1..N-1) of `batch`,
/// advancing `state`.
SequenceOutput forward_sequence(const Model& model, const Bindings& p, std::span<const Episode* const> batch,
                                std::size_t first, std::size_t last, HiddenState& state, const ForwardOptions& opts);

/// Task targets for the same rows, [T*B, output_dim].
Tensor sequence_targets(const Model& model, std::span<const Episode* const> batch, std::size_t first, std::size_t last);
Tensor task_loss(const Model& model, const Tensor& pred, const Tensor& target);

struct TrainMetrics {
  std::vector<double> train_loss;  // frame-weighted mean per epoch
  std::vector<double> val_loss;    // empty without a validation split
  std::vector<double> tau;
  int best_epoch = -1;
};

struct TrainOptions {
  bool quiet = false;
  std::ostream* log = nullptr;
};

struct TrainResult {
  Model model;  // final parameters
  TrainMetrics metrics;
};

/// Trains on the train split (validation split only for best-checkpoint
/// selection; the test split is never opened). When `run_dir` is given,
/// writes config.ini, checkpoints/{final,best}.ckpt, metrics.csv and
/// train.log there.
TrainResult train(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& run_dir,
                  const TrainOptions& options = {});
/// Same loop on in-memory episodes.
TrainResult train_on(const ExperimentConfig& cfg, const Dataset& train, const Dataset* val,
                     const TrainOptions& options = {});

/// Mean task loss over a dataset with no parameter updates.
double dataset_loss(const Model& model, const Dataset& ds, double tau, Rng& rng);

void save_model(const std::filesystem::path& path, const Model& model);
/// Rebuilds the model from the embedded config and restores parameters;
/// throws DimensionMismatch if the stored tensors do not fit.
Model load_model(const std::filesystem::path& path);

// --- evaluation ----------------------------------------------------------

struct MaskRate {
  std::uint64_t episode = 0;
  std::size_t frame = 0;
  double rate_a = 0.0;
  double rate_b = 0.0;
  std::vector<double> features_a;
  std::vector<double> features_b;
};

struct EpisodePrediction {
  std::uint64_t episode = 0;
  std::vector<RelativePose> relative;  // frames 1..N-1
  std::vector<GlobalPose> global;      // frames 0..N-1, anchored at gt frame 0
};

struct EvalSummary {
  double t_rmse = 0.0;
  double r_rmse = 0.0;
  std::optional<double> t_drift;  // percent
  std::optional<double> r_drift;  // deg / 100 m
};

struct EvalResult {
  std::vector<EvalSummary> runs;  // one per evaluation seed
  EvalSummary mean;
  EvalSummary std;
  std::vector<EpisodePrediction> predictions;  // first evaluation seed
  std::vector<MaskRate> masks;                 // averaged over evaluation seeds
};

struct EvalOptions {
  std::optional<std::size_t> eval_seeds;  // hard fusion only; default from config
  std::optional<std::uint64_t> seed;      // base of the evaluation noise streams
};

/// Throws DimensionMismatch when the dataset does not fit the model.
EvalResult evaluate(const Model& model, const Dataset& ds, const EvalOptions& options = {});

EvalSummary summarize(std::span<const EpisodePrediction> predictions, const Dataset& ds);

// --- mask statistics -------------------------------------------------------

struct FrameAnnotation {
  std::uint64_t episode = 0;
  std::size_t frame = 0;
  std::vector<std::string> degradations;  // distinct types, sorted
  double turn_rate = 0.0;  // rad per step
  double speed = 0.0;      // m per step
};

std::vector<FrameAnnotation> frame_annotations(const Dataset& ds);

struct SelectionRow {
  std::string grouping;  // overall | degradation | turn_rate | speed
  std::string bucket;
  std::string modality;  // a | b
  double rate = 0.0;
  std::size_t frames = 0;
};

std::string degradation_bucket(const std::vector<std::string>& types);
std::string turn_bucket(double turn_rate);
std::string speed_bucket(double speed);

/// Mean selection rate per modality, overall and per bucket. Throws
/// JoinMismatch when the frame keys of logs and annotations differ.
std::vector<SelectionRow> mask_report(std::span<const MaskRate> masks, std::span<const FrameAnnotation> annotations);

// --- run directory files ---------------------------------------------------

void write_train_metrics(const std::filesystem::path& path, const TrainMetrics& m);
/// Replaces any test rows of metrics.csv, keeping the training rows.
void merge_eval_metrics(const std::filesystem::path& path, const EvalResult& r);
void write_masks(const std::filesystem::path& path, std::span<const MaskRate> masks, MaskLogMode mode);
std::vector<MaskRate> read_masks(const std::filesystem::path& path);
void write_selection_rates(const std::filesystem::path& path, std::span<const SelectionRow> rows);
void write_predictions(const std::filesystem::path& path, std::span<const EpisodePrediction> preds, const Dataset& ds);

/// evaluate + every output file under `run_dir`.
EvalResult evaluate_to_dir(const Model& model, const Dataset& ds, const std::filesystem::path& run_dir,
                           const EvalOptions& options = {}, std::optional<MaskLogMode> mask_log = std::nullopt);

}  // namespace selectfusion
