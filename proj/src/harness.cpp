#include "selectfusion/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "selectfusion/csv.hpp"
#include "selectfusion/error.hpp"

namespace selectfusion {

namespace pt = boost::property_tree;

// --- enums -------------------------------------------------------------------

std::string to_string(Task t) {
  return t == Task::RelativeOdometry ? "relative-odometry" : "global-relocalization";
}

std::string to_string(FusionChoice f) {
  switch (f) {
    case FusionChoice::NoneA: return "none-a";
    case FusionChoice::NoneB: return "none-b";
    case FusionChoice::Direct: return "direct";
    case FusionChoice::Soft: return "soft";
    case FusionChoice::Hard: return "hard";
  }
  return "unknown";
}

std::string to_string(MaskLogMode m) { return m == MaskLogMode::Frame ? "frame" : "feature"; }

Task parse_task(const std::string& s) {
  if (s == "relative-odometry") return Task::RelativeOdometry;
  if (s == "global-relocalization") return Task::GlobalRelocalization;
  throw Error(ErrorCode::InvalidConfig, "experiment.task: unknown task '" + s + "'");
}

FusionChoice parse_fusion(const std::string& s) {
  for (auto f : {FusionChoice::NoneA, FusionChoice::NoneB, FusionChoice::Direct, FusionChoice::Soft, FusionChoice::Hard}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::InvalidConfig, "experiment.fusion: unknown fusion '" + s + "'");
}

MaskLogMode parse_mask_log(const std::string& s) {
  if (s == "frame") return MaskLogMode::Frame;
  if (s == "feature") return MaskLogMode::Feature;
  throw Error(ErrorCode::InvalidConfig, "training.mask_log: expected frame or feature, got '" + s + "'");
}

// --- config ------------------------------------------------------------------

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidConfig, std::string(field) + ": " + what);
  };
  require(d >= 1, "model.d", "must be >= 1");
  require(visual_hidden >= 1, "model.visual_hidden", "must be >= 1");
  require(visual_layers >= 1, "model.visual_layers", "must be >= 1");
  require(inertial_hidden >= 1, "model.inertial_hidden", "must be >= 1");
  require(inertial_layers >= 1, "model.inertial_layers", "must be >= 1");
  require(temporal_hidden >= 1, "model.temporal_hidden", "must be >= 1");
  require(loss.lambda_global >= 0.0 && std::isfinite(loss.lambda_global), "loss.lambda_global", "must be finite and >= 0");
  require(loss.lambda_relative >= 0.0 && std::isfinite(loss.lambda_relative), "loss.lambda_relative",
          "must be finite and >= 0");
  require(batch_size >= 1, "training.batch_size", "must be >= 1");
  require(lr >= 0.0 && std::isfinite(lr), "training.lr", "must be finite and >= 0");
  require(epochs >= 1, "training.epochs", "must be >= 1");
  require(tbptt >= 1, "training.tbptt", "must be >= 1");
  require(tau_end > 0.0 && std::isfinite(tau_start) && tau_start >= tau_end, "training.tau_start",
          "need tau_start >= tau_end > 0");
  require(eval_seeds >= 1, "training.eval_seeds", "must be >= 1");
}

TemperatureSchedule ExperimentConfig::schedule() const {
  return {tau_start, tau_end, std::max(epochs - 1, 1)};
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[experiment]\n"
     << "task = " << to_string(c.task) << '\n'
     << "fusion = " << to_string(c.fusion) << '\n'
     << "seed = " << c.seed << '\n'
     << "\n[model]\n"
     << "d = " << c.d << '\n'
     << "visual_hidden = " << c.visual_hidden << '\n'
     << "visual_layers = " << c.visual_layers << '\n'
     << "inertial_hidden = " << c.inertial_hidden << '\n'
     << "inertial_layers = " << c.inertial_layers << '\n'
     << "temporal_hidden = " << c.temporal_hidden << '\n'
     << "shared_class_layer = " << (c.shared_class_layer ? "true" : "false") << '\n'
     << "\n[loss]\n"
     << "lambda_global = " << format_double(c.loss.lambda_global) << '\n'
     << "lambda_relative = " << format_double(c.loss.lambda_relative) << '\n'
     << "relative_norm = " << (c.loss.relative_norm == RelativeNorm::Squared ? "squared" : "plain") << '\n'
     << "\n[training]\n"
     << "batch_size = " << c.batch_size << '\n'
     << "lr = " << format_double(c.lr) << '\n'
     << "epochs = " << c.epochs << '\n'
     << "tbptt = " << c.tbptt << '\n'
     << "tau_start = " << format_double(c.tau_start) << '\n'
     << "tau_end = " << format_double(c.tau_end) << '\n'
     << "eval_seeds = " << c.eval_seeds << '\n'
     << "mask_log = " << to_string(c.mask_log) << '\n'
     << "\n[data]\n"
     << "dir = " << c.data_dir.string() << '\n';
  return os.str();
}

namespace {

template <typename T>
T convert(const std::string& field, const std::string& raw) {
  std::istringstream is(raw);
  T v{};
  if constexpr (std::is_same_v<T, double>) {
    try {
      return parse_double(raw);
    } catch (const Error&) {
      throw Error(ErrorCode::InvalidConfig, field + ": expected a number, got '" + raw + "'");
    }
  } else if constexpr (std::is_same_v<T, bool>) {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw Error(ErrorCode::InvalidConfig, field + ": expected true or false, got '" + raw + "'");
  } else {
    if (!raw.empty() && raw.front() == '-' && std::is_unsigned_v<T>) {
      throw Error(ErrorCode::InvalidConfig, field + ": must be non-negative, got '" + raw + "'");
    }
    if (!(is >> v) || !is.eof()) throw Error(ErrorCode::InvalidConfig, field + ": expected an integer, got '" + raw + "'");
  }
  return v;
}

ExperimentConfig config_from_tree(const pt::ptree& tree) {
  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    for (const auto& [key, node] : body) {
      const std::string field = section + "." + key;
      const std::string v = node.get_value<std::string>();
      if (field == "experiment.task") c.task = parse_task(v);
      else if (field == "experiment.fusion") c.fusion = parse_fusion(v);
      else if (field == "experiment.seed") c.seed = convert<std::uint64_t>(field, v);
      else if (field == "model.d") c.d = convert<std::size_t>(field, v);
      else if (field == "model.visual_hidden") c.visual_hidden = convert<std::size_t>(field, v);
      else if (field == "model.visual_layers") c.visual_layers = convert<std::size_t>(field, v);
      else if (field == "model.inertial_hidden") c.inertial_hidden = convert<std::size_t>(field, v);
      else if (field == "model.inertial_layers") c.inertial_layers = convert<std::size_t>(field, v);
      else if (field == "model.temporal_hidden") c.temporal_hidden = convert<std::size_t>(field, v);
      else if (field == "model.shared_class_layer") c.shared_class_layer = convert<bool>(field, v);
      else if (field == "loss.lambda_global") c.loss.lambda_global = convert<double>(field, v);
      else if (field == "loss.lambda_relative") c.loss.lambda_relative = convert<double>(field, v);
      else if (field == "loss.relative_norm") {
        if (v == "squared") c.loss.relative_norm = RelativeNorm::Squared;
        else if (v == "plain") c.loss.relative_norm = RelativeNorm::Plain;
        else throw Error(ErrorCode::InvalidConfig, field + ": expected squared or plain, got '" + v + "'");
      }
      else if (field == "training.batch_size") c.batch_size = convert<std::size_t>(field, v);
      else if (field == "training.lr") c.lr = convert<double>(field, v);
      else if (field == "training.epochs") c.epochs = convert<int>(field, v);
      else if (field == "training.tbptt") c.tbptt = convert<std::size_t>(field, v);
      else if (field == "training.tau_start") c.tau_start = convert<double>(field, v);
      else if (field == "training.tau_end") c.tau_end = convert<double>(field, v);
      else if (field == "training.eval_seeds") c.eval_seeds = convert<std::size_t>(field, v);
      else if (field == "training.mask_log") c.mask_log = parse_mask_log(v);
      else if (field == "data.dir") c.data_dir = v;
      else throw Error(ErrorCode::InvalidConfig, field + ": unknown setting");
    }
  }
  c.validate();
  return c;
}

pt::ptree parse_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }
  return tree;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& ini_text) { return config_from_tree(parse_ini(ini_text)); }

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  ExperimentConfig c = parse_experiment_config(os.str());
  if (!c.data_dir.empty() && c.data_dir.is_relative()) c.data_dir = path.parent_path() / c.data_dir;
  return c;
}

// --- model -------------------------------------------------------------------

DataDims dataset_dims(const Dataset& ds) {
  if (ds.episodes.empty()) throw Error(ErrorCode::DatasetMissing, "split '" + ds.split + "' has no episodes");
  DataDims dims;
  const auto& f0 = ds.episodes.front().frames.at(0);
  dims.obs_dim = f0.modality_a.size();
  dims.window = f0.modality_b.size();
  for (const auto& ep : ds.episodes) {
    if (ep.frames.size() < 2) throw Error(ErrorCode::BadFormat, "episode " + std::to_string(ep.id) + " has fewer than 2 frames");
    for (const auto& f : ep.frames) {
      if (f.modality_a.size() != dims.obs_dim || f.modality_b.size() != dims.window) {
        throw Error(ErrorCode::DimensionMismatch, "episode " + std::to_string(ep.id) + " has inconsistent frame sizes");
      }
    }
  }
  return dims;
}

std::size_t Model::fused_dim() const {
  return (config.fusion == FusionChoice::NoneA || config.fusion == FusionChoice::NoneB) ? config.d : 2 * config.d;
}

Model build_model(const ExperimentConfig& cfg, const DataDims& dims) {
  cfg.validate();
  if (dims.obs_dim == 0 || dims.window == 0) throw Error(ErrorCode::InvalidConfig, "data dims must be positive");
  Model m;
  m.config = cfg;
  m.dims = dims;
  m.encoder_a = {"encoder.a", dims.obs_dim, std::vector<std::size_t>(cfg.visual_layers, cfg.visual_hidden), cfg.d, false};
  m.encoder_b = {"encoder.b", 6, cfg.inertial_hidden, cfg.inertial_layers, cfg.d};
  m.fusion = {"fusion", cfg.d, cfg.shared_class_layer};
  m.temporal = {"temporal", m.fused_dim(), cfg.temporal_hidden, m.output_dim()};

  Rng rng = make_rng(cfg.seed, 0x1417);
  m.params.add("input.a_scale", {dims.obs_dim}, std::vector<double>(dims.obs_dim, 1.0), false);
  m.params.add("input.b_scale", {6}, std::vector<double>(6, 1.0), false);
  if (m.uses_a()) m.encoder_a.declare(m.params, rng);
  if (m.uses_b()) m.encoder_b.declare(m.params, rng);
  switch (cfg.fusion) {
    case FusionChoice::Soft: m.fusion.declare(FusionKind::Soft, m.params, rng); break;
    case FusionChoice::Hard: m.fusion.declare(FusionKind::Hard, m.params, rng); break;
    default: break;
  }
  m.temporal.declare(m.params, rng);
  return m;
}

void fit_input_scales(Model& model, const Dataset& train) {
  const std::size_t da = model.dims.obs_dim;
  std::vector<double> sa(da, 0.0), sb(6, 0.0);
  double na = 0.0, nb = 0.0;
  for (const auto& ep : train.episodes) {
    for (const auto& f : ep.frames) {
      if (f.modality_a.size() != da) throw Error(ErrorCode::DimensionMismatch, "modality a size differs from the model");
      if (f.valid_a) {
        for (std::size_t i = 0; i < da; ++i) sa[i] += f.modality_a[i] * f.modality_a[i];
        na += 1.0;
      }
      if (f.valid_b) {
        for (const auto& s : f.modality_b) {
          for (std::size_t i = 0; i < 6; ++i) sb[i] += s[i] * s[i];
          nb += 1.0;
        }
      }
    }
  }
  auto finish = [](std::vector<double>& acc, double n) {
    for (double& v : acc) {
      v = n > 0.0 ? std::sqrt(v / n) : 1.0;
      if (!(v > 1e-6)) v = 1.0;
    }
  };
  finish(sa, na);
  finish(sb, nb);
  model.params.at("input.a_scale").value = sa;
  model.params.at("input.b_scale").value = sb;
}

namespace {

Tensor concat_rows(const std::vector<Tensor>& parts) {
  Tensor out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat(out, parts[i], 0);
  return out;
}

}  // namespace

SequenceOutput forward_sequence(const Model& model, const Bindings& p, std::span<const Episode* const> batch,
                                std::size_t first, std::size_t last, HiddenState& state, const ForwardOptions& opts) {
  const std::size_t b = batch.size();
  const std::size_t steps = last - first;
  const std::size_t rows = steps * b;
  const std::size_t da = model.dims.obs_dim;
  const std::size_t m = model.dims.window;
  if (b == 0 || steps == 0) throw Error(ErrorCode::EmptyWindow, "empty batch or time range");

  Tensor a1, a2;
  if (model.uses_a()) {
    std::vector<double> xa(rows * da);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t e = 0; e < b; ++e) {
        const auto& f = batch[e]->frames.at(first + t + 1);
        if (f.modality_a.size() != da) throw Error(ErrorCode::DimensionMismatch, "modality a size differs from the model");
        std::copy(f.modality_a.begin(), f.modality_a.end(), xa.begin() + static_cast<std::ptrdiff_t>((t * b + e) * da));
      }
    }
    a1 = model.encoder_a.forward(p, div(Tensor({rows, da}, std::move(xa)), p["input.a_scale"]));
  }
  if (model.uses_b()) {
    std::vector<Tensor> window;
    window.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<double> xb(rows * 6);
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t e = 0; e < b; ++e) {
          const auto& f = batch[e]->frames.at(first + t + 1);
          if (f.modality_b.size() != m) throw Error(ErrorCode::DimensionMismatch, "inertial window differs from the model");
          std::copy(f.modality_b[j].begin(), f.modality_b[j].end(), xb.begin() + static_cast<std::ptrdiff_t>((t * b + e) * 6));
        }
      }
      window.push_back(div(Tensor({rows, 6}, std::move(xb)), p["input.b_scale"]));
    }
    a2 = model.encoder_b.forward(p, window);
  }

  SequenceOutput out;
  Tensor z;
  switch (model.config.fusion) {
    case FusionChoice::NoneA: z = a1; break;
    case FusionChoice::NoneB: z = a2; break;
    case FusionChoice::Direct: {
      auto f = fuse_direct(a1, a2);
      z = f.z;
      out.mask = f.mask;
      break;
    }
    case FusionChoice::Soft: {
      auto f = fuse_soft(a1, a2, p, model.fusion);
      z = f.z;
      out.mask = f.mask;
      break;
    }
    case FusionChoice::Hard: {
      if (opts.rng == nullptr) throw Error(ErrorCode::InvalidConfig, "hard fusion needs a noise generator");
      auto f = fuse_hard(a1, a2, p, model.fusion, *opts.rng, opts.tau, {opts.hard_gradient, std::nullopt});
      z = f.z;
      out.mask = f.mask;
      break;
    }
  }

  out.outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    out.outputs.push_back(model.temporal.step(p, slice(z, t * b, (t + 1) * b, 0), state));
  }
  return out;
}

Tensor sequence_targets(const Model& model, std::span<const Episode* const> batch, std::size_t first, std::size_t last) {
  const std::size_t b = batch.size();
  const std::size_t width = model.output_dim();
  std::vector<double> values;
  values.reserve((last - first) * b * width);
  for (std::size_t t = first; t < last; ++t) {
    for (const Episode* ep : batch) {
      const auto v = model.config.task == Task::RelativeOdometry ? ep->gt_relative.at(t).to_vector()
                                                                 : ep->gt_global.at(t + 1).to_vector();
      values.insert(values.end(), v.begin(), v.end());
    }
  }
  return Tensor({(last - first) * b, width}, std::move(values));
}

Tensor task_loss(const Model& model, const Tensor& pred, const Tensor& target) {
  const auto& l = model.config.loss;
  if (model.config.task == Task::RelativeOdometry) return relative_pose_loss(pred, target, l.lambda_relative, l.relative_norm);
  return global_pose_loss(pred, target, l.lambda_global);
}

// --- training ----------------------------------------------------------------

namespace {

std::size_t sequence_steps(const Episode& ep) { return ep.frames.size() - 1; }

/// Splits an ordered episode list into batches of equal sequence length.
std::vector<std::vector<const Episode*>> make_batches(const std::vector<const Episode*>& order, std::size_t batch_size) {
  std::vector<std::vector<const Episode*>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::map<std::size_t, std::vector<const Episode*>> by_len;
    for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) {
      by_len[sequence_steps(*order[j])].push_back(order[j]);
    }
    for (auto& [len, group] : by_len) out.push_back(std::move(group));
  }
  return out;
}

std::string checkpoint_header(const Model& m) {
  return to_ini(m.config) + "\n[dims]\nobs_dim = " + std::to_string(m.dims.obs_dim) +
         "\nwindow = " + std::to_string(m.dims.window) + "\n";
}

void log_line(const TrainOptions& opt, std::ostream* file, const std::string& line) {
  if (opt.log != nullptr && !opt.quiet) *opt.log << line << '\n';
  if (file != nullptr) *file << line << '\n';
}

TrainResult train_impl(const ExperimentConfig& cfg, const Dataset& train_set, const Dataset* val,
                       const std::optional<std::filesystem::path>& run_dir, const TrainOptions& options) {
  cfg.validate();
  const DataDims dims = dataset_dims(train_set);
  if (val != nullptr && !val->episodes.empty()) {
    const DataDims vd = dataset_dims(*val);
    if (vd.obs_dim != dims.obs_dim || vd.window != dims.window) {
      throw Error(ErrorCode::DimensionMismatch, "validation split dims differ from training split");
    }
  }
  CheckedModeScope unchecked(false);

  TrainResult result{build_model(cfg, dims), {}};
  Model& model = result.model;
  fit_input_scales(model, train_set);

  std::unique_ptr<std::ofstream> log_file;
  if (run_dir) {
    std::filesystem::create_directories(*run_dir / "checkpoints");
    std::ofstream(*run_dir / "config.ini", std::ios::trunc) << to_ini(cfg);
    log_file = std::make_unique<std::ofstream>(*run_dir / "train.log", std::ios::trunc);
  }

  Rng shuffle_rng = make_rng(cfg.seed, 0x5AFF);
  Rng noise_rng = make_rng(cfg.seed, 0x7A11);
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  const TemperatureSchedule schedule = cfg.schedule();

  std::vector<const Episode*> order;
  for (const auto& ep : train_set.episodes) order.push_back(&ep);

  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double tau = anneal(epoch, schedule);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const auto batches = make_batches(order, cfg.batch_size);

    double loss_sum = 0.0;
    double frames = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      const std::size_t steps = sequence_steps(*batch.front());
      HiddenState state = HiddenState::zeros(batch.size(), cfg.temporal_hidden);
      for (std::size_t first = 0; first < steps; first += cfg.tbptt) {
        const std::size_t last = std::min(steps, first + cfg.tbptt);
        Tape tape;
        TapeScope scope(tape);
        const Bindings p = model.params.bind(&tape);
        ForwardOptions fo{tau, &noise_rng, HardGradient::StraightThrough};
        SequenceOutput seq = forward_sequence(model, p, batch, first, last, state, fo);
        const Tensor loss = task_loss(model, concat_rows(seq.outputs), sequence_targets(model, batch, first, last));
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw Error(ErrorCode::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                                   std::to_string(bi) + ", frames " + std::to_string(first + 1) + ".." +
                                                   std::to_string(last));
        }
        tape.backward(loss);
        adam_step(model.params, model.params.gradients(tape, p), adam);
        state = state.detach();
        const double rows = static_cast<double>((last - first) * batch.size());
        loss_sum += value * rows;
        frames += rows;
      }
    }
    const double epoch_loss = loss_sum / frames;
    result.metrics.train_loss.push_back(epoch_loss);
    result.metrics.tau.push_back(tau);

    double selection = epoch_loss;
    std::string line = "epoch " + std::to_string(epoch) + " tau " + format_double(tau) + " loss " + format_double(epoch_loss);
    if (val != nullptr && !val->episodes.empty()) {
      Rng val_rng = make_rng(cfg.seed, 0x7A1D);
      const double vl = dataset_loss(model, *val, cfg.tau_end, val_rng);
      result.metrics.val_loss.push_back(vl);
      selection = vl;
      line += " val " + format_double(vl);
    }
    if (selection < best) {
      best = selection;
      result.metrics.best_epoch = epoch;
      if (run_dir) save_model(*run_dir / "checkpoints" / "best.ckpt", model);
    }
    log_line(options, log_file.get(), line);
  }

  if (run_dir) {
    save_model(*run_dir / "checkpoints" / "final.ckpt", model);
    write_train_metrics(*run_dir / "metrics.csv", result.metrics);
  }
  return result;
}

}  // namespace

TrainResult train_on(const ExperimentConfig& cfg, const Dataset& train_set, const Dataset* val,
                     const TrainOptions& options) {
  return train_impl(cfg, train_set, val, std::nullopt, options);
}

TrainResult train(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& run_dir,
                  const TrainOptions& options) {
  cfg.validate();
  if (cfg.data_dir.empty()) throw Error(ErrorCode::DatasetMissing, "no dataset directory configured (data.dir)");
  ExperimentConfig resolved = cfg;
  resolved.data_dir = std::filesystem::absolute(cfg.data_dir).lexically_normal();
  const Manifest manifest = read_manifest(cfg.data_dir);
  check_disjoint(manifest);
  const Dataset train_set = load_split(cfg.data_dir, "train");
  std::optional<Dataset> val;
  auto it = manifest.ids.find("val");
  if (it != manifest.ids.end() && !it->second.empty()) val = load_split(cfg.data_dir, "val");
  return train_impl(resolved, train_set, val ? &*val : nullptr, run_dir, options);
}

namespace {

std::vector<std::vector<const Episode*>> length_groups(const Dataset& ds, std::size_t max_batch) {
  std::vector<const Episode*> order;
  for (const auto& ep : ds.episodes) order.push_back(&ep);
  std::map<std::size_t, std::vector<const Episode*>> by_len;
  for (const Episode* ep : order) by_len[sequence_steps(*ep)].push_back(ep);
  std::vector<std::vector<const Episode*>> out;
  for (auto& [len, group] : by_len) {
    for (std::size_t i = 0; i < group.size(); i += max_batch) {
      out.emplace_back(group.begin() + static_cast<std::ptrdiff_t>(i),
                       group.begin() + static_cast<std::ptrdiff_t>(std::min(group.size(), i + max_batch)));
    }
  }
  return out;
}

}  // namespace

double dataset_loss(const Model& model, const Dataset& ds, double tau, Rng& rng) {
  CheckedModeScope unchecked(false);
  const Bindings p = model.params.bind(nullptr);
  double sum = 0.0;
  double frames = 0.0;
  for (const auto& batch : length_groups(ds, 64)) {
    const std::size_t steps = sequence_steps(*batch.front());
    HiddenState state = HiddenState::zeros(batch.size(), model.config.temporal_hidden);
    SequenceOutput seq = forward_sequence(model, p, batch, 0, steps, state, {tau, &rng, HardGradient::StraightThrough});
    const double rows = static_cast<double>(steps * batch.size());
    sum += task_loss(model, concat_rows(seq.outputs), sequence_targets(model, batch, 0, steps)).item() * rows;
    frames += rows;
  }
  return sum / frames;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  save_checkpoint(path, {checkpoint_header(model), model.params});
}

Model load_model(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  pt::ptree tree = parse_ini(ckpt.header);
  DataDims dims;
  auto dims_node = tree.get_child_optional("dims");
  if (!dims_node) throw Error(ErrorCode::BadFormat, path.string() + ": checkpoint header lacks [dims]");
  dims.obs_dim = convert<std::size_t>("dims.obs_dim", dims_node->get<std::string>("obs_dim"));
  dims.window = convert<std::size_t>("dims.window", dims_node->get<std::string>("window"));
  tree.erase("dims");
  Model model = build_model(config_from_tree(tree), dims);

  const auto& want = model.params.entries();
  const auto& have = ckpt.store.entries();
  if (want.size() != have.size()) {
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": checkpoint has " + std::to_string(have.size()) +
                                                  " tensors, model expects " + std::to_string(want.size()));
  }
  for (const auto& [name, param] : want) {
    auto it = have.find(name);
    if (it == have.end()) throw Error(ErrorCode::DimensionMismatch, path.string() + ": missing tensor '" + name + "'");
    if (it->second.shape != param.shape) {
      throw Error(ErrorCode::DimensionMismatch, path.string() + ": tensor '" + name + "' has shape " +
                                                    shape_str(it->second.shape) + ", model expects " + shape_str(param.shape));
    }
  }
  model.params = std::move(ckpt.store);
  return model;
}

// --- evaluation ----------------------------------------------------------------

namespace {

GlobalPose pose_from_output(std::span<const double> v) {
  GlobalPose g;
  g.p = {v[0], v[1], v[2]};
  Eigen::Quaterniond q(v[3], v[4], v[5], v[6]);
  g.q = q.norm() > 0.0 ? q.normalized() : Eigen::Quaterniond::Identity();
  return g;
}

double mean_of(std::span<const double> v, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

struct SingleEval {
  std::vector<EpisodePrediction> predictions;
  std::vector<MaskRate> masks;
};

SingleEval run_once(const Model& model, const Dataset& ds, Rng* rng) {
  const Bindings p = model.params.bind(nullptr);
  const std::size_t d = model.config.d;
  std::map<std::uint64_t, EpisodePrediction> preds;
  std::map<std::pair<std::uint64_t, std::size_t>, MaskRate> masks;

  for (const auto& batch : length_groups(ds, 64)) {
    const std::size_t steps = sequence_steps(*batch.front());
    const std::size_t b = batch.size();
    HiddenState state = HiddenState::zeros(b, model.config.temporal_hidden);
    SequenceOutput seq =
        forward_sequence(model, p, batch, 0, steps, state, {model.config.tau_end, rng, HardGradient::StraightThrough});

    for (std::size_t e = 0; e < b; ++e) {
      const Episode& ep = *batch[e];
      EpisodePrediction pred;
      pred.episode = ep.id;
      const std::size_t width = model.output_dim();
      if (model.config.task == Task::RelativeOdometry) {
        for (std::size_t t = 0; t < steps; ++t) {
          auto row = seq.outputs[t].data().subspan(e * width, width);
          pred.relative.push_back(RelativePose::from_vector(row));
        }
        pred.global = integrate_relative(pred.relative, ep.gt_global.front());
      } else {
        pred.global.push_back(ep.gt_global.front());
        for (std::size_t t = 0; t < steps; ++t) {
          pred.global.push_back(pose_from_output(seq.outputs[t].data().subspan(e * width, width)));
        }
        for (std::size_t t = 0; t < steps; ++t) pred.relative.push_back(relative_between(pred.global[t], pred.global[t + 1]));
      }
      preds.emplace(ep.id, std::move(pred));

      if (seq.mask) {
        const auto s1 = seq.mask->s1.data();
        const auto s2 = seq.mask->s2.data();
        for (std::size_t t = 0; t < steps; ++t) {
          const std::size_t row = t * b + e;
          MaskRate r;
          r.episode = ep.id;
          r.frame = t + 1;
          r.features_a.assign(s1.begin() + static_cast<std::ptrdiff_t>(row * d),
                              s1.begin() + static_cast<std::ptrdiff_t>((row + 1) * d));
          r.features_b.assign(s2.begin() + static_cast<std::ptrdiff_t>(row * d),
                              s2.begin() + static_cast<std::ptrdiff_t>((row + 1) * d));
          r.rate_a = mean_of(r.features_a, 0, d);
          r.rate_b = mean_of(r.features_b, 0, d);
          masks.emplace(std::make_pair(ep.id, t + 1), std::move(r));
        }
      }
    }
  }
  SingleEval out;
  for (auto& [id, pr] : preds) out.predictions.push_back(std::move(pr));
  for (auto& [key, m] : masks) out.masks.push_back(std::move(m));
  return out;
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

EvalSummary summarize(std::span<const EpisodePrediction> predictions, const Dataset& ds) {
  std::map<std::uint64_t, const Episode*> by_id;
  for (const auto& ep : ds.episodes) by_id[ep.id] = &ep;
  MetricsAccumulator acc;
  DriftTally tally;
  for (const auto& pred : predictions) {
    auto it = by_id.find(pred.episode);
    if (it == by_id.end()) throw Error(ErrorCode::JoinMismatch, "prediction for unknown episode " + std::to_string(pred.episode));
    const Episode& ep = *it->second;
    if (pred.relative.size() != ep.gt_relative.size()) {
      throw Error(ErrorCode::ShapeMismatch, "episode " + std::to_string(ep.id) + ": prediction length differs");
    }
    for (std::size_t t = 0; t < pred.relative.size(); ++t) acc.add(pred.relative[t], ep.gt_relative[t]);
    tally.merge(segment_drift_tally(ep.gt_global, pred.global));
  }
  EvalSummary s;
  const RmsePair rmse = relative_rmse(acc);
  s.t_rmse = rmse.translation_m;
  s.r_rmse = rmse.rotation_deg;
  if (tally.segments() > 0) {
    const DriftResult dr = drift_result(tally);
    s.t_drift = dr.translation_pct;
    s.r_drift = dr.rotation_deg_per_100m;
  }
  return s;
}

EvalResult evaluate(const Model& model, const Dataset& ds, const EvalOptions& options) {
  const DataDims dims = dataset_dims(ds);
  if (dims.obs_dim != model.dims.obs_dim || dims.window != model.dims.window) {
    throw Error(ErrorCode::DimensionMismatch, "dataset has D_A=" + std::to_string(dims.obs_dim) + ", m=" +
                                                  std::to_string(dims.window) + "; model expects D_A=" +
                                                  std::to_string(model.dims.obs_dim) + ", m=" +
                                                  std::to_string(model.dims.window));
  }
  CheckedModeScope unchecked(false);
  const bool stochastic = model.config.fusion == FusionChoice::Hard;
  const std::size_t runs = stochastic ? options.eval_seeds.value_or(model.config.eval_seeds) : 1;
  if (runs == 0) throw Error(ErrorCode::InvalidConfig, "eval_seeds must be >= 1");
  const std::uint64_t base = options.seed.value_or(model.config.seed);

  EvalResult result;
  for (std::size_t k = 0; k < runs; ++k) {
    Rng rng = make_rng(base, 0xE7A10000ULL + k);
    SingleEval once = run_once(model, ds, &rng);
    result.runs.push_back(summarize(once.predictions, ds));
    if (k == 0) {
      result.predictions = std::move(once.predictions);
      result.masks = std::move(once.masks);
    } else {
      for (std::size_t i = 0; i < result.masks.size(); ++i) {
        auto& dst = result.masks[i];
        const auto& src = once.masks[i];
        dst.rate_a += src.rate_a;
        dst.rate_b += src.rate_b;
        for (std::size_t j = 0; j < dst.features_a.size(); ++j) dst.features_a[j] += src.features_a[j];
        for (std::size_t j = 0; j < dst.features_b.size(); ++j) dst.features_b[j] += src.features_b[j];
      }
    }
  }
  if (runs > 1) {
    const double inv = 1.0 / static_cast<double>(runs);
    for (auto& m : result.masks) {
      m.rate_a *= inv;
      m.rate_b *= inv;
      for (double& v : m.features_a) v *= inv;
      for (double& v : m.features_b) v *= inv;
    }
  }

  auto collect = [&](auto getter) {
    std::vector<double> v;
    for (const auto& r : result.runs) v.push_back(getter(r));
    return v;
  };
  const auto t = collect([](const EvalSummary& s) { return s.t_rmse; });
  const auto r = collect([](const EvalSummary& s) { return s.r_rmse; });
  const double n = static_cast<double>(runs);
  result.mean.t_rmse = std::accumulate(t.begin(), t.end(), 0.0) / n;
  result.mean.r_rmse = std::accumulate(r.begin(), r.end(), 0.0) / n;
  result.std.t_rmse = sample_std(t);
  result.std.r_rmse = sample_std(r);
  if (result.runs.front().t_drift) {
    const auto td = collect([](const EvalSummary& s) { return *s.t_drift; });
    const auto rd = collect([](const EvalSummary& s) { return *s.r_drift; });
    result.mean.t_drift = std::accumulate(td.begin(), td.end(), 0.0) / n;
    result.mean.r_drift = std::accumulate(rd.begin(), rd.end(), 0.0) / n;
    result.std.t_drift = sample_std(td);
    result.std.r_drift = sample_std(rd);
  }
  return result;
}

// --- mask statistics -------------------------------------------------------------

std::vector<FrameAnnotation> frame_annotations(const Dataset& ds) {
  std::vector<FrameAnnotation> out;
  for (const auto& ep : ds.episodes) {
    for (std::size_t f = 1; f < ep.frames.size(); ++f) {
      FrameAnnotation a;
      a.episode = ep.id;
      a.frame = f;
      std::set<std::string> types;
      for (const auto& ev : ep.frames[f].degradations) types.insert(ev.type);
      a.degradations.assign(types.begin(), types.end());
      const auto& rel = ep.gt_relative.at(f - 1);
      a.turn_rate = std::abs(rel.r.z());
      a.speed = rel.p.norm();
      out.push_back(std::move(a));
    }
  }
  return out;
}

std::string degradation_bucket(const std::vector<std::string>& types) {
  if (types.empty()) return "clean";
  if (types.size() == 1) return types.front();
  return "multiple";
}

std::string turn_bucket(double turn_rate) {
  if (turn_rate < 0.05) return "0.00-0.05";
  if (turn_rate < 0.15) return "0.05-0.15";
  if (turn_rate < 0.30) return "0.15-0.30";
  return ">=0.30";
}

std::string speed_bucket(double speed) {
  const int k = std::clamp(static_cast<int>(std::floor(speed / 0.5)), 0, 3);
  static const char* labels[] = {"0.0-0.5", "0.5-1.0", "1.0-1.5", "1.5-2.0"};
  return labels[k];
}

std::vector<SelectionRow> mask_report(std::span<const MaskRate> masks, std::span<const FrameAnnotation> annotations) {
  using Key = std::pair<std::uint64_t, std::size_t>;
  std::map<Key, const FrameAnnotation*> ann;
  for (const auto& a : annotations) {
    if (!ann.emplace(Key{a.episode, a.frame}, &a).second) {
      throw Error(ErrorCode::JoinMismatch, "duplicate annotation for episode " + std::to_string(a.episode) + " frame " +
                                               std::to_string(a.frame));
    }
  }
  std::set<Key> seen;
  for (const auto& m : masks) {
    const Key key{m.episode, m.frame};
    if (!ann.count(key)) {
      throw Error(ErrorCode::JoinMismatch, "mask for episode " + std::to_string(m.episode) + " frame " +
                                               std::to_string(m.frame) + " has no annotation");
    }
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::JoinMismatch, "duplicate mask for episode " + std::to_string(m.episode) + " frame " +
                                               std::to_string(m.frame));
    }
  }
  if (seen.size() != ann.size()) {
    for (const auto& [key, a] : ann) {
      if (!seen.count(key)) {
        throw Error(ErrorCode::JoinMismatch, "annotation for episode " + std::to_string(key.first) + " frame " +
                                                 std::to_string(key.second) + " has no mask");
      }
    }
  }

  struct Acc {
    double a = 0.0;
    double b = 0.0;
    std::size_t n = 0;
  };
  const std::vector<std::string> groupings = {"overall", "degradation", "turn_rate", "speed"};
  std::map<std::string, std::map<std::string, Acc>> acc;
  for (const auto& m : masks) {
    const FrameAnnotation& a = *ann.at({m.episode, m.frame});
    const std::pair<std::string, std::string> keys[] = {{"overall", "all"},
                                                        {"degradation", degradation_bucket(a.degradations)},
                                                        {"turn_rate", turn_bucket(a.turn_rate)},
                                                        {"speed", speed_bucket(a.speed)}};
    for (const auto& [g, bucket] : keys) {
      Acc& x = acc[g][bucket];
      x.a += m.rate_a;
      x.b += m.rate_b;
      ++x.n;
    }
  }
  std::vector<SelectionRow> rows;
  for (const auto& g : groupings) {
    for (const auto& [bucket, x] : acc[g]) {
      const double n = static_cast<double>(x.n);
      rows.push_back({g, bucket, "a", x.a / n, x.n});
      rows.push_back({g, bucket, "b", x.b / n, x.n});
    }
  }
  return rows;
}

// --- run directory files -----------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

constexpr const char* kMetricsHeader = "phase,epoch,metric,value";

}  // namespace

void write_train_metrics(const std::filesystem::path& path, const TrainMetrics& m) {
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (std::size_t e = 0; e < m.train_loss.size(); ++e) {
    out << "train," << e << ",loss," << format_double(m.train_loss[e]) << '\n';
    out << "train," << e << ",tau," << format_double(m.tau[e]) << '\n';
    if (e < m.val_loss.size()) out << "val," << e << ",loss," << format_double(m.val_loss[e]) << '\n';
  }
  if (m.best_epoch >= 0) out << "train,,best_epoch," << m.best_epoch << '\n';
}

void merge_eval_metrics(const std::filesystem::path& path, const EvalResult& r) {
  std::vector<std::string> kept;
  if (std::filesystem::exists(path)) {
    const CsvTable table = read_csv(path);
    const std::size_t phase = table.column("phase");
    for (const auto& row : table.rows) {
      if (row.at(phase) == "test") continue;
      std::string line;
      for (std::size_t i = 0; i < row.size(); ++i) line += (i ? "," : "") + row[i];
      kept.push_back(line);
    }
  }
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& line : kept) out << line << '\n';
  auto emit = [&](const char* name, double v) { out << "test,," << name << ',' << format_double(v) << '\n'; };
  emit("t_rmse", r.mean.t_rmse);
  emit("t_rmse_std", r.std.t_rmse);
  emit("r_rmse", r.mean.r_rmse);
  emit("r_rmse_std", r.std.r_rmse);
  if (r.mean.t_drift) {
    emit("t_drift", *r.mean.t_drift);
    emit("t_drift_std", *r.std.t_drift);
    emit("r_drift", *r.mean.r_drift);
    emit("r_drift_std", *r.std.r_drift);
  }
  out << "test,,eval_runs," << r.runs.size() << '\n';
}

void write_masks(const std::filesystem::path& path, std::span<const MaskRate> masks, MaskLogMode mode) {
  auto out = open_out(path);
  if (mode == MaskLogMode::Frame) {
    out << "episode,frame,modality,rate\n";
    for (const auto& m : masks) {
      out << m.episode << ',' << m.frame << ",a," << format_double(m.rate_a) << '\n';
      out << m.episode << ',' << m.frame << ",b," << format_double(m.rate_b) << '\n';
    }
  } else {
    out << "episode,frame,modality,feature,value\n";
    for (const auto& m : masks) {
      for (std::size_t i = 0; i < m.features_a.size(); ++i) {
        out << m.episode << ',' << m.frame << ",a," << i << ',' << format_double(m.features_a[i]) << '\n';
      }
      for (std::size_t i = 0; i < m.features_b.size(); ++i) {
        out << m.episode << ',' << m.frame << ",b," << i << ',' << format_double(m.features_b[i]) << '\n';
      }
    }
  }
}

std::vector<MaskRate> read_masks(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const std::size_t ce = table.column("episode");
  const std::size_t cf = table.column("frame");
  const std::size_t cm = table.column("modality");
  const bool per_feature = std::find(table.header.begin(), table.header.end(), "feature") != table.header.end();
  const std::size_t cv = table.column(per_feature ? "value" : "rate");
  std::map<std::pair<std::uint64_t, std::size_t>, MaskRate> rows;
  for (const auto& row : table.rows) {
    const auto ep = static_cast<std::uint64_t>(std::stoull(row.at(ce)));
    const auto fr = static_cast<std::size_t>(std::stoull(row.at(cf)));
    MaskRate& m = rows[{ep, fr}];
    m.episode = ep;
    m.frame = fr;
    const double v = parse_double(row.at(cv));
    const std::string& mod = row.at(cm);
    if (mod != "a" && mod != "b") throw Error(ErrorCode::BadFormat, path.string() + ": modality must be a or b");
    if (per_feature) {
      (mod == "a" ? m.features_a : m.features_b).push_back(v);
    } else {
      (mod == "a" ? m.rate_a : m.rate_b) = v;
    }
  }
  std::vector<MaskRate> out;
  for (auto& [key, m] : rows) {
    if (per_feature) {
      if (!m.features_a.empty()) m.rate_a = mean_of(m.features_a, 0, m.features_a.size());
      if (!m.features_b.empty()) m.rate_b = mean_of(m.features_b, 0, m.features_b.size());
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_selection_rates(const std::filesystem::path& path, std::span<const SelectionRow> rows) {
  auto out = open_out(path);
  out << "grouping,bucket,modality,rate,frames\n";
  for (const auto& r : rows) {
    out << r.grouping << ',' << r.bucket << ',' << r.modality << ',' << format_double(r.rate) << ',' << r.frames << '\n';
  }
}

void write_predictions(const std::filesystem::path& path, std::span<const EpisodePrediction> preds, const Dataset& ds) {
  std::map<std::uint64_t, const Episode*> by_id;
  for (const auto& ep : ds.episodes) by_id[ep.id] = &ep;
  auto out = open_out(path);
  out << "episode,frame,tx,ty,tz,roll,pitch,yaw,gt_tx,gt_ty,gt_tz,gt_roll,gt_pitch,gt_yaw\n";
  for (const auto& pred : preds) {
    const Episode& ep = *by_id.at(pred.episode);
    for (std::size_t t = 0; t < pred.relative.size(); ++t) {
      out << pred.episode << ',' << t + 1;
      for (double v : pred.relative[t].to_vector()) out << ',' << format_double(v);
      for (double v : ep.gt_relative[t].to_vector()) out << ',' << format_double(v);
      out << '\n';
    }
  }
}

EvalResult evaluate_to_dir(const Model& model, const Dataset& ds, const std::filesystem::path& run_dir,
                           const EvalOptions& options, std::optional<MaskLogMode> mask_log) {
  EvalResult r = evaluate(model, ds, options);
  std::filesystem::create_directories(run_dir / "trajectories");
  merge_eval_metrics(run_dir / "metrics.csv", r);
  write_masks(run_dir / "masks.csv", r.masks, mask_log.value_or(model.config.mask_log));
  if (!r.masks.empty()) {
    const auto rows = mask_report(r.masks, frame_annotations(ds));
    write_selection_rates(run_dir / "selection_rates.csv", rows);
  } else {
    write_selection_rates(run_dir / "selection_rates.csv", {});
  }
  write_predictions(run_dir / "predictions.csv", r.predictions, ds);
  std::map<std::uint64_t, const Episode*> by_id;
  for (const auto& ep : ds.episodes) by_id[ep.id] = &ep;
  for (const auto& pred : r.predictions) {
    const std::string stem = "episode_" + std::to_string(pred.episode);
    write_global_trajectory(run_dir / "trajectories" / (stem + "_gt.csv"), by_id.at(pred.episode)->gt_global);
    write_global_trajectory(run_dir / "trajectories" / (stem + "_pred.csv"), pred.global);
  }
  return r;
}

}  // namespace selectfusion
