// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "selectfusion/cli.hpp"
#include "selectfusion/degradation.hpp"
#include "selectfusion/fusion.hpp"
#include "selectfusion/geometry.hpp"
#include "selectfusion/harness.hpp"
#include "selectfusion/kernels.hpp"
#include "selectfusion/nn.hpp"
#include "selectfusion/simulator.hpp"

using namespace selectfusion;
using namespace selectfusion::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

fs::path g_work;

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

// --- 1: gradients ------------------------------------------------------------

// Tracks the largest absolute error; relative errors only matter above the
// 1e-8 floor and are folded into r.ok.
void track(Outcome& o, const std::string& name, const GradCheck& r, double& worst) {
  worst = std::max(worst, r.max_abs);
  o.require(r.ok, name + " " + r.worst);
}

GradCheck check_store(const ParameterStore& store, const std::vector<Tensor>& extra,
                      const std::function<Tensor(const Bindings&, const std::vector<Tensor>&)>& f) {
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    names.push_back(name);
    inputs.emplace_back(p.shape, p.value);
  }
  const std::size_t n = names.size();
  inputs.insert(inputs.end(), extra.begin(), extra.end());
  const Bindings constants = store.bind(nullptr);
  return check_gradients(
      [&](const std::vector<Tensor>& xs) {
        Bindings b = constants;
        for (std::size_t i = 0; i < n; ++i) b.set(names[i], xs[i]);
        return f(b, std::vector<Tensor>(xs.begin() + static_cast<std::ptrdiff_t>(n), xs.end()));
      },
      inputs);
}

Outcome criterion_gradients() {
  Outcome o;
  Rng rng = make_rng(101);
  double worst = 0.0;
  std::size_t checks = 0;

  {
    ParameterStore s;
    Linear lin{"lin", 5, 3};
    lin.declare(s, rng);
    track(o, "linear", check_store(s, {random_tensor({4, 5}, rng)}, [&](const Bindings& p, const auto& x) {
            return weighted(lin.forward(p, x[0]));
          }), worst);
    ++checks;
  }
  {
    ParameterStore s;
    FeedForwardEncoder enc{"enc", 6, {7, 5}, 4, true};
    enc.declare(s, rng);
    track(o, "feed-forward encoder", check_store(s, {random_tensor({3, 6}, rng)}, [&](const Bindings& p, const auto& x) {
            return weighted(enc.forward(p, x[0]));
          }), worst);
    ++checks;
  }
  {
    ParameterStore s;
    LstmCell cell{"cell", 4, 5};
    cell.declare(s, rng);
    track(o, "lstm cell",
          check_store(s, {random_tensor({2, 4}, rng), random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)},
                      [&](const Bindings& p, const auto& x) {
                        const HiddenState next = cell.step(p, x[0], {x[1], x[2]});
                        return add(weighted(next.h), weighted(scale(next.c, 0.3)));
                      }),
          worst);
    ++checks;
  }
  {
    ParameterStore s;
    BiLstmEncoder bi{"bi", 6, 4, 2, 5};
    bi.declare(s, rng);
    std::vector<Tensor> window;
    for (int t = 0; t < 10; ++t) window.push_back(random_tensor({2, 6}, rng));
    track(o, "bidirectional lstm", check_store(s, window, [&](const Bindings& p, const auto& x) {
            return weighted(bi.forward(p, x));
          }), worst);
    ++checks;
  }
  {
    ParameterStore s;
    TemporalModel tm{"tm", 5, 6, 6};
    tm.declare(s, rng);
    track(o, "temporal model", check_store(s, {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)},
                                           [&](const Bindings& p, const auto& x) {
                                             HiddenState st = HiddenState::zeros(2, 6);
                                             const Tensor y0 = tm.step(p, x[0], st);
                                             return add(weighted(y0), weighted(tm.step(p, x[1], st)));
                                           }),
          worst);
    ++checks;
  }
  {
    const FusionParams cfg{"fusion", 4};
    ParameterStore s;
    cfg.declare(FusionKind::Soft, s, rng);
    cfg.declare(FusionKind::Hard, s, rng);
    for (auto& [name, p] : s.entries()) {
      if (name.starts_with("fusion.class.b")) {
        for (double& v : p.value) v = 1.0 + 0.5 * std::abs(v);  // keep the class relu off its kink
      }
    }
    const std::vector<Tensor> ab{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    track(o, "direct fusion", check_store(ParameterStore{}, ab, [&](const Bindings&, const auto& x) {
            return weighted(fuse_direct(x[0], x[1]).z);
          }), worst);
    track(o, "soft fusion", check_store(s, ab, [&](const Bindings& p, const auto& x) {
            return weighted(fuse_soft(x[0], x[1], p, cfg).z);
          }), worst);
    HardFusionOptions relaxed{HardGradient::Relaxed, gumbel_sample(draw_uniform({3, 8, 2}, rng))};
    track(o, "hard fusion (relaxed, frozen noise)", check_store(s, ab, [&](const Bindings& p, const auto& x) {
            Rng unused = make_rng(0);
            return weighted(fuse_hard(x[0], x[1], p, cfg, unused, 0.7, relaxed).z);
          }), worst);
    checks += 3;
  }

  // Full composed model, every fusion choice and both tasks.
  SimulatorConfig sim;
  sim.obs_dim = 6;
  sim.window = 3;
  sim.episode_length = 5;
  std::vector<Episode> eps{generate_episode(sim, 0), generate_episode(sim, 1)};
  Dataset ds{"train", {}, eps};
  std::vector<const Episode*> batch{&ds.episodes[0], &ds.episodes[1]};
  for (auto task : {Task::RelativeOdometry, Task::GlobalRelocalization}) {
    for (auto fusion : {FusionChoice::NoneA, FusionChoice::NoneB, FusionChoice::Direct, FusionChoice::Soft,
                        FusionChoice::Hard}) {
      ExperimentConfig cfg;
      cfg.task = task;
      cfg.fusion = fusion;
      cfg.d = 3;
      cfg.visual_hidden = 4;
      cfg.visual_layers = 1;
      cfg.inertial_hidden = 3;
      cfg.temporal_hidden = 4;
      Model model = build_model(cfg, dataset_dims(ds));
      fit_input_scales(model, ds);
      for (auto& [name, p] : model.params.entries()) {
        if (name.starts_with("fusion.class.b")) {
          for (double& v : p.value) v = 1.0 + 0.5 * std::abs(v);
        }
      }
      const Tensor target = sequence_targets(model, batch, 0, 4);
      const auto r = check_store(model.params, {}, [&](const Bindings& p, const auto&) {
        Rng noise = make_rng(7);  // identical draws on every evaluation
        HiddenState state = HiddenState::zeros(2, cfg.temporal_hidden);
        const SequenceOutput out =
            forward_sequence(model, p, batch, 0, 4, state, {0.8, &noise, HardGradient::Relaxed});
        Tensor pred = out.outputs[0];
        for (std::size_t t = 1; t < out.outputs.size(); ++t) pred = concat(pred, out.outputs[t], 0);
        return task_loss(model, pred, target);
      });
      track(o, "model " + to_string(fusion) + "/" + to_string(task), r, worst);
      ++checks;
    }
  }
  o.detail << checks << " gradient checks, worst absolute error " << std::scientific << std::setprecision(2) << worst;
  return o;
}

// --- 2: Gumbel statistics ----------------------------------------------------

Outcome criterion_gumbel() {
  Outcome o;
  Rng rng = make_rng(202);
  const FusionParams cfg{"fusion", 1};
  ParameterStore s;
  s.add("fusion.class.w", {2, 4}, std::vector<double>(8, 0.0));
  s.add("fusion.class.b", {4}, {0.7, 0.3, 0.7, 0.3});
  const auto out = fuse_hard(Tensor::zeros({50000, 1}), Tensor::zeros({50000, 1}), s.bind(nullptr), cfg, rng, 0.5);
  const double keep = 0.5 * (mean_of(out.mask.s1) + mean_of(out.mask.s2));
  o.require(std::abs(keep - 0.7) <= 0.01, "keep frequency");

  const double gmean = mean_of(gumbel_sample(draw_uniform({1000000}, rng)));
  o.require(std::abs(gmean - std::numbers::egamma) <= 0.01, "gumbel mean");

  const std::size_t n = 100000;
  std::vector<double> lp(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    lp[2 * i] = std::log(0.7);
    lp[2 * i + 1] = std::log(0.3);
  }
  const Tensor h = gumbel_softmax(Tensor({n, 2}, lp), gumbel_sample(draw_uniform({n, 2}, rng)), 0.05);
  double max_mean = 0.0;
  const auto hv = h.to_vector();
  for (std::size_t i = 0; i < n; ++i) max_mean += std::max(hv[2 * i], hv[2 * i + 1]) / static_cast<double>(n);
  o.require(max_mean >= 0.99, "tau 0.05 sharpness");
  const Tensor sharp = Tensor::matrix(1, 2, {std::log(0.7), std::log(0.3)});
  const double noise_free = gumbel_softmax(sharp, Tensor::zeros({1, 2}), 0.05).to_vector()[0];

  o.detail << std::fixed << std::setprecision(4) << "keep " << keep << " (1e5 draws), gumbel mean " << gmean
           << " (1e6 draws), mean max h at tau 0.05 " << max_mean << " over 1e5 noisy draws at p = (0.7, 0.3), "
           << std::setprecision(8) << noise_free << " noise-free";
  return o;
}

// --- 3: fusion equivalences --------------------------------------------------

Outcome criterion_fusion() {
  Outcome o;
  Rng rng = make_rng(303);
  const std::size_t d = 4;
  const FusionParams cfg{"fusion", d};
  ParameterStore s;
  cfg.declare(FusionKind::Soft, s, rng);
  cfg.declare(FusionKind::Hard, s, rng);

  ParameterStore saturated = s;
  for (int m : {1, 2}) {
    auto& w = saturated.at(cfg.soft_head(m).name + ".w").value;
    std::fill(w.begin(), w.end(), 0.0);
    saturated.at(cfg.soft_head(m).name + ".b").value.assign(d, 50.0);
  }
  const Tensor a1 = random_tensor({1000, d}, rng, -3, 3), a2 = random_tensor({1000, d}, rng, -3, 3);
  const auto soft = fuse_soft(a1, a2, saturated.bind(nullptr), cfg).z.to_vector();
  const auto direct = fuse_direct(a1, a2).z.to_vector();
  double gap = 0.0;
  for (std::size_t i = 0; i < soft.size(); ++i) gap = std::max(gap, std::abs(soft[i] - direct[i]));
  o.require(gap <= 1e-9, "saturated soft vs direct");

  const auto a1v = a1.to_vector(), a2v = a2.to_vector();
  bool exact = true;
  for (std::size_t r = 0; r < 1000; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      exact &= direct[r * 2 * d + c] == a1v[r * d + c];
      exact &= direct[r * 2 * d + d + c] == a2v[r * d + c];
    }
  }
  o.require(exact, "direct concatenation");

  const Bindings p = s.bind(nullptr);
  std::size_t inputs = 0, violations = 0;
  for (int batch = 0; batch < 100; ++batch) {
    const Tensor x1 = random_tensor({10000, d}, rng, -5, 5), x2 = random_tensor({10000, d}, rng, -5, 5);
    const auto sf = fuse_soft(x1, x2, p, cfg);
    const auto hf = fuse_hard(x1, x2, p, cfg, rng, 0.5);
    for (const auto* m : {&sf.mask, &hf.mask}) {
      if (m->s1.shape() != Shape{10000, d} || m->s2.shape() != Shape{10000, d}) ++violations;
    }
    for (const Tensor* t : {&sf.mask.s1, &sf.mask.s2}) {
      for (double v : t->data()) violations += !(v > 0.0 && v < 1.0);
    }
    for (const Tensor* t : {&hf.mask.s1, &hf.mask.s2}) {
      for (double v : t->data()) violations += !(v == 0.0 || v == 1.0);
    }
    inputs += 10000;
  }
  o.require(violations == 0, "mask invariants");
  o.detail << "max |soft - direct| " << std::scientific << std::setprecision(2) << gap << ", concatenation exact, "
           << inputs << " random inputs with " << violations << " mask violations";
  return o;
}

// --- 4: temperature schedule -------------------------------------------------

Outcome criterion_schedule() {
  Outcome o;
  const TemperatureSchedule s{1.0, 0.5, 50};
  const double start = anneal(0, s), end = anneal(50, s);
  o.require(start == 1.0, "anneal(0)");
  o.require(end == 0.5, "anneal(total)");
  o.detail << "anneal(0) = " << start << ", anneal(50) = " << end;
  return o;
}

// --- 5: metric oracles -------------------------------------------------------

std::vector<RelativePose> random_steps(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<RelativePose> out(n);
  for (auto& r : out) {
    r.p = {0.5 + 0.3 * u(rng), 0.1 * u(rng), 0.05 * u(rng)};
    r.r = {0.02 * u(rng), 0.02 * u(rng), 0.2 * u(rng)};
  }
  return out;
}

Outcome criterion_metrics() {
  Outcome o;
  Rng rng = make_rng(505);
  const auto gt_steps = random_steps(199, rng), pred_steps = random_steps(199, rng);

  MetricsAccumulator acc;
  double t_sq = 0.0, r_sq = 0.0;
  for (std::size_t i = 0; i < gt_steps.size(); ++i) {
    acc.add(pred_steps[i], gt_steps[i]);
    for (int k = 0; k < 3; ++k) {
      t_sq += std::pow(gt_steps[i].p[k] - pred_steps[i].p[k], 2);
      r_sq += std::pow(gt_steps[i].r[k] - pred_steps[i].r[k], 2);
    }
  }
  const RmsePair rmse = relative_rmse(acc);
  const double n = static_cast<double>(gt_steps.size());
  const double rmse_gap = std::max(std::abs(rmse.translation_m - std::sqrt(t_sq / n)),
                                   std::abs(rmse.rotation_deg - std::sqrt(r_sq / n) * 180.0 / std::numbers::pi));
  o.require(rmse_gap <= 1e-9, "rmse oracle");

  const auto gt = integrate_relative(gt_steps, GlobalPose{});
  const auto pred = integrate_relative(pred_steps, GlobalPose{});
  const std::vector<double> lengths{10, 20, 30, 40, 50, 60, 70, 80};
  const DriftResult drift = segment_drift(gt, pred, lengths);
  // Brute force: every start frame, distance re-summed per segment.
  double ts = 0.0, rs = 0.0;
  std::size_t segs = 0;
  for (double len : lengths) {
    for (std::size_t a = 0; a < gt.size(); ++a) {
      double dist = 0.0;
      std::size_t b = a;
      while (b + 1 < gt.size() && dist < len) {
        dist += (gt[b + 1].p - gt[b].p).norm();
        ++b;
      }
      if (dist < len) break;
      const Eigen::Matrix3d ga = gt[a].q.toRotationMatrix(), gb = gt[b].q.toRotationMatrix();
      const Eigen::Matrix3d pa = pred[a].q.toRotationMatrix(), pb = pred[b].q.toRotationMatrix();
      const Eigen::Vector3d tg = ga.transpose() * (gt[b].p - gt[a].p), tp = pa.transpose() * (pred[b].p - pred[a].p);
      const Eigen::Matrix3d rp = pa.transpose() * pb, rg = ga.transpose() * gb;
      ts += (rp.transpose() * (tg - tp)).norm() / len;
      rs += std::acos(std::clamp(((rp.transpose() * rg).trace() - 1.0) / 2.0, -1.0, 1.0)) / len;
      ++segs;
    }
  }
  const double drift_gap = std::max(std::abs(drift.translation_pct - 100.0 * ts / static_cast<double>(segs)),
                                    std::abs(drift.rotation_deg_per_100m -
                                             100.0 * 180.0 / std::numbers::pi * rs / static_cast<double>(segs)));
  o.require(drift_gap <= 1e-9, "drift oracle");

  const ProjectedPoint pp = project_point({1.0, 1.0, std::sqrt(2.0)}, 1.0, 1.0);
  const double quarter = std::numbers::pi / 4;
  const double ulp = std::nextafter(quarter, 1.0) - quarter;
  // asin(sqrt(2)/2) is one rounding away from pi/4 in binary64.
  o.require(pp.alpha == quarter, "projection alpha");
  o.require(std::abs(pp.beta - quarter) <= ulp, "projection beta");
  o.require(pp.range == 2.0, "projection range");

  o.detail << "rmse gap " << std::scientific << std::setprecision(2) << rmse_gap << ", drift gap " << drift_gap
           << " over " << segs << " segments, projection (" << std::defaultfloat << std::setprecision(17) << pp.alpha
           << ", " << pp.beta << ", " << pp.range << ")";
  return o;
}

// --- 6: overfit --------------------------------------------------------------

ExperimentConfig desk_config(FusionChoice fusion, std::uint64_t seed, int epochs) {
  ExperimentConfig cfg;
  cfg.fusion = fusion;
  cfg.seed = seed;
  cfg.d = 16;
  cfg.visual_hidden = 32;
  cfg.inertial_hidden = 16;
  cfg.temporal_hidden = 32;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.epochs = epochs;
  return cfg;
}

Outcome criterion_overfit() {
  Outcome o;
  SimulatorConfig sim;
  sim.episode_length = 50;
  Dataset train{"train", {}, {generate_episode(sim, 0)}};
  ExperimentConfig cfg = desk_config(FusionChoice::Direct, 0, 200);
  cfg.batch_size = 1;
  const TrainResult r = train_on(cfg, train, nullptr, {true});
  const double first = r.metrics.train_loss.front(), last = r.metrics.train_loss.back();
  o.require(last < 0.1 * first, "final < 10% of initial");
  o.detail << std::setprecision(4) << "train loss " << first << " -> " << last << " (" << std::fixed
           << std::setprecision(2) << 100.0 * last / first << "%)";
  return o;
}

// --- 7 and 8: desk-scale experiments -----------------------------------------

struct Splits {
  Dataset train, val, test;
};

Splits degraded_data(const std::string& name, const std::string& spec) {
  SimulatorConfig sim;
  sim.episode_length = 50;
  const fs::path clean = g_work / (name + "_clean"), deg = g_work / (name + "_degraded");
  simulate_dataset(sim, {32, 8, 8}, clean);
  degrade_dataset(clean, deg, parse_degradation_spec(spec));
  return {load_split(deg, "train"), load_split(deg, "val"), load_split(deg, "test")};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome criterion_ranking() {
  Outcome o;
  const Splits data = degraded_data("ranking", "all-5pct");
  std::map<FusionChoice, std::vector<double>> t_rmse;
  const std::vector<FusionChoice> choices{FusionChoice::NoneA, FusionChoice::NoneB, FusionChoice::Direct,
                                          FusionChoice::Soft, FusionChoice::Hard};
  std::ofstream table(g_work / "ranking.csv");
  table << "fusion,seed,t_rmse,r_rmse\n";
  for (std::uint64_t seed : {0, 1, 2}) {
    for (auto f : choices) {
      const TrainResult r = train_on(desk_config(f, seed, 50), data.train, &data.val, {true});
      const EvalResult ev = evaluate(r.model, data.test);
      t_rmse[f].push_back(ev.mean.t_rmse);
      table << to_string(f) << ',' << seed << ',' << ev.mean.t_rmse << ',' << ev.mean.r_rmse << '\n';
    }
  }
  std::map<FusionChoice, double> med;
  for (auto f : choices) med[f] = median3(t_rmse[f]);
  const double worse_single = std::max(med[FusionChoice::NoneA], med[FusionChoice::NoneB]);
  for (auto f : {FusionChoice::Direct, FusionChoice::Soft, FusionChoice::Hard}) {
    o.require(med[f] < worse_single, to_string(f) + " below worse baseline");
  }
  o.require(std::min(med[FusionChoice::Soft], med[FusionChoice::Hard]) <= med[FusionChoice::Direct],
            "min(soft, hard) <= direct");
  o.detail << "median t_rmse:";
  for (auto f : choices) o.detail << ' ' << to_string(f) << '=' << std::fixed << std::setprecision(4) << med[f];
  return o;
}

Outcome criterion_masks() {
  Outcome o;
  const Splits data = degraded_data("masks", "none,missing_a=0.3");
  std::ofstream table(g_work / "mask_selection.csv");
  table << "seed,bucket,rate_a,rate_b,frames\n";
  std::cout << "  seed  bucket      rate_a  rate_b  frames\n";
  for (std::uint64_t seed : {0, 1, 2}) {
    const TrainResult r = train_on(desk_config(FusionChoice::Hard, seed, 50), data.train, &data.val, {true});
    const EvalResult ev = evaluate(r.model, data.test);
    std::map<std::string, std::pair<double, double>> rates;
    std::map<std::string, std::size_t> frames;
    for (const auto& row : mask_report(ev.masks, frame_annotations(data.test))) {
      if (row.grouping != "degradation") continue;
      (row.modality == "a" ? rates[row.bucket].first : rates[row.bucket].second) = row.rate;
      frames[row.bucket] = row.frames;
    }
    for (const char* bucket : {"missing_a", "clean"}) {
      const auto [a, b] = rates[bucket];
      table << seed << ',' << bucket << ',' << a << ',' << b << ',' << frames[bucket] << '\n';
      std::cout << "  " << std::setw(4) << seed << "  " << std::left << std::setw(10) << bucket << std::right << std::fixed
                << std::setprecision(3) << std::setw(8) << a << std::setw(8) << b << std::setw(8) << frames[bucket]
                << '\n';
    }
    const auto [da, db] = rates["missing_a"];
    const auto [ca, cb] = rates["clean"];
    o.require(da < db, "seed " + std::to_string(seed) + " dropped-frame a < b");
    o.require(cb - ca < db - da, "seed " + std::to_string(seed) + " clean gap shrinks");
    o.detail << "seed " << seed << ": dropped a/b " << std::fixed << std::setprecision(3) << da << '/' << db
             << ", clean " << ca << '/' << cb << "; ";
  }
  o.detail << "table " << (g_work / "mask_selection.csv").string();
  return o;
}

// --- 9: determinism ----------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "selectfusion");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome criterion_determinism() {
  Outcome o;
  ::setenv("SELECTFUSION_THREADS", "1", 1);
  const fs::path config = g_work / "determinism.ini";
  std::ofstream(config) << "[model]\nd = 16\nvisual_hidden = 32\ninertial_hidden = 16\ntemporal_hidden = 32\n"
                           "[training]\nbatch_size = 4\nlr = 0.001\n";
  std::vector<fs::path> roots;
  for (const char* tag : {"run_a", "run_b"}) {
    const fs::path root = g_work / ("determinism_" + std::string(tag));
    fs::remove_all(root);
    const std::string s = "7";
    bool ok = cli({"--quiet", "--seed", s, "--out-dir", (root / "data").string(), "simulate", "--episodes", "24",
                   "--length", "40"}) == 0;
    ok = ok && cli({"--quiet", "--seed", s, "--out-dir", (root / "deg").string(), "degrade", "--input",
                    (root / "data").string(), "--spec", "all-5pct"}) == 0;
    ok = ok && cli({"--quiet", "--seed", s, "--config", config.string(), "--out-dir", (root / "run").string(), "train",
                    "--data", (root / "deg").string(), "--fusion", "hard", "--epochs", "5"}) == 0;
    ok = ok && cli({"--quiet", "--seed", s, "--out-dir", (root / "run").string(), "eval", "--checkpoint",
                    (root / "run" / "checkpoints" / "final.ckpt").string()}) == 0;
    ok = ok && cli({"--quiet", "--out-dir", (root / "report").string(), "report", (root / "run").string()}) == 0;
    o.require(ok, std::string(tag) + " pipeline");
    roots.push_back(root);
  }
  for (const char* f : {"metrics.csv", "masks.csv"}) {
    const std::string a = slurp(roots[0] / "run" / f), b = slurp(roots[1] / "run" / f);
    o.require(!a.empty() && a == b, std::string(f) + " identical");
    o.detail << f << " " << a.size() << " bytes " << (a == b ? "identical" : "DIFFERENT") << "; ";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  g_work = fs::temp_directory_path() / "selectfusion_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient conformance", criterion_gradients},
      {"gumbel-softmax statistics", criterion_gumbel},
      {"fusion equivalences", criterion_fusion},
      {"temperature schedule endpoints", criterion_schedule},
      {"metric oracle equivalence", criterion_metrics},
      {"overfit sanity", criterion_overfit},
      {"robustness ranking", criterion_ranking},
      {"mask interpretability", criterion_masks},
      {"pipeline determinism", criterion_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << " (" << std::fixed
              << std::setprecision(1) << secs << " s): " << o.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
