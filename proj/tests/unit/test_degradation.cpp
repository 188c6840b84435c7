#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "selectfusion/degradation.hpp"

using namespace selectfusion;
using namespace selectfusion::testing;

namespace {

template <typename F>
void expect_code(ErrorCode code, F&& f) {
  try {
    f();
    FAIL("expected " << to_string(code));
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

Episode sample_episode(std::size_t length = 30, std::uint64_t index = 0) {
  SimulatorConfig cfg;
  cfg.obs_dim = 32;
  cfg.window = 10;
  cfg.episode_length = length;
  return generate_episode(cfg, index);
}

SensorFrame frame_with(std::vector<double> a) {
  SensorFrame f;
  f.modality_a = std::move(a);
  f.modality_b.assign(4, ImuSample{0.1, 0.2, 0.3, 1.0, 2.0, 3.0});
  return f;
}

std::vector<ImuSample> flat_stream(const Episode& ep) {
  std::vector<ImuSample> out;
  for (const auto& f : ep.frames) out.insert(out.end(), f.modality_b.begin(), f.modality_b.end());
  return out;
}

void check_ground_truth_unchanged(const Episode& a, const Episode& b) {
  REQUIRE(a.gt_relative.size() == b.gt_relative.size());
  for (std::size_t i = 0; i < a.gt_relative.size(); ++i) CHECK(a.gt_relative[i].to_vector() == b.gt_relative[i].to_vector());
  for (std::size_t i = 0; i < a.gt_global.size(); ++i) CHECK(a.gt_global[i].to_vector() == b.gt_global[i].to_vector());
}

}  // namespace

TEST_SUITE("degradation") {

TEST_CASE("occlusion zeroes exactly one contiguous window") {
  Rng rng = make_rng(1);
  std::vector<double> ones(32, 1.0);
  SensorFrame f = frame_with(ones);
  occlude(f, 0.0, rng);
  CHECK(f.modality_a == ones);
  f = frame_with(ones);
  occlude(f, 1.0, rng);
  CHECK(f.modality_a == std::vector<double>(32, 0.0));
  for (int trial = 0; trial < 50; ++trial) {
    f = frame_with(ones);
    occlude(f, 0.25, rng);
    std::size_t first = 32, last = 0, zeros = 0;
    for (std::size_t i = 0; i < 32; ++i) {
      if (f.modality_a[i] == 0.0) {
        ++zeros;
        first = std::min(first, i);
        last = i;
      }
    }
    CHECK(zeros == 8);
    CHECK(last - first == 7);
    REQUIRE(f.degradations.size() == 1);
    CHECK(f.degradations[0].type == "occlusion");
  }
}

TEST_CASE("blur: identity, constants and a hand convolution") {
  Rng rng = make_rng(2);
  const std::vector<double> v{0.5, -1.0, 2.0, 0.0, 3.0};
  SensorFrame f = frame_with(v);
  blur_noise(f, 1, 0.0, rng);
  CHECK(f.modality_a == v);
  f = frame_with(std::vector<double>(9, 1.5));
  blur_noise(f, 5, 0.0, rng);
  for (double x : f.modality_a) CHECK(x == doctest::Approx(1.5).epsilon(1e-15));
  f = frame_with({0, 0, 0, 3, 0, 0, 0});
  blur_noise(f, 3, 0.0, rng);
  const std::vector<double> expect{0, 0, 1, 1, 1, 0, 0};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(f.modality_a[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("salt and pepper uses the pre-blur magnitude") {
  Rng rng = make_rng(3);
  std::vector<double> v(200);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<double>(i));
  double peak = 0.0;
  for (double x : v) peak = std::max(peak, std::abs(x));
  SensorFrame f = frame_with(v);
  blur_noise(f, 1, 1.0, rng);
  for (double x : f.modality_a) CHECK(std::abs(x) == peak);
}

TEST_CASE("dropping modality a frames") {
  Rng rng = make_rng(4);
  const Episode clean = sample_episode(50);
  Episode ep = clean;
  drop_frames(ep, 0.0, rng);
  CHECK(ep.frames == clean.frames);
  drop_frames(ep, 1.0, rng);
  for (const auto& f : ep.frames) {
    CHECK(!f.valid_a);
    CHECK(f.modality_a == std::vector<double>(32, 0.0));
    CHECK(f.valid_b);
  }
  check_ground_truth_unchanged(ep, clean);

  Episode big = sample_episode(10000);
  drop_frames(big, 0.1, rng);
  std::size_t dropped = 0;
  for (const auto& f : big.frames) dropped += !f.valid_a;
  CHECK(std::abs(static_cast<double>(dropped) - 1000.0) <= 3.0 * std::sqrt(10000 * 0.1 * 0.9));
}

TEST_CASE("inertial noise and bias") {
  Rng rng = make_rng(5);
  SensorFrame f = frame_with({1.0});
  const auto before = f.modality_b;
  imu_noise_bias(f, 0.0, Eigen::Vector3d::Zero(), rng);
  CHECK(f.modality_b == before);
  imu_noise_bias(f, 0.0, {0.2, 0.0, 0.0}, rng);
  for (std::size_t s = 0; s < before.size(); ++s) {
    CHECK(f.modality_b[s][0] == before[s][0] + 0.2);
    for (int k = 1; k < 6; ++k) CHECK(f.modality_b[s][k] == before[s][k]);
  }

  SensorFrame big;
  big.modality_b.assign(100000, ImuSample{});
  imu_noise_bias(big, 0.5, Eigen::Vector3d::Zero(), rng);
  for (int ch = 3; ch < 6; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (const auto& s : big.modality_b) {
      sum += s[ch];
      sq += s[ch] * s[ch];
    }
    const double n = 100000.0, mean = sum / n;
    CHECK(std::abs((sq - n * mean * mean) / (n - 1) - 0.25) < 0.025);
  }
  for (const auto& s : big.modality_b) CHECK(s[0] == 0.0);
}

TEST_CASE("dropping inertial windows leaves modality a alone") {
  Rng rng = make_rng(6);
  const Episode clean = sample_episode();
  Episode ep = clean;
  imu_drop(ep, 0.0, rng);
  CHECK(ep.frames == clean.frames);
  imu_drop(ep, 1.0, rng);
  for (std::size_t i = 0; i < ep.frames.size(); ++i) {
    CHECK(!ep.frames[i].valid_b);
    for (const auto& s : ep.frames[i].modality_b) CHECK(s == ImuSample{});
    CHECK(ep.frames[i].modality_a == clean.frames[i].modality_a);
  }
}

TEST_CASE("spatial misalignment") {
  Rng rng = make_rng(7);
  const Episode clean = sample_episode();
  Episode ep = clean;
  const auto none = spatial_misalign(ep, 0.0, rng);
  CHECK(none.angle() == 0.0);
  for (std::size_t i = 0; i < ep.frames.size(); ++i) CHECK(ep.frames[i].modality_b == clean.frames[i].modality_b);

  Episode one;
  one.frames.push_back(frame_with({0.0}));
  one.frames[0].modality_b = {ImuSample{1, 0, 0, 1, 0, 0}};
  rotate_inertial(one, Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix());
  const ImuSample s = one.frames[0].modality_b[0];
  CHECK(std::abs(s[0]) < 1e-12);
  CHECK(std::abs(s[1] - 1.0) < 1e-12);
  CHECK(std::abs(s[4] - 1.0) < 1e-12);

  ep = clean;
  const auto rot = spatial_misalign(ep, 10.0, rng);
  CHECK(rot.angle() <= 10.0 * std::numbers::pi / 180.0);
  const auto a = flat_stream(clean), b = flat_stream(ep);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Eigen::Vector3d ga(a[i][0], a[i][1], a[i][2]), gb(b[i][0], b[i][1], b[i][2]);
    CHECK(gb.norm() == doctest::Approx(ga.norm()).epsilon(1e-12));
  }
  REQUIRE(ep.degradations.size() == 1);
  CHECK(ep.degradations[0].type == "spatial_misalign");
  for (const auto& f : ep.frames) CHECK(f.degradations.back() == ep.degradations[0]);
  check_ground_truth_unchanged(ep, clean);

  expect_code(ErrorCode::MaxDegOutOfRange, [&] { spatial_misalign(ep, 11.0, rng); });
  expect_code(ErrorCode::MaxDegOutOfRange, [&] { spatial_misalign(ep, -1.0, rng); });
}

TEST_CASE("temporal misalignment") {
  const Episode clean = sample_episode(20);
  Episode ep = clean;
  temporal_misalign(ep, 0, 3);
  CHECK(ep.frames == clean.frames);

  ep = clean;
  temporal_misalign(ep, 10, 10);  // one full window
  for (std::size_t f = 1; f < ep.frames.size(); ++f) CHECK(ep.frames[f].modality_b == clean.frames[f - 1].modality_b);
  for (const auto& s : ep.frames[0].modality_b) CHECK(s == ImuSample{});

  ep = clean;
  temporal_misalign(ep, 3, 3);
  temporal_misalign(ep, -3, 3);
  const auto a = flat_stream(clean), b = flat_stream(ep);
  for (std::size_t i = 0; i + 3 < a.size(); ++i) CHECK(b[i] == a[i]);
  for (std::size_t i = a.size() - 3; i < a.size(); ++i) CHECK(b[i] == ImuSample{});
  check_ground_truth_unchanged(ep, clean);

  expect_code(ErrorCode::ShiftTooLarge, [&] { temporal_misalign(ep, 4, 3); });
  expect_code(ErrorCode::ShiftTooLarge, [&] { temporal_misalign(ep, -4, 3); });
}

TEST_CASE("spec parsing: presets, overrides and validation") {
  DegradationSpec s = parse_degradation_spec("none");
  CHECK(!s.any_enabled());
  s = parse_degradation_spec("vision-10pct");
  CHECK(s[DegradationType::Occlusion].probability == 0.1);
  CHECK(!s[DegradationType::MissingB].enabled);
  s = parse_degradation_spec("all-5pct,missing_a=0.3,occlusion_fraction=0.5,seed=9");
  for (auto t : kDegradationTypes) CHECK(s[t].enabled);
  CHECK(s[DegradationType::MissingA].probability == 0.3);
  CHECK(s[DegradationType::BlurNoise].probability == 0.05);
  CHECK(s.occlusion_fraction == 0.5);
  CHECK(s.seed == 9);
  const DegradationSpec back = degradation_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  for (auto t : kDegradationTypes) CHECK(parse_degradation_type(to_string(t)) == t);

  expect_code(ErrorCode::InvalidConfig, [] { parse_degradation_spec("sometimes"); });
  expect_code(ErrorCode::InvalidConfig, [] { parse_degradation_spec("missing_a=1.5"); });
  expect_code(ErrorCode::MaxDegOutOfRange, [] { parse_degradation_spec("misalign_max_deg=20"); });
}

TEST_CASE("degrading an episode is deterministic, isolated and annotated") {
  DegradationSpec spec = parse_degradation_spec("all-5pct,seed=4");
  for (auto t : kDegradationTypes) spec.enable(t, 0.5);
  const Episode e0 = sample_episode(40, 0), e1 = sample_episode(40, 1);
  const Episode d0 = degrade_episode(e0, spec);
  CHECK(degrade_episode(e0, spec).frames == d0.frames);
  check_ground_truth_unchanged(d0, e0);

  // Same episode degraded alongside a different neighbour: identical output.
  const Episode d0_again = degrade_episode(e0, spec);
  (void)degrade_episode(e1, spec);
  CHECK(d0_again.frames == d0.frames);

  std::size_t annotated = 0;
  for (std::size_t i = 0; i < d0.frames.size(); ++i) {
    if (d0.frames[i] != e0.frames[i]) CHECK(!d0.frames[i].degradations.empty());
    annotated += !d0.frames[i].degradations.empty();
  }
  CHECK(annotated > 0);

  spec.seed = 5;
  CHECK(degrade_episode(e0, spec).frames != d0.frames);
  CHECK(degrade_episode(e0, parse_degradation_spec("none")).frames == e0.frames);
}

TEST_CASE("degrading a dataset keeps ids and splits") {
  SimulatorConfig cfg;
  cfg.episode_length = 10;
  cfg.obs_dim = 8;
  const auto src = scratch_dir("degradation_src");
  const auto dst = scratch_dir("degradation_dst");
  simulate_dataset(cfg, {4, 1, 1}, src);
  degrade_dataset(src, dst, parse_degradation_spec("all-5pct,missing_a=1"), {"train", "test"});
  const Manifest m = read_manifest(dst);
  CHECK(m.ids == read_manifest(src).ids);
  for (const auto& ep : load_split(dst, "train").episodes) {
    for (const auto& f : ep.frames) CHECK(!f.valid_a);
  }
  for (const auto& ep : load_split(dst, "val").episodes) {
    for (const auto& f : ep.frames) CHECK(f.valid_a);
  }
  expect_code(ErrorCode::DatasetMissing,
              [&] { degrade_dataset(src, scratch_dir("degradation_bad"), parse_degradation_spec("none"), {"holdout"}); });
}

}  // TEST_SUITE
