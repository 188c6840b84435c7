#include "selectfusion/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "selectfusion/error.hpp"

namespace selectfusion {

using nlohmann::json;

std::string to_string(DegradationType type) {
  switch (type) {
    case DegradationType::Occlusion: return "occlusion";
    case DegradationType::BlurNoise: return "blur_noise";
    case DegradationType::MissingA: return "missing_a";
    case DegradationType::ImuNoiseBias: return "imu_noise_bias";
    case DegradationType::MissingB: return "missing_b";
    case DegradationType::SpatialMisalign: return "spatial_misalign";
    case DegradationType::TemporalMisalign: return "temporal_misalign";
  }
  return "unknown";
}

DegradationType parse_degradation_type(const std::string& name) {
  for (auto t : kDegradationTypes) {
    if (to_string(t) == name) return t;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown degradation type '" + name + "'");
}

bool DegradationSpec::any_enabled() const {
  return std::any_of(settings.begin(), settings.end(), [](const Setting& s) { return s.enabled && s.probability > 0; });
}

void DegradationSpec::enable(DegradationType t, double probability) {
  (*this)[t] = {probability > 0.0, probability};
}

void DegradationSpec::validate() const {
  for (auto t : kDegradationTypes) {
    const double p = (*this)[t].probability;
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, to_string(t) + " probability must lie in [0, 1]");
    }
  }
  if (!(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "occlusion_fraction must lie in [0, 1]");
  }
  if (blur_kernel_width < 1) throw Error(ErrorCode::InvalidConfig, "blur_kernel_width must be >= 1");
  if (!(saltpepper_rate >= 0.0 && saltpepper_rate <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "saltpepper_rate must lie in [0, 1]");
  }
  if (!(accel_noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "accel_noise_sigma must be >= 0");
  if (!std::isfinite(gyro_bias)) throw Error(ErrorCode::InvalidConfig, "gyro_bias must be finite");
  if (!(misalign_max_deg >= 0.0 && misalign_max_deg <= 10.0)) {
    throw Error(ErrorCode::MaxDegOutOfRange, "misalign_max_deg must lie in [0, 10]");
  }
  if (time_shift_max < 0) throw Error(ErrorCode::InvalidConfig, "time_shift_max must be >= 0");
}

namespace {

double parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "degradation key '" + key + "' expects a number, got '" + value + "'");
  }
}

void apply_preset(DegradationSpec& spec, const std::string& name) {
  if (name == "none") {
    for (auto& s : spec.settings) s = {};
  } else if (name == "vision-10pct") {
    for (auto t : {DegradationType::Occlusion, DegradationType::BlurNoise, DegradationType::MissingA}) spec.enable(t, 0.1);
  } else if (name == "inertial-10pct") {
    for (auto t : {DegradationType::ImuNoiseBias, DegradationType::MissingB, DegradationType::SpatialMisalign,
                   DegradationType::TemporalMisalign}) {
      spec.enable(t, 0.1);
    }
  } else if (name == "all-5pct") {
    for (auto t : kDegradationTypes) spec.enable(t, 0.05);
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown degradation preset '" + name + "'");
  }
}

}  // namespace

DegradationSpec parse_degradation_spec(const std::string& text) {
  DegradationSpec spec;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (token.empty()) continue;
    const auto eq = token.find('=');
    if (eq == std::string::npos) {
      apply_preset(spec, token);
      continue;
    }
    const std::string key = token.substr(0, eq);
    const double v = parse_number(key, token.substr(eq + 1));
    if (key == "occlusion_fraction") spec.occlusion_fraction = v;
    else if (key == "blur_kernel_width") spec.blur_kernel_width = static_cast<std::size_t>(v);
    else if (key == "saltpepper_rate") spec.saltpepper_rate = v;
    else if (key == "accel_noise_sigma") spec.accel_noise_sigma = v;
    else if (key == "gyro_bias") spec.gyro_bias = v;
    else if (key == "misalign_max_deg") spec.misalign_max_deg = v;
    else if (key == "time_shift_max") spec.time_shift_max = static_cast<int>(v);
    else if (key == "seed") spec.seed = static_cast<std::uint64_t>(v);
    else spec.enable(parse_degradation_type(key), v);
  }
  spec.validate();
  return spec;
}

json to_json(const DegradationSpec& spec) {
  json types = json::object();
  for (auto t : kDegradationTypes) {
    types[to_string(t)] = {{"enabled", spec[t].enabled}, {"probability", spec[t].probability}};
  }
  return json{{"types", types},
              {"occlusion_fraction", spec.occlusion_fraction},
              {"blur_kernel_width", spec.blur_kernel_width},
              {"saltpepper_rate", spec.saltpepper_rate},
              {"accel_noise_sigma", spec.accel_noise_sigma},
              {"gyro_bias", spec.gyro_bias},
              {"misalign_max_deg", spec.misalign_max_deg},
              {"time_shift_max", spec.time_shift_max},
              {"seed", spec.seed}};
}

DegradationSpec degradation_spec_from_json(const json& j) {
  DegradationSpec spec;
  for (const auto& [name, s] : j.at("types").items()) {
    spec[parse_degradation_type(name)] = {s.at("enabled").get<bool>(), s.at("probability").get<double>()};
  }
  spec.occlusion_fraction = j.at("occlusion_fraction").get<double>();
  spec.blur_kernel_width = j.at("blur_kernel_width").get<std::size_t>();
  spec.saltpepper_rate = j.at("saltpepper_rate").get<double>();
  spec.accel_noise_sigma = j.at("accel_noise_sigma").get<double>();
  spec.gyro_bias = j.at("gyro_bias").get<double>();
  spec.misalign_max_deg = j.at("misalign_max_deg").get<double>();
  spec.time_shift_max = j.at("time_shift_max").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
  return spec;
}

// --- operators ---------------------------------------------------------------

void occlude(SensorFrame& frame, double fraction, Rng& rng) {
  auto& a = frame.modality_a;
  const std::size_t n = a.size();
  const auto len = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12)));
  std::size_t start = 0;
  if (len > 0 && len < n) start = std::uniform_int_distribution<std::size_t>(0, n - len)(rng);
  std::fill(a.begin() + static_cast<std::ptrdiff_t>(start), a.begin() + static_cast<std::ptrdiff_t>(start + len), 0.0);
  frame.degradations.push_back({"occlusion", {{"fraction", fraction},
                                              {"start", static_cast<double>(start)},
                                              {"length", static_cast<double>(len)}}});
}

void blur_noise(SensorFrame& frame, std::size_t kernel_width, double rate, Rng& rng) {
  auto& a = frame.modality_a;
  const std::size_t n = a.size();
  double peak = 0.0;
  for (double v : a) peak = std::max(peak, std::abs(v));
  if (kernel_width > 1 && n > 0) {
    const auto lo = static_cast<std::ptrdiff_t>(kernel_width / 2);
    const auto hi = static_cast<std::ptrdiff_t>(kernel_width) - 1 - lo;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -lo; k <= hi; ++k) {
        const auto j = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) + k, 0, static_cast<std::ptrdiff_t>(n) - 1);
        acc += a[static_cast<std::size_t>(j)];
      }
      out[i] = acc / static_cast<double>(kernel_width);
    }
    a = std::move(out);
  }
  std::size_t corrupted = 0;
  if (rate > 0.0) {
    std::bernoulli_distribution hit(rate);
    std::bernoulli_distribution sign(0.5);
    for (double& v : a) {
      if (hit(rng)) {
        v = sign(rng) ? peak : -peak;
        ++corrupted;
      }
    }
  }
  frame.degradations.push_back({"blur_noise", {{"kernel_width", static_cast<double>(kernel_width)},
                                               {"rate", rate},
                                               {"corrupted", static_cast<double>(corrupted)}}});
}

void drop_frames(Episode& ep, double p, Rng& rng) {
  std::bernoulli_distribution hit(p);
  for (auto& frame : ep.frames) {
    if (!hit(rng)) continue;
    std::fill(frame.modality_a.begin(), frame.modality_a.end(), 0.0);
    frame.valid_a = false;
    frame.degradations.push_back({"missing_a", {}});
  }
}

void imu_noise_bias(SensorFrame& frame, double sigma, const Eigen::Vector3d& bias, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& s : frame.modality_b) {
    for (int axis = 0; axis < 3; ++axis) {
      s[axis] += bias[axis];
      if (sigma > 0.0) s[3 + axis] += sigma * normal(rng);
    }
  }
  frame.degradations.push_back({"imu_noise_bias", {{"sigma", sigma},
                                                   {"bias_x", bias.x()},
                                                   {"bias_y", bias.y()},
                                                   {"bias_z", bias.z()}}});
}

void imu_drop(Episode& ep, double p, Rng& rng) {
  std::bernoulli_distribution hit(p);
  for (auto& frame : ep.frames) {
    if (!hit(rng)) continue;
    for (auto& s : frame.modality_b) s.fill(0.0);
    frame.valid_b = false;
    frame.degradations.push_back({"missing_b", {}});
  }
}

void rotate_inertial(Episode& ep, const Eigen::Matrix3d& rot) {
  for (auto& frame : ep.frames) {
    for (auto& s : frame.modality_b) {
      const Eigen::Vector3d g = rot * Eigen::Vector3d(s[0], s[1], s[2]);
      const Eigen::Vector3d a = rot * Eigen::Vector3d(s[3], s[4], s[5]);
      s = {g.x(), g.y(), g.z(), a.x(), a.y(), a.z()};
    }
  }
}

namespace {

void record_episode_event(Episode& ep, const DegradationEvent& ev) {
  ep.degradations.push_back(ev);
  for (auto& frame : ep.frames) frame.degradations.push_back(ev);
}

Eigen::Vector3d random_unit(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Eigen::Vector3d v(normal(rng), normal(rng), normal(rng));
    const double n = v.norm();
    if (n > 1e-9) return v / n;
  }
}

}  // namespace

Eigen::AngleAxisd spatial_misalign(Episode& ep, double max_deg, Rng& rng) {
  if (!(max_deg >= 0.0 && max_deg <= 10.0)) {
    throw Error(ErrorCode::MaxDegOutOfRange, "misalignment must lie in [0, 10] degrees");
  }
  const Eigen::Vector3d axis = random_unit(rng);
  const double deg = std::uniform_real_distribution<double>(0.0, max_deg)(rng);
  const Eigen::AngleAxisd rot(deg * std::numbers::pi / 180.0, axis);
  if (deg > 0.0) rotate_inertial(ep, rot.toRotationMatrix());
  record_episode_event(ep, {"spatial_misalign", {{"angle_deg", deg},
                                                 {"axis_x", axis.x()},
                                                 {"axis_y", axis.y()},
                                                 {"axis_z", axis.z()}}});
  return rot;
}

void temporal_misalign(Episode& ep, int k, int max_shift) {
  if (std::abs(k) > max_shift) {
    throw Error(ErrorCode::ShiftTooLarge, "shift " + std::to_string(k) + " exceeds " + std::to_string(max_shift));
  }
  if (k == 0) return;
  std::vector<ImuSample> flat;
  for (const auto& frame : ep.frames) flat.insert(flat.end(), frame.modality_b.begin(), frame.modality_b.end());
  const auto n = static_cast<std::ptrdiff_t>(flat.size());
  std::vector<ImuSample> shifted(flat.size(), ImuSample{});
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t src = i - k;
    if (src >= 0 && src < n) shifted[static_cast<std::size_t>(i)] = flat[static_cast<std::size_t>(src)];
  }
  std::size_t pos = 0;
  for (auto& frame : ep.frames) {
    for (auto& s : frame.modality_b) s = shifted[pos++];
  }
  record_episode_event(ep, {"temporal_misalign", {{"shift", static_cast<double>(k)}}});
}

Episode degrade_episode(const Episode& input, const DegradationSpec& spec) {
  spec.validate();
  Episode ep = input;
  Rng rng = make_rng(spec.seed, 0x44470000ULL + input.id);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto active = [&](DegradationType t) { return spec[t].enabled && spec[t].probability > 0.0; };
  auto fires = [&](DegradationType t) { return active(t) && unit(rng) < spec[t].probability; };

  // Sensor-level (per episode) effects first, so frame-level drops are not
  // smeared across frame boundaries by the time shift.
  if (fires(DegradationType::SpatialMisalign)) spatial_misalign(ep, spec.misalign_max_deg, rng);
  if (fires(DegradationType::TemporalMisalign) && spec.time_shift_max > 0) {
    const int mag = std::uniform_int_distribution<int>(1, spec.time_shift_max)(rng);
    temporal_misalign(ep, unit(rng) < 0.5 ? -mag : mag, spec.time_shift_max);
  }

  if (active(DegradationType::ImuNoiseBias)) {
    const Eigen::Vector3d bias = random_unit(rng) * spec.gyro_bias;
    for (auto& frame : ep.frames) {
      if (unit(rng) < spec[DegradationType::ImuNoiseBias].probability) {
        imu_noise_bias(frame, spec.accel_noise_sigma, bias, rng);
      }
    }
  }
  if (active(DegradationType::MissingB)) imu_drop(ep, spec[DegradationType::MissingB].probability, rng);
  for (auto& frame : ep.frames) {
    if (fires(DegradationType::Occlusion)) occlude(frame, spec.occlusion_fraction, rng);
    if (fires(DegradationType::BlurNoise)) blur_noise(frame, spec.blur_kernel_width, spec.saltpepper_rate, rng);
  }
  if (active(DegradationType::MissingA)) drop_frames(ep, spec[DegradationType::MissingA].probability, rng);
  return ep;
}

void degrade_dataset(const std::filesystem::path& input, const std::filesystem::path& output,
                     const DegradationSpec& spec, const std::vector<std::string>& splits) {
  spec.validate();
  const Manifest source = read_manifest(input);
  check_disjoint(source);
  for (const auto& s : splits) {
    if (!source.ids.count(s)) throw Error(ErrorCode::DatasetMissing, "manifest has no '" + s + "' split");
  }
  std::filesystem::create_directories(output);
  json manifest = source.raw;
  manifest["source_digest"] = sha256_hex(source.raw.dump());
  manifest["degradation"] = to_json(spec);
  manifest["degraded_splits"] = splits;
  for (const auto& [split, ids] : source.ids) {
    Dataset ds = load_split(input, split);
    if (std::find(splits.begin(), splits.end(), split) != splits.end()) {
      for (auto& ep : ds.episodes) ep = degrade_episode(ep, spec);
      ds.config["degradation"] = to_json(spec);
    }
    const std::string file = split + ".jsonl";
    write_dataset(output / file, ds);
    manifest["splits"][split]["file"] = file;
    manifest["splits"][split]["digest"] = file_sha256(output / file);
  }
  std::ofstream out(output / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + output.string());
  out << manifest.dump(2) << '\n';
}

}  // namespace selectfusion
