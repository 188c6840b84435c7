#include "selectfusion/simulator.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "selectfusion/error.hpp"

namespace selectfusion {

using nlohmann::json;

std::string to_string(MotionProfile profile) {
  switch (profile) {
    case MotionProfile::ConstantVelocity: return "constant-velocity";
    case MotionProfile::PiecewiseTurns: return "piecewise-turns";
    case MotionProfile::RandomSmooth: return "random-smooth";
  }
  return "unknown";
}

MotionProfile parse_motion_profile(const std::string& name) {
  if (name == "constant-velocity") return MotionProfile::ConstantVelocity;
  if (name == "piecewise-turns") return MotionProfile::PiecewiseTurns;
  if (name == "random-smooth") return MotionProfile::RandomSmooth;
  throw Error(ErrorCode::BadProfile, "unknown motion profile '" + name + "'");
}

namespace {

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
Eigen::Vector3d vec3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

json to_json(const SimulatorConfig& cfg) {
  return json{
      {"obs_dim", cfg.obs_dim},
      {"window", cfg.window},
      {"frame_dt", cfg.frame_dt},
      {"episode_length", cfg.episode_length},
      {"seed", cfg.seed},
      {"trajectory",
       {{"profile", to_string(cfg.trajectory.profile)},
        {"step", vec3(cfg.trajectory.step)},
        {"yaw_step", cfg.trajectory.yaw_step},
        {"min_speed", cfg.trajectory.min_speed},
        {"max_speed", cfg.trajectory.max_speed},
        {"max_yaw_rate", cfg.trajectory.max_yaw_rate}}},
      {"noise",
       {{"sigma_a", cfg.noise.sigma_a},
        {"sigma_gyro", cfg.noise.sigma_gyro},
        {"sigma_accel", cfg.noise.sigma_accel},
        {"gyro_bias", vec3(cfg.noise.gyro_bias)},
        {"accel_bias", vec3(cfg.noise.accel_bias)}}},
  };
}

SimulatorConfig simulator_config_from_json(const json& j) {
  SimulatorConfig cfg;
  cfg.obs_dim = j.at("obs_dim").get<std::size_t>();
  cfg.window = j.at("window").get<std::size_t>();
  cfg.frame_dt = j.at("frame_dt").get<double>();
  cfg.episode_length = j.at("episode_length").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  const auto& t = j.at("trajectory");
  cfg.trajectory.profile = parse_motion_profile(t.at("profile").get<std::string>());
  cfg.trajectory.step = vec3(t.at("step"));
  cfg.trajectory.yaw_step = t.at("yaw_step").get<double>();
  cfg.trajectory.min_speed = t.at("min_speed").get<double>();
  cfg.trajectory.max_speed = t.at("max_speed").get<double>();
  cfg.trajectory.max_yaw_rate = t.at("max_yaw_rate").get<double>();
  const auto& n = j.at("noise");
  cfg.noise.sigma_a = n.at("sigma_a").get<double>();
  cfg.noise.sigma_gyro = n.at("sigma_gyro").get<double>();
  cfg.noise.sigma_accel = n.at("sigma_accel").get<double>();
  cfg.noise.gyro_bias = vec3(n.at("gyro_bias"));
  cfg.noise.accel_bias = vec3(n.at("accel_bias"));
  return cfg;
}

std::vector<RelativePose> generate_trajectory(std::uint64_t seed, std::size_t length, const TrajectoryConfig& cfg) {
  if (length < 2) throw Error(ErrorCode::InvalidConfig, "trajectory length must be >= 2");
  if (cfg.min_speed < 0.0 || cfg.max_speed > 2.0 || cfg.min_speed > cfg.max_speed || cfg.max_yaw_rate < 0.0 ||
      cfg.max_yaw_rate > 0.5) {
    throw Error(ErrorCode::InvalidConfig, "speed must lie in [0, 2] m/step and yaw rate in [0, 0.5] rad/step");
  }
  const std::size_t steps = length - 1;
  std::vector<RelativePose> out(steps);
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  switch (cfg.profile) {
    case MotionProfile::ConstantVelocity: {
      if (cfg.step.norm() > 2.0 || std::abs(cfg.yaw_step) > 0.5) {
        throw Error(ErrorCode::InvalidConfig, "constant-velocity step exceeds 2 m or 0.5 rad");
      }
      for (auto& rel : out) rel = {cfg.step, {0.0, 0.0, cfg.yaw_step}};
      break;
    }
    case MotionProfile::PiecewiseTurns: {
      std::uniform_int_distribution<std::size_t> seg_len(8, 25);
      bool turning = false;
      std::size_t k = 0;
      while (k < steps) {
        const std::size_t n = std::min(seg_len(rng), steps - k);
        const double speed = cfg.min_speed + (cfg.max_speed - cfg.min_speed) * unit(rng);
        double yaw = 0.0;
        if (turning) {
          const double lo = std::min(0.1, cfg.max_yaw_rate);
          yaw = (lo + (cfg.max_yaw_rate - lo) * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
        }
        for (std::size_t i = 0; i < n; ++i, ++k) out[k] = {{speed, 0.0, 0.0}, {0.0, 0.0, yaw}};
        turning = !turning;
      }
      break;
    }
    case MotionProfile::RandomSmooth: {
      double speed = cfg.min_speed + (cfg.max_speed - cfg.min_speed) * unit(rng);
      double yaw = 0.0;
      for (auto& rel : out) {
        speed = std::clamp(speed + 0.08 * normal(rng), cfg.min_speed, cfg.max_speed);
        yaw = std::clamp(0.85 * yaw + 0.06 * normal(rng), -cfg.max_yaw_rate, cfg.max_yaw_rate);
        const double lateral = std::clamp(0.02 * normal(rng), -0.1, 0.1);
        const double vertical = std::clamp(0.01 * normal(rng), -0.05, 0.05);
        const double roll = std::clamp(0.01 * normal(rng), -0.05, 0.05);
        const double pitch = std::clamp(0.01 * normal(rng), -0.05, 0.05);
        rel = {{speed, lateral, vertical}, {roll, pitch, yaw}};
      }
      break;
    }
  }
  return out;
}

Eigen::MatrixXd mixing_matrix(std::uint64_t seed, std::size_t obs_dim) {
  Rng rng = make_rng(seed, 0x4d49584d);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(obs_dim), 6);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) m(i, j) = normal(rng) / std::sqrt(6.0);
  }
  return m;
}

std::vector<ImuSample> analytic_imu_window(const RelativePose& motion, const RelativePose& previous,
                                           std::size_t window, double frame_dt) {
  const Eigen::Vector3d rate = motion.r / frame_dt;
  const Eigen::Vector3d v_now = motion.p / frame_dt;
  const Eigen::Vector3d v_prev = previous.p / frame_dt;
  // Velocity ramps linearly across the interval, so acceleration is constant.
  const Eigen::Vector3d accel = (v_now - v_prev) / frame_dt;
  std::vector<ImuSample> out(window);
  for (auto& s : out) s = {rate.x(), rate.y(), rate.z(), accel.x(), accel.y(), accel.z()};
  return out;
}

Episode render_observations(const std::vector<RelativePose>& relatives, std::uint64_t seed, const SimulatorConfig& cfg,
                            const Eigen::MatrixXd& mixing) {
  if (static_cast<std::size_t>(mixing.rows()) != cfg.obs_dim || mixing.cols() != 6) {
    throw Error(ErrorCode::ShapeMismatch, "mixing matrix must be obs_dim x 6");
  }
  if (cfg.window < 1) throw Error(ErrorCode::InvalidConfig, "inertial window must be >= 1");
  Episode ep;
  ep.seed = seed;
  ep.gt_relative = relatives;
  ep.gt_global = integrate_relative(relatives, GlobalPose{});

  Rng rng = make_rng(seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const NoiseConfig& nz = cfg.noise;
  const std::size_t frames = relatives.size() + 1;
  ep.frames.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const RelativePose motion = f == 0 ? RelativePose{} : relatives[f - 1];
    const RelativePose previous = f < 2 ? RelativePose{} : relatives[f - 2];
    Eigen::Matrix<double, 6, 1> m6;
    m6 << motion.p, motion.r;
    const Eigen::VectorXd clean = mixing * m6;

    SensorFrame& frame = ep.frames[f];
    frame.modality_a.resize(cfg.obs_dim);
    for (std::size_t i = 0; i < cfg.obs_dim; ++i) {
      double v = clean(static_cast<Eigen::Index>(i));
      if (nz.sigma_a > 0.0) v += nz.sigma_a * normal(rng);
      frame.modality_a[i] = v;
    }
    frame.modality_b = analytic_imu_window(motion, previous, cfg.window, cfg.frame_dt);
    for (auto& s : frame.modality_b) {
      for (int axis = 0; axis < 3; ++axis) {
        s[axis] += nz.gyro_bias[axis];
        if (nz.sigma_gyro > 0.0) s[axis] += nz.sigma_gyro * normal(rng);
        s[3 + axis] += nz.accel_bias[axis];
        if (nz.sigma_accel > 0.0) s[3 + axis] += nz.sigma_accel * normal(rng);
      }
    }
  }
  return ep;
}

std::uint64_t episode_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  Rng rng = make_rng(dataset_seed, 0x45500000ULL + index);
  return rng();
}

Episode generate_episode(const SimulatorConfig& cfg, std::uint64_t index) {
  const std::uint64_t seed = episode_seed(cfg.seed, index);
  const auto relatives = generate_trajectory(seed, cfg.episode_length, cfg.trajectory);
  Episode ep = render_observations(relatives, seed, cfg, mixing_matrix(cfg.seed, cfg.obs_dim));
  ep.id = index;
  return ep;
}

// --- dataset files ---------------------------------------------------------

namespace {

json events_to_json(const std::vector<DegradationEvent>& events) {
  json arr = json::array();
  for (const auto& e : events) {
    json params = json::object();
    for (const auto& [k, v] : e.params) params[k] = v;
    arr.push_back({{"type", e.type}, {"params", params}});
  }
  return arr;
}

std::vector<DegradationEvent> events_from_json(const json& arr) {
  std::vector<DegradationEvent> out;
  for (const auto& e : arr) {
    DegradationEvent ev;
    ev.type = e.at("type").get<std::string>();
    for (const auto& [k, v] : e.at("params").items()) ev.params[k] = v.get<double>();
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace

json to_json(const Episode& ep) {
  json frames = json::array();
  for (const auto& f : ep.frames) {
    json b = json::array();
    for (const auto& s : f.modality_b) b.push_back(s);
    frames.push_back({{"a", f.modality_a},
                      {"b", std::move(b)},
                      {"valid_a", f.valid_a},
                      {"valid_b", f.valid_b},
                      {"degradations", events_to_json(f.degradations)}});
  }
  json rel = json::array();
  for (const auto& r : ep.gt_relative) rel.push_back(r.to_vector());
  json glob = json::array();
  for (const auto& g : ep.gt_global) glob.push_back(g.to_vector());
  return json{{"id", ep.id},
              {"seed", ep.seed},
              {"frames", std::move(frames)},
              {"gt_relative", std::move(rel)},
              {"gt_global", std::move(glob)},
              {"degradations", events_to_json(ep.degradations)}};
}

Episode episode_from_json(const json& j) {
  Episode ep;
  ep.id = j.at("id").get<std::uint64_t>();
  ep.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& f : j.at("frames")) {
    SensorFrame frame;
    frame.modality_a = f.at("a").get<std::vector<double>>();
    for (const auto& s : f.at("b")) frame.modality_b.push_back(s.get<ImuSample>());
    frame.valid_a = f.at("valid_a").get<bool>();
    frame.valid_b = f.at("valid_b").get<bool>();
    frame.degradations = events_from_json(f.at("degradations"));
    ep.frames.push_back(std::move(frame));
  }
  for (const auto& r : j.at("gt_relative")) ep.gt_relative.push_back(RelativePose::from_vector(r.get<std::vector<double>>()));
  for (const auto& g : j.at("gt_global")) ep.gt_global.push_back(GlobalPose::from_vector(g.get<std::vector<double>>()));
  ep.degradations = events_from_json(j.at("degradations"));
  if (ep.gt_relative.size() + 1 != ep.frames.size() || ep.gt_global.size() != ep.frames.size()) {
    throw Error(ErrorCode::BadFormat, "episode " + std::to_string(ep.id) + " has inconsistent lengths");
  }
  return ep;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << json{{"format", "selectfusion-dataset"},
              {"version", kDatasetVersion},
              {"split", ds.split},
              {"episodes", ds.episodes.size()},
              {"config", ds.config}}
             .dump()
      << '\n';
  for (const auto& ep : ds.episodes) out << to_json(ep).dump() << '\n';
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::DatasetMissing, path.string() + " does not exist");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::BadFormat, path.string() + " is empty");
  Dataset ds;
  try {
    const json header = json::parse(line);
    if (header.at("format") != "selectfusion-dataset") throw Error(ErrorCode::BadFormat, path.string() + ": wrong format tag");
    if (header.at("version") != kDatasetVersion) throw Error(ErrorCode::BadFormat, path.string() + ": unsupported version");
    ds.split = header.at("split").get<std::string>();
    ds.config = header.at("config");
    const auto expected = header.at("episodes").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ds.episodes.push_back(episode_from_json(json::parse(line)));
    }
    if (ds.episodes.size() != expected) {
      throw Error(ErrorCode::BadFormat, path.string() + ": header announces " + std::to_string(expected) +
                                            " episodes, found " + std::to_string(ds.episodes.size()));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadFormat, path.string() + ": " + e.what());
  }
  return ds;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "SHA-256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return sha256_hex(std::string(std::istreambuf_iterator<char>(in), {}));
}

void simulate_dataset(const SimulatorConfig& cfg, const SplitSizes& sizes, const std::filesystem::path& dir) {
  if (sizes.train + sizes.val + sizes.test == 0) throw Error(ErrorCode::InvalidConfig, "no episodes requested");
  std::filesystem::create_directories(dir);
  const json cfg_json = {{"simulator", to_json(cfg)}};
  json manifest = {{"format", "selectfusion-manifest"},
                   {"version", kDatasetVersion},
                   {"seed", cfg.seed},
                   {"config_digest", sha256_hex(cfg_json.dump())},
                   {"splits", json::object()}};
  std::uint64_t next_id = 0;
  const std::pair<const char*, std::size_t> splits[] = {{"train", sizes.train}, {"val", sizes.val}, {"test", sizes.test}};
  for (const auto& [name, count] : splits) {
    Dataset ds{name, cfg_json, {}};
    ds.episodes.reserve(count);
    json ids = json::array();
    for (std::size_t i = 0; i < count; ++i, ++next_id) {
      ds.episodes.push_back(generate_episode(cfg, next_id));
      ids.push_back(next_id);
    }
    const std::string file = std::string(name) + ".jsonl";
    write_dataset(dir / file, ds);
    manifest["splits"][name] = {{"file", file}, {"ids", ids}, {"digest", file_sha256(dir / file)}};
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::DatasetMissing, path.string() + " does not exist");
  std::ifstream in(path);
  Manifest m;
  try {
    m.raw = json::parse(in);
    for (const auto& [split, entry] : m.raw.at("splits").items()) {
      m.ids[split] = entry.at("ids").get<std::vector<std::uint64_t>>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadFormat, path.string() + ": " + e.what());
  }
  return m;
}

void check_disjoint(const Manifest& manifest) {
  std::map<std::uint64_t, std::string> owner;
  for (const auto& [split, ids] : manifest.ids) {
    for (auto id : ids) {
      auto [it, inserted] = owner.emplace(id, split);
      if (!inserted) {
        throw Error(ErrorCode::InvalidConfig, "episode " + std::to_string(id) + " appears in both '" + it->second +
                                                  "' and '" + split + "'");
      }
    }
  }
}

Dataset load_split(const std::filesystem::path& dir, const std::string& split) {
  const Manifest manifest = read_manifest(dir);
  check_disjoint(manifest);
  auto it = manifest.ids.find(split);
  if (it == manifest.ids.end()) throw Error(ErrorCode::DatasetMissing, "manifest in " + dir.string() + " has no '" + split + "' split");
  const auto file = manifest.raw.at("splits").at(split).at("file").get<std::string>();
  Dataset ds = read_dataset(dir / file);
  std::vector<std::uint64_t> ids;
  for (const auto& ep : ds.episodes) ids.push_back(ep.id);
  if (ids != it->second) throw Error(ErrorCode::BadFormat, "episode ids in " + file + " disagree with the manifest");
  return ds;
}

}  // namespace selectfusion
