#pragma once

// Synthetic two-modality odometry episodes.
//
// Frame f carries the observations for the interval (f-1, f]; frame 0 has
// no preceding motion. Modality a ("visual-like") is a fixed linear mixing
// of the 6-d inter-frame motion plus white noise. Modality b
// ("inertial-like") is a window of m samples of [gyro xyz (rad/s),
// accel xyz (m/s^2)] derived from the motion by linear interpolation, with
// bias and white noise. Gravity is not modelled.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "selectfusion/geometry.hpp"
#include "selectfusion/random.hpp"

namespace selectfusion {

using ImuSample = std::array<double, 6>;

/// One applied corruption, with the parameters it used.
struct DegradationEvent {
  std::string type;
  std::map<std::string, double> params;

  bool operator==(const DegradationEvent&) const = default;
};

struct SensorFrame {
  std::vector<double> modality_a;
  std::vector<ImuSample> modality_b;
  bool valid_a = true;
  bool valid_b = true;
  std::vector<DegradationEvent> degradations;

  bool operator==(const SensorFrame&) const = default;
};

struct Episode {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  std::vector<SensorFrame> frames;
  std::vector<RelativePose> gt_relative;  // frames.size() - 1 entries
  std::vector<GlobalPose> gt_global;      // frames.size() entries
  std::vector<DegradationEvent> degradations;
};

enum class MotionProfile { ConstantVelocity, PiecewiseTurns, RandomSmooth };

std::string to_string(MotionProfile profile);
MotionProfile parse_motion_profile(const std::string& name);

struct TrajectoryConfig {
  MotionProfile profile = MotionProfile::RandomSmooth;
  /// Constant-velocity profile: per-step translation and yaw increment.
  Eigen::Vector3d step{1.0, 0.0, 0.0};
  double yaw_step = 0.0;
  double min_speed = 0.3;  // m per step
  double max_speed = 1.7;
  double max_yaw_rate = 0.5;  // rad per step
};

struct NoiseConfig {
  double sigma_a = 0.1;
  double sigma_gyro = 0.05;   // rad/s
  double sigma_accel = 0.1;   // m/s^2
  Eigen::Vector3d gyro_bias = Eigen::Vector3d::Zero();
  Eigen::Vector3d accel_bias = Eigen::Vector3d::Zero();
};

struct SimulatorConfig {
  std::size_t obs_dim = 32;
  std::size_t window = 10;
  double frame_dt = 0.1;  // s
  std::size_t episode_length = 100;
  std::uint64_t seed = 0;  // dataset seed; also fixes the mixing matrix
  TrajectoryConfig trajectory;
  NoiseConfig noise;
};

nlohmann::json to_json(const SimulatorConfig& cfg);
SimulatorConfig simulator_config_from_json(const nlohmann::json& j);

/// Relative motions for a trajectory of `length` frames (length - 1
/// steps). Per-step translation stays in [0, 2] m and yaw in +-0.5 rad.
std::vector<RelativePose> generate_trajectory(std::uint64_t seed, std::size_t length, const TrajectoryConfig& cfg);

/// Fixed obs_dim x 6 mixing matrix derived from the dataset seed.
Eigen::MatrixXd mixing_matrix(std::uint64_t seed, std::size_t obs_dim);

/// Noise-free inertial window for one interval: `motion` is the interval's
/// relative pose, `previous` the one before it (zero for the first).
std::vector<ImuSample> analytic_imu_window(const RelativePose& motion, const RelativePose& previous,
                                           std::size_t window, double frame_dt);

Episode render_observations(const std::vector<RelativePose>& relatives, std::uint64_t seed, const SimulatorConfig& cfg,
                            const Eigen::MatrixXd& mixing);

std::uint64_t episode_seed(std::uint64_t dataset_seed, std::uint64_t index);
Episode generate_episode(const SimulatorConfig& cfg, std::uint64_t index);

// --- dataset files ---------------------------------------------------------
// JSON-lines: a header object, then one episode object per line.

inline constexpr int kDatasetVersion = 1;

struct Dataset {
  std::string split;
  nlohmann::json config;  // simulator config plus any degradation spec
  std::vector<Episode> episodes;
};

nlohmann::json to_json(const Episode& ep);
Episode episode_from_json(const nlohmann::json& j);

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

struct SplitSizes {
  std::size_t train = 64;
  std::size_t val = 16;
  std::size_t test = 16;
};

/// Writes train/val/test JSON-lines files and manifest.json into `dir`.
/// Episode ids are globally unique across splits.
void simulate_dataset(const SimulatorConfig& cfg, const SplitSizes& sizes, const std::filesystem::path& dir);

struct Manifest {
  nlohmann::json raw;
  std::map<std::string, std::vector<std::uint64_t>> ids;  // split -> episode ids
};

Manifest read_manifest(const std::filesystem::path& dir);
/// Loads one split and checks its ids against the manifest; throws
/// DatasetMissing / BadFormat on absence or disagreement.
Dataset load_split(const std::filesystem::path& dir, const std::string& split);
/// Throws InvalidConfig when any two splits share an episode id.
void check_disjoint(const Manifest& manifest);

}  // namespace selectfusion
