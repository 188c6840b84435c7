#pragma once

// Corruption operators for the two synthetic modalities. Image-space
// operations are replaced by vector-space analogues: occlusion zeroes a
// contiguous window of modality a, blur is a moving average followed by
// salt-and-pepper noise. Missing frames are zero-filled with the validity
// flag cleared so sequence lengths stay fixed.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "selectfusion/random.hpp"
#include "selectfusion/simulator.hpp"

namespace selectfusion {

enum class DegradationType {
  Occlusion,
  BlurNoise,
  MissingA,
  ImuNoiseBias,
  MissingB,
  SpatialMisalign,
  TemporalMisalign,
};

inline constexpr std::size_t kDegradationTypeCount = 7;
inline constexpr std::array<DegradationType, kDegradationTypeCount> kDegradationTypes = {
    DegradationType::Occlusion,      DegradationType::BlurNoise,       DegradationType::MissingA,
    DegradationType::ImuNoiseBias,   DegradationType::MissingB,        DegradationType::SpatialMisalign,
    DegradationType::TemporalMisalign,
};

/// Snake-case name used in annotations and spec strings ("missing_a", ...).
std::string to_string(DegradationType type);
DegradationType parse_degradation_type(const std::string& name);

struct DegradationSpec {
  struct Setting {
    bool enabled = false;
    double probability = 0.0;
  };
  std::array<Setting, kDegradationTypeCount> settings{};

  double occlusion_fraction = 0.25;
  std::size_t blur_kernel_width = 5;
  double saltpepper_rate = 0.05;
  double accel_noise_sigma = 0.5;
  double gyro_bias = 0.2;  // rad/s, magnitude of the per-episode bias vector
  double misalign_max_deg = 10.0;
  int time_shift_max = 3;  // samples
  std::uint64_t seed = 0;

  Setting& operator[](DegradationType t) { return settings[static_cast<std::size_t>(t)]; }
  const Setting& operator[](DegradationType t) const { return settings[static_cast<std::size_t>(t)]; }
  bool any_enabled() const;
  void enable(DegradationType t, double probability);
  /// Throws InvalidConfig / MaxDegOutOfRange on out-of-range fields.
  void validate() const;
};

/// Comma-separated presets ("none", "vision-10pct", "inertial-10pct",
/// "all-5pct") and overrides: a type name sets its probability
/// ("missing_a=0.3"), a parameter name sets the parameter
/// ("occlusion_fraction=0.5"). Later tokens win.
DegradationSpec parse_degradation_spec(const std::string& text);

nlohmann::json to_json(const DegradationSpec& spec);
DegradationSpec degradation_spec_from_json(const nlohmann::json& j);

// --- single operators --------------------------------------------------------

/// Zeroes ceil(fraction * D_A) consecutive entries at a uniform start.
void occlude(SensorFrame& frame, double fraction, Rng& rng);
/// Centered moving average (replicate padding), then each entry is replaced
/// by +-max|a| with probability `rate`.
void blur_noise(SensorFrame& frame, std::size_t kernel_width, double rate, Rng& rng);
/// Each frame's modality a is zero-filled with probability p.
void drop_frames(Episode& ep, double p, Rng& rng);
/// Accel += N(0, sigma^2) per sample and channel; gyro += bias.
void imu_noise_bias(SensorFrame& frame, double sigma, const Eigen::Vector3d& bias, Rng& rng);
/// Each frame's inertial window is zero-filled with probability p.
void imu_drop(Episode& ep, double p, Rng& rng);
/// Rotates every gyro and accel vector by `rot`.
void rotate_inertial(Episode& ep, const Eigen::Matrix3d& rot);
/// One rotation with uniform axis and angle in [0, max_deg] for the episode.
/// Returns the rotation used.
Eigen::AngleAxisd spatial_misalign(Episode& ep, double max_deg, Rng& rng);
/// Shifts the flattened inertial stream by k samples (new[i] = old[i - k]),
/// zero-padding the exposed end.
void temporal_misalign(Episode& ep, int k, int max_shift);

/// Applies every enabled degradation. Randomness is derived from
/// (spec.seed, episode id), so episodes are independent of one another.
Episode degrade_episode(const Episode& ep, const DegradationSpec& spec);

/// Degrades the listed splits of the dataset in `input` into `output`,
/// copying the rest; writes a fresh manifest with the same ids.
void degrade_dataset(const std::filesystem::path& input, const std::filesystem::path& output,
                     const DegradationSpec& spec, const std::vector<std::string>& splits = {"train", "val", "test"});

}  // namespace selectfusion
