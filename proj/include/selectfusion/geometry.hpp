#pragma once

// Pose types, task losses, relative-pose RMSE, segment drift, trajectory
// files and the cylindrical range projection.
//
// Euler angles are (roll, pitch, yaw) in radians with the intrinsic Z-Y-X
// convention: R = Rz(yaw) * Ry(pitch) * Rx(roll). Relative poses are
// expressed in the frame of the earlier pose and compose on the right.

#include <Eigen/Geometry>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "selectfusion/tensor.hpp"

namespace selectfusion {

struct GlobalPose {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();

  /// [px, py, pz, qw, qx, qy, qz]
  std::vector<double> to_vector() const;
  static GlobalPose from_vector(std::span<const double> v);
};

struct RelativePose {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d r = Eigen::Vector3d::Zero();  // roll, pitch, yaw

  /// [tx, ty, tz, roll, pitch, yaw]
  std::vector<double> to_vector() const;
  static RelativePose from_vector(std::span<const double> v);
};

Eigen::Matrix3d euler_to_matrix(const Eigen::Vector3d& rpy);
Eigen::Vector3d matrix_to_euler(const Eigen::Matrix3d& rot);

Eigen::Isometry3d to_isometry(const GlobalPose& pose);
Eigen::Isometry3d to_isometry(const RelativePose& pose);
GlobalPose global_from_isometry(const Eigen::Isometry3d& t);
RelativePose relative_from_isometry(const Eigen::Isometry3d& t);

/// a followed by b (b expressed in a's frame).
GlobalPose compose(const GlobalPose& a, const GlobalPose& b);
/// Motion from `from` to `to`, in `from`'s frame.
RelativePose relative_between(const GlobalPose& from, const GlobalPose& to);

/// Trajectory of relatives.size() + 1 poses starting at `start`.
std::vector<GlobalPose> integrate_relative(std::span<const RelativePose> relatives, const GlobalPose& start);

// --- losses ----------------------------------------------------------------

enum class RelativeNorm { Squared, Plain };

struct LossConfig {
  double lambda_global = 10.0;
  double lambda_relative = 100.0;
  RelativeNorm relative_norm = RelativeNorm::Squared;
};

/// Batch mean of sum|p_gt - p| + lambda * sum|q_gt - q/|q|| over rows of
/// [N, 7] tensors (prediction first). Differentiable through the
/// normalisation of the predicted quaternion.
Tensor global_pose_loss(const Tensor& pred, const Tensor& gt, double lambda);
double global_pose_loss(const GlobalPose& pred, const GlobalPose& gt, double lambda);

/// Batch mean of |p_gt - p|^2 + lambda * |r_gt - r|^2 over [N, 6] rows
/// (or unsquared norms with RelativeNorm::Plain).
Tensor relative_pose_loss(const Tensor& pred, const Tensor& gt, double lambda,
                          RelativeNorm norm = RelativeNorm::Squared);
double relative_pose_loss(const RelativePose& pred, const RelativePose& gt, double lambda,
                          RelativeNorm norm = RelativeNorm::Squared);

// --- metrics ---------------------------------------------------------------

class MetricsAccumulator {
 public:
  void add(const RelativePose& pred, const RelativePose& gt);
  void merge(const MetricsAccumulator& other);
  std::size_t count() const { return translation_errors_.size(); }
  const std::vector<Eigen::Vector3d>& translation_errors() const { return translation_errors_; }
  const std::vector<Eigen::Vector3d>& rotation_errors() const { return rotation_errors_; }

 private:
  std::vector<Eigen::Vector3d> translation_errors_;
  std::vector<Eigen::Vector3d> rotation_errors_;
};

struct RmsePair {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};

RmsePair relative_rmse(const MetricsAccumulator& acc);

/// Per-length tallies of segment errors; mergeable across episodes.
struct DriftTally {
  struct Bucket {
    double translation_sum = 0.0;  // sum of |t_err| / length
    double rotation_sum = 0.0;     // sum of angle_err / length (rad/m)
    std::size_t count = 0;
  };
  std::map<double, Bucket> buckets;

  void merge(const DriftTally& other);
  std::size_t segments() const;
};

struct DriftResult {
  double translation_pct = 0.0;        // percent of segment length
  double rotation_deg_per_100m = 0.0;  // degrees per 100 m
  std::vector<double> lengths_used;
  std::size_t segments = 0;
};

std::vector<double> paper_drift_lengths();  // 100..800 m
std::vector<double> desk_drift_lengths();   // 10..80 m
/// Paper buckets unless the path is shorter than 100 m.
std::vector<double> default_drift_lengths(double path_length);
double path_length(std::span<const GlobalPose> traj);

/// Segment errors for every start frame and length. When `lengths` is
/// given explicitly every bucket must be reachable; otherwise unreachable
/// default buckets are skipped.
DriftTally segment_drift_tally(std::span<const GlobalPose> gt, std::span<const GlobalPose> pred,
                               const std::optional<std::vector<double>>& lengths = std::nullopt);
DriftResult drift_result(const DriftTally& tally);
DriftResult segment_drift(std::span<const GlobalPose> gt, std::span<const GlobalPose> pred,
                          const std::optional<std::vector<double>>& lengths = std::nullopt);

// --- trajectory files ------------------------------------------------------

void write_global_trajectory(const std::filesystem::path& path, std::span<const GlobalPose> traj);
std::vector<GlobalPose> read_global_trajectory(const std::filesystem::path& path);
void write_relative_trajectory(const std::filesystem::path& path, std::span<const RelativePose> traj);
std::vector<RelativePose> read_relative_trajectory(const std::filesystem::path& path);

// --- cylindrical projection ------------------------------------------------

struct ProjectedPoint {
  double alpha = 0.0;  // atan2(y, x) / d_alpha
  double beta = 0.0;   // asin(z / r) / d_beta
  double range = 0.0;  // r
};

ProjectedPoint project_point(const Eigen::Vector3d& point, double d_alpha, double d_beta);

/// H x W x C range image. Column index is floor((azimuth + pi) / d_alpha),
/// row index floor((elevation + pi/2) / d_beta); empty cells hold 0.
struct ProjectionGrid {
  double d_alpha = 0.0;
  double d_beta = 0.0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> cells;
  std::size_t dropped = 0;  // points outside the grid extent

  double at(std::size_t row, std::size_t col) const { return cells[row * width + col]; }
};

ProjectionGrid cylindrical_project(std::span<const Eigen::Vector3d> points, double d_alpha, double d_beta,
                                   std::size_t height, std::size_t width);

}  // namespace selectfusion
