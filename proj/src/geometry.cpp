#include "selectfusion/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "selectfusion/csv.hpp"
#include "selectfusion/error.hpp"

namespace selectfusion {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double rotation_angle(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
}

void require_rows(const char* what, const Tensor& pred, const Tensor& gt, std::size_t width) {
  if (pred.rank() != 2 || pred.shape() != gt.shape() || pred.dim(1) != width) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " expects matching [N, " + std::to_string(width) +
                                              "] tensors, got " + shape_str(pred.shape()) + " and " + shape_str(gt.shape()));
  }
}

}  // namespace

std::vector<double> GlobalPose::to_vector() const {
  return {p.x(), p.y(), p.z(), q.w(), q.x(), q.y(), q.z()};
}

GlobalPose GlobalPose::from_vector(std::span<const double> v) {
  if (v.size() != 7) throw Error(ErrorCode::ShapeMismatch, "global pose needs 7 values");
  GlobalPose g;
  g.p = {v[0], v[1], v[2]};
  g.q = Eigen::Quaterniond(v[3], v[4], v[5], v[6]);
  return g;
}

std::vector<double> RelativePose::to_vector() const {
  return {p.x(), p.y(), p.z(), r.x(), r.y(), r.z()};
}

RelativePose RelativePose::from_vector(std::span<const double> v) {
  if (v.size() != 6) throw Error(ErrorCode::ShapeMismatch, "relative pose needs 6 values");
  return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}

Eigen::Matrix3d euler_to_matrix(const Eigen::Vector3d& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

Eigen::Vector3d matrix_to_euler(const Eigen::Matrix3d& rot) {
  const double pitch = std::atan2(-rot(2, 0), std::hypot(rot(0, 0), rot(1, 0)));
  const double roll = std::atan2(rot(2, 1), rot(2, 2));
  const double yaw = std::atan2(rot(1, 0), rot(0, 0));
  return {roll, pitch, yaw};
}

Eigen::Isometry3d to_isometry(const GlobalPose& pose) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.linear() = pose.q.normalized().toRotationMatrix();
  t.translation() = pose.p;
  return t;
}

Eigen::Isometry3d to_isometry(const RelativePose& pose) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.linear() = euler_to_matrix(pose.r);
  t.translation() = pose.p;
  return t;
}

GlobalPose global_from_isometry(const Eigen::Isometry3d& t) {
  GlobalPose g;
  g.p = t.translation();
  g.q = Eigen::Quaterniond(t.rotation()).normalized();
  if (g.q.w() < 0.0) g.q.coeffs() *= -1.0;
  return g;
}

RelativePose relative_from_isometry(const Eigen::Isometry3d& t) {
  return {t.translation(), matrix_to_euler(t.rotation())};
}

GlobalPose compose(const GlobalPose& a, const GlobalPose& b) {
  return global_from_isometry(to_isometry(a) * to_isometry(b));
}

RelativePose relative_between(const GlobalPose& from, const GlobalPose& to) {
  return relative_from_isometry(to_isometry(from).inverse() * to_isometry(to));
}

std::vector<GlobalPose> integrate_relative(std::span<const RelativePose> relatives, const GlobalPose& start) {
  std::vector<GlobalPose> out;
  out.reserve(relatives.size() + 1);
  out.push_back(start);
  Eigen::Isometry3d t = to_isometry(start);
  for (const auto& rel : relatives) {
    t = t * to_isometry(rel);
    out.push_back(global_from_isometry(t));
  }
  return out;
}

// --- losses ----------------------------------------------------------------

Tensor global_pose_loss(const Tensor& pred, const Tensor& gt, double lambda) {
  require_rows("global_pose_loss", pred, gt, 7);
  const std::size_t n = pred.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t k = 3; k < 7; ++k) sq += pred.at(i, k) * pred.at(i, k);
    if (std::sqrt(sq) < 1e-12) throw Error(ErrorCode::ZeroQuaternion, "predicted quaternion of row " + std::to_string(i) + " has zero norm");
  }
  const Tensor q = slice(pred, 3, 7, 1);
  const Tensor q_unit = div(q, sqrt(sum_axis(square(q), 1)));
  const Tensor position_term = sum(abs(sub(slice(gt, 0, 3, 1), slice(pred, 0, 3, 1))));
  const Tensor orientation_term = sum(abs(sub(slice(gt, 3, 7, 1), q_unit)));
  return scale(add(position_term, scale(orientation_term, lambda)), 1.0 / static_cast<double>(n));
}

double global_pose_loss(const GlobalPose& pred, const GlobalPose& gt, double lambda) {
  return global_pose_loss(Tensor({1, 7}, pred.to_vector()), Tensor({1, 7}, gt.to_vector()), lambda).item();
}

Tensor relative_pose_loss(const Tensor& pred, const Tensor& gt, double lambda, RelativeNorm norm) {
  require_rows("relative_pose_loss", pred, gt, 6);
  const std::size_t n = pred.dim(0);
  const Tensor dp = square(sub(slice(gt, 0, 3, 1), slice(pred, 0, 3, 1)));
  const Tensor dr = square(sub(slice(gt, 3, 6, 1), slice(pred, 3, 6, 1)));
  Tensor total;
  if (norm == RelativeNorm::Squared) {
    total = add(sum(dp), scale(sum(dr), lambda));
  } else {
    // Tiny offset keeps the gradient finite at a perfect prediction.
    total = add(sum(sqrt(add_scalar(sum_axis(dp, 1), 1e-24))), scale(sum(sqrt(add_scalar(sum_axis(dr, 1), 1e-24))), lambda));
  }
  return scale(total, 1.0 / static_cast<double>(n));
}

double relative_pose_loss(const RelativePose& pred, const RelativePose& gt, double lambda, RelativeNorm norm) {
  return relative_pose_loss(Tensor({1, 6}, pred.to_vector()), Tensor({1, 6}, gt.to_vector()), lambda, norm).item();
}

// --- metrics ---------------------------------------------------------------

void MetricsAccumulator::add(const RelativePose& pred, const RelativePose& gt) {
  translation_errors_.push_back(pred.p - gt.p);
  rotation_errors_.push_back(pred.r - gt.r);
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  translation_errors_.insert(translation_errors_.end(), other.translation_errors_.begin(), other.translation_errors_.end());
  rotation_errors_.insert(rotation_errors_.end(), other.rotation_errors_.begin(), other.rotation_errors_.end());
}

RmsePair relative_rmse(const MetricsAccumulator& acc) {
  if (acc.count() == 0) throw Error(ErrorCode::EmptyAccumulator, "relative_rmse needs at least one frame pair");
  double t = 0.0;
  double r = 0.0;
  for (std::size_t i = 0; i < acc.count(); ++i) {
    t += acc.translation_errors()[i].squaredNorm();
    r += acc.rotation_errors()[i].squaredNorm();
  }
  const double n = static_cast<double>(acc.count());
  return {std::sqrt(t / n), std::sqrt(r / n) * kRadToDeg};
}

void DriftTally::merge(const DriftTally& other) {
  for (const auto& [len, b] : other.buckets) {
    auto& mine = buckets[len];
    mine.translation_sum += b.translation_sum;
    mine.rotation_sum += b.rotation_sum;
    mine.count += b.count;
  }
}

std::size_t DriftTally::segments() const {
  std::size_t n = 0;
  for (const auto& [len, b] : buckets) n += b.count;
  return n;
}

std::vector<double> paper_drift_lengths() { return {100, 200, 300, 400, 500, 600, 700, 800}; }
std::vector<double> desk_drift_lengths() { return {10, 20, 30, 40, 50, 60, 70, 80}; }

std::vector<double> default_drift_lengths(double length) {
  return length < 100.0 ? desk_drift_lengths() : paper_drift_lengths();
}

double path_length(std::span<const GlobalPose> traj) {
  double total = 0.0;
  for (std::size_t i = 1; i < traj.size(); ++i) total += (traj[i].p - traj[i - 1].p).norm();
  return total;
}

DriftTally segment_drift_tally(std::span<const GlobalPose> gt, std::span<const GlobalPose> pred,
                               const std::optional<std::vector<double>>& lengths) {
  if (gt.size() != pred.size()) {
    throw Error(ErrorCode::ShapeMismatch, "trajectories differ in length: " + std::to_string(gt.size()) + " vs " +
                                              std::to_string(pred.size()));
  }
  std::vector<double> dist(gt.size(), 0.0);
  for (std::size_t i = 1; i < gt.size(); ++i) dist[i] = dist[i - 1] + (gt[i].p - gt[i - 1].p).norm();
  const std::vector<double> buckets = lengths ? *lengths : default_drift_lengths(dist.empty() ? 0.0 : dist.back());

  std::vector<Eigen::Isometry3d> g(gt.size()), p(pred.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    g[i] = to_isometry(gt[i]);
    p[i] = to_isometry(pred[i]);
  }

  DriftTally tally;
  std::vector<double> usable;
  for (double len : buckets) {
    DriftTally::Bucket bucket;
    // `last` is monotone in the start frame, so one sweep per bucket.
    std::size_t last = 0;
    for (std::size_t first = 0; first < gt.size(); ++first) {
      last = std::max(last, first + 1);
      while (last < gt.size() && dist[last] - dist[first] < len) ++last;
      if (last >= gt.size()) break;
      const Eigen::Isometry3d gt_delta = g[first].inverse() * g[last];
      const Eigen::Isometry3d pred_delta = p[first].inverse() * p[last];
      const Eigen::Isometry3d err = pred_delta.inverse() * gt_delta;
      bucket.translation_sum += err.translation().norm() / len;
      bucket.rotation_sum += rotation_angle(err.rotation()) / len;
      ++bucket.count;
    }
    if (bucket.count > 0) {
      usable.push_back(len);
      tally.buckets[len] = bucket;
    }
  }

  const bool strict = lengths.has_value();
  if (usable.empty() || (strict && usable.size() != buckets.size())) {
    std::string list;
    for (double len : usable) list += (list.empty() ? "" : ", ") + format_double(len);
    throw Error(ErrorCode::TrajectoryTooShort, "path length " + format_double(dist.empty() ? 0.0 : dist.back()) +
                                                   " m; usable buckets: [" + list + "]");
  }
  return tally;
}

DriftResult drift_result(const DriftTally& tally) {
  DriftResult r;
  double t = 0.0;
  double rot = 0.0;
  for (const auto& [len, b] : tally.buckets) {
    t += b.translation_sum;
    rot += b.rotation_sum;
    r.segments += b.count;
    r.lengths_used.push_back(len);
  }
  if (r.segments == 0) throw Error(ErrorCode::TrajectoryTooShort, "no segments accumulated");
  const double n = static_cast<double>(r.segments);
  r.translation_pct = 100.0 * t / n;
  r.rotation_deg_per_100m = 100.0 * kRadToDeg * rot / n;
  return r;
}

DriftResult segment_drift(std::span<const GlobalPose> gt, std::span<const GlobalPose> pred,
                          const std::optional<std::vector<double>>& lengths) {
  return drift_result(segment_drift_tally(gt, pred, lengths));
}

// --- trajectory files ------------------------------------------------------

namespace {

template <typename Pose>
void write_trajectory(const std::filesystem::path& path, std::span<const Pose> traj, const char* header) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << header << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << i;
    for (double v : traj[i].to_vector()) out << ',' << format_double(v);
    out << '\n';
  }
}

template <typename Pose>
std::vector<Pose> read_trajectory(const std::filesystem::path& path, std::initializer_list<const char*> cols) {
  const CsvTable table = read_csv(path);
  std::vector<std::size_t> idx;
  for (const char* c : cols) idx.push_back(table.column(c));
  std::vector<Pose> out;
  out.reserve(table.rows.size());
  std::vector<double> v(idx.size());
  for (const auto& row : table.rows) {
    for (std::size_t k = 0; k < idx.size(); ++k) v[k] = parse_double(row[idx[k]]);
    out.push_back(Pose::from_vector(v));
  }
  return out;
}

}  // namespace

void write_global_trajectory(const std::filesystem::path& path, std::span<const GlobalPose> traj) {
  write_trajectory(path, traj, "frame,px,py,pz,qw,qx,qy,qz");
}

std::vector<GlobalPose> read_global_trajectory(const std::filesystem::path& path) {
  return read_trajectory<GlobalPose>(path, {"px", "py", "pz", "qw", "qx", "qy", "qz"});
}

void write_relative_trajectory(const std::filesystem::path& path, std::span<const RelativePose> traj) {
  write_trajectory(path, traj, "frame,tx,ty,tz,roll,pitch,yaw");
}

std::vector<RelativePose> read_relative_trajectory(const std::filesystem::path& path) {
  return read_trajectory<RelativePose>(path, {"tx", "ty", "tz", "roll", "pitch", "yaw"});
}

// --- cylindrical projection ------------------------------------------------

ProjectedPoint project_point(const Eigen::Vector3d& point, double d_alpha, double d_beta) {
  if (!(d_alpha > 0.0) || !(d_beta > 0.0)) throw Error(ErrorCode::InvalidConfig, "angular bin widths must be positive");
  const double range = point.norm();
  if (range == 0.0) throw Error(ErrorCode::OriginPoint, "cannot project a point at the origin");
  return {std::atan2(point.y(), point.x()) / d_alpha, std::asin(point.z() / range) / d_beta, range};
}

ProjectionGrid cylindrical_project(std::span<const Eigen::Vector3d> points, double d_alpha, double d_beta,
                                   std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw Error(ErrorCode::InvalidConfig, "projection grid needs positive extents");
  ProjectionGrid grid;
  grid.d_alpha = d_alpha;
  grid.d_beta = d_beta;
  grid.height = height;
  grid.width = width;
  grid.cells.assign(height * width, 0.0);
  for (const auto& pt : points) {
    const ProjectedPoint pp = project_point(pt, d_alpha, d_beta);
    auto col = static_cast<std::size_t>(std::floor((pp.alpha * d_alpha + std::numbers::pi) / d_alpha));
    auto row = static_cast<std::size_t>(std::floor((pp.beta * d_beta + std::numbers::pi / 2) / d_beta));
    // Azimuth +pi is the same ray as -pi; elevation +pi/2 is the top row.
    if (col == width && width * d_alpha >= 2 * std::numbers::pi) col = 0;
    if (row == height && height * d_beta >= std::numbers::pi) row = height - 1;
    if (col >= width || row >= height) {
      ++grid.dropped;
      continue;
    }
    double& cell = grid.cells[row * width + col];
    if (cell == 0.0 || pp.range < cell) cell = pp.range;
  }
  return grid;
}

}  // namespace selectfusion
