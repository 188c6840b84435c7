#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "selectfusion/geometry.hpp"

using namespace selectfusion;
using namespace selectfusion::testing;
using std::numbers::pi;

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

RelativePose rel(double tx, double ty, double tz, double roll, double pitch, double yaw) {
  return RelativePose{{tx, ty, tz}, {roll, pitch, yaw}};
}

std::vector<RelativePose> random_relatives(std::size_t n, Rng& rng, double step = 1.0, double turn = 0.1) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<RelativePose> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(rel(step * (1.0 + 0.3 * u(rng)), 0.2 * step * u(rng), 0.1 * step * u(rng), 0.2 * turn * u(rng),
                      0.2 * turn * u(rng), turn * u(rng)));
  }
  return out;
}

// Independent drift oracle: explicit rotation matrices, path distance
// re-summed for every segment, error angle from the trace.
std::pair<double, double> brute_force_drift(const std::vector<GlobalPose>& gt, const std::vector<GlobalPose>& pred,
                                            const std::vector<double>& lengths) {
  double t_sum = 0.0, r_sum = 0.0;
  std::size_t n = 0;
  for (double len : lengths) {
    for (std::size_t first = 0; first < gt.size(); ++first) {
      double dist = 0.0;
      std::size_t last = first;
      while (last + 1 < gt.size() && dist < len) {
        dist += (gt[last + 1].p - gt[last].p).norm();
        ++last;
      }
      if (dist < len) break;
      const Eigen::Matrix3d g1 = gt[first].q.normalized().toRotationMatrix(), g2 = gt[last].q.normalized().toRotationMatrix();
      const Eigen::Matrix3d p1 = pred[first].q.normalized().toRotationMatrix(),
                            p2 = pred[last].q.normalized().toRotationMatrix();
      const Eigen::Vector3d tg = g1.transpose() * (gt[last].p - gt[first].p);
      const Eigen::Vector3d tp = p1.transpose() * (pred[last].p - pred[first].p);
      const Eigen::Matrix3d rg = g1.transpose() * g2, rp = p1.transpose() * p2;
      const Eigen::Vector3d te = rp.transpose() * (tg - tp);
      const Eigen::Matrix3d re = rp.transpose() * rg;
      const double c = std::clamp((re.trace() - 1.0) / 2.0, -1.0, 1.0);
      t_sum += te.norm() / len;
      r_sum += std::acos(c) / len;
      ++n;
    }
  }
  return {100.0 * t_sum / static_cast<double>(n), 100.0 * 180.0 / pi * r_sum / static_cast<double>(n)};
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("global pose loss examples") {
  GlobalPose gt{{1, 2, 3}, Eigen::Quaterniond(0.5, 0.5, 0.5, 0.5)};
  const Tensor g = Tensor::matrix(1, 7, gt.to_vector());
  Tensor pred = Tensor::matrix(1, 7, {1, 2, 3, 1.0, 1.0, 1.0, 1.0});  // same orientation, scaled by 2
  CHECK(global_pose_loss(pred, g, 10.0).item() == doctest::Approx(0.0).epsilon(1e-15));
  pred = Tensor::matrix(1, 7, {2, 2, 3, 0.5, 0.5, 0.5, 0.5});
  CHECK(global_pose_loss(pred, g, 10.0).item() == doctest::Approx(1.0));
  const GlobalPose a{{0, 0, 0}, Eigen::Quaterniond(0, 1, 0, 0)};
  const GlobalPose b{{0, 0, 0}, Eigen::Quaterniond(1, 0, 0, 0)};
  CHECK(global_pose_loss(b, a, 10.0) == doctest::Approx(20.0));
  expect_code(ErrorCode::ZeroQuaternion, [&] {
    global_pose_loss(Tensor::matrix(1, 7, {0, 0, 0, 0, 0, 0, 0}), g, 10.0);
  });
}

TEST_CASE("global pose loss is invariant to quaternion scale and differentiable through it") {
  Rng rng = make_rng(1);
  const Tensor gt = Tensor::matrix(2, 7, {0.1, 0.2, 0.3, 0.5, 0.5, 0.5, 0.5, -1, 0, 2, 0.8, 0.0, 0.6, 0.0});
  Tensor pred = random_tensor({2, 7}, rng);
  const double base = global_pose_loss(pred, gt, 10.0).item();
  auto v = pred.to_vector();
  for (std::size_t i : {3u, 4u, 5u, 6u, 10u, 11u, 12u, 13u}) v[i] *= 3.7;
  CHECK(global_pose_loss(Tensor({2, 7}, v), gt, 10.0).item() == doctest::Approx(base).epsilon(1e-12));
  const auto r = check_gradients([&](const std::vector<Tensor>& x) { return global_pose_loss(x[0], gt, 10.0); }, {pred});
  INFO(r.worst);
  CHECK(r.ok);
}

TEST_CASE("relative pose loss examples") {
  const RelativePose gt = rel(0.5, 0.1, 0, 0.01, 0.02, 0.3);
  CHECK(relative_pose_loss(gt, gt, 100.0) == 0.0);
  CHECK(relative_pose_loss(rel(1.5, 0.1, 0, 0.01, 0.02, 0.3), gt, 100.0) == doctest::Approx(1.0));
  CHECK(relative_pose_loss(rel(0.5, 0.1, 0, 0.11, 0.02, 0.3), gt, 100.0) == doctest::Approx(1.0));
  CHECK(relative_pose_loss(rel(3.5, 4.1, 0, 0.01, 0.02, 0.3), gt, 100.0, RelativeNorm::Plain) == doctest::Approx(5.0));
}

TEST_CASE("relative pose loss tensor form averages rows and has correct gradients") {
  Rng rng = make_rng(2);
  const Tensor pred = random_tensor({5, 6}, rng), gt = random_tensor({5, 6}, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto pv = pred.to_vector(), gv = gt.to_vector();
    mean += relative_pose_loss(RelativePose::from_vector(std::span(pv).subspan(6 * i, 6)),
                               RelativePose::from_vector(std::span(gv).subspan(6 * i, 6)), 100.0) /
            5.0;
  }
  CHECK(relative_pose_loss(pred, gt, 100.0).item() == doctest::Approx(mean).epsilon(1e-12));
  for (auto norm : {RelativeNorm::Squared, RelativeNorm::Plain}) {
    const auto r = check_gradients(
        [&](const std::vector<Tensor>& x) { return relative_pose_loss(x[0], gt, 100.0, norm); }, {pred});
    CHECK(r.ok);
  }
}

TEST_CASE("relative rmse examples and brute-force agreement") {
  MetricsAccumulator acc;
  acc.add(rel(0, 0, 0, 0, 0, 0), rel(0, 0, 0, 0, 0, 0));
  CHECK(relative_rmse(acc).translation_m == 0.0);
  CHECK(relative_rmse(acc).rotation_deg == 0.0);

  MetricsAccumulator two;
  two.add(rel(3, 0, 0, 0, 0, 0), rel(0, 0, 0, 0, 0, 0));
  two.add(rel(0, 4, 0, 0, 0, 0), rel(0, 0, 0, 0, 0, 0));
  CHECK(relative_rmse(two).translation_m == doctest::Approx(std::sqrt(12.5)));

  MetricsAccumulator deg;
  deg.add(rel(0, 0, 0, 0, 0, pi / 180.0), rel(0, 0, 0, 0, 0, 0));
  CHECK(relative_rmse(deg).rotation_deg == doctest::Approx(1.0).epsilon(1e-12));

  expect_code(ErrorCode::EmptyAccumulator, [] { relative_rmse(MetricsAccumulator{}); });

  Rng rng = make_rng(3);
  const auto a = random_relatives(100, rng), b = random_relatives(100, rng);
  MetricsAccumulator left, right, all;
  double t_sq = 0.0, r_sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    (i < 40 ? left : right).add(a[i], b[i]);
    all.add(a[i], b[i]);
    t_sq += (a[i].p - b[i].p).squaredNorm();
    r_sq += (a[i].r - b[i].r).squaredNorm();
  }
  left.merge(right);
  CHECK(left.count() == 100);
  const RmsePair merged = relative_rmse(left), direct = relative_rmse(all);
  CHECK(merged.translation_m == direct.translation_m);
  CHECK(direct.translation_m == doctest::Approx(std::sqrt(t_sq / 100.0)).epsilon(1e-14));
  CHECK(direct.rotation_deg == doctest::Approx(std::sqrt(r_sq / 100.0) * 180.0 / pi).epsilon(1e-14));
}

TEST_CASE("integration examples") {
  const GlobalPose start{{1, 2, 3}, Eigen::Quaterniond::Identity()};
  const std::vector<RelativePose> still(5);
  for (const auto& p : integrate_relative(still, start)) CHECK((p.p - start.p).norm() == 0.0);
  const std::vector<RelativePose> two{rel(1, 0, 0, 0, 0, 0), rel(1, 0, 0, 0, 0, 0)};
  CHECK((integrate_relative(two, start).back().p - Eigen::Vector3d(3, 2, 3)).norm() < 1e-12);
  const std::vector<RelativePose> turn{rel(1, 0, 0, 0, 0, pi / 2), rel(1, 0, 0, 0, 0, 0)};
  CHECK((integrate_relative(turn, start).back().p - Eigen::Vector3d(2, 3, 3)).norm() < 1e-9);
}

TEST_CASE("integration is associative") {
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_relatives(15, rng, 1.0, 0.8), b = random_relatives(9, rng, 1.0, 0.8);
    const GlobalPose start{{0.5, -1, 2}, Eigen::Quaterniond(Eigen::AngleAxisd(0.4, Eigen::Vector3d(1, 2, 3).normalized()))};
    auto ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const GlobalPose whole = integrate_relative(ab, start).back();
    const GlobalPose split = compose(integrate_relative(a, start).back(), integrate_relative(b, GlobalPose{}).back());
    CHECK((whole.p - split.p).norm() < 1e-9);
    CHECK(whole.q.angularDistance(split.q) < 1e-9);
  }
}

TEST_CASE("relative_between inverts compose") {
  Rng rng = make_rng(5);
  const auto steps = random_relatives(30, rng, 1.0, 1.0);
  const auto traj = integrate_relative(steps, GlobalPose{});
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const RelativePose back = relative_between(traj[i], traj[i + 1]);
    CHECK((back.p - steps[i].p).norm() < 1e-9);
    CHECK((back.r - steps[i].r).norm() < 1e-9);
  }
}

TEST_CASE("euler round trip") {
  Rng rng = make_rng(6);
  std::uniform_real_distribution<double> u(-pi / 2 + 1e-3, pi / 2 - 1e-3);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d rpy(u(rng), u(rng), u(rng));
    CHECK((matrix_to_euler(euler_to_matrix(rpy)) - rpy).norm() < 1e-9);
  }
  // Intrinsic Z-Y-X: yaw about z is applied last.
  const Eigen::Matrix3d m = euler_to_matrix({0, 0, pi / 2});
  CHECK((m * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm() < 1e-12);
}

TEST_CASE("drift: exact prediction and uniform scale error") {
  std::vector<RelativePose> steps(120, rel(1, 0, 0, 0, 0, 0));
  const auto gt = integrate_relative(steps, GlobalPose{});
  const DriftResult zero = segment_drift(gt, gt, std::vector<double>{10, 20, 50});
  CHECK(zero.translation_pct == 0.0);
  CHECK(zero.rotation_deg_per_100m == 0.0);

  std::vector<RelativePose> longer(120, rel(1.01, 0, 0, 0, 0, 0));
  const auto pred = integrate_relative(longer, GlobalPose{});
  const DriftTally tally = segment_drift_tally(gt, pred, std::vector<double>{10, 20, 50, 100});
  for (const auto& [len, b] : tally.buckets) {
    CHECK(100.0 * b.translation_sum / static_cast<double>(b.count) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(drift_result(tally).translation_pct == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("drift matches a brute-force oracle on a random trajectory") {
  Rng rng = make_rng(7);
  const auto gt = integrate_relative(random_relatives(200, rng, 0.5, 0.2), GlobalPose{});
  auto noisy = random_relatives(200, rng, 0.5, 0.2);
  const auto pred = integrate_relative(noisy, GlobalPose{});
  const std::vector<double> lengths{10, 20, 30, 40, 50, 60, 70, 80};
  const DriftResult r = segment_drift(gt, pred, lengths);
  const auto [t, rot] = brute_force_drift(gt, pred, lengths);
  CHECK(std::abs(r.translation_pct - t) < 1e-9);
  CHECK(std::abs(r.rotation_deg_per_100m - rot) < 1e-9);
}

TEST_CASE("drift: tallies merge across episodes and short paths are reported") {
  Rng rng = make_rng(8);
  const auto g1 = integrate_relative(random_relatives(80, rng), GlobalPose{});
  const auto p1 = integrate_relative(random_relatives(80, rng), GlobalPose{});
  const auto g2 = integrate_relative(random_relatives(60, rng), GlobalPose{});
  const auto p2 = integrate_relative(random_relatives(60, rng), GlobalPose{});
  const std::vector<double> lengths{10, 20};
  DriftTally a = segment_drift_tally(g1, p1, lengths);
  const DriftTally b = segment_drift_tally(g2, p2, lengths);
  const std::size_t n = a.segments() + b.segments();
  a.merge(b);
  CHECK(a.segments() == n);

  CHECK(default_drift_lengths(50.0) == desk_drift_lengths());
  CHECK(default_drift_lengths(900.0) == paper_drift_lengths());
  std::vector<RelativePose> short_steps(20, rel(1, 0, 0, 0, 0, 0));
  const auto s = integrate_relative(short_steps, GlobalPose{});
  try {
    segment_drift(s, s, std::vector<double>{10, 30});
    FAIL("expected TrajectoryTooShort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TrajectoryTooShort);
    CHECK(std::string(e.what()).find("10") != std::string::npos);
  }
}

TEST_CASE("cylindrical projection examples") {
  ProjectedPoint p = project_point({1, 0, 0}, 1, 1);
  CHECK(p.alpha == 0.0);
  CHECK(p.beta == 0.0);
  CHECK(p.range == 1.0);
  p = project_point({1, 1, std::sqrt(2.0)}, 1, 1);
  CHECK(p.alpha == doctest::Approx(pi / 4).epsilon(1e-14));
  CHECK(p.beta == doctest::Approx(pi / 4).epsilon(1e-14));
  CHECK(p.range == doctest::Approx(2.0).epsilon(1e-14));
  expect_code(ErrorCode::OriginPoint, [] { project_point({0, 0, 0}, 1, 1); });

  const std::vector<Eigen::Vector3d> pts{{2, 0, 0}, {5, 0, 0}, {0, 3, 0}};
  const double da = 2 * pi / 8, db = pi / 4;
  const ProjectionGrid grid = cylindrical_project(pts, da, db, 4, 8);
  CHECK(grid.at(2, 4) == 2.0);  // nearer point wins
  CHECK(grid.at(2, 6) == 3.0);  // azimuth pi/2
  std::size_t filled = 0;
  for (double c : grid.cells) filled += c != 0.0;
  CHECK(filled == 2);
  CHECK(grid.dropped == 0);
}

TEST_CASE("trajectory files round trip") {
  Rng rng = make_rng(9);
  const auto steps = random_relatives(10, rng);
  const auto traj = integrate_relative(steps, GlobalPose{});
  const auto dir = scratch_dir("geometry");
  write_global_trajectory(dir / "g.csv", traj);
  write_relative_trajectory(dir / "r.csv", steps);
  const auto g = read_global_trajectory(dir / "g.csv");
  const auto r = read_relative_trajectory(dir / "r.csv");
  REQUIRE(g.size() == traj.size());
  REQUIRE(r.size() == steps.size());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i].to_vector() == traj[i].to_vector());
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i].to_vector() == steps[i].to_vector());
}

}  // TEST_SUITE
