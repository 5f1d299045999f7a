#include "usrecon/tracking.hpp"

#include "catch_amalgamated.hpp"

using namespace usrecon;
using namespace usrecon::tracking;

namespace {

PoseTrack two_point_track() {
  PoseTrack track;
  PoseSample a;
  a.t = 0.0;
  a.pose.position = Eigen::Vector3d(0, 0, 0);
  PoseSample b;
  b.t = 10.0;
  b.pose.position = Eigen::Vector3d(10, 0, 0);
  track.samples = {a, b};
  return track;
}

bool error_code_is(const Error& e, ErrorCode c) { return e.code() == c; }

}  // namespace

TEST_CASE("sync interpolates position linearly") {
  const auto poses = sync_poses_to_frames(two_point_track(), {4.0});
  REQUIRE(poses.size() == 1);
  CHECK((poses[0].position - Eigen::Vector3d(4, 0, 0)).norm() < 1e-12);
}

TEST_CASE("sync at a sample time reproduces the sample exactly") {
  PoseTrack track = two_point_track();
  track.samples[1].pose.rotation = geometry::tilt_to_rotation(0.3, 0.1, -0.2);
  const auto poses = sync_poses_to_frames(track, {0.0, 10.0});
  CHECK(poses[0].position == track.samples[0].pose.position);
  CHECK(poses[0].rotation == track.samples[0].pose.rotation);
  CHECK(poses[1].position == track.samples[1].pose.position);
  CHECK(poses[1].rotation == track.samples[1].pose.rotation);
}

TEST_CASE("sync rejects frames outside the padded range") {
  CHECK_THROWS_MATCHES(sync_poses_to_frames(two_point_track(), {-1.0}), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return error_code_is(e, ErrorCode::OutOfRange); }));
  // Inside the pad: clamps to the first sample.
  const auto poses = sync_poses_to_frames(two_point_track(), {-0.03});
  CHECK(poses[0].position == Eigen::Vector3d(0, 0, 0));
}

TEST_CASE("sync position is affine in t between samples") {
  PoseTrack track = two_point_track();
  track.samples[1].pose.position = Eigen::Vector3d(3, -7, 2);
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const double t1 = rng.uniform(0.0, 10.0);
    const double t2 = rng.uniform(0.0, 10.0);
    const auto poses = sync_poses_to_frames(track, {t1, t2, 0.5 * (t1 + t2)});
    const Eigen::Vector3d mid = 0.5 * (poses[0].position + poses[1].position);
    REQUIRE((poses[2].position - mid).norm() < 1e-9);
  }
}

TEST_CASE("sync rotation follows constant angular velocity") {
  PoseTrack track = two_point_track();
  track.samples[1].pose.rotation = geometry::tilt_to_rotation(0.4, 0.0, 0.0);
  const auto poses = sync_poses_to_frames(track, {5.0});
  const Eigen::Matrix3d expect = geometry::tilt_to_rotation(0.2, 0.0, 0.0);
  CHECK((poses[0].rotation - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inter_frame_spacing basics") {
  SECTION("3-4-5 triangle") {
    const auto d = inter_frame_spacing({{0, 0, 0}, {3, 4, 0}});
    REQUIRE(d.size() == 1);
    CHECK(d[0] == Catch::Approx(5.0).margin(1e-15));
  }
  SECTION("repeated position") {
    const auto d = inter_frame_spacing({{1, 2, 3}, {1, 2, 3}});
    CHECK(d[0] == 0.0);
  }
  SECTION("too few") {
    CHECK_THROWS_MATCHES(inter_frame_spacing({{0, 0, 0}}), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return error_code_is(e, ErrorCode::TooFewFrames);
                         }));
  }
}

TEST_CASE("inter_frame_spacing is invariant under rigid motion") {
  Rng rng(77);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 20; ++i)
    pts.emplace_back(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
  const auto base = inter_frame_spacing(pts);

  const Eigen::Matrix3d r = geometry::tilt_to_rotation(0.7, -0.3, 1.9);
  const Eigen::Vector3d t(100, -50, 30);
  std::vector<Eigen::Vector3d> moved;
  for (const auto& p : pts) moved.push_back(r * p + t);
  const auto after = inter_frame_spacing(moved);
  for (std::size_t i = 0; i < base.size(); ++i)
    REQUIRE(after[i] == Catch::Approx(base[i]).margin(1e-9));
}

TEST_CASE("scan_coordinates on collinear motion") {
  const std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  const auto sc = scan_coordinates(pts);
  CHECK((sc.axis - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
  CHECK(sc.s[0] == 0.0);
  CHECK(sc.s[1] == Catch::Approx(1.0).margin(1e-12));
  CHECK(sc.s[2] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("scan_coordinates sign rule keeps s net-increasing") {
  const std::vector<Eigen::Vector3d> pts = {{2, 0, 0}, {1, 0, 0}, {0, 0, 0}};
  const auto sc = scan_coordinates(pts);
  CHECK((sc.axis - Eigen::Vector3d(-1, 0, 0)).norm() < 1e-12);
  CHECK(sc.s[0] == 0.0);
  CHECK(sc.s[1] == Catch::Approx(1.0).margin(1e-12));
  CHECK(sc.s[2] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("scan_coordinates rejects a static cluster") {
  const std::vector<Eigen::Vector3d> pts = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  CHECK_THROWS_MATCHES(scan_coordinates(pts), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return error_code_is(e, ErrorCode::ZeroMotion); }));
}

namespace {
FrameIndex make_frames(const std::vector<double>& s) {
  FrameIndex frames;
  for (std::size_t i = 0; i < s.size(); ++i) {
    FrameIndexEntry e;
    e.frame = static_cast<int>(i);
    e.t = 0.01 * static_cast<double>(i);
    e.s = s[i];
    frames.push_back(e);
  }
  return frames;
}
}  // namespace

TEST_CASE("monotonic_reorder sorts by scan coordinate") {
  const auto out = monotonic_reorder(make_frames({0.0, 2.0, 1.0}));
  REQUIRE(out.size() == 3);
  CHECK(out[0].frame == 0);
  CHECK(out[1].frame == 2);
  CHECK(out[2].frame == 1);
  CHECK(out[0].s == 0.0);
  CHECK(out[1].s == 1.0);
  CHECK(out[2].s == 2.0);
}

TEST_CASE("monotonic_reorder drops near-duplicates keeping the earliest") {
  const auto out = monotonic_reorder(make_frames({0.0, 0.005, 1.0}));
  REQUIRE(out.size() == 2);
  CHECK(out[0].frame == 0);
  CHECK(out[1].frame == 2);
}

TEST_CASE("monotonic_reorder earliest-wins inside a duplicate group") {
  FrameIndex frames = make_frames({0.004, 0.0, 1.0});
  // Frame 1 has the smaller s and later... adjust times so frame 1 is earliest.
  frames[0].t = 0.05;
  frames[1].t = 0.01;
  const auto out = monotonic_reorder(frames);
  REQUIRE(out.size() == 2);
  CHECK(out[0].frame == 1);
}

TEST_CASE("monotonic_reorder output is strictly increasing and idempotent") {
  Rng rng(3141);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s;
    double v = 0.0;
    for (int i = 0; i < 100; ++i) {
      v += rng.uniform(-0.02, 0.2);
      s.push_back(v);
    }
    const auto out = monotonic_reorder(make_frames(s));
    for (std::size_t i = 1; i < out.size(); ++i) REQUIRE(out[i].s > out[i - 1].s);
    const auto again = monotonic_reorder(out);
    REQUIRE(again.size() == out.size());
    for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(again[i].frame == out[i].frame);
  }
}

TEST_CASE("monotonic_reorder with everything coincident") {
  CHECK_THROWS_MATCHES(monotonic_reorder(make_frames({0.0, 0.001, 0.002})), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return error_code_is(e, ErrorCode::AllDuplicates);
                       }));
}

TEST_CASE("tilt_statistics of constant tilt is zero") {
  const std::vector<Eigen::Vector3d> tilts(10, Eigen::Vector3d(0.1, -0.2, 0.3));
  CHECK(tilt_statistics(tilts).norm() < 1e-12);
}

TEST_CASE("tilt_statistics matches the closed form for an alternating sequence") {
  const int n = 200;
  std::vector<Eigen::Vector3d> tilts;
  for (int i = 0; i < n; ++i)
    tilts.emplace_back(i % 2 == 0 ? 0.1 : -0.1, 0.0, 0.0);
  const Eigen::Vector3d sigma = tilt_statistics(tilts);
  const double expect = 0.1 * std::sqrt(static_cast<double>(n) / (n - 1.0));
  CHECK(sigma.x() == Catch::Approx(expect).margin(1e-12));
  CHECK(sigma.y() == 0.0);
  CHECK(sigma.z() == 0.0);
}

TEST_CASE("tilt_statistics is invariant under constant offsets") {
  Rng rng(2718);
  std::vector<Eigen::Vector3d> tilts;
  for (int i = 0; i < 100; ++i)
    tilts.emplace_back(0.05 * rng.gaussian(), 0.05 * rng.gaussian(), 0.05 * rng.gaussian());
  const Eigen::Vector3d base = tilt_statistics(tilts);

  std::vector<Eigen::Vector3d> shifted;
  for (const auto& t : tilts) shifted.push_back(t + Eigen::Vector3d(0.9, -1.2, 2.0));
  const Eigen::Vector3d after = tilt_statistics(shifted);
  CHECK((after - base).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("tilt_statistics unwraps the +-pi branch") {
  std::vector<Eigen::Vector3d> tilts;
  for (int i = 0; i < 100; ++i)
    tilts.emplace_back(0.0, 0.0, i % 2 == 0 ? M_PI - 0.05 : -M_PI + 0.05);
  const Eigen::Vector3d sigma = tilt_statistics(tilts);
  const double expect = 0.05 * std::sqrt(100.0 / 99.0);
  CHECK(sigma.z() == Catch::Approx(expect).margin(1e-9));
}

TEST_CASE("repeatability_ssim of a run against itself is exactly one") {
  Rng rng(5);
  std::vector<ImageU8> run;
  for (int k = 0; k < 3; ++k) {
    ImageU8 img(32, 24);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.uniform() * 256.0);
    run.push_back(img);
  }
  const auto scores = repeatability_ssim(run, run);
  REQUIRE(scores.size() == 3);
  for (double s : scores) REQUIRE(s == 1.0);
}

TEST_CASE("repeatability_ssim rejects mismatched runs") {
  const std::vector<ImageU8> a(2, ImageU8(16, 16, 0));
  const std::vector<ImageU8> b(3, ImageU8(16, 16, 0));
  CHECK_THROWS_MATCHES(repeatability_ssim(a, b), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return error_code_is(e, ErrorCode::LengthMismatch);
                       }));
}

TEST_CASE("median helper") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
}
