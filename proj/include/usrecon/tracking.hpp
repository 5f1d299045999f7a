#pragma once

// Timestamp synchronization of the pose stream to the frame stream,
// inter-frame spacing, scan coordinates, monotonic reordering and tilt
// statistics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Geometry>

#include "usrecon/common.hpp"
#include "usrecon/geometry.hpp"
#include "usrecon/imgproc.hpp"

namespace usrecon::tracking {

using geometry::Pose;

struct PoseSample {
  double t = 0.0;  // seconds
  Pose pose;
};

// Time-ordered marker poses from the tracking camera.
struct PoseTrack {
  std::vector<PoseSample> samples;

  void validate() const {
    require(samples.size() >= 2, ErrorCode::TooFewFrames, "pose track needs at least two samples");
    for (std::size_t i = 1; i < samples.size(); ++i)
      require(samples[i].t > samples[i - 1].t, ErrorCode::NotMonotonic,
              "pose timestamps must be strictly increasing (sample " + std::to_string(i) + ")");
  }
};

// Per-frame tracking state after synchronization.
struct FrameIndexEntry {
  int frame = 0;          // index into the frame stream
  double t = 0.0;         // seconds
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // mm
  Eigen::Vector3d tilt = Eigen::Vector3d::Zero();      // rad, intrinsic X-Y-Z
  double s = 0.0;         // mm along the scan axis
};

using FrameIndex = std::vector<FrameIndexEntry>;

// Interpolate the pose track at each frame time: linear in position,
// spherical in rotation. Frame times may fall outside the sampled range by
// at most `pad` seconds (clamped); anything further is rejected.
inline std::vector<Pose> sync_poses_to_frames(const PoseTrack& track,
                                              const std::vector<double>& frame_times,
                                              double pad = 0.05) {
  track.validate();
  const auto& samples = track.samples;
  std::vector<Pose> out;
  out.reserve(frame_times.size());

  for (std::size_t i = 0; i < frame_times.size(); ++i) {
    double t = frame_times[i];
    require(t >= samples.front().t - pad && t <= samples.back().t + pad, ErrorCode::OutOfRange,
            "frame " + std::to_string(i) + " at t=" + format_double(t) +
                " outside the pose track (pad " + format_double(pad) + " s)");
    t = std::clamp(t, samples.front().t, samples.back().t);

    const auto it = std::upper_bound(samples.begin(), samples.end(), t,
                                     [](double v, const PoseSample& s) { return v < s.t; });
    const std::size_t hi = std::min<std::size_t>(
        std::max<std::ptrdiff_t>(1, it - samples.begin()), samples.size() - 1);
    const PoseSample& a = samples[hi - 1];
    const PoseSample& b = samples[hi];
    const double w = (t - a.t) / (b.t - a.t);

    Pose p;
    if (t == a.t) {
      p = a.pose;
    } else if (t == b.t) {
      p = b.pose;
    } else {
      p.position = (1.0 - w) * a.pose.position + w * b.pose.position;
      const Eigen::Quaterniond qa(a.pose.rotation);
      const Eigen::Quaterniond qb(b.pose.rotation);
      p.rotation = qa.slerp(w, qb).toRotationMatrix();
    }
    out.push_back(p);
  }
  return out;
}

// Euclidean distance between consecutive positions (length n-1).
inline std::vector<double> inter_frame_spacing(const std::vector<Eigen::Vector3d>& positions) {
  require(positions.size() >= 2, ErrorCode::TooFewFrames, "need at least two positions");
  std::vector<double> out;
  out.reserve(positions.size() - 1);
  for (std::size_t i = 0; i + 1 < positions.size(); ++i)
    out.push_back((positions[i + 1] - positions[i]).norm());
  return out;
}

struct ScanCoordinates {
  Eigen::Vector3d axis = Eigen::Vector3d::UnitX();  // unit scan direction
  std::vector<double> s;                            // mm, s[0] == 0
};

// Principal direction of the centered positions, sign fixed so the scan
// coordinate is net-increasing; s_i is the projection of p_i - p_0.
inline ScanCoordinates scan_coordinates(const std::vector<Eigen::Vector3d>& positions) {
  require(positions.size() >= 2, ErrorCode::TooFewFrames, "need at least two positions");

  double max_dist2 = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = i + 1; j < positions.size(); ++j)
      max_dist2 = std::max(max_dist2, (positions[i] - positions[j]).squaredNorm());
  require(max_dist2 >= 1e-6 * 1e-6, ErrorCode::ZeroMotion, "positions do not move");

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : positions) mean += p;
  mean /= static_cast<double>(positions.size());

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : positions) {
    const Eigen::Vector3d d = p - mean;
    cov += d * d.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Vector3d axis = eig.eigenvectors().col(2);  // largest eigenvalue
  if (axis.dot(positions.back() - positions.front()) < 0.0) axis = -axis;

  ScanCoordinates out;
  out.axis = axis;
  out.s.reserve(positions.size());
  for (const auto& p : positions) out.s.push_back((p - positions.front()).dot(axis));
  return out;
}

// Stable sort by scan coordinate; within `duplicate_eps` of a kept frame the
// earliest-acquired frame wins and the rest are dropped. Grouping repeats
// until no pair closer than eps remains, so the result is a fixed point:
// strictly increasing with consecutive gaps of at least eps.
inline FrameIndex monotonic_reorder(const FrameIndex& frames, double duplicate_eps = 0.01) {
  FrameIndex kept = frames;
  std::stable_sort(kept.begin(), kept.end(),
                   [](const FrameIndexEntry& a, const FrameIndexEntry& b) { return a.s < b.s; });

  bool changed = true;
  while (changed) {
    changed = false;
    FrameIndex next;
    std::size_t i = 0;
    while (i < kept.size()) {
      // Group everything within eps of the group opener, keep the earliest.
      std::size_t j = i;
      std::size_t earliest = i;
      while (j < kept.size() && kept[j].s - kept[i].s < duplicate_eps) {
        if (kept[j].t < kept[earliest].t) earliest = j;
        ++j;
      }
      next.push_back(kept[earliest]);
      if (j - i > 1) changed = true;
      i = j;
    }
    kept = std::move(next);
  }
  require(kept.size() >= 2, ErrorCode::AllDuplicates,
          "fewer than two frames survive duplicate removal");
  return kept;
}

// Per-axis sample standard deviation of tilt angles. Angles are first
// unwrapped to the 2*pi branch nearest the running mean so wrap-around at
// +-pi does not inflate the spread.
inline Eigen::Vector3d tilt_statistics(const std::vector<Eigen::Vector3d>& tilts) {
  require(tilts.size() >= 2, ErrorCode::TooFewFrames, "need at least two tilt samples");
  Eigen::Vector3d sigma;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> unwrapped;
    unwrapped.reserve(tilts.size());
    double running_sum = 0.0;
    for (std::size_t i = 0; i < tilts.size(); ++i) {
      double a = tilts[i][axis];
      if (i > 0) {
        const double mean = running_sum / static_cast<double>(i);
        a += 2.0 * M_PI * std::round((mean - a) / (2.0 * M_PI));
      }
      unwrapped.push_back(a);
      running_sum += a;
    }
    const double mean = running_sum / static_cast<double>(unwrapped.size());
    double acc = 0.0;
    for (double a : unwrapped) acc += (a - mean) * (a - mean);
    sigma[axis] = std::sqrt(acc / (static_cast<double>(unwrapped.size()) - 1.0));
  }
  return sigma;
}

// Per-pair structural similarity between two runs of equal length.
inline std::vector<double> repeatability_ssim(const std::vector<ImageU8>& run_a,
                                              const std::vector<ImageU8>& run_b) {
  require(run_a.size() == run_b.size(), ErrorCode::LengthMismatch,
          "runs have different frame counts");
  std::vector<double> scores;
  scores.reserve(run_a.size());
  for (std::size_t i = 0; i < run_a.size(); ++i)
    scores.push_back(imgproc::ssim(run_a[i], run_b[i]));
  return scores;
}

inline double median(std::vector<double> values) {
  require(!values.empty(), ErrorCode::InvalidArgument, "median of empty range");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double m = values[mid];
  if (values.size() % 2 == 0) {
    const auto lower = std::max_element(values.begin(), values.begin() + mid);
    m = 0.5 * (m + *lower);
  }
  return m;
}

}  // namespace usrecon::tracking
