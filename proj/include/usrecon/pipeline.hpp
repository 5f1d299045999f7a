#pragma once

// End-to-end reconstruction over a dataset: synchronization, scan
// coordinates, monotonic reordering, enhancement, segmentation or mask
// ingestion, and slice interpolation. Also the detection pass that rebuilds
// the pose log from stored tracking-camera views.

#include <chrono>
#include <thread>

#include <json.hpp>

#include "usrecon/imgproc.hpp"
#include "usrecon/io.hpp"
#include "usrecon/marker.hpp"
#include "usrecon/recon.hpp"
#include "usrecon/tracking.hpp"

namespace usrecon::recon {

namespace detail {

[[noreturn]] inline void rethrow_with_stage(const Error& e, const char* stage) {
  raise(e.code(), std::string("[") + stage + "] " + e.what());
}

inline imgproc::Mask resample_mask_nearest(const imgproc::Mask& mask, int width, int height) {
  imgproc::Mask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height() - 1,
                            static_cast<int>((y + 0.5) * mask.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(mask.width() - 1,
                              static_cast<int>((x + 0.5) * mask.width() / width));
      out(x, y) = mask(sx, sy) != 0 ? 255 : 0;
    }
  }
  return out;
}

}  // namespace detail

// Frames after the full per-frame pipeline, in scan order.
struct ProcessedRun {
  std::vector<ImageU8> frames;          // enhanced, masked, reordered
  std::vector<double> s;                // strictly increasing scan coordinates
  std::vector<int> source_frame;        // original frame index per entry
  std::vector<Eigen::Vector3d> tilts;   // per kept frame
  int frames_in = 0;
};

// Everything up to (not including) slice interpolation.
inline ProcessedRun process_dataset(const io::Dataset& ds, int workers = 1) {
  require(workers >= 1, ErrorCode::InvalidArgument, "workers must be >= 1");
  ProcessedRun run;
  run.frames_in = static_cast<int>(ds.frame_times.size());

  // Synchronize poses to frame times.
  std::vector<geometry::Pose> poses;
  try {
    poses = tracking::sync_poses_to_frames(ds.poses, ds.frame_times);
  } catch (const Error& e) {
    detail::rethrow_with_stage(e, "sync");
  }

  // Scan coordinates and monotonic ordering.
  tracking::FrameIndex index;
  try {
    std::vector<Eigen::Vector3d> positions;
    positions.reserve(poses.size());
    for (const auto& p : poses) positions.push_back(p.position);
    const auto sc = tracking::scan_coordinates(positions);
    index.resize(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) {
      index[i].frame = static_cast<int>(i);
      index[i].t = ds.frame_times[i];
      index[i].position = positions[i];
      const auto tilt = geometry::rotation_to_tilt(poses[i].rotation);
      index[i].tilt = Eigen::Vector3d(tilt.x, tilt.y, tilt.z);
      index[i].s = sc.s[i];
    }
    index = tracking::monotonic_reorder(index, ds.config.duplicate_eps_mm);
  } catch (const Error& e) {
    detail::rethrow_with_stage(e, "reorder");
  }

  // Load and enhance the retained frames, then apply masks.
  try {
    const int n = static_cast<int>(index.size());
    std::vector<ImageU8> raw(n);
    parallel_for(n, workers, [&](int i) {
      raw[i] = io::read_png_gray8(ds.frame_paths.at(index[i].frame));
    });
    for (int i = 1; i < n; ++i)
      require(raw[i].same_shape(raw[0]), ErrorCode::ShapeMismatch,
              "frame " + std::to_string(index[i].frame) + " has a different shape");

    imgproc::EnhanceParams params;
    params.log_alpha = ds.config.log_alpha;
    // Frames are 8-bit; one absolute full-scale reference keeps content-free
    // frames from having their noise floor stretched to full range.
    params.log_reference_max = 255.0;
    params.clamp_lo = ds.config.clamp_lo;
    params.clamp_hi = ds.config.clamp_hi;
    params.clahe_tiles = ds.config.clahe_tiles;
    params.clahe_clip = ds.config.clahe_clip;
    const auto [clamp_lo, clamp_hi] = imgproc::resolve_clamp_bounds(raw[0], params);

    run.frames.resize(n);
    parallel_for(n, workers, [&](int i) {
      ImageU8 enhanced = imgproc::enhance_frame(raw[i], clamp_lo, clamp_hi, params);
      imgproc::Mask mask;
      if (ds.has_masks()) {
        mask = io::read_png_gray8(ds.mask_paths.at(index[i].frame));
        if (!mask.same_shape(enhanced))
          mask = detail::resample_mask_nearest(mask, enhanced.width(), enhanced.height());
      } else {
        try {
          mask = imgproc::segment_baseline(enhanced);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyMask) throw;
          mask = imgproc::Mask(enhanced.width(), enhanced.height(), 0);  // nothing to keep
        }
      }
      run.frames[i] = imgproc::apply_mask(enhanced, mask);
    });
  } catch (const Error& e) {
    detail::rethrow_with_stage(e, "preprocess");
  }

  run.s.reserve(index.size());
  run.tilts.reserve(index.size());
  run.source_frame.reserve(index.size());
  for (const auto& e : index) {
    run.s.push_back(e.s);
    run.tilts.push_back(e.tilt);
    run.source_frame.push_back(e.frame);
  }
  return run;
}

struct RunReport {
  int frames_in = 0;
  int frames_kept = 0;
  double scan_length_mm = 0.0;
  double slice_pitch_mm = 0.1;
  Eigen::Vector3d tilt_sigma_rad = Eigen::Vector3d::Zero();
  double wall_time_ms = 0.0;
  int workers = 1;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["frames_in"] = frames_in;
    j["frames_kept"] = frames_kept;
    j["scan_length_mm"] = scan_length_mm;
    j["slice_pitch_mm"] = slice_pitch_mm;
    j["tilt_sigma_rad"] = {{"x", tilt_sigma_rad.x()},
                           {"y", tilt_sigma_rad.y()},
                           {"z", tilt_sigma_rad.z()}};
    if (workers <= 1) {
      j["wall_time_ms"] = {{"serial", wall_time_ms}};
    } else {
      j["wall_time_ms"] = {{"parallel", wall_time_ms}, {"workers", workers}};
    }
    return j;
  }
};

struct ReconResult {
  VolumeGrid volume;
  RunReport report;
  ProcessedRun run;
};

// Full reconstruction. The parallel path partitions per-frame work and
// output planes across workers; the voxel output is bit-identical for every
// worker count.
inline ReconResult reconstruct(const io::Dataset& ds, int workers = 1) {
  require(workers >= 1, ErrorCode::InvalidArgument, "workers must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  ReconResult result;
  result.run = process_dataset(ds, workers);
  try {
    result.volume = interpolate_slices(result.run.frames, result.run.s, ds.config.slice_pitch_mm,
                                       ds.config.pixel_pitch_lateral_mm,
                                       ds.config.pixel_pitch_axial_mm, workers);
  } catch (const Error& e) {
    detail::rethrow_with_stage(e, "interpolate");
  }

  result.report.frames_in = result.run.frames_in;
  result.report.frames_kept = static_cast<int>(result.run.frames.size());
  result.report.scan_length_mm = result.run.s.back() - result.run.s.front();
  result.report.slice_pitch_mm = ds.config.slice_pitch_mm;
  result.report.tilt_sigma_rad = tracking::tilt_statistics(result.run.tilts);
  result.report.workers = workers;
  result.report.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

inline ReconResult reconstruct_parallel(const io::Dataset& ds, int workers) {
  return reconstruct(ds, workers);
}

}  // namespace usrecon::recon

namespace usrecon::pipeline {

// Rebuild the pose log by running marker detection over the stored tracking
// camera views (and depth, when present). Views without an accepted
// detection contribute no sample.
inline tracking::PoseTrack detect_poses(const io::Dataset& ds,
                                        std::optional<int> marker_id = std::nullopt) {
  require(ds.has_camera(), ErrorCode::ValidationFailed,
          "dataset has no camera/ views to run detection on");
  const auto& dict = marker::dictionary_4x4_50();
  tracking::PoseTrack track;
  for (std::size_t i = 0; i < ds.camera_paths.size(); ++i) {
    const ImageU8 view = io::read_png_gray8(ds.camera_paths[i]);
    Image<float> depth;
    const bool have_depth = ds.has_depth();
    if (have_depth) depth = io::read_depth_png(ds.depth_paths[i]);
    const auto obs = marker::detect_markers(view, ds.camera, dict, ds.config.marker_side_mm,
                                            ds.camera_times[i], have_depth ? &depth : nullptr);
    for (const auto& o : obs) {
      if (!marker_id || o.id == *marker_id) {
        tracking::PoseSample s;
        s.t = ds.camera_times[i];
        s.pose = o.pose;
        track.samples.push_back(s);
        break;
      }
    }
  }
  require(track.samples.size() >= 2, ErrorCode::TooFewFrames,
          "detection yielded fewer than two pose samples");
  return track;
}

}  // namespace usrecon::pipeline
