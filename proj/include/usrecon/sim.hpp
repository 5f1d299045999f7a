#pragma once

// Synthetic scan rig: analytic phantom, jittered linear trajectory, marker
// view rendering into a distorted camera (with depth), and B-mode-like frame
// rendering. Serves as the ground-truth oracle in place of physical hardware.
//
// World frame: x lateral, y axial (into tissue), z scan/track direction.
// The camera sits in front of the track and maps world z to image x.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "usrecon/common.hpp"
#include "usrecon/geometry.hpp"
#include "usrecon/imgproc.hpp"
#include "usrecon/io.hpp"
#include "usrecon/marker.hpp"
#include "usrecon/recon.hpp"

namespace usrecon::sim {

using geometry::CameraModel;
using geometry::Pose;

// ---------------------------------------------------------------------------
// Phantom

struct Primitive {
  enum class Kind { Cylinder, Ellipsoid, Box };
  Kind kind = Kind::Cylinder;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // local -> world
  // Cylinder: (radius, unused, half length along local z).
  // Ellipsoid: semi-axes. Box: half extents.
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  double echogenicity = 0.7;

  bool contains(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d local = rotation.transpose() * (p - center);
    switch (kind) {
      case Kind::Cylinder:
        return local.head<2>().squaredNorm() <= size.x() * size.x() &&
               std::abs(local.z()) <= size.z();
      case Kind::Ellipsoid: {
        const Eigen::Vector3d q = local.cwiseQuotient(size);
        return q.squaredNorm() <= 1.0;
      }
      case Kind::Box:
        return std::abs(local.x()) <= size.x() && std::abs(local.y()) <= size.y() &&
               std::abs(local.z()) <= size.z();
    }
    return false;
  }
};

struct Phantom {
  std::vector<Primitive> primitives;
  double background_echo = 0.12;
  double interface_echo = 0.95;

  bool inside(const Eigen::Vector3d& p) const {
    for (const auto& prim : primitives)
      if (prim.contains(p)) return true;
    return false;
  }

  double echo_at(const Eigen::Vector3d& p) const {
    for (const auto& prim : primitives)
      if (prim.contains(p)) return prim.echogenicity;
    return background_echo;
  }
};

// ---------------------------------------------------------------------------
// Trajectory

struct TrajectorySpec {
  double scan_length_mm = 91.0;  // track length for linear probe motion
  double speed_mm_s = 5.0;
  double frame_rate_hz = 100.0;  // ultrasound frames
  double pose_rate_hz = 60.0;    // tracking camera
  double position_jitter_mm = 0.05;
  Eigen::Vector3d tilt_jitter_rad{0.005, 0.005, 0.005};
  double jitter_time_constant_s = 0.1;  // AR(1) correlation time
  std::uint64_t seed = 1;
};

// Smooth stationary noise: AR(1) sampled on a uniform grid, linearly
// interpolated in between. Marginal standard deviation is sigma.
class SmoothNoise {
 public:
  SmoothNoise() = default;
  SmoothNoise(std::uint64_t seed, double sigma, double rate_hz, double duration_s,
              double time_constant_s) {
    rate_ = rate_hz;
    const std::size_t n = static_cast<std::size_t>(std::ceil(duration_s * rate_hz)) + 3;
    values_.resize(n);
    Rng rng(seed);
    if (sigma <= 0.0) {
      std::fill(values_.begin(), values_.end(), 0.0);
      return;
    }
    const double phi = std::exp(-1.0 / (rate_hz * std::max(1e-6, time_constant_s)));
    const double innovation = sigma * std::sqrt(std::max(0.0, 1.0 - phi * phi));
    values_[0] = sigma * rng.gaussian();
    for (std::size_t i = 1; i < n; ++i)
      values_[i] = phi * values_[i - 1] + innovation * rng.gaussian();
  }

  double at(double t) const {
    if (values_.empty()) return 0.0;
    const double u = std::clamp(t, 0.0, 0.0 + (values_.size() - 1) / rate_) * rate_;
    const std::size_t i = std::min(static_cast<std::size_t>(u), values_.size() - 2);
    const double w = u - static_cast<double>(i);
    return (1.0 - w) * values_[i] + w * values_[i + 1];
  }

 private:
  double rate_ = 1.0;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Rig geometry

struct RigConfig {
  CameraModel camera = CameraModel::realsense_d435();
  int camera_width = 856;
  int camera_height = 480;
  double camera_distance_mm = 250.0;  // camera to track plane
  double camera_roll_rad = 0.07;      // in-plane roll of the tracking camera
  int marker_id = 23;
  double marker_side_mm = 40.0;

  int frame_width = 256;
  int frame_height = 190;
  double pitch_lateral_mm = 0.15;
  double pitch_axial_mm = 0.2;
  double roi_offset_mm = 15.0;  // probe face to first image row
  double speckle_sigma = 0.25;
  double interface_band_px = 2.0;
  // Empirical clamp bounds written into the dataset config; log-domain values
  // bracketing the background speckle below and the echogenic interior above.
  double clamp_lo = 0.55;
  double clamp_hi = 0.85;
};

// World -> camera rotation without roll: world z -> camera x, world x ->
// camera y, world y -> camera z (optical axis).
inline Eigen::Matrix3d camera_base_rotation() {
  Eigen::Matrix3d r;
  r << 0, 0, 1,
       1, 0, 0,
       0, 1, 0;
  return r;
}

struct RigFrames {
  Eigen::Matrix3d world_to_cam;       // includes roll
  Eigen::Vector3d camera_origin_w;    // camera center in world coords
};

inline RigFrames rig_frames(const RigConfig& rig, const TrajectorySpec& traj) {
  RigFrames f;
  const Eigen::Matrix3d roll =
      Eigen::AngleAxisd(rig.camera_roll_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  f.world_to_cam = roll * camera_base_rotation();
  f.camera_origin_w =
      Eigen::Vector3d(0.0, -rig.camera_distance_mm, 0.5 * traj.scan_length_mm);
  return f;
}

// Jittered trajectory sampled at arbitrary time: probe position in world
// coordinates plus the wobble rotation applied to the probe (and marker).
class Trajectory {
 public:
  Trajectory(const TrajectorySpec& spec, const RigConfig& rig) : spec_(spec), rig_(rig) {
    const double duration = spec.scan_length_mm / spec.speed_mm_s;
    for (int i = 0; i < 3; ++i) {
      pos_[i] = SmoothNoise(mix_seed(spec.seed, 101 + i), spec.position_jitter_mm,
                            spec.frame_rate_hz, duration, spec.jitter_time_constant_s);
      tilt_[i] = SmoothNoise(mix_seed(spec.seed, 201 + i), spec.tilt_jitter_rad[i],
                             spec.frame_rate_hz, duration, spec.jitter_time_constant_s);
    }
    frames_ = rig_frames(rig, spec);
  }

  double duration_s() const { return spec_.scan_length_mm / spec_.speed_mm_s; }

  Eigen::Vector3d position_world(double t) const {
    return {pos_[0].at(t), pos_[1].at(t), spec_.speed_mm_s * t + pos_[2].at(t)};
  }

  // Tilt wobble angles, expressed about the camera axes.
  Eigen::Vector3d tilt_camera(double t) const {
    return {tilt_[0].at(t), tilt_[1].at(t), tilt_[2].at(t)};
  }

  // Probe wobble in world coordinates (the camera-axis wobble conjugated back).
  Eigen::Matrix3d wobble_world(double t) const {
    const Eigen::Vector3d a = tilt_camera(t);
    const Eigen::Matrix3d jc = geometry::tilt_to_rotation(a.x(), a.y(), a.z());
    const Eigen::Matrix3d base = camera_base_rotation();
    return base.transpose() * jc * base;
  }

  // Marker pose in the tracking camera frame (what detection should recover).
  Pose marker_pose_camera(double t) const {
    Pose p;
    const Eigen::Matrix3d roll =
        Eigen::AngleAxisd(rig_.camera_roll_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Eigen::Vector3d a = tilt_camera(t);
    p.rotation = roll * geometry::tilt_to_rotation(a.x(), a.y(), a.z());
    p.position = frames_.world_to_cam * (position_world(t) - frames_.camera_origin_w);
    return p;
  }

  // True scan coordinate (world z) of the probe.
  double scan_coordinate(double t) const { return spec_.speed_mm_s * t + pos_[2].at(t); }

 private:
  TrajectorySpec spec_;
  RigConfig rig_;
  RigFrames frames_;
  std::array<SmoothNoise, 3> pos_;
  std::array<SmoothNoise, 3> tilt_;
};

// ---------------------------------------------------------------------------
// Marker view rendering

struct MarkerView {
  ImageU8 image;
  Image<float> depth_mm;  // 0 where no surface was hit
};

// Render the marker (black border, binary payload) into the camera at the
// given camera-frame pose, honoring lens distortion, with 4x4 supersampling.
// Pixels outside the marker see a uniform background.
inline MarkerView render_marker_view(const CameraModel& cam, int width, int height,
                                     const Pose& pose, const marker::MarkerDictionary& dict,
                                     int id, double side_mm,
                                     std::uint8_t background = 200, std::uint8_t black = 30,
                                     std::uint8_t white = 230) {
  require(id >= 0 && id < static_cast<int>(dict.codes.size()), ErrorCode::InvalidArgument,
          "marker id outside dictionary");
  MarkerView out;
  out.image = ImageU8(width, height, background);
  out.depth_mm = Image<float>(width, height, 0.0f);

  const marker::BitMatrix bits = marker::BitMatrix::from_packed(dict.codes[id], dict.grid);
  const int cells = dict.grid + 2;
  const double h = 0.5 * side_mm;
  const double cell = side_mm / cells;

  const Eigen::Vector3d normal = pose.rotation.col(2);
  const double plane_d = normal.dot(pose.position);
  if (pose.position.z() <= 0.0) return out;

  // Bounding box from the projected outer corners.
  double x0 = width, x1 = 0, y0 = height, y1 = 0;
  for (const auto& oc : geometry::marker_object_corners(side_mm)) {
    const Eigen::Vector3d corner =
        pose.rotation * Eigen::Vector3d(oc.x(), oc.y(), 0.0) + pose.position;
    if (corner.z() <= 0.0) return out;
    const Eigen::Vector2d px = geometry::project(corner, cam);
    x0 = std::min(x0, px.x());
    x1 = std::max(x1, px.x());
    y0 = std::min(y0, px.y());
    y1 = std::max(y1, px.y());
  }
  const int bx0 = std::max(0, static_cast<int>(std::floor(x0)) - 4);
  const int bx1 = std::min(width - 1, static_cast<int>(std::ceil(x1)) + 4);
  const int by0 = std::max(0, static_cast<int>(std::floor(y0)) - 4);
  const int by1 = std::min(height - 1, static_cast<int>(std::ceil(y1)) + 4);

  const auto marker_hit = [&](double px, double py, double& u, double& v, double& depth) {
    const Eigen::Vector2d n = geometry::pixel_to_normalized({px, py}, cam);
    const Eigen::Vector3d dir(n.x(), n.y(), 1.0);
    const double denom = normal.dot(dir);
    if (std::abs(denom) < 1e-12) return false;
    const double t = plane_d / denom;
    if (t <= 0.0) return false;
    const Eigen::Vector3d q = t * dir;
    const Eigen::Vector3d local = pose.rotation.transpose() * (q - pose.position);
    u = local.x();
    v = local.y();
    depth = q.z();
    return std::abs(u) <= h && std::abs(v) <= h;
  };

  constexpr int kSub = 4;
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub - 0.5;
          const double py = y + (sy + 0.5) / kSub - 0.5;
          double u, v, depth;
          if (!marker_hit(px, py, u, v, depth)) {
            acc += background;
            continue;
          }
          const int cc = std::min(cells - 1, static_cast<int>((u + h) / cell));
          const int cr = std::min(cells - 1, static_cast<int>((v + h) / cell));
          const bool border = cr == 0 || cr == cells - 1 || cc == 0 || cc == cells - 1;
          const bool is_white = !border && bits.get(cr - 1, cc - 1) != 0;
          acc += is_white ? white : black;
        }
      }
      out.image(x, y) = quantize_u8(acc / (kSub * kSub));
      double u, v, depth;
      if (marker_hit(x, y, u, v, depth)) out.depth_mm(x, y) = static_cast<float>(depth);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// B-mode frame rendering

// Render one frame of the phantom. The probe pose is in world coordinates;
// rows sample increasing depth below the probe face. Echogenicity is looked
// up per pixel, a bright band marks membership changes along the axial
// direction, and the result is multiplied by Rayleigh speckle (no speckle
// when sigma <= 0).
inline imgproc::UsFrame simulate_frame(const Phantom& ph, const Pose& probe_world, int width,
                                       int height, double pitch_lateral, double pitch_axial,
                                       double roi_offset, double speckle_sigma,
                                       double interface_band_px, Rng& rng, double timestamp = 0.0) {
  imgproc::UsFrame frame;
  frame.pixels = ImageU8(width, height);
  frame.pitch_lateral_mm = pitch_lateral;
  frame.pitch_axial_mm = pitch_axial;
  frame.timestamp = timestamp;

  const Eigen::Vector3d lat_axis = probe_world.rotation * Eigen::Vector3d::UnitX();
  const Eigen::Vector3d ax_axis = probe_world.rotation * Eigen::Vector3d::UnitY();
  const int band = std::max(0, static_cast<int>(std::ceil(interface_band_px)));

  for (int j = 0; j < height; ++j) {
    for (int i = 0; i < width; ++i) {
      const double lat = (i - 0.5 * (width - 1)) * pitch_lateral;
      const double ax = roi_offset + j * pitch_axial;
      const Eigen::Vector3d q = probe_world.position + lat * lat_axis + ax * ax_axis;
      double echo = ph.echo_at(q);
      const bool in = ph.inside(q);
      for (int k = 1; k <= band; ++k) {
        if (ph.inside(q + k * pitch_axial * ax_axis) != in ||
            ph.inside(q - k * pitch_axial * ax_axis) != in) {
          echo = ph.interface_echo;
          break;
        }
      }
      const double speckle = speckle_sigma > 0.0 ? rng.rayleigh(speckle_sigma) : 1.0;
      frame.pixels(i, j) = quantize_u8(255.0 * echo * speckle);
    }
  }
  return frame;
}

// Analytic ground-truth mask for a frame: phantom membership sampled at the
// frame's pixel positions.
inline ImageU8 frame_truth_mask(const Phantom& ph, const Pose& probe_world, int width, int height,
                                double pitch_lateral, double pitch_axial, double roi_offset) {
  ImageU8 mask(width, height, 0);
  const Eigen::Vector3d lat_axis = probe_world.rotation * Eigen::Vector3d::UnitX();
  const Eigen::Vector3d ax_axis = probe_world.rotation * Eigen::Vector3d::UnitY();
  for (int j = 0; j < height; ++j) {
    for (int i = 0; i < width; ++i) {
      const double lat = (i - 0.5 * (width - 1)) * pitch_lateral;
      const double ax = roi_offset + j * pitch_axial;
      if (ph.inside(probe_world.position + lat * lat_axis + ax * ax_axis)) mask(i, j) = 255;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Ground-truth volume

// Occupancy volume on a world-aligned grid: voxel = 255 iff its center lies
// inside any phantom primitive.
inline recon::VolumeGrid ground_truth_volume(const Phantom& ph, int nx, int ny, int nz,
                                             const std::array<double, 3>& spacing,
                                             const std::array<double, 3>& origin) {
  recon::VolumeGrid v;
  v.nx = nx;
  v.ny = ny;
  v.nz = nz;
  v.spacing = spacing;
  v.origin = origin;
  v.voxels.assign(static_cast<std::size_t>(nx) * ny * nz, 0);
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        const Eigen::Vector3d p(origin[0] + x * spacing[0], origin[1] + y * spacing[1],
                                origin[2] + z * spacing[2]);
        if (ph.inside(p)) v.at(x, y, z) = 255;
      }
    }
  }
  return v;
}

// Default phantom: a cylinder along the scan axis, centered on the track and
// on the imaging region.
inline Phantom make_cylinder_phantom(const RigConfig& rig, double scan_length_mm,
                                     double radius_mm = 6.0, double length_mm = 60.0,
                                     double echo = 0.7) {
  Phantom ph;
  Primitive prim;
  prim.kind = Primitive::Kind::Cylinder;
  prim.center = Eigen::Vector3d(0.0, rig.roi_offset_mm + 0.5 * rig.frame_height * rig.pitch_axial_mm,
                                0.5 * scan_length_mm);
  prim.size = Eigen::Vector3d(radius_mm, radius_mm, 0.5 * length_mm);
  prim.echogenicity = echo;
  ph.primitives.push_back(prim);
  return ph;
}

inline Phantom make_box_phantom(const RigConfig& rig, double scan_length_mm,
                                double half_x = 8.0, double half_y = 5.0, double half_z = 25.0,
                                double echo = 0.7) {
  Phantom ph;
  Primitive prim;
  prim.kind = Primitive::Kind::Box;
  prim.center = Eigen::Vector3d(0.0, rig.roi_offset_mm + 0.5 * rig.frame_height * rig.pitch_axial_mm,
                                0.5 * scan_length_mm);
  prim.size = Eigen::Vector3d(half_x, half_y, half_z);
  prim.echogenicity = echo;
  ph.primitives.push_back(prim);
  return ph;
}

inline Phantom make_ellipsoid_phantom(const RigConfig& rig, double scan_length_mm,
                                      double ax = 8.0, double ay = 6.0, double az = 25.0,
                                      double echo = 0.7) {
  Phantom ph;
  Primitive prim;
  prim.kind = Primitive::Kind::Ellipsoid;
  prim.center = Eigen::Vector3d(0.0, rig.roi_offset_mm + 0.5 * rig.frame_height * rig.pitch_axial_mm,
                                0.5 * scan_length_mm);
  prim.size = Eigen::Vector3d(ax, ay, az);
  prim.echogenicity = echo;
  ph.primitives.push_back(prim);
  return ph;
}

// ---------------------------------------------------------------------------
// Dataset generation

// Ground-truth sidecar written to out/truth.json.
struct SimTruth {
  std::vector<double> s_mm;                    // true scan coordinate per frame
  std::vector<std::array<double, 3>> tilt_rad; // true camera-frame tilt per frame
  nlohmann::json phantom_echo;
  nlohmann::json trajectory_echo;
};

inline nlohmann::json phantom_to_json(const Phantom& ph) {
  nlohmann::json j;
  j["background_echo"] = ph.background_echo;
  j["interface_echo"] = ph.interface_echo;
  j["primitives"] = nlohmann::json::array();
  for (const auto& p : ph.primitives) {
    nlohmann::json pj;
    pj["kind"] = p.kind == Primitive::Kind::Cylinder ? "cylinder"
                 : p.kind == Primitive::Kind::Ellipsoid ? "ellipsoid" : "box";
    pj["center"] = {p.center.x(), p.center.y(), p.center.z()};
    pj["size"] = {p.size.x(), p.size.y(), p.size.z()};
    pj["echogenicity"] = p.echogenicity;
    j["primitives"].push_back(pj);
  }
  return j;
}

inline void write_truth_json(const io::fs::path& path, const SimTruth& truth) {
  nlohmann::json j;
  j["s_mm"] = truth.s_mm;
  j["tilt_rad"] = nlohmann::json::array();
  for (const auto& t : truth.tilt_rad) j["tilt_rad"].push_back({t[0], t[1], t[2]});
  j["phantom"] = truth.phantom_echo;
  j["trajectory"] = truth.trajectory_echo;
  std::ofstream out(path);
  require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline SimTruth read_truth_json(const io::fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoFailure, "cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  SimTruth truth;
  truth.s_mm = j.at("s_mm").get<std::vector<double>>();
  for (const auto& t : j.at("tilt_rad"))
    truth.tilt_rad.push_back({t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
  truth.phantom_echo = j.value("phantom", nlohmann::json());
  truth.trajectory_echo = j.value("trajectory", nlohmann::json());
  return truth;
}

struct ScanOptions {
  bool perfect_tracking = false;          // write ground-truth poses instead of detections
  bool write_truth_masks = false;         // emit masks/ from analytic membership
  std::optional<std::uint64_t> speckle_seed;  // defaults to a stream derived from traj.seed
};

// Render and write a complete dataset: B-mode frames at the frame rate,
// tracking-camera views plus depth at the pose rate, the pose log (detected
// or ground truth), calibration, config, and the truth sidecar.
inline SimTruth simulate_scan(const Phantom& ph, const TrajectorySpec& traj, const RigConfig& rig,
                              const io::fs::path& root, const ScanOptions& opt = {}) {
  namespace fs = io::fs;
  fs::create_directories(root / "frames");
  fs::create_directories(root / "camera");
  fs::create_directories(root / "depth");
  fs::create_directories(root / "calib");
  fs::create_directories(root / "out");
  if (opt.write_truth_masks) fs::create_directories(root / "masks");

  const Trajectory trajectory(traj, rig);
  const double duration = trajectory.duration_s();
  const int n_frames = static_cast<int>(std::floor(duration * traj.frame_rate_hz + 1e-9)) + 1;
  int n_poses = static_cast<int>(std::floor(duration * traj.pose_rate_hz + 1e-9)) + 1;
  // One extra pose sample when the last frame would fall past the last pose.
  if ((n_poses - 1) / traj.pose_rate_hz < (n_frames - 1) / traj.frame_rate_hz) ++n_poses;

  const std::uint64_t speckle_seed = opt.speckle_seed.value_or(mix_seed(traj.seed, 0x5bec));

  // Config and calibration.
  io::DatasetConfig cfg;
  cfg.marker_side_mm = rig.marker_side_mm;
  cfg.pixel_pitch_lateral_mm = rig.pitch_lateral_mm;
  cfg.pixel_pitch_axial_mm = rig.pitch_axial_mm;
  cfg.clamp_lo = rig.clamp_lo;
  cfg.clamp_hi = rig.clamp_hi;
  io::write_config_toml(root / "config.toml", cfg);
  io::write_camera_json(root / "calib" / "camera.json", rig.camera);

  // B-mode frames.
  std::vector<double> frame_times(n_frames);
  SimTruth truth;
  truth.s_mm.resize(n_frames);
  truth.tilt_rad.resize(n_frames);
  for (int k = 0; k < n_frames; ++k) {
    const double t = k / traj.frame_rate_hz;
    frame_times[k] = t;
    Pose probe;
    probe.position = trajectory.position_world(t);
    probe.rotation = trajectory.wobble_world(t);
    Rng rng(mix_seed(speckle_seed, static_cast<std::uint64_t>(k)));
    const imgproc::UsFrame frame =
        simulate_frame(ph, probe, rig.frame_width, rig.frame_height, rig.pitch_lateral_mm,
                       rig.pitch_axial_mm, rig.roi_offset_mm, rig.speckle_sigma,
                       rig.interface_band_px, rng, t);
    io::write_png_gray8(root / "frames" / io::frame_file_name(k), frame.pixels);
    if (opt.write_truth_masks) {
      io::write_png_gray8(root / "masks" / io::mask_file_name(k),
                          frame_truth_mask(ph, probe, rig.frame_width, rig.frame_height,
                                           rig.pitch_lateral_mm, rig.pitch_axial_mm,
                                           rig.roi_offset_mm));
    }
    truth.s_mm[k] = trajectory.scan_coordinate(t);
    const auto tilt = geometry::rotation_to_tilt(trajectory.marker_pose_camera(t).rotation);
    truth.tilt_rad[k] = {tilt.x, tilt.y, tilt.z};
  }
  io::write_times_csv(root / "frame_times.csv", frame_times);

  // Tracking camera views and the pose log.
  std::vector<double> camera_times(n_poses);
  tracking::PoseTrack track;
  const auto& dict = marker::dictionary_4x4_50();
  for (int j = 0; j < n_poses; ++j) {
    const double t = j / traj.pose_rate_hz;
    camera_times[j] = t;
    const Pose marker_pose = trajectory.marker_pose_camera(t);
    const MarkerView view = render_marker_view(rig.camera, rig.camera_width, rig.camera_height,
                                               marker_pose, dict, rig.marker_id,
                                               rig.marker_side_mm);
    io::write_png_gray8(root / "camera" / io::camera_file_name(j), view.image);
    io::write_depth_png(root / "depth" / io::depth_file_name(j), view.depth_mm);

    tracking::PoseSample sample;
    sample.t = t;
    if (opt.perfect_tracking) {
      sample.pose = marker_pose;
      track.samples.push_back(sample);
    } else {
      // Detect on the file-quantized depth so a later detection pass over the
      // written dataset reproduces this pose log bit-for-bit.
      const Image<float> depth_q = io::quantize_depth(view.depth_mm);
      const auto obs =
          marker::detect_markers(view.image, rig.camera, dict, rig.marker_side_mm, t, &depth_q);
      for (const auto& o : obs) {
        if (o.id == rig.marker_id) {
          sample.pose = o.pose;
          track.samples.push_back(sample);
          break;
        }
      }
    }
  }
  io::write_times_csv(root / "camera_times.csv", camera_times);
  require(track.samples.size() >= 2, ErrorCode::TooFewFrames,
          "tracking produced fewer than two pose samples");
  io::write_poses_csv(root / "poses.csv", track);

  truth.phantom_echo = phantom_to_json(ph);
  nlohmann::json tj;
  tj["scan_length_mm"] = traj.scan_length_mm;
  tj["speed_mm_s"] = traj.speed_mm_s;
  tj["frame_rate_hz"] = traj.frame_rate_hz;
  tj["pose_rate_hz"] = traj.pose_rate_hz;
  tj["position_jitter_mm"] = traj.position_jitter_mm;
  tj["tilt_jitter_rad"] = {traj.tilt_jitter_rad.x(), traj.tilt_jitter_rad.y(),
                           traj.tilt_jitter_rad.z()};
  tj["jitter_time_constant_s"] = traj.jitter_time_constant_s;
  tj["seed"] = traj.seed;
  tj["speckle_seed"] = speckle_seed;
  tj["perfect_tracking"] = opt.perfect_tracking;
  truth.trajectory_echo = tj;
  write_truth_json(root / "out" / "truth.json", truth);
  return truth;
}

// Overlap metric between the occupied voxels of two volumes.
inline double dice_occupancy(const recon::VolumeGrid& a, const recon::VolumeGrid& b) {
  require(a.nx == b.nx && a.ny == b.ny && a.nz == b.nz, ErrorCode::ShapeMismatch,
          "volume dimensions differ");
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const bool va = a.voxels[i] > 0;
    const bool vb = b.voxels[i] > 0;
    na += va;
    nb += vb;
    inter += va && vb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace usrecon::sim
