#pragma once

// Dataset folder contract and all file formats: grayscale PNG (8/16 bit),
// pose and frame-time CSV logs, camera calibration JSON, the flat TOML
// config, MHD/RAW volume export and PNG slice export.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "usrecon/common.hpp"
#include "usrecon/geometry.hpp"
#include "usrecon/recon.hpp"
#include "usrecon/tracking.hpp"

namespace usrecon::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngCloser {
  std::FILE* f = nullptr;
  ~PngCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

inline void write_png_gray8(const fs::path& path, const ImageU8& img) {
  detail::PngCloser file;
  file.f = std::fopen(path.string().c_str(), "wb");
  require(file.f != nullptr, ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    raise(ErrorCode::IoFailure, "libpng initialization failed");
  }
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y)
    rows[y] = const_cast<png_bytep>(img.data().data() + static_cast<std::size_t>(y) * img.width());

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    raise(ErrorCode::IoFailure, "libpng write failed for " + path.string());
  }
  png_init_io(png, file.f);
  png_set_compression_level(png, 1);
  png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline ImageU8 read_png_gray8(const fs::path& path) {
  detail::PngCloser file;
  file.f = std::fopen(path.string().c_str(), "rb");
  require(file.f != nullptr, ErrorCode::IoFailure, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(ErrorCode::IoFailure, "libpng initialization failed");
  }

  ImageU8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(ErrorCode::IoFailure, "libpng read failed for " + path.string());
  }
  png_init_io(png, file.f);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(ErrorCode::IoFailure, path.string() + " is not an 8-bit grayscale PNG");
  }
  img = ImageU8(static_cast<int>(w), static_cast<int>(h));
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.data().data() + static_cast<std::size_t>(y) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png_gray16(const fs::path& path, const ImageU16& img) {
  detail::PngCloser file;
  file.f = std::fopen(path.string().c_str(), "wb");
  require(file.f != nullptr, ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    raise(ErrorCode::IoFailure, "libpng initialization failed");
  }
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y)
    rows[y] = reinterpret_cast<png_bytep>(
        const_cast<std::uint16_t*>(img.data().data() + static_cast<std::size_t>(y) * img.width()));

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    raise(ErrorCode::IoFailure, "libpng write failed for " + path.string());
  }
  png_init_io(png, file.f);
  png_set_compression_level(png, 1);
  png_set_IHDR(png, info, img.width(), img.height(), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);  // buffers are host little-endian
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline ImageU16 read_png_gray16(const fs::path& path) {
  detail::PngCloser file;
  file.f = std::fopen(path.string().c_str(), "rb");
  require(file.f != nullptr, ErrorCode::IoFailure, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(ErrorCode::IoFailure, "libpng initialization failed");
  }

  ImageU16 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(ErrorCode::IoFailure, "libpng read failed for " + path.string());
  }
  png_init_io(png, file.f);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(ErrorCode::IoFailure, path.string() + " is not a 16-bit grayscale PNG");
  }
  png_set_swap(png);
  img = ImageU16(static_cast<int>(w), static_cast<int>(h));
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = reinterpret_cast<png_bytep>(img.data().data() + static_cast<std::size_t>(y) * w);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Depth images are stored as 16-bit PNG in fixed units of 0.02 mm.
inline constexpr double kDepthUnitMm = 0.02;

inline void write_depth_png(const fs::path& path, const Image<float>& depth_mm) {
  ImageU16 img(depth_mm.width(), depth_mm.height());
  for (std::size_t i = 0; i < depth_mm.pixel_count(); ++i) {
    const double units = depth_mm.data()[i] / kDepthUnitMm;
    img.data()[i] = static_cast<std::uint16_t>(std::clamp(round_half_up(units), 0, 65535));
  }
  write_png_gray16(path, img);
}

inline Image<float> read_depth_png(const fs::path& path) {
  const ImageU16 img = read_png_gray16(path);
  Image<float> depth(img.width(), img.height());
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    depth.data()[i] = static_cast<float>(img.data()[i] * kDepthUnitMm);
  return depth;
}

// The value a depth image assumes after a write/read cycle. Consumers that
// must agree bit-for-bit with the on-disk pipeline quantize through this.
inline Image<float> quantize_depth(const Image<float>& depth_mm) {
  Image<float> out(depth_mm.width(), depth_mm.height());
  for (std::size_t i = 0; i < depth_mm.pixel_count(); ++i) {
    const int units = std::clamp(round_half_up(depth_mm.data()[i] / kDepthUnitMm), 0, 65535);
    out.data()[i] = static_cast<float>(static_cast<std::uint16_t>(units) * kDepthUnitMm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV logs

inline std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05d.png", index);
  return buf;
}

inline std::string mask_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "mask_%05d.png", index);
  return buf;
}

inline std::string camera_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cam_%05d.png", index);
  return buf;
}

inline std::string depth_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "depth_%05d.png", index);
  return buf;
}

inline std::string slice_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "slice_%05d.png", index);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// Pose log: header `t,px,py,pz,r00,...,r22` (seconds, mm, row-major rotation).
inline void write_poses_csv(const fs::path& path, const tracking::PoseTrack& track) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
  out << "t,px,py,pz,r00,r01,r02,r10,r11,r12,r20,r21,r22\n";
  for (const auto& s : track.samples) {
    out << format_double(s.t) << ',' << format_double(s.pose.position.x()) << ','
        << format_double(s.pose.position.y()) << ',' << format_double(s.pose.position.z());
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out << ',' << format_double(s.pose.rotation(r, c));
    out << '\n';
  }
  require(out.good(), ErrorCode::IoFailure, "write failed for " + path.string());
}

inline tracking::PoseTrack read_poses_csv(const fs::path& path,
                                          std::vector<std::string>* issues = nullptr) {
  const auto report = [&](const std::string& msg) {
    if (issues) issues->push_back(msg);
    else raise(ErrorCode::ValidationFailed, msg);
  };
  tracking::PoseTrack track;
  std::ifstream in(path);
  if (!in.good()) {
    report("missing or unreadable " + path.string());
    return track;
  }
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (!have_header) {
      have_header = true;
      if (fields.empty() || fields[0] != "t")
        report(path.string() + ":1: expected header t,px,py,pz,r00..r22");
      continue;
    }
    if (fields.size() != 13) {
      report(path.string() + ":" + std::to_string(lineno) + ": expected 13 columns, got " +
             std::to_string(fields.size()));
      continue;
    }
    std::array<double, 13> v{};
    bool ok = true;
    for (std::size_t i = 0; i < 13; ++i)
      if (!parse_double(fields[i], v[i])) ok = false;
    if (!ok) {
      report(path.string() + ":" + std::to_string(lineno) + ": unparseable number");
      continue;
    }
    tracking::PoseSample s;
    s.t = v[0];
    s.pose.position = Eigen::Vector3d(v[1], v[2], v[3]);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) s.pose.rotation(r, c) = v[4 + 3 * r + c];
    if (!track.samples.empty() && s.t <= track.samples.back().t) {
      report(path.string() + ":" + std::to_string(lineno) + ": non-monotonic timestamp");
      continue;
    }
    track.samples.push_back(s);
  }
  if (!have_header) report(path.string() + ": empty file");
  return track;
}

// Frame time log: header `frame,t`, frame indices 0..n-1 in order.
inline void write_times_csv(const fs::path& path, const std::vector<double>& times) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
  out << "frame,t\n";
  for (std::size_t i = 0; i < times.size(); ++i)
    out << i << ',' << format_double(times[i]) << '\n';
  require(out.good(), ErrorCode::IoFailure, "write failed for " + path.string());
}

inline std::vector<double> read_times_csv(const fs::path& path,
                                          std::vector<std::string>* issues = nullptr) {
  const auto report = [&](const std::string& msg) {
    if (issues) issues->push_back(msg);
    else raise(ErrorCode::ValidationFailed, msg);
  };
  std::vector<double> times;
  std::ifstream in(path);
  if (!in.good()) {
    report("missing or unreadable " + path.string());
    return times;
  }
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (!have_header) {
      have_header = true;
      if (fields.size() < 2 || fields[0] != "frame" || fields[1] != "t")
        report(path.string() + ":1: expected header frame,t");
      continue;
    }
    double idx = 0.0, t = 0.0;
    if (fields.size() != 2 || !parse_double(fields[0], idx) || !parse_double(fields[1], t)) {
      report(path.string() + ":" + std::to_string(lineno) + ": unparseable row");
      continue;
    }
    if (static_cast<std::size_t>(idx) != times.size()) {
      report(path.string() + ":" + std::to_string(lineno) + ": frame index " +
             fields[0] + " out of order");
      continue;
    }
    if (!times.empty() && t <= times.back()) {
      report(path.string() + ":" + std::to_string(lineno) + ": non-monotonic timestamp");
      continue;
    }
    times.push_back(t);
  }
  if (!have_header) report(path.string() + ": empty file");
  return times;
}

// ---------------------------------------------------------------------------
// Camera calibration JSON

inline geometry::CameraModel read_camera_json(const fs::path& path,
                                              std::vector<std::string>* issues = nullptr) {
  const auto report = [&](const std::string& msg) {
    if (issues) issues->push_back(msg);
    else raise(ErrorCode::ValidationFailed, msg);
  };
  geometry::CameraModel cam;
  std::ifstream in(path);
  if (!in.good()) {
    report("missing or unreadable " + path.string());
    return cam;
  }
  nlohmann::json j;
  try {
    in >> j;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto dist = j.at("dist");
    if (!dist.is_array() || dist.size() != 5) {
      report(path.string() + ": dist must be an array of 5 coefficients");
      return cam;
    }
    for (int i = 0; i < 5; ++i) cam.dist[i] = dist[i].get<double>();
  } catch (const nlohmann::json::exception& e) {
    report(path.string() + ": " + e.what());
    return cam;
  }
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0))
    report(path.string() + ": focal lengths must be positive");
  return cam;
}

inline void write_camera_json(const fs::path& path, const geometry::CameraModel& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["dist"] = cam.dist;
  std::ofstream out(path);
  require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset configuration (flat TOML subset: key = value, numbers, 2-arrays)

struct DatasetConfig {
  double marker_side_mm = 40.0;
  std::pair<int, int> clahe_tiles{8, 8};
  double clahe_clip = 2.0;
  std::optional<double> clamp_lo;
  std::optional<double> clamp_hi;
  double log_alpha = 255.0;
  double slice_pitch_mm = 0.1;
  double duplicate_eps_mm = 0.01;
  double pixel_pitch_lateral_mm = 0.15;
  double pixel_pitch_axial_mm = 0.2;
};

// The config is a flat list of numeric keys (clahe_tiles is a 2-array), so a
// small dedicated parser covers the format; full TOML is not needed.
inline DatasetConfig parse_config_toml(std::istream& in, const std::string& name,
                                       std::vector<std::string>* issues = nullptr) {
  const auto report = [&](const std::string& msg) {
    if (issues) issues->push_back(msg);
    else raise(ErrorCode::ValidationFailed, msg);
  };
  DatasetConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = [&] { return name + ":" + std::to_string(lineno); };
    std::string body = line;
    if (const auto hash = body.find('#'); hash != std::string::npos) body.resize(hash);
    while (!body.empty() && (body.back() == ' ' || body.back() == '\t' || body.back() == '\r'))
      body.pop_back();
    std::size_t first = body.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      report(where() + ": expected key = value");
      continue;
    }
    std::string key = body.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string value = body.substr(eq + 1);
    const std::size_t vfirst = value.find_first_not_of(" \t");
    value = vfirst == std::string::npos ? std::string() : value.substr(vfirst);

    const auto as_number = [&](double& out_v) {
      if (!parse_double(value, out_v)) {
        report(where() + ": expected a number for " + key);
        return false;
      }
      return true;
    };

    double num = 0.0;
    if (key == "marker_side_mm") {
      if (as_number(num)) cfg.marker_side_mm = num;
    } else if (key == "clahe_clip") {
      if (as_number(num)) cfg.clahe_clip = num;
    } else if (key == "clamp_lo") {
      if (as_number(num)) cfg.clamp_lo = num;
    } else if (key == "clamp_hi") {
      if (as_number(num)) cfg.clamp_hi = num;
    } else if (key == "log_alpha") {
      if (as_number(num)) cfg.log_alpha = num;
    } else if (key == "slice_pitch_mm") {
      if (as_number(num)) cfg.slice_pitch_mm = num;
    } else if (key == "duplicate_eps_mm") {
      if (as_number(num)) cfg.duplicate_eps_mm = num;
    } else if (key == "pixel_pitch_lateral_mm") {
      if (as_number(num)) cfg.pixel_pitch_lateral_mm = num;
    } else if (key == "pixel_pitch_axial_mm") {
      if (as_number(num)) cfg.pixel_pitch_axial_mm = num;
    } else if (key == "clahe_tiles") {
      if (value.size() < 2 || value.front() != '[' || value.back() != ']') {
        report(where() + ": clahe_tiles must be [tx, ty]");
        continue;
      }
      const auto comma = value.find(',');
      double tx = 0.0, ty = 0.0;
      if (comma == std::string::npos ||
          !parse_double(value.substr(1, comma - 1), tx) ||
          !parse_double(value.substr(comma + 1, value.size() - comma - 2), ty) ||
          tx < 1.0 || ty < 1.0) {
        report(where() + ": clahe_tiles must be [tx, ty] with positive integers");
        continue;
      }
      cfg.clahe_tiles = {static_cast<int>(tx), static_cast<int>(ty)};
    } else {
      report(where() + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

inline void write_config_toml(const fs::path& path, const DatasetConfig& cfg) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
  out << "# dataset processing configuration\n";
  out << "marker_side_mm = " << format_double(cfg.marker_side_mm) << "\n";
  out << "clahe_tiles = [" << cfg.clahe_tiles.first << ", " << cfg.clahe_tiles.second << "]\n";
  out << "clahe_clip = " << format_double(cfg.clahe_clip) << "\n";
  if (cfg.clamp_lo) out << "clamp_lo = " << format_double(*cfg.clamp_lo) << "\n";
  if (cfg.clamp_hi) out << "clamp_hi = " << format_double(*cfg.clamp_hi) << "\n";
  out << "log_alpha = " << format_double(cfg.log_alpha) << "\n";
  out << "slice_pitch_mm = " << format_double(cfg.slice_pitch_mm) << "\n";
  out << "duplicate_eps_mm = " << format_double(cfg.duplicate_eps_mm) << "\n";
  out << "pixel_pitch_lateral_mm = " << format_double(cfg.pixel_pitch_lateral_mm) << "\n";
  out << "pixel_pitch_axial_mm = " << format_double(cfg.pixel_pitch_axial_mm) << "\n";
}

// ---------------------------------------------------------------------------
// Dataset

// On-disk layout under the dataset root:
//   frames/frame_%05d.png   B-mode frames (8-bit grayscale)
//   camera/cam_%05d.png     tracking camera views (optional)
//   depth/depth_%05d.png    tracking depth (16-bit, 0.02 mm units, optional)
//   masks/mask_%05d.png     segmentation masks (optional)
//   calib/*.json            camera intrinsics + distortion (exactly one)
//   out/                    created by writers
//   poses.csv  frame_times.csv  camera_times.csv(optional)  config.toml
struct Dataset {
  fs::path root;
  DatasetConfig config;
  geometry::CameraModel camera;
  std::vector<double> frame_times;
  std::vector<fs::path> frame_paths;
  tracking::PoseTrack poses;
  std::vector<fs::path> mask_paths;    // empty when masks/ is absent
  std::vector<double> camera_times;    // empty when camera/ is absent
  std::vector<fs::path> camera_paths;
  std::vector<fs::path> depth_paths;   // empty when depth/ is absent

  bool has_masks() const { return !mask_paths.empty(); }
  bool has_camera() const { return !camera_paths.empty(); }
  bool has_depth() const { return !depth_paths.empty(); }
  fs::path out_dir() const { return root / "out"; }
};

// Carries the full per-file issue list of a failed load.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> issues)
      : Error(ErrorCode::ValidationFailed, summary(issues)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string summary(const std::vector<std::string>& issues) {
    std::string s = std::to_string(issues.size()) + " issue(s):";
    for (const auto& i : issues) s += "\n  - " + i;
    return s;
  }
  std::vector<std::string> issues_;
};

// Validate and index a dataset folder. Either every check passes and a usable
// Dataset is returned, or a ValidationError lists every problem found.
inline Dataset load_dataset(const fs::path& root) {
  std::vector<std::string> issues;
  Dataset ds;
  ds.root = root;

  if (!fs::exists(root) || !fs::is_directory(root))
    throw ValidationError({"dataset root " + root.string() + " does not exist"});

  // config.toml
  const fs::path config_path = root / "config.toml";
  if (!fs::exists(config_path)) {
    issues.push_back("missing config.toml");
  } else {
    std::ifstream in(config_path);
    ds.config = parse_config_toml(in, config_path.string(), &issues);
  }

  // calib/
  const fs::path calib_dir = root / "calib";
  std::vector<fs::path> calib_files;
  if (fs::exists(calib_dir) && fs::is_directory(calib_dir)) {
    for (const auto& e : fs::directory_iterator(calib_dir))
      if (e.path().extension() == ".json") calib_files.push_back(e.path());
  }
  std::sort(calib_files.begin(), calib_files.end());
  if (calib_files.empty()) {
    issues.push_back("calib/ contains no camera .json");
  } else {
    if (calib_files.size() > 1)
      issues.push_back("calib/ contains more than one .json file");
    ds.camera = read_camera_json(calib_files.front(), &issues);
  }

  // frame_times.csv + frames/
  ds.frame_times = read_times_csv(root / "frame_times.csv", &issues);
  const fs::path frames_dir = root / "frames";
  if (!fs::exists(frames_dir) || !fs::is_directory(frames_dir)) {
    issues.push_back("missing frames/ directory");
  } else {
    std::size_t present = 0;
    for (const auto& e : fs::directory_iterator(frames_dir))
      if (e.path().extension() == ".png") ++present;
    if (present != ds.frame_times.size())
      issues.push_back("frames/ holds " + std::to_string(present) + " PNGs but frame_times.csv has " +
                       std::to_string(ds.frame_times.size()) + " rows");
    for (std::size_t i = 0; i < ds.frame_times.size(); ++i) {
      const fs::path p = frames_dir / frame_file_name(static_cast<int>(i));
      if (!fs::exists(p)) {
        issues.push_back("missing frame index " + std::to_string(i) + " (" + p.filename().string() + ")");
      } else {
        ds.frame_paths.push_back(p);
      }
    }
  }

  // poses.csv
  ds.poses = read_poses_csv(root / "poses.csv", &issues);
  if (ds.poses.samples.size() < 2) {
    issues.push_back("poses.csv holds fewer than two samples");
  } else if (!ds.frame_times.empty()) {
    constexpr double kPad = 0.05;
    const double t0 = ds.poses.samples.front().t - kPad;
    const double t1 = ds.poses.samples.back().t + kPad;
    for (std::size_t i = 0; i < ds.frame_times.size(); ++i) {
      if (ds.frame_times[i] < t0 || ds.frame_times[i] > t1) {
        issues.push_back("frame " + std::to_string(i) + " time " + format_double(ds.frame_times[i]) +
                         " outside pose coverage [" + format_double(t0) + ", " + format_double(t1) + "]");
        break;  // one report is enough; every later frame would repeat it
      }
    }
  }

  // masks/ (optional)
  const fs::path masks_dir = root / "masks";
  if (fs::exists(masks_dir) && fs::is_directory(masks_dir)) {
    for (std::size_t i = 0; i < ds.frame_times.size(); ++i) {
      const fs::path p = masks_dir / mask_file_name(static_cast<int>(i));
      if (!fs::exists(p)) {
        issues.push_back("masks/ present but missing mask index " + std::to_string(i));
        break;
      }
      ds.mask_paths.push_back(p);
    }
  }

  // camera/ + depth/ (optional)
  const fs::path camera_dir = root / "camera";
  if (fs::exists(camera_dir) && fs::is_directory(camera_dir)) {
    ds.camera_times = read_times_csv(root / "camera_times.csv", &issues);
    for (std::size_t i = 0; i < ds.camera_times.size(); ++i) {
      const fs::path p = camera_dir / camera_file_name(static_cast<int>(i));
      if (!fs::exists(p)) {
        issues.push_back("camera/ present but missing view index " + std::to_string(i));
        break;
      }
      ds.camera_paths.push_back(p);
    }
    const fs::path depth_dir = root / "depth";
    if (fs::exists(depth_dir) && fs::is_directory(depth_dir)) {
      for (std::size_t i = 0; i < ds.camera_times.size(); ++i) {
        const fs::path p = depth_dir / depth_file_name(static_cast<int>(i));
        if (!fs::exists(p)) {
          issues.push_back("depth/ present but missing depth index " + std::to_string(i));
          break;
        }
        ds.depth_paths.push_back(p);
      }
    }
  }

  if (!issues.empty()) throw ValidationError(std::move(issues));
  return ds;
}

// ---------------------------------------------------------------------------
// MHD / RAW volume export

// Text header with a fixed key order; voxel payload in a sibling .raw file,
// x fastest, z slowest.
inline void write_mhd(const recon::VolumeGrid& v, const fs::path& mhd_path) {
  require(!v.voxels.empty(), ErrorCode::InvalidArgument, "empty volume");
  fs::path raw_path = mhd_path;
  raw_path.replace_extension(".raw");

  std::ofstream header(mhd_path);
  require(header.good(), ErrorCode::IoFailure, "cannot write " + mhd_path.string());
  header << "ObjectType = Image\n";
  header << "NDims = 3\n";
  header << "DimSize = " << v.nx << ' ' << v.ny << ' ' << v.nz << '\n';
  header << "ElementSpacing = " << format_double(v.spacing[0]) << ' '
         << format_double(v.spacing[1]) << ' ' << format_double(v.spacing[2]) << '\n';
  header << "Offset = " << format_double(v.origin[0]) << ' ' << format_double(v.origin[1]) << ' '
         << format_double(v.origin[2]) << '\n';
  header << "ElementType = MET_UCHAR\n";
  header << "ElementByteOrderMSB = False\n";
  header << "ElementDataFile = " << raw_path.filename().string() << '\n';
  require(header.good(), ErrorCode::IoFailure, "write failed for " + mhd_path.string());
  header.close();

  std::ofstream raw(raw_path, std::ios::binary);
  require(raw.good(), ErrorCode::IoFailure, "cannot write " + raw_path.string());
  raw.write(reinterpret_cast<const char*>(v.voxels.data()),
            static_cast<std::streamsize>(v.voxels.size()));
  require(raw.good(), ErrorCode::IoFailure, "write failed for " + raw_path.string());
}

inline recon::VolumeGrid read_mhd(const fs::path& mhd_path) {
  std::ifstream header(mhd_path);
  require(header.good(), ErrorCode::IoFailure, "cannot open " + mhd_path.string());

  recon::VolumeGrid v;
  std::string data_file;
  std::string line;
  while (std::getline(header, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
    };
    trim(key);
    trim(value);
    std::istringstream vs(value);
    if (key == "ObjectType") {
      require(value == "Image", ErrorCode::IoFailure, "unsupported ObjectType " + value);
    } else if (key == "NDims") {
      require(value == "3", ErrorCode::IoFailure, "unsupported NDims " + value);
    } else if (key == "DimSize") {
      vs >> v.nx >> v.ny >> v.nz;
    } else if (key == "ElementSpacing") {
      vs >> v.spacing[0] >> v.spacing[1] >> v.spacing[2];
    } else if (key == "Offset") {
      vs >> v.origin[0] >> v.origin[1] >> v.origin[2];
    } else if (key == "ElementType") {
      require(value == "MET_UCHAR", ErrorCode::IoFailure, "unsupported ElementType " + value);
    } else if (key == "ElementByteOrderMSB") {
      require(value == "False", ErrorCode::IoFailure, "big-endian volumes are not supported");
    } else if (key == "ElementDataFile") {
      data_file = value;
    }
  }
  require(v.nx > 0 && v.ny > 0 && v.nz > 0, ErrorCode::IoFailure, "missing DimSize");
  require(!data_file.empty(), ErrorCode::IoFailure, "missing ElementDataFile");

  const fs::path raw_path = mhd_path.parent_path() / data_file;
  std::ifstream raw(raw_path, std::ios::binary);
  require(raw.good(), ErrorCode::IoFailure, "cannot open " + raw_path.string());
  const std::size_t expected = static_cast<std::size_t>(v.nx) * v.ny * v.nz;
  v.voxels.resize(expected);
  raw.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(expected));
  require(static_cast<std::size_t>(raw.gcount()) == expected, ErrorCode::IoFailure,
          raw_path.string() + " is shorter than DimSize promises");
  return v;
}

// One PNG per slice plus an index.json with the pixel pitches.
inline void export_slices(const recon::VolumeGrid& v, recon::MprPlane plane, const fs::path& dir) {
  fs::create_directories(dir);
  const int count = recon::mpr_extent(v, plane);
  for (int i = 0; i < count; ++i)
    write_png_gray8(dir / slice_file_name(i), recon::extract_mpr(v, plane, i));

  const auto [pitch_col, pitch_row] = recon::mpr_pitches(v, plane);
  nlohmann::json j;
  j["plane"] = recon::mpr_plane_name(plane);
  j["count"] = count;
  j["pitch_col_mm"] = pitch_col;
  j["pitch_row_mm"] = pitch_row;
  std::ofstream out(dir / "index.json");
  require(out.good(), ErrorCode::IoFailure, "cannot write slice index");
  out << j.dump(2) << '\n';
}

}  // namespace usrecon::io
