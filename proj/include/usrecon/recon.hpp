#pragma once

// Slice-stack volume reconstruction: frames placed at their scan coordinates
// and linearly interpolated onto a uniform grid along the scan axis.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "usrecon/common.hpp"

namespace usrecon::recon {

// Uniform voxel grid; x fastest, z slowest. Axes: x lateral, y axial,
// z scan direction. Spacing in mm; origin holds (x0, y0, s_first).
struct VolumeGrid {
  int nx = 0;
  int ny = 0;
  int nz = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::vector<std::uint8_t> voxels;

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * ny + y) * nx + x;
  }
  std::uint8_t at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
  std::uint8_t& at(int x, int y, int z) { return voxels[index(x, y, z)]; }

  bool same_grid(const VolumeGrid& o) const {
    return nx == o.nx && ny == o.ny && nz == o.nz && spacing == o.spacing && origin == o.origin;
  }
};

// Number of output planes for a scan interval. Plain floor would truncate
// spans that are exact pitch multiples by one representation ulp, so a
// 1e-9-pitch guard is applied before flooring.
inline int slice_count(double s_first, double s_last, double pitch) {
  require(pitch > 0.0, ErrorCode::InvalidArgument, "slice pitch must be positive");
  require(s_last >= s_first, ErrorCode::NotMonotonic, "scan interval is reversed");
  return static_cast<int>(std::floor((s_last - s_first) / pitch + 1e-9)) + 1;
}

// Linear interpolation of ordered slices onto planes z_k = s_0 + k * pitch.
// Output voxels are rounded half-up to 8 bits; planes beyond the last frame
// position (possible only by representation error) clamp to it.
inline VolumeGrid interpolate_slices(const std::vector<ImageU8>& frames,
                                     const std::vector<double>& s, double pitch = 0.1,
                                     double pitch_lateral = 1.0, double pitch_axial = 1.0,
                                     int workers = 1) {
  require(frames.size() >= 2, ErrorCode::TooFewFrames, "need at least two frames");
  require(frames.size() == s.size(), ErrorCode::LengthMismatch,
          "frame and coordinate counts differ");
  require(workers >= 1, ErrorCode::InvalidArgument, "workers must be >= 1");
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    require(s[i] < s[i + 1], ErrorCode::NotMonotonic,
            "scan coordinates must be strictly increasing (index " + std::to_string(i + 1) + ")");
  for (std::size_t i = 1; i < frames.size(); ++i)
    require(frames[i].same_shape(frames[0]), ErrorCode::ShapeMismatch,
            "frame " + std::to_string(i) + " has a different shape");

  VolumeGrid v;
  v.nx = frames[0].width();
  v.ny = frames[0].height();
  v.nz = slice_count(s.front(), s.back(), pitch);
  v.spacing = {pitch_lateral, pitch_axial, pitch};
  v.origin = {0.0, 0.0, s.front()};
  v.voxels.assign(static_cast<std::size_t>(v.nx) * v.ny * v.nz, 0);

  const std::size_t plane_px = static_cast<std::size_t>(v.nx) * v.ny;
  const auto fill_planes = [&](int z_begin, int z_end) {
    std::size_t bracket = 0;
    for (int k = z_begin; k < z_end; ++k) {
      double z = s.front() + k * pitch;
      if (z > s.back()) z = s.back();
      while (bracket + 2 < s.size() && s[bracket + 1] < z) ++bracket;
      // s[bracket] <= z <= s[bracket+1] up to the clamp above
      const double gap = s[bracket + 1] - s[bracket];
      const double w = std::clamp((z - s[bracket]) / gap, 0.0, 1.0);
      const ImageU8& f0 = frames[bracket];
      const ImageU8& f1 = frames[bracket + 1];
      std::uint8_t* out = v.voxels.data() + static_cast<std::size_t>(k) * plane_px;
      if (w == 0.0) {
        std::copy(f0.data().begin(), f0.data().end(), out);
      } else if (w == 1.0) {
        std::copy(f1.data().begin(), f1.data().end(), out);
      } else {
        for (std::size_t i = 0; i < plane_px; ++i) {
          const double value = (1.0 - w) * f0.data()[i] + w * f1.data()[i];
          out[i] = static_cast<std::uint8_t>(round_half_up(value));
        }
      }
    }
  };

  if (workers == 1 || v.nz < 2) {
    fill_planes(0, v.nz);
  } else {
    // Disjoint plane ranges per worker; the bracket search restarts per
    // plane range so the result cannot depend on the partitioning.
    struct PlaneRange {
      int begin;
      int end;
    };
    std::vector<PlaneRange> ranges;
    const int n_workers = std::min(workers, v.nz);
    for (int t = 0; t < n_workers; ++t) {
      ranges.push_back({static_cast<int>(static_cast<std::int64_t>(t) * v.nz / n_workers),
                        static_cast<int>(static_cast<std::int64_t>(t + 1) * v.nz / n_workers)});
    }
    parallel_for(static_cast<int>(ranges.size()), n_workers,
                 [&](int t) { fill_planes(ranges[t].begin, ranges[t].end); });
  }
  return v;
}

enum class MprPlane { Transverse, Coronal, Sagittal };

inline MprPlane mpr_plane_from_name(const std::string& name) {
  if (name == "transverse") return MprPlane::Transverse;
  if (name == "coronal") return MprPlane::Coronal;
  if (name == "sagittal") return MprPlane::Sagittal;
  raise(ErrorCode::InvalidArgument, "unknown plane '" + name + "'");
}

inline const char* mpr_plane_name(MprPlane p) {
  switch (p) {
    case MprPlane::Transverse: return "transverse";
    case MprPlane::Coronal: return "coronal";
    case MprPlane::Sagittal: return "sagittal";
  }
  return "?";
}

inline int mpr_extent(const VolumeGrid& v, MprPlane p) {
  switch (p) {
    case MprPlane::Transverse: return v.nz;
    case MprPlane::Coronal: return v.ny;
    case MprPlane::Sagittal: return v.nx;
  }
  return 0;
}

// Pixel pitches (column, row) of an extracted slice, mm.
inline std::pair<double, double> mpr_pitches(const VolumeGrid& v, MprPlane p) {
  switch (p) {
    case MprPlane::Transverse: return {v.spacing[0], v.spacing[1]};  // (x, y)
    case MprPlane::Coronal: return {v.spacing[0], v.spacing[2]};     // (x, z)
    case MprPlane::Sagittal: return {v.spacing[2], v.spacing[1]};    // (z, y)
  }
  return {1.0, 1.0};
}

// Orthogonal slice extraction. Transverse: fixed z, (x, y) image (a source
// frame plane). Coronal: fixed y, (x, z) image. Sagittal: fixed x, (z, y).
inline ImageU8 extract_mpr(const VolumeGrid& v, MprPlane plane, int index) {
  require(index >= 0 && index < mpr_extent(v, plane), ErrorCode::IndexOutOfRange,
          "slice index " + std::to_string(index) + " out of range");
  switch (plane) {
    case MprPlane::Transverse: {
      ImageU8 img(v.nx, v.ny);
      for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) img(x, y) = v.at(x, y, index);
      return img;
    }
    case MprPlane::Coronal: {
      ImageU8 img(v.nx, v.nz);
      for (int z = 0; z < v.nz; ++z)
        for (int x = 0; x < v.nx; ++x) img(x, z) = v.at(x, index, z);
      return img;
    }
    case MprPlane::Sagittal: {
      ImageU8 img(v.nz, v.ny);
      for (int y = 0; y < v.ny; ++y)
        for (int z = 0; z < v.nz; ++z) img(z, y) = v.at(index, y, z);
      return img;
    }
  }
  raise(ErrorCode::InvalidArgument, "invalid plane");
}

enum class Axis { X, Y, Z };

// Maximum-intensity projection along an axis.
inline ImageU8 mip(const VolumeGrid& v, Axis axis) {
  switch (axis) {
    case Axis::Z: {
      ImageU8 img(v.nx, v.ny, 0);
      for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
          for (int x = 0; x < v.nx; ++x) img(x, y) = std::max(img(x, y), v.at(x, y, z));
      return img;
    }
    case Axis::Y: {
      ImageU8 img(v.nx, v.nz, 0);
      for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
          for (int x = 0; x < v.nx; ++x) img(x, z) = std::max(img(x, z), v.at(x, y, z));
      return img;
    }
    case Axis::X: {
      ImageU8 img(v.nz, v.ny, 0);
      for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
          for (int x = 0; x < v.nx; ++x) img(z, y) = std::max(img(z, y), v.at(x, y, z));
      return img;
    }
  }
  raise(ErrorCode::InvalidArgument, "invalid axis");
}

}  // namespace usrecon::recon
