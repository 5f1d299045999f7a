#pragma once

// Pinhole camera model with Brown-Conrady distortion, planar pose recovery
// from a four-point homography, and Euler tilt extraction.

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "usrecon/common.hpp"

namespace usrecon::geometry {

// Distortion coefficients in the order (k1, k2, p1, p2, k3).
using Distortion = std::array<double, 5>;

struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  Distortion dist{0.0, 0.0, 0.0, 0.0, 0.0};

  Eigen::Matrix3d intrinsic_matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  void validate() const {
    require(fx > 0.0 && fy > 0.0, ErrorCode::InvalidArgument, "focal lengths must be positive");
  }

  // Factory calibration of the depth camera used on the rig.
  static CameraModel realsense_d435() {
    CameraModel cam;
    cam.fx = 422.451;
    cam.fy = 422.451;
    cam.cx = 427.466;
    cam.cy = 241.239;
    cam.dist = {0.00690, 0.8118, 0.0, 0.0, -2.6234};
    return cam;
  }
};

// Rigid marker-to-camera transform. Position in mm, camera coordinates
// (x right, y down, z forward).
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();

  bool rotation_valid(double tol = 1e-9) const {
    const Eigen::Matrix3d residual = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return residual.cwiseAbs().maxCoeff() <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

// Four image corners of a marker candidate, ordered around the outline in
// the canonical corner cycle (top-left, top-right, bottom-right, bottom-left
// of the marker as displayed; counter-clockwise with y treated as pointing up).
class Quad {
 public:
  Quad() = default;
  explicit Quad(const std::array<Eigen::Vector2d, 4>& corners) : corners_(corners) {}

  const Eigen::Vector2d& operator[](int i) const { return corners_[i]; }
  Eigen::Vector2d& operator[](int i) { return corners_[i]; }
  const std::array<Eigen::Vector2d, 4>& corners() const { return corners_; }

  // Shoelace area; positive for the canonical corner cycle in image coords.
  double signed_area() const {
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
      const auto& a = corners_[i];
      const auto& b = corners_[(i + 1) % 4];
      acc += a.x() * b.y() - b.x() * a.y();
    }
    return 0.5 * acc;
  }

  double area() const { return std::abs(signed_area()); }

  Eigen::Vector2d center() const {
    return 0.25 * (corners_[0] + corners_[1] + corners_[2] + corners_[3]);
  }

  // Strict convexity: all cross products of consecutive edges share one sign.
  bool convex() const {
    int sign = 0;
    for (int i = 0; i < 4; ++i) {
      const Eigen::Vector2d e0 = corners_[(i + 1) % 4] - corners_[i];
      const Eigen::Vector2d e1 = corners_[(i + 2) % 4] - corners_[(i + 1) % 4];
      const double cross = e0.x() * e1.y() - e0.y() * e1.x();
      if (cross == 0.0) return false;
      const int s = cross > 0.0 ? 1 : -1;
      if (sign == 0) sign = s;
      if (s != sign) return false;
    }
    return true;
  }

  bool valid(double min_area = 1.0) const { return convex() && area() > min_area; }

 private:
  std::array<Eigen::Vector2d, 4> corners_{};
};

// Marker-plane coordinates of the four corners for a marker of the given
// side length, in the canonical corner cycle (x right, y down in the plane).
inline std::array<Eigen::Vector2d, 4> marker_object_corners(double side_mm) {
  const double h = 0.5 * side_mm;
  return {Eigen::Vector2d(-h, -h), Eigen::Vector2d(h, -h),
          Eigen::Vector2d(h, h), Eigen::Vector2d(-h, h)};
}

// Forward distortion of a normalized image point: radial k1,k2,k3 plus
// tangential p1,p2. Total function; identity at the origin.
inline Eigen::Vector2d distort_normalized(const Eigen::Vector2d& p, const Distortion& d) {
  const double x = p.x();
  const double y = p.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]));
  const double xt = 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x);
  const double yt = d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y;
  return {x * radial + xt, y * radial + yt};
}

// Inverse of distort_normalized by damped fixed-point iteration.
inline Eigen::Vector2d undistort_normalized(const Eigen::Vector2d& p, const Distortion& d,
                                            double tol = 1e-9, int max_iter = 50) {
  Eigen::Vector2d q = p;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::Vector2d residual = distort_normalized(q, d) - p;
    if (residual.cwiseAbs().maxCoeff() <= tol) return q;
    const double x = q.x();
    const double y = q.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]));
    if (radial <= 0.0) {
      // Outside the invertible region of the polynomial; damp toward p.
      q = 0.5 * (q + p);
      continue;
    }
    const double xt = 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x);
    const double yt = d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y;
    q.x() = (p.x() - xt) / radial;
    q.y() = (p.y() - yt) / radial;
  }
  const Eigen::Vector2d residual = distort_normalized(q, d) - p;
  if (residual.cwiseAbs().maxCoeff() <= tol) return q;
  raise(ErrorCode::NonConvergent, "undistort_normalized did not reach tolerance");
}

// Project a camera-frame point (mm) to distorted pixel coordinates.
inline Eigen::Vector2d project(const Eigen::Vector3d& point, const CameraModel& cam) {
  require(point.z() > 0.0, ErrorCode::BehindCamera, "point has non-positive depth");
  const Eigen::Vector2d n(point.x() / point.z(), point.y() / point.z());
  const Eigen::Vector2d dn = distort_normalized(n, cam.dist);
  return {cam.fx * dn.x() + cam.cx, cam.fy * dn.y() + cam.cy};
}

// Distorted pixel -> normalized undistorted coordinates.
inline Eigen::Vector2d pixel_to_normalized(const Eigen::Vector2d& px, const CameraModel& cam) {
  const Eigen::Vector2d n((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy);
  return undistort_normalized(n, cam.dist);
}

// Distorted pixel -> undistorted pixel (distortion removed, intrinsics kept).
inline Eigen::Vector2d undistort_pixel(const Eigen::Vector2d& px, const CameraModel& cam) {
  const Eigen::Vector2d n = pixel_to_normalized(px, cam);
  return {cam.fx * n.x() + cam.cx, cam.fy * n.y() + cam.cy};
}

// Direct linear transform on exactly four correspondences. H maps
// (src, 1) to homogeneous (dst, 1), H(2,2) normalized to 1.
inline Eigen::Matrix3d homography_dlt(const std::array<Eigen::Vector2d, 4>& src,
                                      const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> a = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double X = src[i].x();
    const double Y = src[i].y();
    const double u = dst[i].x();
    const double v = dst[i].y();
    a.row(2 * i) << X, Y, 1.0, 0.0, 0.0, 0.0, -u * X, -u * Y;
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, X, Y, 1.0, -v * X, -v * Y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }

  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 8>> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(7);
  require(smin > 0.0 && smax / smin <= 1e12, ErrorCode::DegenerateQuad,
          "homography system is singular or near-singular");
  const Eigen::Matrix<double, 8, 1> h = svd.solve(b);

  Eigen::Matrix3d H;
  H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return H;
}

// Perspective-map a point through a homography.
inline Eigen::Vector2d apply_homography(const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
  const Eigen::Vector3d m = h * Eigen::Vector3d(p.x(), p.y(), 1.0);
  require(std::abs(m.z()) > 1e-15, ErrorCode::DegenerateQuad, "homography maps point to infinity");
  return {m.x() / m.z(), m.y() / m.z()};
}

// Homography from the marker plane (mm, corner cycle of marker_object_corners)
// to the given undistorted pixel corners.
inline Eigen::Matrix3d homography_from_corners(const Quad& img, double side_mm) {
  require(side_mm > 0.0, ErrorCode::InvalidArgument, "marker side must be positive");
  return homography_dlt(marker_object_corners(side_mm), img.corners());
}

// Decompose a marker-plane homography into a marker pose. Columns of K^-1*H
// give (lambda*r1, lambda*r2, lambda*t); lambda is the mean column norm, the
// rotation is completed by r3 = r1 x r2 and re-orthonormalized by nearest
// orthogonal projection.
inline Pose pose_from_homography(const Eigen::Matrix3d& H, const CameraModel& cam) {
  cam.validate();
  Eigen::Matrix3d kinv;
  kinv << 1.0 / cam.fx, 0.0, -cam.cx / cam.fx,
          0.0, 1.0 / cam.fy, -cam.cy / cam.fy,
          0.0, 0.0, 1.0;
  Eigen::Matrix3d m = kinv * H;

  const double lambda = 0.5 * (m.col(0).norm() + m.col(1).norm());
  require(lambda > 1e-15 && std::isfinite(lambda), ErrorCode::DegenerateQuad,
          "homography columns have vanishing norm");
  m /= lambda;

  if (m.col(2).z() < 0.0) m = -m;  // scale sign ambiguity
  require(m.col(2).z() > 0.0, ErrorCode::BehindCamera, "recovered pose is behind the camera");

  Eigen::Matrix3d r0;
  r0.col(0) = m.col(0);
  r0.col(1) = m.col(1);
  r0.col(2) = m.col(0).cross(m.col(1));

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r0, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d rotation = svd.matrixU() * svd.matrixV().transpose();
  if (rotation.determinant() < 0.0) {
    Eigen::Matrix3d v = svd.matrixV();
    v.col(2) *= -1.0;
    rotation = svd.matrixU() * v.transpose();
  }

  Pose pose;
  pose.rotation = rotation;
  pose.position = m.col(2);
  return pose;
}

struct TiltAngles {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool gimbal_lock = false;
};

inline double normalize_angle(double a) {
  // Map into (-pi, pi].
  a = std::remainder(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

// Intrinsic X-Y-Z Euler decomposition: R = Rx(tx) * Ry(ty) * Rz(tz).
// At gimbal lock (|cos ty| < 1e-9) tx is set to 0 and tz absorbs the spin.
inline TiltAngles rotation_to_tilt(const Eigen::Matrix3d& r) {
  TiltAngles t;
  const double sy = std::clamp(r(0, 2), -1.0, 1.0);
  t.y = std::asin(sy);
  const double cy = std::sqrt(std::max(0.0, 1.0 - sy * sy));
  if (cy < 1e-9) {
    t.gimbal_lock = true;
    t.x = 0.0;
    t.z = normalize_angle(std::atan2(r(1, 0), r(1, 1)));
  } else {
    t.x = normalize_angle(std::atan2(-r(1, 2), r(2, 2)));
    t.z = normalize_angle(std::atan2(-r(0, 1), r(0, 0)));
  }
  t.y = normalize_angle(t.y);
  return t;
}

inline Eigen::Matrix3d tilt_to_rotation(double tx, double ty, double tz) {
  const Eigen::Matrix3d rx = Eigen::AngleAxisd(tx, Eigen::Vector3d::UnitX()).toRotationMatrix();
  const Eigen::Matrix3d ry = Eigen::AngleAxisd(ty, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(tz, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return rx * ry * rz;
}

inline Eigen::Matrix3d tilt_to_rotation(const TiltAngles& t) {
  return tilt_to_rotation(t.x, t.y, t.z);
}

}  // namespace usrecon::geometry
