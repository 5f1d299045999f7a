#pragma once

// Square fiducial detection: adaptive binarization, contour-based quad
// extraction, canonical resampling, Otsu bit decoding and dictionary
// matching, ending in a camera-frame pose per observation.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <istream>
#include <optional>
#include <sstream>
#include <vector>

#include "usrecon/common.hpp"
#include "usrecon/geometry.hpp"

namespace usrecon::marker {

using geometry::CameraModel;
using geometry::Pose;
using geometry::Quad;

// ---------------------------------------------------------------------------
// Dictionary

// Square bit pattern; bit 1 = white cell.
class BitMatrix {
 public:
  BitMatrix() = default;
  explicit BitMatrix(int n) : n_(n), bits_(static_cast<std::size_t>(n) * n, 0) {}

  int size() const { return n_; }
  int get(int row, int col) const { return bits_[static_cast<std::size_t>(row) * n_ + col]; }
  void set(int row, int col, int v) { bits_[static_cast<std::size_t>(row) * n_ + col] = static_cast<std::uint8_t>(v != 0); }

  // Quarter-turn counter-clockwise as displayed (y down).
  BitMatrix rotated_ccw() const {
    BitMatrix out(n_);
    for (int r = 0; r < n_; ++r)
      for (int c = 0; c < n_; ++c) out.set(r, c, get(c, n_ - 1 - r));
    return out;
  }

  // Row-major packing, most significant bit first. Defined for n <= 8.
  std::uint64_t packed() const {
    std::uint64_t v = 0;
    for (int r = 0; r < n_; ++r)
      for (int c = 0; c < n_; ++c) v = (v << 1) | static_cast<std::uint64_t>(get(r, c));
    return v;
  }

  static BitMatrix from_packed(std::uint64_t code, int n) {
    BitMatrix out(n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        out.set(r, c, static_cast<int>((code >> (n * n - 1 - (r * n + c))) & 1u));
    return out;
  }

  friend bool operator==(const BitMatrix& a, const BitMatrix& b) {
    return a.n_ == b.n_ && a.bits_ == b.bits_;
  }

 private:
  int n_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline int hamming_distance(std::uint64_t a, std::uint64_t b) {
  return static_cast<int>(__builtin_popcountll(a ^ b));
}

// Fixed dictionary of square binary codes with a guaranteed pairwise
// Hamming distance over all four rotations.
struct MarkerDictionary {
  int grid = 0;
  std::vector<std::uint64_t> codes;
  int min_hamming = 0;

  int correction_bound() const { return (min_hamming - 1) / 2; }

  void validate() const {
    require(grid >= 2 && grid <= 8, ErrorCode::InvalidArgument, "dictionary grid out of range");
    require(!codes.empty(), ErrorCode::InvalidArgument, "dictionary has no codes");
    int actual = grid * grid + 1;
    for (std::size_t i = 0; i < codes.size(); ++i) {
      BitMatrix m = BitMatrix::from_packed(codes[i], grid);
      std::array<std::uint64_t, 4> rot;
      for (int r = 0; r < 4; ++r) {
        rot[r] = m.packed();
        m = m.rotated_ccw();
      }
      for (int r = 1; r < 4; ++r)
        require(rot[r] != codes[i], ErrorCode::InvalidArgument, "code is rotation-symmetric");
      for (std::size_t j = i + 1; j < codes.size(); ++j)
        for (int r = 0; r < 4; ++r)
          actual = std::min(actual, hamming_distance(rot[r], codes[j]));
    }
    require(actual >= min_hamming, ErrorCode::InvalidArgument,
            "dictionary violates its declared minimum distance");
  }
};

// Embedded 4x4, 50-code dictionary (standard published square-fiducial set);
// pairwise rotational Hamming distance >= 4.
inline const MarkerDictionary& dictionary_4x4_50() {
  static const MarkerDictionary dict = [] {
    MarkerDictionary d;
    d.grid = 4;
    d.min_hamming = 4;
    d.codes = {
        0xb532, 0x0f9a, 0x332d, 0x9946, 0x549e, 0x79cd, 0x9e2e, 0xc4f2, 0xfeda, 0xcf56,
        0xf991, 0x11a7, 0x0eb7, 0x2a0f, 0x24b1, 0x263e, 0x4665, 0x6600, 0x6c5e, 0x76af,
        0x868b, 0xb02b, 0xccd5, 0xdd82, 0xfe47, 0x9471, 0xace4, 0xa554, 0x2123, 0x346f,
        0x4415, 0x57b2, 0x9ecf, 0xf0cb, 0x08ae, 0x0929, 0x1875, 0x04ff, 0x0df6, 0x1c5a,
        0x1718, 0x2a28, 0x328c, 0x38b2, 0x24e8, 0x2eeb, 0x2d3f, 0x4b64, 0x502e, 0x5013,
    };
    d.validate();
    return d;
  }();
  return dict;
}

// Text asset format: optional # comments, a "usrecon-dict-v1 grid=N" header
// line, then one hex code per line.
inline MarkerDictionary parse_dictionary(std::istream& in) {
  MarkerDictionary d;
  bool have_header = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::string body = line.substr(first);
    if (!body.empty() && body.back() == '\r') body.pop_back();
    if (!have_header) {
      std::istringstream hs(body);
      std::string tag, gridkv;
      hs >> tag >> gridkv;
      require(tag == "usrecon-dict-v1" && gridkv.rfind("grid=", 0) == 0, ErrorCode::ValidationFailed,
              "dictionary header missing or unsupported (line " + std::to_string(lineno) + ")");
      d.grid = std::stoi(gridkv.substr(5));
      have_header = true;
      continue;
    }
    std::uint64_t code = 0;
    auto res = std::from_chars(body.data(), body.data() + body.size(), code, 16);
    require(res.ec == std::errc() && res.ptr == body.data() + body.size(), ErrorCode::ValidationFailed,
            "bad dictionary code at line " + std::to_string(lineno));
    d.codes.push_back(code);
  }
  require(have_header, ErrorCode::ValidationFailed, "dictionary file has no header");
  // Derive the guaranteed distance from the table itself.
  int minh = d.grid * d.grid + 1;
  for (std::size_t i = 0; i < d.codes.size(); ++i) {
    BitMatrix m = BitMatrix::from_packed(d.codes[i], d.grid);
    for (int r = 0; r < 4; ++r) {
      for (std::size_t j = 0; j < d.codes.size(); ++j)
        if (j != i) minh = std::min(minh, hamming_distance(m.packed(), d.codes[j]));
      m = m.rotated_ccw();
    }
  }
  d.min_hamming = minh;
  d.validate();
  return d;
}

inline void write_dictionary(std::ostream& out, const MarkerDictionary& d) {
  out << "# square fiducial dictionary, one hex code per line, bit 1 = white cell\n";
  out << "usrecon-dict-v1 grid=" << d.grid << "\n";
  for (std::uint64_t c : d.codes) {
    char buf[17];
    auto res = std::to_chars(buf, buf + sizeof(buf), c, 16);
    std::string s(buf, res.ptr);
    const std::size_t width = static_cast<std::size_t>((d.grid * d.grid + 3) / 4);
    out << std::string(width > s.size() ? width - s.size() : 0, '0') << s << "\n";
  }
}

// ---------------------------------------------------------------------------
// Detection parameters and per-frame output

struct DetectorParams {
  int adaptive_window = 15;      // local mean window (odd)
  int adaptive_offset = 7;       // gray levels below local mean
  double min_quad_area = 100.0;  // px^2, corner polygon area
  double dp_epsilon_frac = 0.03; // polygon simplification, fraction of perimeter
  int cell_pixels = 8;           // canonical sampling resolution per cell
  double border_min_black = 0.8; // per-cell black fraction for a valid border
  double corner_fit_trim = 0.12; // contour points dropped at each edge end
};

struct MarkerObservation {
  int id = -1;
  Quad corners;                  // raw (distorted) pixel corners, canonical cycle
  Eigen::Vector2d center_px = Eigen::Vector2d::Zero();
  double timestamp = 0.0;
  Pose pose;
};

// ---------------------------------------------------------------------------
// Stage 1: adaptive binarization (foreground = darker than local mean)

inline ImageU8 binarize_adaptive(const ImageU8& img, int window = 15, int offset = 7) {
  require(!img.empty(), ErrorCode::InvalidArgument, "empty image");
  require(window >= 3 && window % 2 == 1, ErrorCode::InvalidArgument, "window must be odd and >= 3");
  const int w = img.width();
  const int h = img.height();

  // Summed-area table, one guard row/column of zeros.
  std::vector<std::uint64_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  const auto sat_at = [&](int x, int y) -> std::uint64_t& {
    return sat[static_cast<std::size_t>(y) * (w + 1) + x];
  };
  for (int y = 0; y < h; ++y) {
    std::uint64_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += img(x, y);
      sat_at(x + 1, y + 1) = sat_at(x + 1, y) + row;
    }
  }

  const int r = window / 2;
  ImageU8 out(w, h, 0);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r);
    const int y1 = std::min(h - 1, y + r);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r);
      const int x1 = std::min(w - 1, x + r);
      const std::uint64_t sum = sat_at(x1 + 1, y1 + 1) - sat_at(x0, y1 + 1) -
                                sat_at(x1 + 1, y0) + sat_at(x0, y0);
      const double mean = static_cast<double>(sum) / ((x1 - x0 + 1) * (y1 - y0 + 1));
      out(x, y) = img(x, y) < mean - offset ? 255 : 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2: quad candidates from outer contours

namespace detail {

// Moore-neighbor tracing of the outer boundary of one 8-connected component,
// starting from its first pixel in scan order. Returns pixel centers.
inline std::vector<Eigen::Vector2d> trace_outer_boundary(const ImageU8& bin,
                                                         const std::vector<int>& labels,
                                                         int label, int sx, int sy) {
  const int w = bin.width();
  const auto is_fg = [&](int x, int y) {
    return x >= 0 && x < w && y >= 0 && y < bin.height() &&
           labels[static_cast<std::size_t>(y) * w + x] == label;
  };
  // Clockwise neighbor order starting east.
  static constexpr int dx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static constexpr int dy[8] = {0, 1, 1, 1, 0, -1, -1, -1};

  std::vector<Eigen::Vector2d> contour;
  int cx = sx, cy = sy;
  int backtrack = 4;  // came from the west (scan found bg to the left)
  const int start_x = sx, start_y = sy;
  int start_dir = -1;
  const std::size_t max_steps = static_cast<std::size_t>(bin.width()) * bin.height() * 4 + 16;

  contour.emplace_back(cx, cy);
  for (std::size_t step = 0; step < max_steps; ++step) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int d = (backtrack + k) % 8;
      if (is_fg(cx + dx[d], cy + dy[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    if (start_dir < 0) start_dir = found;
    else if (cx == start_x && cy == start_y && found == start_dir && contour.size() > 1) break;
    cx += dx[found];
    cy += dy[found];
    if (cx == start_x && cy == start_y) {
      // Re-entered the start; loop once more to honor the stopping criterion.
      backtrack = (found + 5) % 8;
      continue;
    }
    contour.emplace_back(cx, cy);
    backtrack = (found + 5) % 8;  // one step back from the arrival direction
  }
  return contour;
}

inline double polyline_length_closed(const std::vector<Eigen::Vector2d>& pts) {
  double len = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    len += (pts[(i + 1) % pts.size()] - pts[i]).norm();
  return len;
}

inline void dp_mark(const std::vector<Eigen::Vector2d>& pts, int first, int last, double eps,
                    std::vector<char>& keep) {
  if (last <= first + 1) return;
  const Eigen::Vector2d a = pts[first];
  const Eigen::Vector2d b = pts[last];
  const Eigen::Vector2d ab = b - a;
  const double ab_len = ab.norm();
  double best = -1.0;
  int idx = -1;
  for (int i = first + 1; i < last; ++i) {
    const Eigen::Vector2d ap = pts[i] - a;
    const double dist = ab_len < 1e-12
                            ? ap.norm()
                            : std::abs(ab.x() * ap.y() - ab.y() * ap.x()) / ab_len;
    if (dist > best) {
      best = dist;
      idx = i;
    }
  }
  if (best > eps && idx >= 0) {
    keep[idx] = 1;
    dp_mark(pts, first, idx, eps, keep);
    dp_mark(pts, idx, last, eps, keep);
  }
}

// Douglas-Peucker on a closed contour, anchored at an approximate diameter.
inline std::vector<int> dp_simplify_closed(const std::vector<Eigen::Vector2d>& pts, double eps) {
  const int n = static_cast<int>(pts.size());
  if (n < 3) return {};
  int a = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[0]).squaredNorm();
    if (d > best) { best = d; a = i; }
  }
  int b = a;
  best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[a]).squaredNorm();
    if (d > best) { best = d; b = i; }
  }
  if (a == b) return {};
  if (a > b) std::swap(a, b);

  // Unroll the cycle so it starts at `a`; arcs a..b and b..a+n.
  std::vector<Eigen::Vector2d> unrolled(pts.size());
  for (int i = 0; i < n; ++i) unrolled[i] = pts[(a + i) % n];
  const int split = b - a;
  std::vector<char> keep(n, 0);
  keep[0] = keep[split] = 1;
  dp_mark(unrolled, 0, split, eps, keep);
  // Treat the wrap-around arc with the start point appended conceptually.
  {
    std::vector<Eigen::Vector2d> arc(unrolled.begin() + split, unrolled.end());
    arc.push_back(unrolled[0]);
    if (arc.size() >= 3) {
      std::vector<char> arc_keep(arc.size(), 0);
      arc_keep.front() = 1;
      arc_keep.back() = 1;
      dp_mark(arc, 0, static_cast<int>(arc.size()) - 1, eps, arc_keep);
      for (std::size_t i = 1; i + 1 < arc.size(); ++i)
        if (arc_keep[i]) keep[split + static_cast<int>(i)] = 1;
    }
  }

  std::vector<int> indices;  // into the original cyclic contour
  for (int i = 0; i < n; ++i)
    if (keep[i]) indices.push_back((a + i) % n);
  return indices;
}

struct FittedLine {
  Eigen::Vector2d point = Eigen::Vector2d::Zero();
  Eigen::Vector2d dir = Eigen::Vector2d::UnitX();
  bool ok = false;
};

// Total least squares line through a span of contour points.
inline FittedLine fit_line(const std::vector<Eigen::Vector2d>& pts) {
  FittedLine line;
  if (pts.size() < 2) return line;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : pts) {
    const Eigen::Vector2d d = p - mean;
    sxx += d.x() * d.x();
    sxy += d.x() * d.y();
    syy += d.y() * d.y();
  }
  // Dominant eigenvector of the 2x2 scatter matrix.
  const double tr = sxx + syy;
  const double det = sxx * syy - sxy * sxy;
  const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
  const double lmax = 0.5 * tr + disc;
  Eigen::Vector2d dir(sxy, lmax - sxx);
  if (dir.norm() < 1e-12) dir = sxx >= syy ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(0, 1);
  line.point = mean;
  line.dir = dir.normalized();
  line.ok = true;
  return line;
}

inline bool intersect_lines(const FittedLine& l1, const FittedLine& l2, Eigen::Vector2d& out) {
  const double det = l1.dir.x() * (-l2.dir.y()) - (-l2.dir.x()) * l1.dir.y();
  if (std::abs(det) < 1e-9) return false;
  const Eigen::Vector2d rhs = l2.point - l1.point;
  const double t = (rhs.x() * (-l2.dir.y()) - (-l2.dir.x()) * rhs.y()) / det;
  out = l1.point + t * l1.dir;
  return true;
}

}  // namespace detail

// Outer-contour quad extraction: border following, Douglas-Peucker
// simplification at 3% of the perimeter, convex four-vertex filter. Corner
// estimates are sharpened by total-least-squares fits to the contour points
// along each polygon edge (intersection of adjacent edge lines, pushed half a
// pixel outward to the binary crack boundary).
inline std::vector<Quad> find_quad_candidates(const ImageU8& bin, const DetectorParams& params = {}) {
  std::vector<Quad> quads;
  if (bin.empty()) return quads;
  const int w = bin.width();
  const int h = bin.height();

  std::vector<int> labels(static_cast<std::size_t>(w) * h, -1);
  int next_label = 0;
  std::deque<std::pair<int, int>> queue;

  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      if (bin(sx, sy) == 0 || labels[static_cast<std::size_t>(sy) * w + sx] >= 0) continue;
      const int label = next_label++;
      // Flood fill the component (8-connectivity).
      queue.clear();
      queue.emplace_back(sx, sy);
      labels[static_cast<std::size_t>(sy) * w + sx] = label;
      std::size_t count = 0;
      while (!queue.empty()) {
        const auto [px, py] = queue.front();
        queue.pop_front();
        ++count;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx;
            const int ny = py + dy;
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            auto& l = labels[static_cast<std::size_t>(ny) * w + nx];
            if (l < 0 && bin(nx, ny) != 0) {
              l = label;
              queue.emplace_back(nx, ny);
            }
          }
        }
      }
      if (count < 24) continue;  // too small to carry a decodable marker

      const auto contour = detail::trace_outer_boundary(bin, labels, label, sx, sy);
      if (contour.size() < 16) continue;
      const double perimeter = detail::polyline_length_closed(contour);
      const auto vertex_idx = detail::dp_simplify_closed(contour, params.dp_epsilon_frac * perimeter);
      if (vertex_idx.size() != 4) continue;

      std::array<Eigen::Vector2d, 4> corners;
      for (int i = 0; i < 4; ++i) corners[i] = contour[vertex_idx[i]];
      Quad quad(corners);
      if (!quad.valid(params.min_quad_area)) continue;

      // Refine: fit a line to the contour run along each edge, drop points
      // near the vertices, push outward by half a pixel, intersect.
      const Eigen::Vector2d centroid = quad.center();
      const int n = static_cast<int>(contour.size());
      std::array<detail::FittedLine, 4> lines;
      for (int e = 0; e < 4; ++e) {
        const int i0 = vertex_idx[e];
        const int i1 = vertex_idx[(e + 1) % 4];
        const int span = (i1 - i0 + n) % n;
        const int trim = std::max(1, static_cast<int>(span * params.corner_fit_trim));
        std::vector<Eigen::Vector2d> pts;
        for (int k = trim; k <= span - trim; ++k) pts.push_back(contour[(i0 + k) % n]);
        lines[e] = detail::fit_line(pts);
        if (lines[e].ok) {
          Eigen::Vector2d normal(-lines[e].dir.y(), lines[e].dir.x());
          if (normal.dot(lines[e].point - centroid) < 0.0) normal = -normal;
          lines[e].point += 0.5 * normal;  // boundary runs between pixel centers
        }
      }
      std::array<Eigen::Vector2d, 4> refined = corners;
      for (int v = 0; v < 4; ++v) {
        // Vertex v joins edge (v-1) and edge v; DP vertex v starts edge v.
        const auto& prev = lines[(v + 3) % 4];
        const auto& next = lines[v];
        Eigen::Vector2d p;
        if (prev.ok && next.ok && detail::intersect_lines(prev, next, p) &&
            (p - corners[v]).norm() < 4.0) {
          refined[v] = p;
        }
      }
      quad = Quad(refined);
      if (!quad.valid(params.min_quad_area)) continue;

      // Canonical cycle: positive shoelace, start at the topmost-leftmost corner.
      auto ordered = quad.corners();
      if (quad.signed_area() < 0.0) std::swap(ordered[1], ordered[3]);
      int start = 0;
      for (int i = 1; i < 4; ++i) {
        if (ordered[i].y() < ordered[start].y() - 1e-9 ||
            (std::abs(ordered[i].y() - ordered[start].y()) <= 1e-9 &&
             ordered[i].x() < ordered[start].x())) {
          start = i;
        }
      }
      std::array<Eigen::Vector2d, 4> rotated;
      for (int i = 0; i < 4; ++i) rotated[i] = ordered[(start + i) % 4];
      quads.emplace_back(rotated);
    }
  }
  return quads;
}

// Sub-pixel corner refinement against the grayscale image. For each quad
// edge, intensity profiles are sampled perpendicular to the edge and the
// half-contrast crossing localized by linear interpolation; the refined edge
// lines are intersected to form the corners. Binarized contours alone are
// staircase-quantized, which leaves the recovered marker size (and with it
// the pose depth) a few millimeters off at rig distances.
inline Quad refine_quad_subpixel(const ImageU8& img, const Quad& quad) {
  std::array<detail::FittedLine, 4> lines;
  const Eigen::Vector2d centroid = quad.center();
  for (int e = 0; e < 4; ++e) {
    const Eigen::Vector2d a = quad[e];
    const Eigen::Vector2d b = quad[(e + 1) % 4];
    const double len = (b - a).norm();
    if (len < 8.0) return quad;
    const Eigen::Vector2d dir = (b - a) / len;
    Eigen::Vector2d normal(-dir.y(), dir.x());
    if (normal.dot(centroid - a) < 0.0) normal = -normal;  // normal points inward

    const int stations = std::clamp(static_cast<int>(len / 3.0), 8, 24);
    std::vector<Eigen::Vector2d> crossings;
    constexpr int kProbes = 9;
    constexpr double kStep = 0.5;  // px along the normal
    for (int s = 0; s < stations; ++s) {
      const double t = 0.15 + 0.7 * s / (stations - 1);
      const Eigen::Vector2d base = a + t * len * dir;
      std::array<double, kProbes> profile;
      double lo = 255.0, hi = 0.0;
      for (int p = 0; p < kProbes; ++p) {
        const Eigen::Vector2d q = base + (p - kProbes / 2) * kStep * normal;
        if (!img.in_bounds(static_cast<int>(q.x()), static_cast<int>(q.y()))) {
          profile[p] = -1.0;
          continue;
        }
        profile[p] = bilinear_sample(img, q.x(), q.y());
        lo = std::min(lo, profile[p]);
        hi = std::max(hi, profile[p]);
      }
      if (hi - lo < 24.0) continue;  // no usable contrast at this station
      const double mid = 0.5 * (hi + lo);
      // Bright outside, dark inside: find the outermost bright-to-dark crossing.
      for (int p = 0; p + 1 < kProbes; ++p) {
        const double v0 = profile[p];
        const double v1 = profile[p + 1];
        if (v0 < 0.0 || v1 < 0.0) continue;
        if ((v0 - mid) * (v1 - mid) <= 0.0 && v0 != v1) {
          const double f = (mid - v0) / (v1 - v0);
          crossings.push_back(base + ((p - kProbes / 2) + f) * kStep * normal);
          break;
        }
      }
    }
    if (crossings.size() < 6) return quad;
    lines[e] = detail::fit_line(crossings);
    if (!lines[e].ok) return quad;
  }

  std::array<Eigen::Vector2d, 4> refined;
  for (int v = 0; v < 4; ++v) {
    Eigen::Vector2d p;
    if (!detail::intersect_lines(lines[(v + 3) % 4], lines[v], p) || (p - quad[v]).norm() > 2.0)
      return quad;
    refined[v] = p;
  }
  const Quad out(refined);
  return out.valid() ? out : quad;
}

// ---------------------------------------------------------------------------
// Stage 3: canonical resampling

// Resample the quad interior into an n x n fronto-parallel patch by inverse
// homography with bilinear interpolation. Quad corner i maps to canonical
// corner i (TL, TR, BR, BL).
inline ImageU8 canonicalize(const ImageU8& img, const Quad& quad, int n) {
  require(n >= 8, ErrorCode::InvalidArgument, "canonical resolution too small");
  const std::array<Eigen::Vector2d, 4> canon = {
      Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(n, 0.0),
      Eigen::Vector2d(n, n), Eigen::Vector2d(0.0, n)};
  const Eigen::Matrix3d h = geometry::homography_dlt(canon, quad.corners());

  ImageU8 out(n, n, 0);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d src = geometry::apply_homography(h, {i + 0.5, j + 0.5});
      out(i, j) = quantize_u8(bilinear_sample(img, src.x(), src.y()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 4: Otsu threshold

// Level maximizing the between-class variance of the 256-bin histogram;
// classes are [0..t] and [t+1..255], ties broken toward the lower level.
inline int otsu_threshold(const ImageU8& img) {
  require(!img.empty(), ErrorCode::InvalidArgument, "empty image");
  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t v : img.data()) ++hist[v];

  const std::uint64_t total = img.pixel_count();
  double sum_all = 0.0;
  int distinct = 0;
  for (int v = 0; v < 256; ++v) {
    sum_all += static_cast<double>(v) * hist[v];
    if (hist[v] > 0) ++distinct;
  }
  require(distinct >= 2, ErrorCode::DegenerateHistogram, "single-valued image");

  double best = -1.0;
  int best_t = 0;
  std::uint64_t w0 = 0;
  double sum0 = 0.0;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += static_cast<double>(t) * hist[t];
    const std::uint64_t w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      best_t = t;
    }
  }
  return best_t;
}

// ---------------------------------------------------------------------------
// Stage 5: bit decoding

struct DecodedBits {
  BitMatrix bits;       // payload only, grid x grid
  bool border_ok = false;
  double border_black_fraction = 0.0;
};

// Majority vote per cell after Otsu binarization of the canonical patch.
// Every border cell must be at least `border_min_black` black.
inline DecodedBits decode_bits(const ImageU8& canonical, int grid, int border,
                               double border_min_black = 0.8) {
  const int cells = grid + 2 * border;
  require(canonical.width() == canonical.height(), ErrorCode::ShapeMismatch,
          "canonical image must be square");
  require(canonical.width() % cells == 0, ErrorCode::InvalidArgument,
          "canonical size not divisible into cells");
  const int cell = canonical.width() / cells;

  const int level = otsu_threshold(canonical);

  DecodedBits out;
  out.bits = BitMatrix(grid);
  out.border_ok = true;
  std::uint64_t border_black = 0;
  std::uint64_t border_total = 0;
  for (int cr = 0; cr < cells; ++cr) {
    for (int cc = 0; cc < cells; ++cc) {
      int black = 0;
      for (int y = cr * cell; y < (cr + 1) * cell; ++y)
        for (int x = cc * cell; x < (cc + 1) * cell; ++x)
          if (canonical(x, y) <= level) ++black;
      const int count = cell * cell;
      const bool is_border = cr < border || cr >= cells - border || cc < border || cc >= cells - border;
      if (is_border) {
        border_black += black;
        border_total += count;
        if (black < border_min_black * count) out.border_ok = false;
      } else {
        out.bits.set(cr - border, cc - border, black * 2 < count ? 1 : 0);
      }
    }
  }
  out.border_black_fraction = border_total ? static_cast<double>(border_black) / border_total : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Stage 6: dictionary matching

struct MarkerMatch {
  int id = -1;
  int rotation_deg = 0;  // rotate the observed bits CCW by this to reach canonical
  int distance = 0;
};

// Nearest code over all four rotations; accepted only within the dictionary's
// error-correction bound floor((min_hamming-1)/2).
inline std::optional<MarkerMatch> match_dictionary(const BitMatrix& bits,
                                                   const MarkerDictionary& dict) {
  require(bits.size() == dict.grid, ErrorCode::ShapeMismatch, "bit matrix does not match dictionary grid");
  MarkerMatch best;
  best.distance = dict.grid * dict.grid + 1;
  BitMatrix m = bits;
  for (int r = 0; r < 4; ++r) {
    const std::uint64_t packed = m.packed();
    for (std::size_t id = 0; id < dict.codes.size(); ++id) {
      const int dist = hamming_distance(packed, dict.codes[id]);
      if (dist < best.distance) {
        best.distance = dist;
        best.id = static_cast<int>(id);
        best.rotation_deg = r * 90;
      }
    }
    m = m.rotated_ccw();
  }
  if (best.distance > dict.correction_bound()) return std::nullopt;
  return best;
}

// ---------------------------------------------------------------------------
// Stage 7: full per-frame pipeline

// Detect all dictionary markers in a grayscale frame. When a depth image
// (mm, zero = no data) is supplied, the pose depth is replaced by the depth
// sample at the marker center and x, y are rescaled to stay on the same
// projection ray.
inline std::vector<MarkerObservation> detect_markers(
    const ImageU8& img, const CameraModel& cam, const MarkerDictionary& dict, double side_mm,
    double timestamp = 0.0, const Image<float>* depth = nullptr, const DetectorParams& params = {}) {
  cam.validate();
  std::vector<MarkerObservation> out;
  if (img.empty()) return out;

  const ImageU8 bin = binarize_adaptive(img, params.adaptive_window, params.adaptive_offset);
  const int cells = dict.grid + 2;
  const int canon_n = params.cell_pixels * cells;

  for (Quad candidate : find_quad_candidates(bin, params)) {
    candidate = refine_quad_subpixel(img, candidate);
    ImageU8 canonical;
    try {
      canonical = canonicalize(img, candidate, canon_n);
    } catch (const Error&) {
      continue;
    }
    DecodedBits decoded;
    try {
      decoded = decode_bits(canonical, dict.grid, 1, params.border_min_black);
    } catch (const Error&) {
      continue;
    }
    if (!decoded.border_ok) continue;
    const auto match = match_dictionary(decoded.bits, dict);
    if (!match) continue;

    // Undo the in-plane rotation: observed corner (i + k) is the marker's corner i.
    const int k = match->rotation_deg / 90;
    std::array<Eigen::Vector2d, 4> ordered;
    for (int i = 0; i < 4; ++i) ordered[i] = candidate[(i + k) % 4];
    const Quad corners(ordered);

    MarkerObservation obs;
    obs.id = match->id;
    obs.corners = corners;
    obs.timestamp = timestamp;
    try {
      const Eigen::Matrix3d h_raw =
          geometry::homography_dlt(geometry::marker_object_corners(side_mm), ordered);
      obs.center_px = geometry::apply_homography(h_raw, {0.0, 0.0});

      std::array<Eigen::Vector2d, 4> undist;
      for (int i = 0; i < 4; ++i) undist[i] = geometry::undistort_pixel(ordered[i], cam);
      const Eigen::Matrix3d h = geometry::homography_from_corners(Quad(undist), side_mm);
      obs.pose = geometry::pose_from_homography(h, cam);
    } catch (const Error&) {
      continue;
    }

    if (depth != nullptr && depth->in_bounds(static_cast<int>(obs.center_px.x()),
                                             static_cast<int>(obs.center_px.y()))) {
      const double zd = bilinear_sample(*depth, obs.center_px.x(), obs.center_px.y());
      if (zd > 0.0 && obs.pose.position.z() > 0.0) {
        obs.pose.position *= zd / obs.pose.position.z();
      }
    }
    out.push_back(std::move(obs));
  }
  return out;
}

}  // namespace usrecon::marker
