#pragma once

// B-mode enhancement chain (log compression, 3x3 median, range clamping,
// CLAHE), the classical segmentation baseline, mask application, and the
// structural similarity metric.

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include "usrecon/common.hpp"
#include "usrecon/marker.hpp"

namespace usrecon::imgproc {

// Timestamped B-mode frame with physical pixel pitch.
struct UsFrame {
  ImageU8 pixels;
  double pitch_lateral_mm = 0.15;
  double pitch_axial_mm = 0.2;
  double timestamp = 0.0;
};

// Binary image, 0 = background, 255 = foreground.
using Mask = ImageU8;

inline ImageF to_float(const ImageU8& img) {
  ImageF out(img.width(), img.height());
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    out.data()[i] = static_cast<float>(img.data()[i]);
  return out;
}

inline ImageU8 to_u8(const ImageF& img) {
  ImageU8 out(img.width(), img.height());
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    out.data()[i] = quantize_u8(255.0 * img.data()[i]);
  return out;
}

// Normalized log dynamic-range compression onto [0, 1]. By default the
// image's own maximum maps to 1; a fixed reference maximum can be supplied
// instead so a frame sequence shares one absolute scale (content-free frames
// would otherwise have their noise stretched to full range).
inline ImageF log_compress(const ImageF& img, double alpha = 255.0,
                           std::optional<double> reference_max = std::nullopt) {
  require(alpha > 0.0, ErrorCode::InvalidArgument, "alpha must be positive");
  float xmax = 0.0f;
  for (float v : img.data()) {
    require(v >= 0.0f, ErrorCode::InvalidArgument, "log_compress input must be non-negative");
    xmax = std::max(xmax, v);
  }
  double ref = reference_max.value_or(xmax);
  if (!(ref > 0.0)) ref = 1.0;  // all-zero image stays zero
  const double denom = std::log1p(alpha);
  const double scale = alpha / ref;
  ImageF out(img.width(), img.height());
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    out.data()[i] = static_cast<float>(
        std::min(1.0, std::log1p(scale * img.data()[i]) / denom));
  return out;
}

// 3x3 median with edge replication.
template <typename T>
inline Image<T> median3(const Image<T>& img) {
  require(img.width() >= 3 && img.height() >= 3, ErrorCode::TooSmall,
          "median3 needs at least a 3x3 image");
  Image<T> out(img.width(), img.height());
  std::array<T, 9> window;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      int k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) window[k++] = img.at_clamped(x + dx, y + dy);
      std::nth_element(window.begin(), window.begin() + 4, window.end());
      out(x, y) = window[4];
    }
  }
  return out;
}

// Clamp to [lo, hi] then rescale affinely onto [0, 1].
inline ImageF clamp_range(const ImageF& img, double lo, double hi) {
  require(lo < hi, ErrorCode::BadRange, "clamp bounds must satisfy lo < hi");
  const double inv = 1.0 / (hi - lo);
  ImageF out(img.width(), img.height());
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data()[i]), lo, hi);
    out.data()[i] = static_cast<float>((v - lo) * inv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CLAHE

// Per-tile CLAHE transfer functions. Histogram mass above
// clip * tile_pixels / 256 is redistributed equally over all bins in a single
// pass, then the clipped CDF is mapped onto [0, 255].
inline std::vector<std::array<std::uint8_t, 256>> clahe_mappings(const ImageU8& img, int tiles_x,
                                                                 int tiles_y, double clip) {
  require(tiles_x >= 1 && tiles_y >= 1, ErrorCode::InvalidArgument, "tile counts must be positive");
  require(img.width() >= tiles_x && img.height() >= tiles_y, ErrorCode::TooSmall,
          "image smaller than the tile grid");
  require(clip >= 1.0, ErrorCode::InvalidArgument, "clip limit must be >= 1");

  std::vector<std::array<std::uint8_t, 256>> maps(static_cast<std::size_t>(tiles_x) * tiles_y);
  for (int ty = 0; ty < tiles_y; ++ty) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(ty) * img.height() / tiles_y);
    const int y1 = static_cast<int>(static_cast<std::int64_t>(ty + 1) * img.height() / tiles_y);
    for (int tx = 0; tx < tiles_x; ++tx) {
      const int x0 = static_cast<int>(static_cast<std::int64_t>(tx) * img.width() / tiles_x);
      const int x1 = static_cast<int>(static_cast<std::int64_t>(tx + 1) * img.width() / tiles_x);

      std::array<double, 256> hist{};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) hist[img(x, y)] += 1.0;
      const double n = static_cast<double>(x1 - x0) * (y1 - y0);

      const double limit = clip * n / 256.0;
      double excess = 0.0;
      for (double& h : hist) {
        if (h > limit) {
          excess += h - limit;
          h = limit;
        }
      }
      const double add = excess / 256.0;
      double cdf = 0.0;
      auto& map = maps[static_cast<std::size_t>(ty) * tiles_x + tx];
      for (int v = 0; v < 256; ++v) {
        cdf += hist[v] + add;
        map[v] = static_cast<std::uint8_t>(std::clamp(round_half_up(255.0 * cdf / n), 0, 255));
      }
    }
  }
  return maps;
}

// Blended transfer value at pixel (x, y) for input level v: bilinear mix of
// the four surrounding tile mappings (replicated past the outer tile centers).
inline double clahe_lookup(const std::vector<std::array<std::uint8_t, 256>>& maps, int tiles_x,
                           int tiles_y, int width, int height, int x, int y, std::uint8_t v) {
  const auto tile_center = [](int t, int n_tiles, int extent) {
    const int lo = static_cast<int>(static_cast<std::int64_t>(t) * extent / n_tiles);
    const int hi = static_cast<int>(static_cast<std::int64_t>(t + 1) * extent / n_tiles);
    return 0.5 * (lo + hi - 1);
  };

  int ty0 = 0;
  while (ty0 + 1 < tiles_y && tile_center(ty0 + 1, tiles_y, height) <= y) ++ty0;
  int ty1 = ty0;
  double wy = 0.0;
  const double cy0 = tile_center(ty0, tiles_y, height);
  if (y > cy0 && ty0 + 1 < tiles_y) {
    ty1 = ty0 + 1;
    wy = (y - cy0) / (tile_center(ty1, tiles_y, height) - cy0);
  }
  int tx0 = 0;
  while (tx0 + 1 < tiles_x && tile_center(tx0 + 1, tiles_x, width) <= x) ++tx0;
  int tx1 = tx0;
  double wx = 0.0;
  const double cx0 = tile_center(tx0, tiles_x, width);
  if (x > cx0 && tx0 + 1 < tiles_x) {
    tx1 = tx0 + 1;
    wx = (x - cx0) / (tile_center(tx1, tiles_x, width) - cx0);
  }
  const double m00 = maps[static_cast<std::size_t>(ty0) * tiles_x + tx0][v];
  const double m10 = maps[static_cast<std::size_t>(ty0) * tiles_x + tx1][v];
  const double m01 = maps[static_cast<std::size_t>(ty1) * tiles_x + tx0][v];
  const double m11 = maps[static_cast<std::size_t>(ty1) * tiles_x + tx1][v];
  return (1.0 - wy) * ((1.0 - wx) * m00 + wx * m10) + wy * ((1.0 - wx) * m01 + wx * m11);
}

// Contrast limited adaptive histogram equalization; output pixels blend the
// four surrounding tile mappings bilinearly.
inline ImageU8 clahe(const ImageU8& img, std::pair<int, int> tiles = {8, 8}, double clip = 2.0) {
  const int tiles_x = tiles.first;
  const int tiles_y = tiles.second;
  const auto maps = clahe_mappings(img, tiles_x, tiles_y, clip);

  ImageU8 out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double blended =
          clahe_lookup(maps, tiles_x, tiles_y, img.width(), img.height(), x, y, img(x, y));
      out(x, y) = static_cast<std::uint8_t>(std::clamp(round_half_up(blended), 0, 255));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Morphology and segmentation

namespace detail {

inline Mask erode3(const Mask& m) {
  Mask out(m.width(), m.height(), 0);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      bool all = true;
      for (int dy = -1; dy <= 1 && all; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          // outside the image counts as background
          if (!m.in_bounds(nx, ny) || m(nx, ny) == 0) {
            all = false;
            break;
          }
        }
      }
      out(x, y) = all ? 255 : 0;
    }
  }
  return out;
}

inline Mask dilate3(const Mask& m) {
  Mask out(m.width(), m.height(), 0);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      bool any = false;
      for (int dy = -1; dy <= 1 && !any; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (m.in_bounds(nx, ny) && m(nx, ny) != 0) {
            any = true;
            break;
          }
        }
      }
      out(x, y) = any ? 255 : 0;
    }
  }
  return out;
}

inline Mask largest_component(const Mask& m) {
  const int w = m.width();
  const int h = m.height();
  std::vector<int> labels(static_cast<std::size_t>(w) * h, -1);
  int best_label = -1;
  std::size_t best_count = 0;
  int next = 0;
  std::deque<std::pair<int, int>> queue;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      if (m(sx, sy) == 0 || labels[static_cast<std::size_t>(sy) * w + sx] >= 0) continue;
      const int label = next++;
      std::size_t count = 0;
      queue.clear();
      queue.emplace_back(sx, sy);
      labels[static_cast<std::size_t>(sy) * w + sx] = label;
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
            if (l < 0 && m(nx, ny) != 0) {
              l = label;
              queue.emplace_back(nx, ny);
            }
          }
        }
      }
      if (count > best_count) {
        best_count = count;
        best_label = label;
      }
    }
  }
  Mask out(w, h, 0);
  if (best_label >= 0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (labels[static_cast<std::size_t>(y) * w + x] == best_label) out(x, y) = 255;
  }
  return out;
}

}  // namespace detail

// Classical stand-in for a learned segmenter: Otsu threshold, binary open
// then close with a 3x3 element, keep the largest 8-connected component.
inline Mask segment_baseline(const ImageU8& img) {
  int level = 0;
  try {
    level = marker::otsu_threshold(img);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateHistogram)
      raise(ErrorCode::EmptyMask, "single-valued image has no foreground");
    throw;
  }
  Mask m(img.width(), img.height(), 0);
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    m.data()[i] = img.data()[i] > level ? 255 : 0;
  m = detail::dilate3(detail::erode3(m));  // open
  m = detail::erode3(detail::dilate3(m));  // close
  m = detail::largest_component(m);
  bool any = false;
  for (std::uint8_t v : m.data())
    if (v) { any = true; break; }
  require(any, ErrorCode::EmptyMask, "no foreground survives segmentation");
  return m;
}

inline ImageU8 apply_mask(const ImageU8& img, const Mask& mask) {
  require(img.same_shape(mask), ErrorCode::ShapeMismatch, "mask shape differs from frame");
  ImageU8 out(img.width(), img.height());
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    out.data()[i] = mask.data()[i] != 0 ? img.data()[i] : 0;
  return out;
}

// ---------------------------------------------------------------------------
// SSIM

// Single-scale SSIM with the standard 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, L = 255; mean over all fully-covered windows.
inline double ssim(const ImageU8& a, const ImageU8& b) {
  require(a.same_shape(b), ErrorCode::ShapeMismatch, "ssim inputs differ in shape");
  constexpr int kRadius = 5;
  constexpr int kWin = 2 * kRadius + 1;
  require(a.width() >= kWin && a.height() >= kWin, ErrorCode::TooSmall,
          "ssim needs at least an 11x11 image");

  std::array<double, kWin> kernel;
  double ksum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kRadius;
    kernel[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const int w = a.width();
  const int h = a.height();
  const int vw = w - 2 * kRadius;  // valid extent
  const int vh = h - 2 * kRadius;

  // Separable Gaussian filtering of (a, b, a^2, b^2, ab), valid region only.
  std::array<std::vector<double>, 5> mid;
  for (auto& m : mid) m.assign(static_cast<std::size_t>(vw) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < vw; ++x) {
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0;
      for (int k = 0; k < kWin; ++k) {
        const double va = a(x + k, y);
        const double vb = b(x + k, y);
        const double kv = kernel[k];
        s0 += kv * va;
        s1 += kv * vb;
        s2 += kv * va * va;
        s3 += kv * vb * vb;
        s4 += kv * va * vb;
      }
      const std::size_t idx = static_cast<std::size_t>(y) * vw + x;
      mid[0][idx] = s0;
      mid[1][idx] = s1;
      mid[2][idx] = s2;
      mid[3][idx] = s3;
      mid[4][idx] = s4;
    }
  }

  constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);
  double acc = 0.0;
  for (int y = 0; y < vh; ++y) {
    for (int x = 0; x < vw; ++x) {
      double f[5] = {0, 0, 0, 0, 0};
      for (int k = 0; k < kWin; ++k) {
        const std::size_t idx = static_cast<std::size_t>(y + k) * vw + x;
        for (int c = 0; c < 5; ++c) f[c] += kernel[k] * mid[c][idx];
      }
      const double mu_a = f[0];
      const double mu_b = f[1];
      const double var_a = f[2] - mu_a * mu_a;
      const double var_b = f[3] - mu_b * mu_b;
      const double cov = f[4] - mu_a * mu_b;
      const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
      const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
      acc += num / den;
    }
  }
  return acc / (static_cast<double>(vw) * vh);
}

// ---------------------------------------------------------------------------
// Enhancement chain

struct EnhanceParams {
  double log_alpha = 255.0;
  std::optional<double> log_reference_max;  // absent -> per-frame maximum
  std::optional<double> clamp_lo;           // log-domain; absent -> percentile of first frame
  std::optional<double> clamp_hi;
  std::pair<int, int> clahe_tiles{8, 8};
  double clahe_clip = 2.0;
};

inline double percentile(std::vector<float> values, double p) {
  require(!values.empty(), ErrorCode::InvalidArgument, "percentile of empty range");
  std::sort(values.begin(), values.end());
  const double idx = p / 100.0 * (static_cast<double>(values.size()) - 1.0);
  return values[static_cast<std::size_t>(std::clamp(round_half_up(idx), 0,
                                                    static_cast<int>(values.size()) - 1))];
}

// Clamp bounds: configured values, else the 1st/99th percentile of the first
// frame after log compression and median filtering.
inline std::pair<double, double> resolve_clamp_bounds(const ImageU8& first_frame,
                                                      const EnhanceParams& params) {
  if (params.clamp_lo && params.clamp_hi) return {*params.clamp_lo, *params.clamp_hi};
  const ImageF f =
      median3(log_compress(to_float(first_frame), params.log_alpha, params.log_reference_max));
  double lo = params.clamp_lo.value_or(percentile(f.data(), 1.0));
  double hi = params.clamp_hi.value_or(percentile(f.data(), 99.0));
  if (!(lo < hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  return {lo, hi};
}

// Full per-frame chain: log compression, median, clamp, CLAHE.
inline ImageU8 enhance_frame(const ImageU8& raw, double clamp_lo, double clamp_hi,
                             const EnhanceParams& params = {}) {
  ImageF f = log_compress(to_float(raw), params.log_alpha, params.log_reference_max);
  f = median3(f);
  f = clamp_range(f, clamp_lo, clamp_hi);
  return clahe(to_u8(f), params.clahe_tiles, params.clahe_clip);
}

}  // namespace usrecon::imgproc
