#pragma once

// Shared primitives: error taxonomy, image container, deterministic RNG
// streams and numeric helpers used across the pipeline.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace usrecon {

enum class ErrorCode {
  NonConvergent,
  BehindCamera,
  DegenerateQuad,
  DegenerateHistogram,
  BorderInvalid,
  OutOfRange,
  TooFewFrames,
  ZeroMotion,
  AllDuplicates,
  LengthMismatch,
  TooSmall,
  BadRange,
  ShapeMismatch,
  EmptyMask,
  NotMonotonic,
  IndexOutOfRange,
  IoFailure,
  ValidationFailed,
  InvalidArgument,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonConvergent: return "NonConvergent";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::DegenerateQuad: return "DegenerateQuad";
    case ErrorCode::DegenerateHistogram: return "DegenerateHistogram";
    case ErrorCode::BorderInvalid: return "BorderInvalid";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::TooFewFrames: return "TooFewFrames";
    case ErrorCode::ZeroMotion: return "ZeroMotion";
    case ErrorCode::AllDuplicates: return "AllDuplicates";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::BadRange: return "BadRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NotMonotonic: return "NotMonotonic";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) raise(code, message);
}

// Row-major 2D image. Pixel (x, y) = column x, row y.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    require(width > 0 && height > 0, ErrorCode::InvalidArgument, "image dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  T at_clamped(int x, int y) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return (*this)(x, y);
  }

  bool in_bounds(int x, int y) const { return x >= 0 && x < width_ && y >= 0 && y < height_; }
  bool same_shape(const Image& other) const { return width_ == other.width_ && height_ == other.height_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Image& a, const Image& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ImageU8 = Image<std::uint8_t>;
using ImageU16 = Image<std::uint16_t>;
using ImageF = Image<float>;

// Round-half-up to nearest integer; ties away from the floor.
inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

inline std::uint8_t quantize_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(round_half_up(v), 0, 255));
}

// Bilinear sample at (x, y) with edge clamping; coordinates are pixel centers.
template <typename T>
inline double bilinear_sample(const Image<T>& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = img.at_clamped(x0, y0);
  const double v10 = img.at_clamped(x0 + 1, y0);
  const double v01 = img.at_clamped(x0, y0 + 1);
  const double v11 = img.at_clamped(x0 + 1, y0 + 1);
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

// splitmix64 finalizer; used to derive independent child streams from a seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. Distribution transforms are hand-rolled inverse-CDF /
// Box-Muller so sampled values depend only on the mt19937_64 stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double rayleigh(double sigma) {
    const double u = uniform();
    return sigma * std::sqrt(-2.0 * std::log(1.0 - u));
  }

  std::uint64_t next_u64() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Deterministic index-parallel loop: static contiguous chunks, no work
// stealing, so results cannot depend on scheduling. The first exception
// thrown by any worker is rethrown on the calling thread.
template <typename Fn>
inline void parallel_for(int n, int workers, Fn&& fn) {
  if (workers <= 1 || n < 2) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int n_workers = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  std::exception_ptr first_error;
  std::atomic_flag error_claimed = ATOMIC_FLAG_INIT;
  for (int t = 0; t < n_workers; ++t) {
    const int i0 = static_cast<int>(static_cast<std::int64_t>(t) * n / n_workers);
    const int i1 = static_cast<int>(static_cast<std::int64_t>(t + 1) * n / n_workers);
    pool.emplace_back([i0, i1, &fn, &first_error, &error_claimed] {
      try {
        for (int i = i0; i < i1; ++i) fn(i);
      } catch (...) {
        if (!error_claimed.test_and_set()) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Shortest round-trip decimal formatting (exact re-parse).
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc();
}

}  // namespace usrecon
