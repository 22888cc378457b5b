#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "popusense/error.hpp"

namespace popusense {

/// Dense NCHW tensor of doubles. Used for image batches (C = 1),
/// latent maps and anomaly maps (C = 1).
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_stride() const noexcept { return static_cast<std::size_t>(c) * plane(); }

  double& at(int in, int ic, int y, int x) noexcept {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + y) * w + x];
  }
  double at(int in, int ic, int y, int x) const noexcept {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + y) * w + x];
  }

  std::span<double> sample(int in) noexcept {
    return {data.data() + in * sample_stride(), sample_stride()};
  }
  std::span<const double> sample(int in) const noexcept {
    return {data.data() + in * sample_stride(), sample_stride()};
  }

  bool same_shape(const Tensor4& o) const noexcept {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;
};

inline void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
  if (!a.same_shape(b)) throw Error(Errc::ShapeMismatch, what);
}

/// A single-channel S×S image with values in [0,1].
struct Image {
  int size = 0;
  std::vector<double> pixels;

  Image() = default;
  explicit Image(int s, double fill = 0.0)
      : size(s), pixels(static_cast<std::size_t>(s) * s, fill) {}

  double& at(int y, int x) noexcept { return pixels[static_cast<std::size_t>(y) * size + x]; }
  double at(int y, int x) const noexcept { return pixels[static_cast<std::size_t>(y) * size + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary S×S mask stored as bytes (0 or 1).
struct Mask {
  int size = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  explicit Mask(int s) : size(s), bits(static_cast<std::size_t>(s) * s, 0) {}

  std::uint8_t& at(int y, int x) noexcept { return bits[static_cast<std::size_t>(y) * size + x]; }
  std::uint8_t at(int y, int x) const noexcept { return bits[static_cast<std::size_t>(y) * size + x]; }

  std::size_t count() const noexcept {
    std::size_t k = 0;
    for (auto b : bits) k += b != 0;
    return k;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace popusense
