#include "popusense/image_ops.hpp"

#include <cmath>

namespace popusense {

int mirror_index(int i, int n) noexcept {
  if (n == 1) return 0;
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& t : taps) t /= total;
  return taps;
}

namespace {

std::vector<double> separable(std::span<const double> plane, int h, int w,
                              const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  std::vector<double> tmp(plane.size(), 0.0);
  std::vector<double> out(plane.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += taps[static_cast<std::size_t>(t + radius)] *
               plane[static_cast<std::size_t>(y) * w + mirror_index(x + t, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += taps[static_cast<std::size_t>(t + radius)] *
               tmp[static_cast<std::size_t>(mirror_index(y + t, h)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

}  // namespace

std::vector<double> gaussian_blur(std::span<const double> plane, int h, int w, double sigma) {
  if (sigma <= 0.0) return {plane.begin(), plane.end()};
  return separable(plane, h, w, gaussian_kernel(sigma));
}

std::vector<double> box_mean(std::span<const double> plane, int h, int w, int radius) {
  const std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1), 1.0 / (2 * radius + 1));
  return separable(plane, h, w, taps);
}

}  // namespace popusense
