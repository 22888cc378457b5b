#pragma once

#include <span>
#include <vector>

namespace popusense {

/// Half-sample symmetric boundary index ("d c b a | a b c d"), valid for
/// any offset.
int mirror_index(int i, int n) noexcept;

/// Normalized 1-D Gaussian taps with radius ceil(4 sigma). sigma must be > 0.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur of a row-major h×w plane, mirror boundary.
/// sigma == 0 copies the input.
std::vector<double> gaussian_blur(std::span<const double> plane, int h, int w, double sigma);

/// Mean over a (2r+1)×(2r+1) window, mirror boundary.
std::vector<double> box_mean(std::span<const double> plane, int h, int w, int radius);

}  // namespace popusense
