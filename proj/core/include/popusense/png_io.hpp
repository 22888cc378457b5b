#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace popusense::png {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Writes an 8-bit grayscale PNG without alpha. Throws Error(IoError).
void write_gray(const std::filesystem::path& path, const GrayImage& img);

/// Reads any PNG as 8-bit grayscale. Throws Error(IoError) when the file is
/// missing and Error(CorruptImage) when it cannot be decoded.
GrayImage read_gray(const std::filesystem::path& path);

}  // namespace popusense::png
