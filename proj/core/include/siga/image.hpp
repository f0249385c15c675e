// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace siga {

/// Row-major grayscale raster.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool operator==(const Image&) const = default;
};

/// Row-major binary raster.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t& at(std::size_t r, std::size_t c) { return bits[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * width + c]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// |a AND b| / |a OR b|; 1.0 when both are empty.
double iou(const Mask& a, const Mask& b);

/// 8-bit quantization used by every stored raster: round(v * 255).
std::uint8_t quantize(double v);
double dequantize(std::uint8_t q);

/// Binary PGM (P5, maxval 255). Throws ContractError on values outside [0,1].
void write_pgm(const Image& img, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

}  // namespace siga
