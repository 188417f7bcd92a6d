#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fer/config.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

/// Decoded 8-bit raster, interleaved channels (1 = gray, 3 = RGB).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

/// Single-channel floating-point image, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Scalar> values;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, Scalar fill = 0) : width(w), height(h), values(w * h, fill) {}

  Scalar& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  Scalar at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

/// PNG, JPEG or binary/ASCII PGM, sniffed from the leading bytes.
/// Throws DataError on anything undecodable.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

/// BT.601 luma (0.299 R + 0.587 G + 0.114 B) scaled to [0, 1].
GrayImage to_gray(const Image& image);

/// Bilinear resize with pixel-center alignment and edge clamping.
GrayImage resize_bilinear(const GrayImage& image, std::size_t width, std::size_t height);

/// Quantize [0, 1] values to an 8-bit gray raster.
Image to_image(const GrayImage& gray);

GrayImage flip_horizontal(const GrayImage& image);

}  // namespace FER_PRECISION_NS
}  // namespace fer
