#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ltgan/tensor.hpp"

namespace ltgan::image {

/// 8-bit grayscale raster, row-major.
struct Gray8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Model range [-1, 1] to [0, 255]: round((x + 1) / 2 * 255), ties to even, clamped.
std::uint8_t to_byte(double x);
/// One (C=1, H, W) image, or row `index` of an (n, 1, H, W) batch.
Gray8 to_gray(const Tensor& images, std::size_t index = 0);
/// Tiles of equal size placed row-major into a rows x cols grid, with `gap` black pixels between tiles.
Gray8 mosaic(const std::vector<Gray8>& tiles, std::size_t cols, std::size_t gap = 1);

/// Deterministic PNG (color type 0, bit depth 8, no filtering, zlib level 9).
std::vector<unsigned char> encode_png(const Gray8& img);
/// Reads back what encode_png writes (grayscale, 8 bit, filter type 0 or any standard filter).
Gray8 decode_png(const std::vector<unsigned char>& png);

std::string base64_encode(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

}  // namespace ltgan::image
