#pragma once

#include <cstdint>
#include <filesystem>

#include "patchssl/tensor.hpp"

namespace patchssl {

// Colour PNG (8- or 16-bit RGB/RGBA, alpha dropped) as [H, W, 3] in [0, 1].
// Grayscale and palette images are rejected with FormatError.
Tensor<float> read_png_rgb(const std::filesystem::path& path);

// Any PNG as a binary [H, W] map: 1 where any colour channel is nonzero.
Tensor<std::uint8_t> read_png_mask(const std::filesystem::path& path);

// [H, W, 3] or [H, W] 8-bit.
void write_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& pixels);

// Quantizes [0, 1] floats to 8 bits with rounding.
Tensor<std::uint8_t> to_u8(const Tensor<float>& pixels);

// Bilinear resampling of [H, W, C] with half-pixel centres and edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w);

// Nearest-neighbour resampling of an [H, W] map.
Tensor<std::uint8_t> resize_nearest(const Tensor<std::uint8_t>& map, std::size_t out_h,
                                    std::size_t out_w);

}  // namespace patchssl
