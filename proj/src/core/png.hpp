#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace tcaq {

// Minimal 8-bit grayscale PNG writer (uncompressed deflate blocks).
void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int width,
                    int height);

// Tiles a batch of [n,1,h,w] samples in [-1,1] into a grid image, nearest
// upscaled by `upscale`, and writes it as PNG.
void write_sample_grid_png(const std::string& path, const Tensor& batch, int upscale = 8);

}  // namespace tcaq
