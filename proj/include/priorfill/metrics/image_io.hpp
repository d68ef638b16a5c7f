#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "priorfill/masking/masks.hpp"
#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

/// 8-bit interleaved image buffer.
struct Image8 {
    int64_t width = 0, height = 0, channels = 0;  // channels 1 or 3
    std::vector<uint8_t> pixels;
};

/// Any PNG colour type is expanded to 8-bit; alpha is dropped. Throws
/// std::runtime_error naming the file on failure.
Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);

/// [3,H,W] in [0,1]; grayscale inputs are replicated.
Tensor read_png_rgb(const std::string& path, DType dt = default_dtype());
/// [C,H,W] (C = 1 or 3) clamped to [0,1] and rounded to 8 bits.
void write_png_tensor(const std::string& path, const Tensor& img);

/// Pixel mask from a PNG: a pixel is masked when its first channel > 127.
MaskMap read_mask_png(const std::string& path);
void write_mask_png(const std::string& path, const MaskMap& m);

Image8 tensor_to_image8(const Tensor& img);

}  // namespace priorfill
