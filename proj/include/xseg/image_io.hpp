#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xseg/tensor.hpp"

namespace xseg {

// Grayscale raster as stored on disk: 8-bit (max_value 255) or 16-bit
// (max_value 65535) samples. Supported formats: PNG and PGM (P5/P2),
// dispatched by file magic on read.
struct GrayImage {
    int height = 0;
    int width = 0;
    int max_value = 255;
    std::vector<std::uint16_t> pixels;  // row-major
};

GrayImage read_gray_image(const std::string& path);
void write_png_gray(const std::string& path, const GrayImage& image);
void write_pgm_gray(const std::string& path, const GrayImage& image);

// Pixel values normalized to [0,1].
Tensor to_unit_raster(const GrayImage& image);
// Binarized at half of max_value: pixel >= max/2 maps to 1.
Tensor to_binary_mask(const GrayImage& image);
// Quantize a [0,1] raster to the given bit depth (rounding).
GrayImage from_unit_raster(const Tensor& raster, int max_value = 255);

}  // namespace xseg
