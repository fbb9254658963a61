#pragma once

#include "xseg/tensor.hpp"

namespace xseg {

// Bilinear resample of a rank-2 raster to out_h x out_w. Half-pixel-center
// convention; no aspect preservation (non-square inputs get squashed).
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Nearest-neighbour resample; a binary raster stays binary.
Tensor resize_nearest(const Tensor& image, int out_h, int out_w);

// H x W grayscale in [0,1] -> 1 x 3 x S x S with identical channel copies.
Tensor replicate_channels(const Tensor& image, int channels);

}  // namespace xseg
