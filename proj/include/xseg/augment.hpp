#pragma once

#include "xseg/rng.hpp"
#include "xseg/tensor.hpp"

namespace xseg {

struct AugmentConfig {
    double rotation_probability = 0.75;
    double rotation_min_deg = -10.0;
    double rotation_max_deg = 10.0;

    void validate() const;
};

// Rotates a rank-2 raster about its center. The image is resampled
// bilinearly, the mask by nearest neighbour (stays binary); out-of-frame
// regions are filled with 0.
Tensor rotate_bilinear(const Tensor& image, double degrees);
Tensor rotate_nearest(const Tensor& mask, double degrees);

struct AugmentOutcome {
    bool rotated = false;
    double degrees = 0.0;
};

// With probability rotation_probability, rotates image and mask together by
// one uniform angle from the configured range; otherwise leaves them alone.
AugmentOutcome augment_sample(Tensor& image, Tensor& mask, const AugmentConfig& config, Rng& rng);

}  // namespace xseg
