#include "xseg/augment.hpp"

#include <cmath>

#include "xseg/error.hpp"

namespace xseg {

void AugmentConfig::validate() const {
    if (rotation_probability < 0.0 || rotation_probability > 1.0)
        throw ConfigError("rotation_probability must lie in [0, 1]");
    if (rotation_min_deg > rotation_max_deg)
        throw ConfigError("rotation range is inverted");
}

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

// Source coordinates for an output pixel: inverse rotation about the center.
struct InverseRotation {
    double cos_t, sin_t, cy, cx;
    void map(int y, int x, double& sy, double& sx) const {
        const double dy = y - cy, dx = x - cx;
        sy = cos_t * dy + sin_t * dx + cy;
        sx = -sin_t * dy + cos_t * dx + cx;
    }
};

InverseRotation make_inverse(const Tensor& t, double degrees) {
    const double rad = degrees * kDegToRad;
    return {std::cos(rad), std::sin(rad), 0.5 * (t.shape[0] - 1), 0.5 * (t.shape[1] - 1)};
}

}  // namespace

Tensor rotate_bilinear(const Tensor& image, double degrees) {
    if (image.rank() != 2) throw ConfigError("rotate expects a rank-2 raster");
    const int H = image.shape[0], W = image.shape[1];
    const InverseRotation inv = make_inverse(image, degrees);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sy, sx;
            inv.map(y, x, sy, sx);
            if (sy < 0.0 || sy > H - 1 || sx < 0.0 || sx > W - 1) continue;  // fill 0
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const int y1 = std::min(y0 + 1, H - 1);
            const int x1 = std::min(x0 + 1, W - 1);
            const double fy = sy - y0, fx = sx - x0;
            const double top = (1.0 - fx) * image.data[static_cast<std::size_t>(y0 * W + x0)] +
                               fx * image.data[static_cast<std::size_t>(y0 * W + x1)];
            const double bot = (1.0 - fx) * image.data[static_cast<std::size_t>(y1 * W + x0)] +
                               fx * image.data[static_cast<std::size_t>(y1 * W + x1)];
            out.data[static_cast<std::size_t>(y * W + x)] = (1.0 - fy) * top + fy * bot;
        }
    }
    return out;
}

Tensor rotate_nearest(const Tensor& mask, double degrees) {
    if (mask.rank() != 2) throw ConfigError("rotate expects a rank-2 raster");
    const int H = mask.shape[0], W = mask.shape[1];
    const InverseRotation inv = make_inverse(mask, degrees);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sy, sx;
            inv.map(y, x, sy, sx);
            const int ny = static_cast<int>(std::lround(sy));
            const int nx = static_cast<int>(std::lround(sx));
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            out.data[static_cast<std::size_t>(y * W + x)] =
                mask.data[static_cast<std::size_t>(ny * W + nx)];
        }
    }
    return out;
}

AugmentOutcome augment_sample(Tensor& image, Tensor& mask, const AugmentConfig& config, Rng& rng) {
    config.validate();
    if (!image.same_shape(mask))
        throw ConfigError("augment: image " + shape_to_string(image.shape) + " and mask " +
                          shape_to_string(mask.shape) + " must share spatial dims");
    AugmentOutcome outcome;
    if (rng.uniform() >= config.rotation_probability) return outcome;
    outcome.rotated = true;
    outcome.degrees = rng.uniform(config.rotation_min_deg, config.rotation_max_deg);
    image = rotate_bilinear(image, outcome.degrees);
    mask = rotate_nearest(mask, outcome.degrees);
    return outcome;
}

}  // namespace xseg
