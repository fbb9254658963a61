#include "xseg/resize.hpp"

#include <algorithm>
#include <cmath>

#include "xseg/error.hpp"

namespace xseg {

namespace {
void check_raster(const Tensor& t) {
    if (t.rank() != 2) throw ConfigError("resize expects a rank-2 raster, got " + shape_to_string(t.shape));
}
}  // namespace

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    check_raster(image);
    const int H = image.shape[0], W = image.shape[1];
    Tensor out({out_h, out_w});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        const double cy = std::clamp(src_y, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(std::floor(cy));
        const int y1 = std::min(y0 + 1, H - 1);
        const double fy = cy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            const double cx = std::clamp(src_x, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(std::floor(cx));
            const int x1 = std::min(x0 + 1, W - 1);
            const double fx = cx - x0;
            const double top = (1.0 - fx) * image.data[static_cast<std::size_t>(y0 * W + x0)] +
                               fx * image.data[static_cast<std::size_t>(y0 * W + x1)];
            const double bot = (1.0 - fx) * image.data[static_cast<std::size_t>(y1 * W + x0)] +
                               fx * image.data[static_cast<std::size_t>(y1 * W + x1)];
            out.data[static_cast<std::size_t>(y * out_w + x)] = (1.0 - fy) * top + fy * bot;
        }
    }
    return out;
}

Tensor resize_nearest(const Tensor& image, int out_h, int out_w) {
    check_raster(image);
    const int H = image.shape[0], W = image.shape[1];
    Tensor out({out_h, out_w});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const int src_y = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0, H - 1);
        for (int x = 0; x < out_w; ++x) {
            const int src_x = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0, W - 1);
            out.data[static_cast<std::size_t>(y * out_w + x)] =
                image.data[static_cast<std::size_t>(src_y * W + src_x)];
        }
    }
    return out;
}

Tensor replicate_channels(const Tensor& image, int channels) {
    check_raster(image);
    const int H = image.shape[0], W = image.shape[1];
    Tensor out({1, channels, H, W});
    for (int c = 0; c < channels; ++c)
        std::copy(image.data.begin(), image.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(c) * H * W);
    return out;
}

}  // namespace xseg
