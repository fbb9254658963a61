#include "xseg/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "xseg/error.hpp"

namespace xseg {

namespace {

using Kind = DataError::Kind;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool has_png_magic(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    unsigned char sig[8] = {};
    f.read(reinterpret_cast<char*>(sig), 8);
    return f.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

GrayImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError(Kind::MissingFile, "cannot open image '" + path + "'");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(Kind::MalformedImage, "png reader setup failed for '" + path + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(Kind::MalformedImage, "malformed png '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(Kind::MalformedImage,
                        "'" + path + "' is not single-channel grayscale (color type " +
                            std::to_string(color) + ")");
    }
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_swap(png);  // file is big-endian
    png_read_update_info(png, info);

    GrayImage img;
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.max_value = depth == 16 ? 65535 : 255;
    img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);

    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    std::vector<std::uint8_t> buf8;
    if (depth == 16) {
        for (int y = 0; y < img.height; ++y)
            rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(
                img.pixels.data() + static_cast<std::size_t>(y) * img.width);
    } else {
        buf8.resize(img.pixels.size());
        for (int y = 0; y < img.height; ++y)
            rows[static_cast<std::size_t>(y)] = buf8.data() + static_cast<std::size_t>(y) * img.width;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (img.max_value == 255)
        for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = buf8[i];
    return img;
}

GrayImage read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(Kind::MissingFile, "cannot open image '" + path + "'");
    std::string magic;
    f >> magic;
    if (magic != "P5" && magic != "P2")
        throw DataError(Kind::MalformedImage, "'" + path + "' is not a PGM file");

    auto next_int = [&](int& out) {
        // skip whitespace and '#' comments
        while (true) {
            const int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        if (!(f >> out)) throw DataError(Kind::MalformedImage, "truncated PGM header in '" + path + "'");
    };
    GrayImage img;
    next_int(img.width);
    next_int(img.height);
    next_int(img.max_value);
    if (img.width <= 0 || img.height <= 0 || (img.max_value != 255 && img.max_value != 65535))
        throw DataError(Kind::MalformedImage, "unsupported PGM geometry/depth in '" + path + "'");
    img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);

    if (magic == "P2") {
        for (auto& p : img.pixels) {
            int v;
            if (!(f >> v)) throw DataError(Kind::MalformedImage, "truncated PGM data in '" + path + "'");
            p = static_cast<std::uint16_t>(v);
        }
        return img;
    }
    f.get();  // single whitespace after maxval
    if (img.max_value == 255) {
        std::vector<std::uint8_t> buf(img.pixels.size());
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (f.gcount() != static_cast<std::streamsize>(buf.size()))
            throw DataError(Kind::MalformedImage, "truncated PGM data in '" + path + "'");
        for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i];
    } else {
        std::vector<std::uint8_t> buf(img.pixels.size() * 2);
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (f.gcount() != static_cast<std::streamsize>(buf.size()))
            throw DataError(Kind::MalformedImage, "truncated PGM data in '" + path + "'");
        for (std::size_t i = 0; i < img.pixels.size(); ++i)  // big-endian per spec
            img.pixels[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
    return img;
}

}  // namespace

GrayImage read_gray_image(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw DataError(Kind::MissingFile, "image file '" + path + "' does not exist");
    if (has_png_magic(path)) return read_png(path);
    return read_pgm(path);
}

void write_png_gray(const std::string& path, const GrayImage& image) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError(Kind::MissingFile, "cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError(Kind::MalformedImage, "png writer setup failed for '" + path + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(Kind::MalformedImage, "png write failed for '" + path + "'");
    }
    png_init_io(png, fp.get());
    const int depth = image.max_value == 65535 ? 16 : 8;
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    if (depth == 16) {
        png_set_swap(png);
        std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
        for (int y = 0; y < image.height; ++y)
            rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(
                const_cast<std::uint16_t*>(image.pixels.data()) +
                static_cast<std::size_t>(y) * image.width);
        png_write_image(png, rows.data());
    } else {
        std::vector<std::uint8_t> buf(image.pixels.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<std::uint8_t>(image.pixels[i]);
        std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
        for (int y = 0; y < image.height; ++y)
            rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * image.width;
        png_write_image(png, rows.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_pgm_gray(const std::string& path, const GrayImage& image) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(Kind::MissingFile, "cannot open '" + path + "' for writing");
    f << "P5\n" << image.width << " " << image.height << "\n" << image.max_value << "\n";
    if (image.max_value == 255) {
        for (std::uint16_t p : image.pixels) f.put(static_cast<char>(p & 0xff));
    } else {
        for (std::uint16_t p : image.pixels) {
            f.put(static_cast<char>((p >> 8) & 0xff));
            f.put(static_cast<char>(p & 0xff));
        }
    }
}

Tensor to_unit_raster(const GrayImage& image) {
    Tensor t({image.height, image.width});
    const double inv = 1.0 / image.max_value;
    for (std::size_t i = 0; i < image.pixels.size(); ++i) t.data[i] = image.pixels[i] * inv;
    return t;
}

Tensor to_binary_mask(const GrayImage& image) {
    Tensor t({image.height, image.width});
    const double half = 0.5 * image.max_value;
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
        t.data[i] = image.pixels[i] >= half ? 1.0 : 0.0;
    return t;
}

GrayImage from_unit_raster(const Tensor& raster, int max_value) {
    if (raster.rank() != 2) throw ConfigError("from_unit_raster expects a rank-2 raster");
    GrayImage img;
    img.height = raster.shape[0];
    img.width = raster.shape[1];
    img.max_value = max_value;
    img.pixels.resize(raster.numel());
    for (std::size_t i = 0; i < raster.numel(); ++i) {
        const double v = std::clamp(raster.data[i], 0.0, 1.0);
        img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * max_value));
    }
    return img;
}

}  // namespace xseg
