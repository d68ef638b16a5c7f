#include "priorfill/metrics/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace priorfill {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image8 read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open image: " + path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw std::runtime_error("not a PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    Image8 out;
    try {
        png_init_io(png, f.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        const auto color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
        png_set_strip_alpha(png);
        png_read_update_info(png, info);
        out.width = png_get_image_width(png, info);
        out.height = png_get_image_height(png, info);
        const int ch = png_get_channels(png, info);
        const size_t rowbytes = png_get_rowbytes(png, info);
        std::vector<uint8_t> raw(rowbytes * static_cast<size_t>(out.height));
        std::vector<png_bytep> rows(static_cast<size_t>(out.height));
        for (int64_t y = 0; y < out.height; ++y) rows[static_cast<size_t>(y)] = raw.data() + rowbytes * static_cast<size_t>(y);
        png_read_image(png, rows.data());
        const int keep = (ch == 2 || ch == 1) ? 1 : 3;
        out.channels = keep;
        out.pixels.resize(static_cast<size_t>(out.width * out.height * keep));
        for (int64_t y = 0; y < out.height; ++y)
            for (int64_t x = 0; x < out.width; ++x)
                for (int c = 0; c < keep; ++c)
                    out.pixels[static_cast<size_t>((y * out.width + x) * keep + c)] =
                        rows[static_cast<size_t>(y)][x * ch + c];
    } catch (const std::exception& e) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("failed to read " + path + ": " + e.what());
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::string& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3) throw std::runtime_error("write_png: 1 or 3 channels required");
    if (static_cast<int64_t>(img.pixels.size()) != img.width * img.height * img.channels)
        throw std::runtime_error("write_png: buffer size mismatch");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                     img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int64_t y = 0; y < img.height; ++y)
            png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels));
        png_write_end(png, nullptr);
    } catch (const std::exception& e) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed to write " + path + ": " + e.what());
    }
    png_destroy_write_struct(&png, &info);
}

Tensor read_png_rgb(const std::string& path, DType dt) {
    Image8 im = read_png(path);
    const int64_t H = im.height, W = im.width;
    std::vector<double> v(static_cast<size_t>(3 * H * W));
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < H * W; ++i) {
            const int64_t src = im.channels == 3 ? i * 3 + c : i;
            v[static_cast<size_t>(c * H * W + i)] = im.pixels[static_cast<size_t>(src)] / 255.0;
        }
    return Tensor::from_vector(v, {3, H, W}, dt);
}

Image8 tensor_to_image8(const Tensor& img) {
    if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw ShapeError("image: expected [1|3,H,W], got " + shape_str(img.shape()));
    Image8 out;
    out.channels = img.dim(0);
    out.height = img.dim(1);
    out.width = img.dim(2);
    const int64_t HW = out.height * out.width;
    out.pixels.resize(static_cast<size_t>(HW * out.channels));
    auto v = img.to_vector();
    for (int64_t c = 0; c < out.channels; ++c)
        for (int64_t i = 0; i < HW; ++i) {
            const double x = std::clamp(v[static_cast<size_t>(c * HW + i)], 0.0, 1.0);
            out.pixels[static_cast<size_t>(i * out.channels + c)] = static_cast<uint8_t>(std::lround(x * 255.0));
        }
    return out;
}

void write_png_tensor(const std::string& path, const Tensor& img) { write_png(path, tensor_to_image8(img)); }

MaskMap read_mask_png(const std::string& path) {
    Image8 im = read_png(path);
    MaskMap m(im.height, im.width);
    for (int64_t i = 0; i < im.height * im.width; ++i)
        m.bits[static_cast<size_t>(i)] = im.pixels[static_cast<size_t>(i * im.channels)] > 127 ? 1 : 0;
    return m;
}

void write_mask_png(const std::string& path, const MaskMap& m) {
    Image8 im;
    im.width = m.w;
    im.height = m.h;
    im.channels = 1;
    im.pixels.resize(m.bits.size());
    for (size_t i = 0; i < m.bits.size(); ++i) im.pixels[i] = m.bits[i] ? 255 : 0;
    write_png(path, im);
}

}  // namespace priorfill
