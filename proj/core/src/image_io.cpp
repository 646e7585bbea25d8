#include "uninet/image_io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "uninet/errors.hpp"

static_assert(std::endian::native == std::endian::little, "depth raw format assumes little-endian host");

namespace uninet::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t quantize(double v) {
    const double q = std::lround(std::fmin(std::fmax(v, 0.0), 1.0) * 255.0);
    return static_cast<uint8_t>(q);
}

void write_png(const std::string& path, const uint8_t* data, int h, int w, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(data + static_cast<size_t>(y) * w * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void read_png(const std::string& path, std::vector<uint8_t>& out, int& h, int& w, int expect_channels) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open: " + path);
    uint8_t header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw FormatError("not a PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unsupported PNG bit depth in " + path);
    }
    const int channels =
        color == PNG_COLOR_TYPE_RGB ? 3 : (color == PNG_COLOR_TYPE_GRAY ? 1 : -1);
    if (channels != expect_channels) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unexpected PNG color type in " + path);
    }
    out.resize(static_cast<size_t>(h) * w * channels);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = out.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png_rgb(const std::string& path, const Tensor& image) {
    const int h = image.h(), w = image.w();
    if (image.ndim() != 3 || image.c() != 3) throw std::invalid_argument("write_png_rgb: need {h,w,3}");
    std::vector<uint8_t> buf(static_cast<size_t>(h) * w * 3);
    for (int64_t i = 0; i < image.size(); ++i) buf[static_cast<size_t>(i)] = quantize(image[i]);
    write_png(path, buf.data(), h, w, 3);
}

Tensor read_png_rgb(const std::string& path) {
    std::vector<uint8_t> buf;
    int h = 0, w = 0;
    read_png(path, buf, h, w, 3);
    Tensor t({h, w, 3});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = buf[static_cast<size_t>(i)] / 255.0;
    return t;
}

void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w) {
    if (pixels.size() != static_cast<size_t>(h) * w) throw std::invalid_argument("write_png_gray: size mismatch");
    write_png(path, pixels.data(), h, w, 1);
}

void read_png_gray(const std::string& path, std::vector<uint8_t>& pixels, int& h, int& w) {
    read_png(path, pixels, h, w, 1);
}

void write_depth_raw(const std::string& path, const Tensor& depth) {
    const int h = depth.h(), w = depth.w();
    if (depth.ndim() != 3 || depth.c() != 1) throw std::invalid_argument("write_depth_raw: need {h,w,1}");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);
    const char magic[4] = {'U', 'D', 'P', 'T'};
    const uint32_t hh = static_cast<uint32_t>(h), ww = static_cast<uint32_t>(w);
    std::vector<float> row(static_cast<size_t>(w));
    bool ok = std::fwrite(magic, 1, 4, fp.get()) == 4 &&
              std::fwrite(&hh, 4, 1, fp.get()) == 1 && std::fwrite(&ww, 4, 1, fp.get()) == 1;
    for (int y = 0; ok && y < h; ++y) {
        for (int x = 0; x < w; ++x) row[static_cast<size_t>(x)] = static_cast<float>(depth.at3(y, x, 0));
        ok = std::fwrite(row.data(), 4, static_cast<size_t>(w), fp.get()) == static_cast<size_t>(w);
    }
    if (!ok) throw IoError("short write: " + path);
}

Tensor read_depth_raw(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open: " + path);
    char magic[4];
    uint32_t h = 0, w = 0;
    if (std::fread(magic, 1, 4, fp.get()) != 4 || std::memcmp(magic, "UDPT", 4) != 0)
        throw FormatError("bad depth magic in " + path);
    if (std::fread(&h, 4, 1, fp.get()) != 1 || std::fread(&w, 4, 1, fp.get()) != 1)
        throw FormatError("truncated depth header in " + path);
    if (h == 0 || w == 0 || h > 1u << 16 || w > 1u << 16)
        throw FormatError("implausible depth dimensions in " + path);
    Tensor t({static_cast<int>(h), static_cast<int>(w), 1});
    std::vector<float> row(w);
    for (uint32_t y = 0; y < h; ++y) {
        if (std::fread(row.data(), 4, w, fp.get()) != w)
            throw FormatError("truncated depth payload in " + path);
        for (uint32_t x = 0; x < w; ++x) t.at3(static_cast<int>(y), static_cast<int>(x), 0) = row[x];
    }
    return t;
}

}  // namespace uninet::io
