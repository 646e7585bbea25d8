#ifndef UNINET_IMAGE_IO_HPP
#define UNINET_IMAGE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "uninet/tensor.hpp"

namespace uninet::io {

// 8-bit RGB PNG; values quantized from/dequantized to [0,1]
void write_png_rgb(const std::string& path, const Tensor& image);
Tensor read_png_rgb(const std::string& path);

// 8-bit single-channel PNG, used for class-index maps
void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w);
void read_png_gray(const std::string& path, std::vector<uint8_t>& pixels, int& h, int& w);

// Depth grid: magic "UDPT", u32 height, u32 width, row-major float32 LE
void write_depth_raw(const std::string& path, const Tensor& depth);
Tensor read_depth_raw(const std::string& path);

}  // namespace uninet::io

#endif
