#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmaseg/tensor.hpp"

namespace cmaseg {

// 8-bit interleaved RGB image.
struct ImageRGB {
    size_t h = 0, w = 0;
    std::vector<uint8_t> px;  // h * w * 3
};

// 8-bit single-channel mask image; foreground is 255, background 0.
struct ImageGray {
    size_t h = 0, w = 0;
    std::vector<uint8_t> px;  // h * w
};

// Binary PPM (P6) / PGM (P5), maxval 255, no comment lines.
void write_ppm(const std::string& path, const ImageRGB& img);
ImageRGB read_ppm(const std::string& path);
void write_pgm(const std::string& path, const ImageGray& img);
ImageGray read_pgm(const std::string& path);

// [3, H, W] scaled to [0, 1]
Tensor image_to_tensor(const ImageRGB& img);
// [H, W] in {0, 1}; any nonzero byte counts as foreground
Tensor mask_to_tensor(const ImageGray& img);
ImageGray mask_from_tensor(const Tensor& mask, double threshold = 0.5);

}  // namespace cmaseg
