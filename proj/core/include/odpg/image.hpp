#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odpg/tensor.hpp"

namespace odpg {

// Row-major RGB8 image buffer.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // 3 * width * height
};

// [-1,1] float [3,H,W] <-> RGB8 with round-to-nearest quantisation.
ImageU8 tensor_to_u8(const Tensor& img);
Tensor u8_to_tensor(const ImageU8& img);

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

std::string sha256_bytes(const void* data, std::size_t n);
std::string sha256_file(const std::string& path);

}  // namespace odpg
