#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gazechair/image.hpp"

namespace gazechair {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Lossless 8-bit PNG codec (libpng simplified API). Decoding converts any
// colour type to the requested layout.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_png(const GrayImage& image);
RgbImage decode_png_rgb(std::span<const std::uint8_t> bytes);
GrayImage decode_png_gray(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);
RgbImage read_png_rgb(const std::filesystem::path& path);
GrayImage read_png_gray(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace gazechair
