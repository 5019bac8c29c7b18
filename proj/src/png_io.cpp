#include "gazechair/png_io.hpp"

#include <png.h>

#include <boost/beast/core/detail/base64.hpp>

#include <fstream>
#include <iterator>
#include <memory>

namespace gazechair {
namespace {

std::vector<std::uint8_t> encode(int width, int height, std::uint32_t format,
                                 const std::uint8_t* pixels) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr)) {
        throw ImageIoError(std::string("png encode failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr)) {
        throw ImageIoError(std::string("png encode failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

// Returns width, height and decoded bytes in the requested format.
std::vector<std::uint8_t> decode(std::span<const std::uint8_t> bytes, std::uint32_t format,
                                 int& width, int& height) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw ImageIoError(std::string("png decode failed: ") + image.message);
    }
    image.format = format;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw ImageIoError(std::string("png decode failed: ") + image.message);
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    return pixels;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError("short write to " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    return encode(image.width(), image.height(), PNG_FORMAT_RGB, image.data().data());
}

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
    return encode(image.width(), image.height(), PNG_FORMAT_GRAY, image.pixels().data());
}

RgbImage decode_png_rgb(std::span<const std::uint8_t> bytes) {
    int w = 0, h = 0;
    auto pixels = decode(bytes, PNG_FORMAT_RGB, w, h);
    return RgbImage(w, h, std::move(pixels));
}

GrayImage decode_png_gray(std::span<const std::uint8_t> bytes) {
    int w = 0, h = 0;
    auto pixels = decode(bytes, PNG_FORMAT_GRAY, w, h);
    return GrayImage(w, h, std::move(pixels));
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    write_file(path, encode_png(image));
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
    write_file(path, encode_png(image));
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
    try {
        return decode_png_rgb(read_file(path));
    } catch (const ImageIoError& e) {
        throw ImageIoError(path.string() + ": " + e.what());
    }
}

GrayImage read_png_gray(const std::filesystem::path& path) {
    try {
        return decode_png_gray(read_file(path));
    } catch (const ImageIoError& e) {
        throw ImageIoError(path.string() + ": " + e.what());
    }
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    namespace b64 = boost::beast::detail::base64;
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    namespace b64 = boost::beast::detail::base64;
    std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
    auto [written, read] = b64::decode(out.data(), text.data(), text.size());
    // The decoder stops at padding; accept at most two trailing '='.
    const std::string_view rest = text.substr(read);
    if (rest.size() > 2 || rest.find_first_not_of('=') != std::string_view::npos || (!rest.empty() && text.size() % 4 != 0)) {
        throw ImageIoError("invalid base64 payload");
    }
    out.resize(written);
    return out;
}

}  // namespace gazechair
