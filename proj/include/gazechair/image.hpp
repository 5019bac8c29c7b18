#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "gazechair/gaze_class.hpp"

namespace gazechair {

// Single-channel raster, row-major.
template <typename T>
class Plane {
public:
    Plane() = default;
    Plane(int width, int height, T fill = T{})
        : width_(width), height_(height),
          pixels_(static_cast<std::size_t>(checked(width, height)), fill) {}
    Plane(int width, int height, std::vector<T> pixels)
        : width_(width), height_(height), pixels_(std::move(pixels)) {
        if (pixels_.size() != static_cast<std::size_t>(checked(width, height))) {
            throw std::invalid_argument("Plane: pixel count does not match dimensions");
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return pixels_.size(); }
    bool empty() const { return pixels_.empty(); }

    T& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    const T& at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<T> pixels() { return pixels_; }
    std::span<const T> pixels() const { return pixels_; }

    bool operator==(const Plane&) const = default;

private:
    static long checked(int w, int h) {
        if (w < 0 || h < 0) throw std::invalid_argument("Plane: negative dimensions");
        return static_cast<long>(w) * h;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> pixels_;
};

// 8-bit grayscale intensities.
using GrayImage = Plane<std::uint8_t>;

// Interleaved 8-bit RGB raster.
class RgbImage {
public:
    static constexpr int kChannels = 3;

    RgbImage() = default;
    RgbImage(int width, int height, std::uint8_t fill = 0);
    RgbImage(int width, int height, std::vector<std::uint8_t> data);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }

    std::uint8_t& at(int x, int y, int c) {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
    }
    std::uint8_t at(int x, int y, int c) const {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
    }

    std::span<std::uint8_t> data() { return data_; }
    std::span<const std::uint8_t> data() const { return data_; }

    bool operator==(const RgbImage&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

// One camera frame of one eye.
struct EyeFrame {
    RgbImage image;
    EyeSide eye_side = EyeSide::Left;
    std::uint64_t frame_index = 0;

    int width() const { return image.width(); }
    int height() const { return image.height(); }

    bool operator==(const EyeFrame&) const = default;
};

// Zero-centred, unit-variance image in planar (channel-major) layout.
struct NormalizedImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> values;  // [c][y][x]
    double source_mean = 0.0;
    double source_sigma = 0.0;

    double at(int x, int y, int c) const {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

}  // namespace gazechair
