#include "gazechair/image.hpp"

namespace gazechair {

RgbImage::RgbImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw std::invalid_argument("RgbImage: negative dimensions");
    data_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width < 0 || height < 0) throw std::invalid_argument("RgbImage: negative dimensions");
    if (data_.size() != static_cast<std::size_t>(width) * height * kChannels) {
        throw std::invalid_argument("RgbImage: byte count does not match dimensions");
    }
}

}  // namespace gazechair
