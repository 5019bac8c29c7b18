#include "gazechair/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace gazechair::preprocess {
namespace {

struct Tap {
    int index;
    double weight;
};

// Source coverage of each destination cell along one axis.
std::vector<std::vector<Tap>> area_taps(int src, int dst) {
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
        const double lo = d * scale;
        const double hi = (d + 1) * scale;
        for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
            const double w = std::min<double>(s + 1, hi) - std::max<double>(s, lo);
            if (w > 0) taps[static_cast<std::size_t>(d)].push_back({s, w});
        }
    }
    return taps;
}

template <typename Sample>
void resample(int src_w, int src_h, int dst_w, int dst_h, int channels, Sample&& sample,
              std::uint8_t* out) {
    if (src_w < 1 || src_h < 1) throw std::invalid_argument("decimate: empty source image");
    if (dst_w < 1 || dst_h < 1) throw std::invalid_argument("decimate: empty target size");
    const auto xt = area_taps(src_w, dst_w);
    const auto yt = area_taps(src_h, dst_h);
    const double area = (static_cast<double>(src_w) / dst_w) * (static_cast<double>(src_h) / dst_h);
    for (int y = 0; y < dst_h; ++y) {
        for (int x = 0; x < dst_w; ++x) {
            for (int c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (const Tap& ty : yt[static_cast<std::size_t>(y)]) {
                    for (const Tap& tx : xt[static_cast<std::size_t>(x)]) {
                        acc += ty.weight * tx.weight * sample(tx.index, ty.index, c);
                    }
                }
                const long v = std::lround(acc / area);
                out[(static_cast<std::size_t>(y) * dst_w + x) * channels + c] =
                    static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
            }
        }
    }
}

template <typename Range>
NormalizedImage zscore(int width, int height, int channels, const Range& planar) {
    NormalizedImage out;
    out.width = width;
    out.height = height;
    out.channels = channels;
    out.values.assign(planar.begin(), planar.end());
    if (out.values.empty()) throw std::invalid_argument("normalize: empty image");

    const double n = static_cast<double>(out.values.size());
    double sum = 0.0;
    for (double v : out.values) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : out.values) ss += (v - mean) * (v - mean);
    const double sigma = std::sqrt(ss / n);
    const double denom = std::max(sigma, kSigmaFloor);
    for (double& v : out.values) v = (v - mean) / denom;
    out.source_mean = mean;
    out.source_sigma = sigma;
    return out;
}

}  // namespace

GrayImage to_grayscale(const RgbImage& image) {
    GrayImage out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const double luma = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
            out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
        }
    }
    return out;
}

GrayImage to_grayscale(const EyeFrame& frame) { return to_grayscale(frame.image); }

RgbImage decimate(const RgbImage& image, int width, int height) {
    if (image.width() == width && image.height() == height) return image;
    std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height * RgbImage::kChannels);
    resample(image.width(), image.height(), width, height, RgbImage::kChannels,
             [&](int x, int y, int c) { return static_cast<double>(image.at(x, y, c)); }, data.data());
    return RgbImage(width, height, std::move(data));
}

EyeFrame decimate(const EyeFrame& frame, int width, int height) {
    EyeFrame out = frame;
    out.image = decimate(frame.image, width, height);
    return out;
}

GrayImage decimate(const GrayImage& image, int width, int height) {
    if (image.width() == width && image.height() == height) return image;
    std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height);
    resample(image.width(), image.height(), width, height, 1,
             [&](int x, int y, int) { return static_cast<double>(image.at(x, y)); }, data.data());
    return GrayImage(width, height, std::move(data));
}

GrayImage hist_equalize(const GrayImage& image) {
    if (image.empty()) throw std::invalid_argument("hist_equalize: empty image");
    std::array<std::size_t, 256> cdf{};
    for (std::uint8_t v : image.pixels()) ++cdf[v];
    for (std::size_t i = 1; i < cdf.size(); ++i) cdf[i] += cdf[i - 1];

    const std::size_t total = image.size();
    std::size_t cdf_min = 0;
    for (std::size_t c : cdf) {
        if (c > 0) {
            cdf_min = c;
            break;
        }
    }
    if (cdf_min == total) return image;

    std::array<std::uint8_t, 256> lut{};
    const double denom = static_cast<double>(total - cdf_min);
    for (std::size_t v = 0; v < 256; ++v) {
        const double num = cdf[v] > cdf_min ? static_cast<double>(cdf[v] - cdf_min) : 0.0;
        lut[v] = static_cast<std::uint8_t>(std::lround(num / denom * 255.0));
    }
    GrayImage out(image.width(), image.height());
    auto src = image.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = lut[src[i]];
    return out;
}

NormalizedImage normalize(const RgbImage& image) {
    const std::size_t plane = static_cast<std::size_t>(image.width()) * image.height();
    std::vector<double> planar(plane * RgbImage::kChannels);
    auto data = image.data();
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < RgbImage::kChannels; ++c) {
            planar[static_cast<std::size_t>(c) * plane + i] = data[i * RgbImage::kChannels + c];
        }
    }
    return zscore(image.width(), image.height(), RgbImage::kChannels, planar);
}

NormalizedImage normalize(const EyeFrame& frame) { return normalize(frame.image); }

NormalizedImage normalize(const GrayImage& image) {
    auto px = image.pixels();
    std::vector<double> planar(px.begin(), px.end());
    return zscore(image.width(), image.height(), 1, planar);
}

NormalizedImage prepare_cnn_input(const EyeFrame& frame) {
    return normalize(decimate(frame.image, kNetInputSize, kNetInputSize));
}

}  // namespace gazechair::preprocess
