#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gazechair/preprocess.hpp"
#include "gazechair/rng.hpp"

using namespace gazechair;
using namespace gazechair::preprocess;

namespace {

GrayImage random_gray(Rng& rng, int w, int h, int levels = 256) {
    GrayImage g(w, h);
    for (auto& v : g.pixels()) v = static_cast<std::uint8_t>(rng() % static_cast<unsigned>(levels));
    return g;
}

}  // namespace

TEST_CASE("to_grayscale") {
    RgbImage gray(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) gray.at(x, y, c) = static_cast<std::uint8_t>(x * 60 + y);
    const GrayImage g = to_grayscale(gray);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(g.at(x, y) == x * 60 + y);

    RgbImage red(2, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) red.at(x, y, 0) = 255;
    CHECK(to_grayscale(red).at(1, 1) == 76);  // 0.299 * 255 = 76.245

    const GrayImage black = to_grayscale(RgbImage(5, 3));
    CHECK(std::all_of(black.pixels().begin(), black.pixels().end(), [](auto v) { return v == 0; }));
}

TEST_CASE("decimate") {
    const RgbImage constant(128, 128, 77);
    const RgbImage d = decimate(constant, 64, 64);
    CHECK(d == RgbImage(64, 64, 77));

    Rng rng(1);
    RgbImage img(64, 64);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng());
    CHECK(decimate(img, 64, 64) == img);

    const RgbImage hd(1920, 1080, 3);
    const RgbImage small = decimate(hd, 64, 64);
    CHECK(small.width() == 64);
    CHECK(small.height() == 64);

    // 2x2 box average with exact halves.
    GrayImage four(2, 2, std::vector<std::uint8_t>{0, 10, 20, 30});
    CHECK(decimate(four, 1, 1).at(0, 0) == 15);

    const RgbImage tiny(1, 1, 9);
    CHECK(decimate(tiny, 64, 64) == RgbImage(64, 64, 9));
}

TEST_CASE("decimate is idempotent for inputs at least 64x64") {
    Rng rng(2);
    for (int trial = 0; trial < 8; ++trial) {
        const int w = 64 + static_cast<int>(rng() % 200);
        const int h = 64 + static_cast<int>(rng() % 200);
        RgbImage img(w, h);
        for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng());
        const RgbImage once = decimate(img, 64, 64);
        CHECK(decimate(once, 64, 64) == once);
    }
}

TEST_CASE("hist_equalize") {
    const GrayImage constant(8, 8, 123);
    CHECK(hist_equalize(constant) == constant);

    std::vector<std::uint8_t> px(100, 20);
    std::fill(px.begin(), px.begin() + 25, 10);
    const GrayImage two_level(10, 10, px);
    const GrayImage eq = hist_equalize(two_level);
    for (int i = 0; i < 100; ++i) CHECK(eq.pixels()[i] == (i < 25 ? 0 : 255));
}

TEST_CASE("hist_equalize matches the CDF formula within half a level") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const GrayImage img = random_gray(rng, 17, 13, 1 + static_cast<int>(rng() % 256));
        const GrayImage eq = hist_equalize(img);
        std::array<double, 256> cdf{};
        for (auto v : img.pixels()) cdf[v] += 1;
        std::partial_sum(cdf.begin(), cdf.end(), cdf.begin());
        const double n = static_cast<double>(img.size());
        const double cdf_min = *std::find_if(cdf.begin(), cdf.end(), [](double c) { return c > 0; });
        if (cdf_min == n) continue;
        for (std::size_t i = 0; i < img.size(); ++i) {
            const double ideal = (cdf[img.pixels()[i]] - cdf_min) / (n - cdf_min) * 255.0;
            CHECK(std::abs(eq.pixels()[i] - ideal) <= 0.5 + 1e-9);
        }
    }
}

TEST_CASE("hist_equalize is invariant under strictly increasing relabelings") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const GrayImage img = random_gray(rng, 16, 16, 40);
        // Random strictly increasing map of [0, 40) into [0, 256).
        std::vector<int> pool(256);
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        std::vector<int> map(pool.begin(), pool.begin() + 40);
        std::sort(map.begin(), map.end());
        GrayImage relabeled(img.width(), img.height());
        for (std::size_t i = 0; i < img.size(); ++i) relabeled.pixels()[i] = static_cast<std::uint8_t>(map[img.pixels()[i]]);
        CHECK(hist_equalize(relabeled) == hist_equalize(img));
    }
}

TEST_CASE("normalize examples") {
    const NormalizedImage c = normalize(GrayImage(4, 4, 128));
    for (double v : c.values) CHECK(v == 0.0);

    const NormalizedImage two = normalize(GrayImage(2, 1, std::vector<std::uint8_t>{0, 2}));
    CHECK(two.values[0] == doctest::Approx(-1.0));
    CHECK(two.values[1] == doctest::Approx(1.0));

    const NormalizedImage four = normalize(GrayImage(4, 1, std::vector<std::uint8_t>{0, 0, 2, 2}));
    CHECK(four.values == std::vector<double>{-1, -1, 1, 1});
}

TEST_CASE("normalize: zero mean and unit sigma for non-constant inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        RgbImage img(1 + static_cast<int>(rng() % 70), 1 + static_cast<int>(rng() % 70));
        for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng());
        const NormalizedImage n = normalize(img);
        CHECK(n.channels == 3);
        double s = 0, ss = 0;
        for (double v : n.values) s += v;
        const double mean = s / static_cast<double>(n.values.size());
        for (double v : n.values) ss += (v - mean) * (v - mean);
        const double sigma = std::sqrt(ss / static_cast<double>(n.values.size()));
        if (n.source_sigma == 0.0) continue;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(sigma - 1.0) < 1e-6);
    }
}

TEST_CASE("prepare_cnn_input yields a 64x64x3 planar tensor") {
    EyeFrame f;
    f.image = RgbImage(100, 80, 30);
    f.image.at(5, 5, 1) = 200;
    const NormalizedImage n = prepare_cnn_input(f);
    CHECK(n.width == 64);
    CHECK(n.height == 64);
    CHECK(n.channels == 3);
    CHECK(n.values.size() == 64u * 64u * 3u);
}
