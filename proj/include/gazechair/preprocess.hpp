#pragma once

#include "gazechair/image.hpp"

namespace gazechair::preprocess {

inline constexpr int kNetInputSize = 64;
inline constexpr double kSigmaFloor = 1e-6;

// Rec. 601 luma, rounded to nearest.
GrayImage to_grayscale(const EyeFrame& frame);
GrayImage to_grayscale(const RgbImage& image);

// Area-averaging resample to exactly width x height (default 64x64).
// Exact identity when the size already matches.
EyeFrame decimate(const EyeFrame& frame, int width = kNetInputSize, int height = kNetInputSize);
RgbImage decimate(const RgbImage& image, int width, int height);
GrayImage decimate(const GrayImage& image, int width, int height);

// Classic CDF remap: round((cdf(v) - cdf_min) / (N - cdf_min) * 255).
// A constant image is returned unchanged.
GrayImage hist_equalize(const GrayImage& image);

// Per-image z-score over all channels; sigma is floored so a constant image
// maps to zeros.
NormalizedImage normalize(const EyeFrame& frame);
NormalizedImage normalize(const RgbImage& image);
NormalizedImage normalize(const GrayImage& image);

// decimate to 64x64 then normalize: the CNN input contract.
NormalizedImage prepare_cnn_input(const EyeFrame& frame);

}  // namespace gazechair::preprocess
