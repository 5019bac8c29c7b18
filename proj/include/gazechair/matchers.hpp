#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "gazechair/gaze_class.hpp"
#include "gazechair/image.hpp"

namespace gazechair::matchers {

class MatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// R(x, y) = sum T(x', y') * S(x + x', y + y'). Throws when T does not fit at (x, y).
std::int64_t correlate_at(const GrayImage& tmpl, const GrayImage& search, int x, int y);

// Per-class whole-eye templates. Sources are kept so the set can be saved
// losslessly; equalized and LBP forms are derived at construction.
class TemplateSet {
public:
    explicit TemplateSet(std::array<GrayImage, kNumClasses> sources);

    int width() const { return sources_[0].width(); }
    int height() const { return sources_[0].height(); }

    const GrayImage& source(GazeClass c) const { return sources_[index_of(c)]; }
    const GrayImage& equalized(GazeClass c) const { return equalized_[index_of(c)]; }
    const GrayImage& lbp(GazeClass c) const { return lbp_[index_of(c)]; }

    // <dir>/right.png, forward.png, left.png, closed.png
    void save(const std::filesystem::path& dir) const;
    static TemplateSet load(const std::filesystem::path& dir);

private:
    std::array<GrayImage, kNumClasses> sources_;
    std::array<GrayImage, kNumClasses> equalized_;
    std::array<GrayImage, kNumClasses> lbp_;
};

struct MatchResult {
    GazeClass gaze_class = GazeClass::Right;
    double score = 0.0;
    std::array<double, kNumClasses> scores{};
};

// Argmax of the full-overlap correlation score over the four equalized templates;
// the frame is equalized first. Ties go to the earlier class.
MatchResult classify_whole(const TemplateSet& templates, const GrayImage& frame);

// Same, on LBP codes of the raw frame (no equalization).
MatchResult classify_lbp(const TemplateSet& templates, const GrayImage& frame);

// Pupil patch cut from a forward-gaze calibration frame.
class PupilTemplate {
public:
    explicit PupilTemplate(GrayImage patch);

    const GrayImage& patch() const { return patch_; }
    int width() const { return patch_.width(); }
    int height() const { return patch_.height(); }

    void save(const std::filesystem::path& dir) const;  // <dir>/pupil.png
    static PupilTemplate load(const std::filesystem::path& dir);

private:
    GrayImage patch_;
};

// Crops the side x side window with the lowest mean intensity.
PupilTemplate extract_pupil_patch(const GrayImage& forward_frame, int side);

struct Location {
    int x = 0;  // top-left of the best placement
    int y = 0;
    double score = 0.0;
    double center_x = 0.0;  // pixel-centre coordinates of the matched patch
    double center_y = 0.0;
};

// Exhaustive sliding zero-mean normalized correlation. Ties resolve to the
// smallest y, then smallest x; a flat window scores 0.
Location locate_pupil(const GrayImage& pupil, const GrayImage& frame);
Location locate_pupil(const PupilTemplate& pupil, const GrayImage& frame);

struct PupilClassConfig {
    double min_score = 0.5;
    // Swap Left/Right, for users who think of direction anatomically.
    bool mirror = false;
};

// score < min_score -> Closed; otherwise the image-coordinate third holding
// the patch centre: left -> Left, middle -> Forward, right -> Right.
GazeClass pupil_class(const Location& location, int frame_width, const PupilClassConfig& config = {});

// 8-neighbour codes, clockwise from the top-left neighbour, MSB first;
// s(x) = 1 when neighbour - centre >= 0. Output is (w - 2) x (h - 2).
GrayImage lbp_transform(const GrayImage& image);

}  // namespace gazechair::matchers
