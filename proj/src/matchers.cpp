#include "gazechair/matchers.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gazechair/png_io.hpp"
#include "gazechair/preprocess.hpp"

namespace gazechair::matchers {
namespace fs = std::filesystem;

std::int64_t correlate_at(const GrayImage& tmpl, const GrayImage& search, int x, int y) {
    if (x < 0 || y < 0 || x + tmpl.width() > search.width() || y + tmpl.height() > search.height()) {
        throw MatchError("correlate_at: template at (" + std::to_string(x) + ", " + std::to_string(y) +
                         ") exceeds the search image");
    }
    std::int64_t acc = 0;
    for (int ty = 0; ty < tmpl.height(); ++ty) {
        const std::uint8_t* t = &tmpl.at(0, ty);
        const std::uint8_t* s = &search.at(x, y + ty);
        std::int64_t row = 0;
        for (int tx = 0; tx < tmpl.width(); ++tx) row += static_cast<std::int64_t>(t[tx]) * s[tx];
        acc += row;
    }
    return acc;
}

TemplateSet::TemplateSet(std::array<GrayImage, kNumClasses> sources) : sources_(std::move(sources)) {
    for (const auto& s : sources_) {
        if (s.width() != sources_[0].width() || s.height() != sources_[0].height()) {
            throw MatchError("TemplateSet: templates must share one resolution");
        }
        if (s.width() < 3 || s.height() < 3) throw MatchError("TemplateSet: templates must be at least 3x3");
    }
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        equalized_[i] = preprocess::hist_equalize(sources_[i]);
        lbp_[i] = lbp_transform(sources_[i]);
    }
}

void TemplateSet::save(const fs::path& dir) const {
    fs::create_directories(dir);
    for (GazeClass c : kAllClasses) write_png(dir / (std::string(to_string(c)) + ".png"), source(c));
}

TemplateSet TemplateSet::load(const fs::path& dir) {
    std::array<GrayImage, kNumClasses> sources;
    for (GazeClass c : kAllClasses) sources[index_of(c)] = read_png_gray(dir / (std::string(to_string(c)) + ".png"));
    return TemplateSet(std::move(sources));
}

namespace {

MatchResult argmax_of(const std::array<double, kNumClasses>& scores) {
    MatchResult r;
    r.scores = scores;
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumClasses; ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    r.gaze_class = class_at(best);
    r.score = scores[best];
    return r;
}

void require_same_size(const TemplateSet& templates, const GrayImage& frame, const char* who) {
    if (frame.width() != templates.width() || frame.height() != templates.height()) {
        throw MatchError(std::string(who) + ": frame is " + std::to_string(frame.width()) + "x" +
                         std::to_string(frame.height()) + " but templates are " + std::to_string(templates.width()) +
                         "x" + std::to_string(templates.height()));
    }
}

}  // namespace

MatchResult classify_whole(const TemplateSet& templates, const GrayImage& frame) {
    require_same_size(templates, frame, "classify_whole");
    const GrayImage eq = preprocess::hist_equalize(frame);
    std::array<double, kNumClasses> scores{};
    for (GazeClass c : kAllClasses) {
        scores[index_of(c)] = static_cast<double>(correlate_at(templates.equalized(c), eq, 0, 0));
    }
    return argmax_of(scores);
}

MatchResult classify_lbp(const TemplateSet& templates, const GrayImage& frame) {
    require_same_size(templates, frame, "classify_lbp");
    const GrayImage codes = lbp_transform(frame);
    std::array<double, kNumClasses> scores{};
    for (GazeClass c : kAllClasses) {
        scores[index_of(c)] = static_cast<double>(correlate_at(templates.lbp(c), codes, 0, 0));
    }
    return argmax_of(scores);
}

PupilTemplate::PupilTemplate(GrayImage patch) : patch_(std::move(patch)) {
    if (patch_.empty()) throw MatchError("PupilTemplate: empty patch");
}

void PupilTemplate::save(const fs::path& dir) const {
    fs::create_directories(dir);
    write_png(dir / "pupil.png", patch_);
}

PupilTemplate PupilTemplate::load(const fs::path& dir) { return PupilTemplate(read_png_gray(dir / "pupil.png")); }

PupilTemplate extract_pupil_patch(const GrayImage& frame, int side) {
    if (side < 1 || side >= frame.width() || side >= frame.height()) {
        throw MatchError("extract_pupil_patch: patch side must be smaller than the frame");
    }
    long best = std::numeric_limits<long>::max();
    int bx = 0, by = 0;
    for (int y = 0; y + side <= frame.height(); ++y) {
        for (int x = 0; x + side <= frame.width(); ++x) {
            long sum = 0;
            for (int dy = 0; dy < side; ++dy) {
                for (int dx = 0; dx < side; ++dx) sum += frame.at(x + dx, y + dy);
            }
            if (sum < best) {
                best = sum;
                bx = x;
                by = y;
            }
        }
    }
    GrayImage patch(side, side);
    for (int dy = 0; dy < side; ++dy) {
        for (int dx = 0; dx < side; ++dx) patch.at(dx, dy) = frame.at(bx + dx, by + dy);
    }
    return PupilTemplate(std::move(patch));
}

Location locate_pupil(const GrayImage& pupil, const GrayImage& frame) {
    const int pw = pupil.width(), ph = pupil.height();
    if (pw >= frame.width() || ph >= frame.height() || pw < 1 || ph < 1) {
        throw MatchError("locate_pupil: pupil template must be strictly smaller than the frame");
    }
    const double n = static_cast<double>(pw) * ph;

    double t_mean = 0.0;
    for (std::uint8_t v : pupil.pixels()) t_mean += v;
    t_mean /= n;
    std::vector<double> t_centered(pupil.size());
    double t_energy = 0.0;
    for (std::size_t i = 0; i < pupil.size(); ++i) {
        t_centered[i] = pupil.pixels()[i] - t_mean;
        t_energy += t_centered[i] * t_centered[i];
    }

    // Summed-area tables for window mean and energy.
    const int W = frame.width(), H = frame.height();
    std::vector<double> sum((W + 1) * static_cast<std::size_t>(H + 1), 0.0), sq(sum.size(), 0.0);
    auto idx = [W](int x, int y) { return static_cast<std::size_t>(y) * (W + 1) + x; };
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double v = frame.at(x, y);
            sum[idx(x + 1, y + 1)] = v + sum[idx(x, y + 1)] + sum[idx(x + 1, y)] - sum[idx(x, y)];
            sq[idx(x + 1, y + 1)] = v * v + sq[idx(x, y + 1)] + sq[idx(x + 1, y)] - sq[idx(x, y)];
        }
    }
    auto box = [&](const std::vector<double>& t, int x, int y) {
        return t[idx(x + pw, y + ph)] - t[idx(x, y + ph)] - t[idx(x + pw, y)] + t[idx(x, y)];
    };

    Location best;
    best.score = -std::numeric_limits<double>::infinity();
    for (int y = 0; y + ph <= H; ++y) {
        for (int x = 0; x + pw <= W; ++x) {
            const double s_sum = box(sum, x, y);
            const double s_energy = box(sq, x, y) - s_sum * s_sum / n;
            double score = 0.0;
            if (t_energy > 1e-12 && s_energy > 1e-9) {
                double cross = 0.0;
                for (int dy = 0; dy < ph; ++dy) {
                    const double* t = &t_centered[static_cast<std::size_t>(dy) * pw];
                    const std::uint8_t* s = &frame.at(x, y + dy);
                    for (int dx = 0; dx < pw; ++dx) cross += t[dx] * s[dx];
                }
                score = cross / std::sqrt(t_energy * s_energy);
            }
            if (score > best.score) {
                best.x = x;
                best.y = y;
                best.score = score;
            }
        }
    }
    best.center_x = best.x + (pw - 1) / 2.0;
    best.center_y = best.y + (ph - 1) / 2.0;
    return best;
}

Location locate_pupil(const PupilTemplate& pupil, const GrayImage& frame) { return locate_pupil(pupil.patch(), frame); }

GazeClass pupil_class(const Location& location, int frame_width, const PupilClassConfig& config) {
    if (location.score < config.min_score) return GazeClass::Closed;
    const double cx = location.center_x + 0.5;
    GazeClass c = GazeClass::Forward;
    if (cx < frame_width / 3.0) {
        c = GazeClass::Left;
    } else if (cx > 2.0 * frame_width / 3.0) {
        c = GazeClass::Right;
    }
    if (config.mirror && c != GazeClass::Forward) c = c == GazeClass::Left ? GazeClass::Right : GazeClass::Left;
    return c;
}

GrayImage lbp_transform(const GrayImage& image) {
    if (image.width() < 3 || image.height() < 3) throw MatchError("lbp_transform: image must be at least 3x3");
    // Clockwise from top-left; the first neighbour lands in the MSB.
    static constexpr int kDx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
    static constexpr int kDy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
    GrayImage out(image.width() - 2, image.height() - 2);
    for (int y = 1; y < image.height() - 1; ++y) {
        for (int x = 1; x < image.width() - 1; ++x) {
            const int center = image.at(x, y);
            unsigned code = 0;
            for (int k = 0; k < 8; ++k) {
                code = (code << 1) | (image.at(x + kDx[k], y + kDy[k]) - center >= 0 ? 1u : 0u);
            }
            out.at(x - 1, y - 1) = static_cast<std::uint8_t>(code);
        }
    }
    return out;
}

}  // namespace gazechair::matchers
