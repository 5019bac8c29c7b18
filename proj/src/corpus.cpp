#include "gazechair/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "gazechair/png_io.hpp"
#include "gazechair/rng.hpp"

namespace gazechair::corpus {
namespace fs = std::filesystem;

namespace {

struct Rgb {
    double r, g, b;
};

// Nominal palette at brightness 200.
constexpr Rgb kSkin{200, 150, 125};
constexpr Rgb kSclera{235, 232, 225};
constexpr Rgb kIris{105, 70, 45};
constexpr Rgb kPupil{25, 20, 20};
constexpr Rgb kLash{70, 45, 40};

constexpr double kEyeHalfWidthFrac = 0.45;
constexpr double kEyeHalfHeightFrac = 0.28;
constexpr double kIrisRadiusFrac = 0.15;
constexpr double kPupilToIris = 0.45;
constexpr double kLashThickness = 1.5;
constexpr int kSupersample = 3;

bool inside_ellipse(double x, double y, const SynthGeometry& g) {
    double dx = (x - g.eye_cx) / g.eye_half_width;
    double dy = (y - g.eye_cy) / g.eye_half_height;
    return dx * dx + dy * dy <= 1.0;
}

Rgb shade(double x, double y, const SynthGeometry& g, bool lid_drawn) {
    if (!inside_ellipse(x, y, g)) return kSkin;
    if (y < g.lid_y) return kSkin;
    if (lid_drawn && y < g.lid_y + kLashThickness) return kLash;
    double px = x - g.pupil_cx, py = y - g.pupil_cy;
    double r2 = px * px + py * py;
    if (r2 <= g.pupil_radius * g.pupil_radius) return kPupil;
    if (r2 <= g.iris_radius * g.iris_radius) return kIris;
    return kSclera;
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

std::string scenario_name(const ScenarioTag& tag) {
    std::string s = tag.lighting == Lighting::Indoor ? "indoor" : "outdoor";
    s += tag.glasses == GlassesOffset::Nominal ? "_nominal" : "_shifted";
    return s;
}

ScenarioTag parse_scenario_name(const std::string& name) {
    for (const auto& tag : kAllScenarios) {
        if (scenario_name(tag) == name) return tag;
    }
    throw CorpusError("unknown scenario '" + name + "'");
}

std::array<std::size_t, kNumClasses> LabeledDataset::class_counts() const {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& item : items) ++counts[index_of(item.label)];
    return counts;
}

std::vector<ScenarioTag> LabeledDataset::scenario_tags() const {
    std::vector<ScenarioTag> tags;
    for (const auto& item : items) {
        if (std::find(tags.begin(), tags.end(), item.scenario) == tags.end()) tags.push_back(item.scenario);
    }
    std::sort(tags.begin(), tags.end());
    return tags;
}

void validate(const SynthParams& p) {
    if (p.width < 3 || p.height < 3) throw CorpusError("synth: frame must be at least 3x3");
    if (p.pupil_offset_frac < -0.4 || p.pupil_offset_frac > 0.4)
        throw CorpusError("synth: pupil_offset_frac outside [-0.4, 0.4]");
    if (p.eyelid_closure_frac < 0.0 || p.eyelid_closure_frac > 1.0)
        throw CorpusError("synth: eyelid_closure_frac outside [0, 1]");
    if (p.brightness < 0.0 || p.brightness > 255.0) throw CorpusError("synth: brightness outside [0, 255]");
    if (p.noise_sigma < 0.0) throw CorpusError("synth: negative noise_sigma");
    switch (p.gaze_class) {
        case GazeClass::Closed:
            if (p.eyelid_closure_frac < 0.85) throw CorpusError("synth: Closed requires closure >= 0.85");
            break;
        case GazeClass::Forward:
            if (std::abs(p.pupil_offset_frac) > 0.08) throw CorpusError("synth: Forward requires |offset| <= 0.08");
            break;
        case GazeClass::Right:
            if (p.pupil_offset_frac < 0.2) throw CorpusError("synth: Right requires offset >= 0.2");
            break;
        case GazeClass::Left:
            if (p.pupil_offset_frac > -0.2) throw CorpusError("synth: Left requires offset <= -0.2");
            break;
    }
}

SynthGeometry synth_geometry(const SynthParams& p) {
    SynthGeometry g;
    g.eye_cx = p.width / 2.0;
    g.eye_cy = p.height / 2.0 + p.vertical_offset_px;
    g.eye_half_width = kEyeHalfWidthFrac * p.width;
    g.eye_half_height = kEyeHalfHeightFrac * p.height;
    g.iris_radius = kIrisRadiusFrac * p.width;
    g.pupil_radius = kPupilToIris * g.iris_radius;
    g.pupil_cx = g.eye_cx + p.pupil_offset_frac * 2.0 * g.eye_half_width;
    g.pupil_cy = g.eye_cy;
    g.lid_y = g.eye_cy - g.eye_half_height + p.eyelid_closure_frac * 2.0 * g.eye_half_height;

    // Visible if any point of the pupil disc lies in the open part of the eye.
    constexpr int kSteps = 24;
    for (int i = 0; i <= kSteps && !g.pupil_visible; ++i) {
        for (int j = 0; j <= kSteps; ++j) {
            double x = g.pupil_cx + g.pupil_radius * (2.0 * i / kSteps - 1.0);
            double y = g.pupil_cy + g.pupil_radius * (2.0 * j / kSteps - 1.0);
            double dx = x - g.pupil_cx, dy = y - g.pupil_cy;
            if (dx * dx + dy * dy > g.pupil_radius * g.pupil_radius) continue;
            if (inside_ellipse(x, y, g) && y >= g.lid_y + kLashThickness) {
                g.pupil_visible = true;
                break;
            }
        }
    }
    return g;
}

EyeFrame synth_eye(const SynthParams& params) {
    validate(params);
    const SynthGeometry g = synth_geometry(params);
    const bool lid_drawn = params.eyelid_closure_frac > 0.0;
    const double gain = params.brightness / 200.0;

    Rng rng(mix_seed(params.seed, 0x5e7e));
    std::normal_distribution<double> noise(0.0, params.noise_sigma > 0 ? params.noise_sigma : 1.0);

    EyeFrame frame;
    frame.eye_side = params.eye_side;
    frame.frame_index = params.frame_index;
    frame.image = RgbImage(params.width, params.height);
    constexpr double kInvSamples = 1.0 / (kSupersample * kSupersample);
    for (int y = 0; y < params.height; ++y) {
        for (int x = 0; x < params.width; ++x) {
            Rgb acc{0, 0, 0};
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    double fx = x + (sx + 0.5) / kSupersample;
                    double fy = y + (sy + 0.5) / kSupersample;
                    Rgb c = shade(fx, fy, g, lid_drawn);
                    acc.r += c.r;
                    acc.g += c.g;
                    acc.b += c.b;
                }
            }
            const double channel[3] = {acc.r * kInvSamples, acc.g * kInvSamples, acc.b * kInvSamples};
            for (int c = 0; c < 3; ++c) {
                double v = channel[c] * gain;
                if (params.noise_sigma > 0) v += noise(rng);
                frame.image.at(x, y, c) = to_byte(v);
            }
        }
    }
    return frame;
}

ClassRanges class_ranges(GazeClass c) {
    switch (c) {
        case GazeClass::Right: return {0.25, 0.38, 0.0, 0.2};
        case GazeClass::Forward: return {-0.05, 0.05, 0.0, 0.2};
        case GazeClass::Left: return {-0.38, -0.25, 0.0, 0.2};
        case GazeClass::Closed: return {-0.3, 0.3, 0.88, 1.0};
    }
    return {0, 0, 0, 0};
}

std::pair<double, double> brightness_band(Lighting lighting) {
    return lighting == Lighting::Indoor ? std::pair{150.0, 175.0} : std::pair{195.0, 225.0};
}

SynthParams sample_params(GazeClass c, const ScenarioTag& scenario, const CorpusOptions& options,
                          std::uint64_t frame_seed) {
    Rng rng(frame_seed);
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const ClassRanges r = class_ranges(c);
    const auto [b_lo, b_hi] = brightness_band(scenario.lighting);

    SynthParams p;
    p.gaze_class = c;
    p.pupil_offset_frac = uniform(r.offset_lo, r.offset_hi);
    p.eyelid_closure_frac = uniform(r.closure_lo, r.closure_hi);
    p.brightness = uniform(b_lo, b_hi);
    p.vertical_offset_px = scenario.glasses == GlassesOffset::Nominal ? uniform(-1.0, 1.0) : uniform(3.0, 5.0);
    p.noise_sigma = options.noise_sigma;
    p.width = options.width;
    p.height = options.height;
    p.seed = rng();
    return p;
}

LabeledDataset generate_user_corpus(std::uint64_t user_seed, int frames_per_class, const CorpusOptions& options) {
    if (frames_per_class < 1) throw CorpusError("frames_per_class must be >= 1");
    if (options.scenarios.empty()) throw CorpusError("at least one scenario is required");

    LabeledDataset ds;
    ds.user_id = options.user_id.empty() ? "user_" + std::to_string(user_seed) : options.user_id;
    ds.items.reserve(kNumClasses * static_cast<std::size_t>(frames_per_class));
    for (GazeClass c : kAllClasses) {
        for (int i = 0; i < frames_per_class; ++i) {
            const ScenarioTag& scenario = options.scenarios[static_cast<std::size_t>(i) % options.scenarios.size()];
            SynthParams p = sample_params(c, scenario, options, mix_seed({user_seed, index_of(c), static_cast<std::uint64_t>(i)}));
            p.frame_index = ds.items.size();
            ds.items.push_back({synth_eye(p), c, scenario});
        }
    }
    return ds;
}

Split split(const LabeledDataset& dataset, double train_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw CorpusError("split: train_frac must be in (0, 1)");

    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < dataset.items.size(); ++i) by_class[index_of(dataset.items[i].label)].push_back(i);

    std::vector<bool> in_test(dataset.items.size(), false);
    Rng rng(seed);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) {
            throw CorpusError("split: class '" + std::string(to_string(class_at(c))) + "' has no items");
        }
        std::size_t n_test = 0;
        if (idx.size() >= 2) {
            n_test = static_cast<std::size_t>(std::floor((1.0 - train_frac) * static_cast<double>(idx.size()) + 1e-9));
            n_test = std::max<std::size_t>(n_test, 1);
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t k = 0; k < n_test; ++k) in_test[idx[k]] = true;
    }

    Split out;
    out.train.user_id = dataset.user_id;
    out.test.user_id = dataset.user_id;
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        (in_test[i] ? out.test : out.train).items.push_back(dataset.items[i]);
    }
    return out;
}

void save_corpus(const LabeledDataset& dataset, const fs::path& root) {
    const fs::path user_dir = root / (dataset.user_id.empty() ? "user" : dataset.user_id);
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        const auto& item = dataset.items[i];
        const fs::path dir = user_dir / scenario_name(item.scenario) / std::string(to_string(item.label));
        fs::create_directories(dir);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", i);
        write_png(dir / name, item.frame.image);
    }
}

namespace {

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<std::size_t> frame_number(const fs::path& file) {
    const std::string name = file.filename().string();
    constexpr std::string_view prefix = "frame_";
    if (name.size() <= prefix.size() + 4 || name.rfind(prefix, 0) != 0 || file.extension() != ".png") return std::nullopt;
    std::size_t value = 0;
    const char* first = name.data() + prefix.size();
    const char* last = name.data() + name.size() - 4;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) return std::nullopt;
    return value;
}

}  // namespace

LabeledDataset load_user(const fs::path& user_dir) {
    if (!fs::is_directory(user_dir)) throw CorpusError("not a directory: " + user_dir.string());
    LabeledDataset ds;
    ds.user_id = user_dir.filename().string();

    std::map<std::size_t, LabeledFrame> ordered;
    for (const auto& scenario_dir : sorted_subdirs(user_dir)) {
        ScenarioTag tag;
        try {
            tag = parse_scenario_name(scenario_dir.filename().string());
        } catch (const CorpusError&) {
            throw CorpusError("unknown scenario directory: " + scenario_dir.string());
        }
        for (const auto& class_dir : sorted_subdirs(scenario_dir)) {
            auto label = parse_gaze_class(class_dir.filename().string());
            if (!label) throw CorpusError("unknown class directory: " + class_dir.string());
            for (const auto& entry : fs::directory_iterator(class_dir)) {
                auto number = frame_number(entry.path());
                if (!entry.is_regular_file() || !number) continue;
                LabeledFrame item;
                try {
                    item.frame.image = read_png_rgb(entry.path());
                } catch (const ImageIoError& e) {
                    throw CorpusError(std::string("corrupt image: ") + e.what());
                }
                if (item.frame.width() < 3 || item.frame.height() < 3) {
                    throw CorpusError("image smaller than 3x3: " + entry.path().string());
                }
                item.frame.frame_index = *number;
                item.label = *label;
                item.scenario = tag;
                if (!ordered.emplace(*number, std::move(item)).second) {
                    throw CorpusError("duplicate frame number: " + entry.path().string());
                }
            }
        }
    }
    ds.items.reserve(ordered.size());
    for (auto& [n, item] : ordered) ds.items.push_back(std::move(item));
    return ds;
}

std::vector<LabeledDataset> load_users(const fs::path& root) {
    if (!fs::is_directory(root)) throw CorpusError("corpus directory not found: " + root.string());
    std::vector<LabeledDataset> users;
    for (const auto& dir : sorted_subdirs(root)) users.push_back(load_user(dir));
    return users;
}

LabeledDataset load_corpus(const fs::path& root) {
    auto users = load_users(root);
    if (users.size() == 1) return std::move(users.front());
    return merge(users);
}

LabeledDataset merge(const std::vector<LabeledDataset>& users, std::string user_id) {
    LabeledDataset out;
    out.user_id = std::move(user_id);
    for (const auto& u : users) out.items.insert(out.items.end(), u.items.begin(), u.items.end());
    return out;
}

}  // namespace gazechair::corpus
