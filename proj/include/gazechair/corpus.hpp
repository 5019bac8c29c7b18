#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gazechair/gaze_class.hpp"
#include "gazechair/image.hpp"

namespace gazechair::corpus {

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Lighting { Indoor, Outdoor };
enum class GlassesOffset { Nominal, Shifted };

struct ScenarioTag {
    Lighting lighting = Lighting::Indoor;
    GlassesOffset glasses = GlassesOffset::Nominal;

    bool operator==(const ScenarioTag&) const = default;
    auto operator<=>(const ScenarioTag&) const = default;
};

// "indoor_nominal", "outdoor_shifted", ...
std::string scenario_name(const ScenarioTag& tag);
ScenarioTag parse_scenario_name(const std::string& name);

inline constexpr std::array<ScenarioTag, 4> kAllScenarios = {{
    {Lighting::Indoor, GlassesOffset::Nominal},
    {Lighting::Indoor, GlassesOffset::Shifted},
    {Lighting::Outdoor, GlassesOffset::Nominal},
    {Lighting::Outdoor, GlassesOffset::Shifted},
}};

struct LabeledFrame {
    EyeFrame frame;
    GazeClass label = GazeClass::Forward;
    ScenarioTag scenario;

    bool operator==(const LabeledFrame&) const = default;
};

struct LabeledDataset {
    std::string user_id;
    std::vector<LabeledFrame> items;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    std::array<std::size_t, kNumClasses> class_counts() const;
    std::vector<ScenarioTag> scenario_tags() const;

    bool operator==(const LabeledDataset&) const = default;
};

// Rendering parameters for one synthetic eye frame.
struct SynthParams {
    GazeClass gaze_class = GazeClass::Forward;
    double pupil_offset_frac = 0.0;   // horizontal, fraction of eye width; +x is image right
    double vertical_offset_px = 0.0;  // whole-eye shift, emulates glasses slippage
    double eyelid_closure_frac = 0.0;
    double brightness = 200.0;        // ambient level; 200 renders the nominal palette
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    int width = 64;
    int height = 64;
    EyeSide eye_side = EyeSide::Left;
    std::uint64_t frame_index = 0;
};

// Throws CorpusError when params break the class invariants.
void validate(const SynthParams& params);

// Generator ground truth for a rendered frame.
struct SynthGeometry {
    double eye_cx = 0, eye_cy = 0;
    double eye_half_width = 0, eye_half_height = 0;
    double iris_radius = 0, pupil_radius = 0;
    double pupil_cx = 0, pupil_cy = 0;
    double lid_y = 0;  // rows above this are covered by the upper lid
    bool pupil_visible = false;
};

SynthGeometry synth_geometry(const SynthParams& params);

EyeFrame synth_eye(const SynthParams& params);

// Per-class jitter ranges used by the corpus generator.
struct ClassRanges {
    double offset_lo, offset_hi;
    double closure_lo, closure_hi;
};
ClassRanges class_ranges(GazeClass c);

std::pair<double, double> brightness_band(Lighting lighting);

struct CorpusOptions {
    int width = 64;
    int height = 64;
    double noise_sigma = 3.0;
    std::vector<ScenarioTag> scenarios = {
        {Lighting::Indoor, GlassesOffset::Nominal},
        {Lighting::Outdoor, GlassesOffset::Nominal},
    };
    std::string user_id;  // defaults to "user_<seed>"
};

// Draws class-consistent jitter for one frame.
SynthParams sample_params(GazeClass c, const ScenarioTag& scenario, const CorpusOptions& options,
                          std::uint64_t frame_seed);

// frames_per_class items per class, spread round-robin over the scenarios.
LabeledDataset generate_user_corpus(std::uint64_t user_seed, int frames_per_class,
                                    const CorpusOptions& options = {});

struct Split {
    LabeledDataset train;
    LabeledDataset test;
};

// Stratified per class: test count = floor((1 - train_frac) * n_c), except a
// class with a single item goes wholly to train.
Split split(const LabeledDataset& dataset, double train_frac, std::uint64_t seed);

// Layout: <root>/<user>/<scenario>/<class>/frame_<NNNN>.png, where NNNN is
// the item's position in the dataset. Loading restores that order and sets
// frame_index to NNNN.
void save_corpus(const LabeledDataset& dataset, const std::filesystem::path& root);

// One user directory (<root>/<user>).
LabeledDataset load_user(const std::filesystem::path& user_dir);

// Every user under root, sorted by directory name.
std::vector<LabeledDataset> load_users(const std::filesystem::path& root);

// All users under root as a single dataset. Empty directory -> empty dataset.
LabeledDataset load_corpus(const std::filesystem::path& root);

// Concatenates all users into one dataset.
LabeledDataset merge(const std::vector<LabeledDataset>& users, std::string user_id = "all");

}  // namespace gazechair::corpus
