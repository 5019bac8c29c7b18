#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gazechair/cnn.hpp"
#include "gazechair/control.hpp"
#include "gazechair/corpus.hpp"
#include "gazechair/evaluation.hpp"
#include "gazechair/matchers.hpp"
#include "gazechair/safety.hpp"

namespace gazechair::app {

class AppError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ClassifierKind { Cnn, WholeTemplate, PupilTemplate, Lbp };
std::string_view to_string(ClassifierKind k);  // "cnn", "whole_template", ...
ClassifierKind parse_classifier_kind(std::string_view name);

// Per-eye gaze classifier. Template methods report one-hot probabilities.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual ClassifierKind kind() const = 0;
    virtual control::EyeReading classify(const EyeFrame& frame) const = 0;
};

std::unique_ptr<Classifier> make_cnn_classifier(cnn::Network net);
std::unique_ptr<Classifier> make_whole_classifier(matchers::TemplateSet templates);
std::unique_ptr<Classifier> make_lbp_classifier(matchers::TemplateSet templates);
std::unique_ptr<Classifier> make_pupil_classifier(matchers::PupilTemplate pupil,
                                                  matchers::PupilClassConfig config = {});

// cnn: network JSON file. whole_template, lbp: template directory.
// pupil_template: directory holding pupil.png.
std::unique_ptr<Classifier> load_classifier(ClassifierKind kind, const std::filesystem::path& path);

std::vector<cnn::Example> make_examples(const corpus::LabeledDataset& dataset);
cnn::Network train_cnn(const corpus::LabeledDataset& train, const cnn::NetworkSpec& spec,
                       const cnn::TrainConfig& config, cnn::TrainHistory* history = nullptr,
                       const cnn::IterationCallback& on_iteration = {});
// Fresh network per fold, seeded from config.seed and the fold index.
evaluation::Trainer cnn_trainer(cnn::NetworkSpec spec, cnn::TrainConfig config);
evaluation::Predictor as_predictor(std::shared_ptr<const Classifier> classifier);

enum class InputMode { ClassEvents, FrameStream };
std::string_view to_string(InputMode m);
InputMode parse_input_mode(std::string_view name);

struct SimSessionConfig {
    std::filesystem::path world;  // empty: start with an empty world
    std::optional<ClassifierKind> classifier;
    std::filesystem::path model;
    control::ControlConfig control;
    InputMode input_mode = InputMode::ClassEvents;
    int extra_ticks = 0;  // idle ticks appended after a headless script
    std::uint64_t seed = 0;

    // Checks ranges and that a frame stream has a classifier; does not load.
    void validate() const;
};

// Relative paths resolve against base_dir. Unknown keys are rejected.
SimSessionConfig sim_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json sim_config_to_json(const SimSessionConfig& c);
SimSessionConfig load_sim_config(const std::filesystem::path& path);

enum class EventType { Gaze, Frames, Synth, Reset };

// One input message. Gaze carries classes, Frames carries decoded images,
// Synth asks for generator frames of the given classes. An event covers
// `ticks` consecutive ticks.
struct SimEvent {
    EventType type = EventType::Gaze;
    GazeClass left = GazeClass::Forward;
    GazeClass right = GazeClass::Forward;
    std::optional<EyeFrame> left_frame, right_frame;
    corpus::ScenarioTag scenario;
    std::uint64_t seed = 0;
    int ticks = 1;
};

// Frames may be inline base64 PNG ("left"/"right") or files ("left_file"/
// "right_file", relative to base_dir).
SimEvent parse_event(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
// One JSON object per line; blank lines are skipped.
std::vector<SimEvent> load_script(const std::filesystem::path& path);

// Eye frame pair the generator produces for a synth event.
EyeFrame synth_frame(GazeClass c, EyeSide side, const corpus::ScenarioTag& scenario, std::uint64_t seed);

class Simulation {
public:
    Simulation(SimSessionConfig config, safety::World2D world, std::shared_ptr<const Classifier> classifier,
               safety::SensorArray sensors = safety::default_array());

    // Builds from config: loads world and classifier.
    static Simulation from_config(const SimSessionConfig& config);

    // Ticks produced by the event, in order; Reset produces none.
    std::vector<control::Telemetry> apply(const SimEvent& event);
    // A tick with no eye input; counts as disagreement.
    control::Telemetry idle();

    const safety::World2D& world() const { return world_; }
    void set_world(safety::World2D world);
    const control::Controller& controller() const { return controller_; }
    const SimSessionConfig& config() const { return config_; }

private:
    control::Telemetry step(const std::optional<control::EyeReading>& left,
                            const std::optional<control::EyeReading>& right);
    std::optional<control::EyeReading> classify(const EyeFrame& frame) const;

    SimSessionConfig config_;
    safety::World2D world_;
    std::shared_ptr<const Classifier> classifier_;
    safety::SensorArray sensors_;
    control::Controller controller_;
};

std::string telemetry_line(const control::Telemetry& t);

// Replays the events then config.extra_ticks idle ticks; one JSON line per tick.
std::vector<std::string> run_headless(Simulation& sim, const std::vector<SimEvent>& events);
void simulate_headless(const std::filesystem::path& config, const std::filesystem::path& script,
                       const std::filesystem::path& out);

}  // namespace gazechair::app
