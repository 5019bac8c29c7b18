#include "gazechair/app.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "gazechair/png_io.hpp"
#include "gazechair/preprocess.hpp"
#include "gazechair/rng.hpp"

namespace gazechair::app {

std::string_view to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::Cnn: return "cnn";
        case ClassifierKind::WholeTemplate: return "whole_template";
        case ClassifierKind::PupilTemplate: return "pupil_template";
        case ClassifierKind::Lbp: return "lbp";
    }
    return "?";
}

ClassifierKind parse_classifier_kind(std::string_view name) {
    for (auto k : {ClassifierKind::Cnn, ClassifierKind::WholeTemplate, ClassifierKind::PupilTemplate,
                   ClassifierKind::Lbp}) {
        if (to_string(k) == name) return k;
    }
    throw AppError("unknown classifier kind '" + std::string(name) + "'");
}

std::string_view to_string(InputMode m) { return m == InputMode::ClassEvents ? "class_events" : "frame_stream"; }

InputMode parse_input_mode(std::string_view name) {
    if (name == "class_events") return InputMode::ClassEvents;
    if (name == "frame_stream") return InputMode::FrameStream;
    throw AppError("unknown input mode '" + std::string(name) + "'");
}

namespace {

control::EyeReading one_hot(GazeClass c) {
    cnn::ProbVector p{};
    p[index_of(c)] = 1.0;
    return {c, p};
}

// Template methods compare at template resolution.
GrayImage gray_at(const EyeFrame& frame, int width, int height) {
    GrayImage g = preprocess::to_grayscale(frame);
    if (g.width() != width || g.height() != height) g = preprocess::decimate(g, width, height);
    return g;
}

class CnnClassifier : public Classifier {
public:
    explicit CnnClassifier(cnn::Network net) : net_(std::move(net)) {}
    ClassifierKind kind() const override { return ClassifierKind::Cnn; }
    control::EyeReading classify(const EyeFrame& frame) const override {
        const auto p = cnn::predict(net_, frame);
        return {p.gaze_class, p.probs};
    }

private:
    cnn::Network net_;
};

class WholeClassifier : public Classifier {
public:
    WholeClassifier(matchers::TemplateSet t, bool lbp) : templates_(std::move(t)), lbp_(lbp) {}
    ClassifierKind kind() const override { return lbp_ ? ClassifierKind::Lbp : ClassifierKind::WholeTemplate; }
    control::EyeReading classify(const EyeFrame& frame) const override {
        const GrayImage g = gray_at(frame, templates_.width(), templates_.height());
        return one_hot(lbp_ ? matchers::classify_lbp(templates_, g).gaze_class
                            : matchers::classify_whole(templates_, g).gaze_class);
    }

private:
    matchers::TemplateSet templates_;
    bool lbp_;
};

class PupilClassifier : public Classifier {
public:
    PupilClassifier(matchers::PupilTemplate p, matchers::PupilClassConfig c) : pupil_(std::move(p)), config_(c) {}
    ClassifierKind kind() const override { return ClassifierKind::PupilTemplate; }
    control::EyeReading classify(const EyeFrame& frame) const override {
        const GrayImage g = preprocess::to_grayscale(frame);
        return one_hot(matchers::pupil_class(matchers::locate_pupil(pupil_, g), g.width(), config_));
    }

private:
    matchers::PupilTemplate pupil_;
    matchers::PupilClassConfig config_;
};

}  // namespace

std::unique_ptr<Classifier> make_cnn_classifier(cnn::Network net) {
    return std::make_unique<CnnClassifier>(std::move(net));
}
std::unique_ptr<Classifier> make_whole_classifier(matchers::TemplateSet templates) {
    return std::make_unique<WholeClassifier>(std::move(templates), false);
}
std::unique_ptr<Classifier> make_lbp_classifier(matchers::TemplateSet templates) {
    return std::make_unique<WholeClassifier>(std::move(templates), true);
}
std::unique_ptr<Classifier> make_pupil_classifier(matchers::PupilTemplate pupil, matchers::PupilClassConfig config) {
    return std::make_unique<PupilClassifier>(std::move(pupil), config);
}

std::unique_ptr<Classifier> load_classifier(ClassifierKind kind, const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw AppError("model not found: " + path.string());
    try {
        switch (kind) {
            case ClassifierKind::Cnn: return make_cnn_classifier(cnn::Network::load(path));
            case ClassifierKind::WholeTemplate: return make_whole_classifier(matchers::TemplateSet::load(path));
            case ClassifierKind::Lbp: return make_lbp_classifier(matchers::TemplateSet::load(path));
            case ClassifierKind::PupilTemplate: return make_pupil_classifier(matchers::PupilTemplate::load(path));
        }
    } catch (const AppError&) {
        throw;
    } catch (const std::exception& e) {
        throw AppError("cannot load " + std::string(to_string(kind)) + " model " + path.string() + ": " + e.what());
    }
    throw AppError("unreachable");
}

std::vector<cnn::Example> make_examples(const corpus::LabeledDataset& dataset) {
    std::vector<cnn::Example> out;
    out.reserve(dataset.size());
    for (const auto& item : dataset.items) out.push_back(cnn::make_example(item.frame, item.label));
    return out;
}

cnn::Network train_cnn(const corpus::LabeledDataset& train, const cnn::NetworkSpec& spec,
                       const cnn::TrainConfig& config, cnn::TrainHistory* history,
                       const cnn::IterationCallback& on_iteration) {
    if (train.empty()) throw AppError("training set is empty");
    const auto examples = make_examples(train);
    return cnn::train_new(spec, examples, config, history, on_iteration);
}

evaluation::Trainer cnn_trainer(cnn::NetworkSpec spec, cnn::TrainConfig config) {
    return [spec, config](const corpus::LabeledDataset& train, int fold) {
        cnn::TrainConfig c = config;
        c.seed = mix_seed({config.seed, static_cast<std::uint64_t>(fold)});
        auto net = std::make_shared<const cnn::Network>(train_cnn(train, spec, c));
        return evaluation::Predictor([net](const EyeFrame& f) { return cnn::predict(*net, f).gaze_class; });
    };
}

evaluation::Predictor as_predictor(std::shared_ptr<const Classifier> classifier) {
    return [classifier](const EyeFrame& f) { return classifier->classify(f).gaze_class; };
}

void SimSessionConfig::validate() const {
    control.validate();
    if (extra_ticks < 0) throw AppError("extra_ticks must be >= 0");
    if (input_mode == InputMode::FrameStream && !classifier) throw AppError("frame_stream input needs a classifier");
    if (classifier && model.empty()) throw AppError("classifier given without a model path");
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AppError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

SimSessionConfig sim_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw AppError("session config must be a JSON object");
    static const std::set<std::string> known = {"world", "classifier", "model", "control", "input_mode",
                                                "extra_ticks", "seed"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw AppError("unknown session config key '" + k + "'");
    }
    SimSessionConfig c;
    try {
        if (j.contains("world") && !j["world"].is_null()) c.world = resolve(j["world"].get<std::string>(), base_dir);
        if (j.contains("classifier") && !j["classifier"].is_null()) {
            c.classifier = parse_classifier_kind(j["classifier"].get<std::string>());
        }
        if (j.contains("model") && !j["model"].is_null()) c.model = resolve(j["model"].get<std::string>(), base_dir);
        if (j.contains("control")) c.control = control::config_from_json(j["control"]);
        if (j.contains("input_mode")) c.input_mode = parse_input_mode(j["input_mode"].get<std::string>());
        if (j.contains("extra_ticks")) c.extra_ticks = j["extra_ticks"].get<int>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw AppError(std::string("session config: ") + e.what());
    } catch (const control::ControlError& e) {
        throw AppError(std::string("session config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json sim_config_to_json(const SimSessionConfig& c) {
    nlohmann::json j;
    j["world"] = c.world.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.world.string());
    j["classifier"] = c.classifier ? nlohmann::json(to_string(*c.classifier)) : nlohmann::json(nullptr);
    j["model"] = c.model.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.model.string());
    j["control"] = control::config_to_json(c.control);
    j["input_mode"] = to_string(c.input_mode);
    j["extra_ticks"] = c.extra_ticks;
    j["seed"] = c.seed;
    return j;
}

SimSessionConfig load_sim_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw AppError(path.string() + ": " + e.what());
    }
    return sim_config_from_json(j, path.parent_path());
}

namespace {

GazeClass class_field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw AppError(std::string("event needs a class in '") + key + "'");
    const auto c = parse_gaze_class(j[key].get<std::string>());
    if (!c) throw AppError("unknown class '" + j[key].get<std::string>() + "'");
    return *c;
}

EyeFrame frame_field(const nlohmann::json& j, const char* key, EyeSide side, const std::filesystem::path& base) {
    RgbImage image;
    const std::string file_key = std::string(key) + "_file";
    try {
        if (j.contains(key) && j[key].is_string()) {
            const auto bytes = base64_decode(j[key].get<std::string>());
            image = decode_png_rgb(bytes);
        } else if (j.contains(file_key) && j[file_key].is_string()) {
            image = read_png_rgb(resolve(j[file_key].get<std::string>(), base));
        } else {
            throw AppError(std::string("frames event needs '") + key + "' or '" + file_key + "'");
        }
    } catch (const ImageIoError& e) {
        throw AppError(std::string("frames event, ") + key + ": " + e.what());
    }
    return {std::move(image), side, 0};
}

}  // namespace

SimEvent parse_event(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) throw AppError("event needs a string 'type'");
    SimEvent e;
    const std::string type = j["type"].get<std::string>();
    try {
        if (j.contains("ticks")) {
            e.ticks = j["ticks"].get<int>();
            if (e.ticks < 1) throw AppError("event ticks must be >= 1");
        }
        if (type == "gaze") {
            e.type = EventType::Gaze;
            e.left = class_field(j, "left");
            e.right = class_field(j, "right");
        } else if (type == "frames") {
            e.type = EventType::Frames;
            e.left_frame = frame_field(j, "left", EyeSide::Left, base_dir);
            e.right_frame = frame_field(j, "right", EyeSide::Right, base_dir);
        } else if (type == "synth") {
            e.type = EventType::Synth;
            e.left = class_field(j, "left");
            e.right = class_field(j, "right");
            if (j.contains("seed")) e.seed = j["seed"].get<std::uint64_t>();
            if (j.contains("scenario")) e.scenario = corpus::parse_scenario_name(j["scenario"].get<std::string>());
        } else if (type == "reset") {
            e.type = EventType::Reset;
        } else {
            throw AppError("unknown event type '" + type + "'");
        }
    } catch (const nlohmann::json::exception& ex) {
        throw AppError(std::string("event: ") + ex.what());
    } catch (const corpus::CorpusError& ex) {
        throw AppError(std::string("event: ") + ex.what());
    }
    return e;
}

std::vector<SimEvent> load_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw AppError("cannot read script " + path.string());
    std::vector<SimEvent> events;
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            events.push_back(parse_event(nlohmann::json::parse(line), path.parent_path()));
        } catch (const std::exception& e) {
            throw AppError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return events;
}

EyeFrame synth_frame(GazeClass c, EyeSide side, const corpus::ScenarioTag& scenario, std::uint64_t seed) {
    corpus::SynthParams p = corpus::sample_params(c, scenario, {}, mix_seed({seed, static_cast<std::uint64_t>(side)}));
    p.eye_side = side;
    return corpus::synth_eye(p);
}

Simulation::Simulation(SimSessionConfig config, safety::World2D world, std::shared_ptr<const Classifier> classifier,
                       safety::SensorArray sensors)
    : config_(std::move(config)), world_(std::move(world)), classifier_(std::move(classifier)),
      sensors_(std::move(sensors)), controller_(config_.control) {
    config_.validate();
    world_.validate();
    sensors_.validate();
    if (config_.input_mode == InputMode::FrameStream && !classifier_) {
        throw AppError("frame_stream input needs a classifier");
    }
}

Simulation Simulation::from_config(const SimSessionConfig& config) {
    config.validate();
    safety::World2D world;
    if (!config.world.empty()) {
        try {
            world = safety::load_world(config.world.string());
        } catch (const std::exception& e) {
            throw AppError("world " + config.world.string() + ": " + e.what());
        }
    }
    std::shared_ptr<const Classifier> classifier;
    if (config.classifier) classifier = load_classifier(*config.classifier, config.model);
    return Simulation(config, std::move(world), std::move(classifier));
}

void Simulation::set_world(safety::World2D world) {
    world.validate();
    world_ = std::move(world);
}

control::Telemetry Simulation::step(const std::optional<control::EyeReading>& left,
                                    const std::optional<control::EyeReading>& right) {
    const safety::SafetyState s = safety::safety_check(sensors_, world_, controller_.state().pose());
    return controller_.tick(left, right, s);
}

std::optional<control::EyeReading> Simulation::classify(const EyeFrame& frame) const {
    try {
        return classifier_->classify(frame);
    } catch (const std::exception&) {
        return std::nullopt;  // counts as disagreement
    }
}

std::vector<control::Telemetry> Simulation::apply(const SimEvent& e) {
    std::vector<control::Telemetry> out;
    if (e.type == EventType::Reset) {
        controller_.reset();
        return out;
    }
    if (e.type != EventType::Gaze && !classifier_) throw AppError("frame input needs a classifier");
    for (int k = 0; k < e.ticks; ++k) {
        switch (e.type) {
            case EventType::Gaze:
                out.push_back(step(control::EyeReading{e.left, std::nullopt}, control::EyeReading{e.right, std::nullopt}));
                break;
            case EventType::Frames:
                out.push_back(step(classify(*e.left_frame), classify(*e.right_frame)));
                break;
            case EventType::Synth: {
                const std::uint64_t s = mix_seed({config_.seed, e.seed, static_cast<std::uint64_t>(k)});
                out.push_back(step(classify(synth_frame(e.left, EyeSide::Left, e.scenario, s)),
                                   classify(synth_frame(e.right, EyeSide::Right, e.scenario, s))));
                break;
            }
            case EventType::Reset: break;
        }
    }
    return out;
}

control::Telemetry Simulation::idle() { return step(std::nullopt, std::nullopt); }

std::string telemetry_line(const control::Telemetry& t) { return control::telemetry_to_json(t).dump(); }

std::vector<std::string> run_headless(Simulation& sim, const std::vector<SimEvent>& events) {
    std::vector<std::string> lines;
    for (const auto& e : events) {
        for (const auto& t : sim.apply(e)) lines.push_back(telemetry_line(t));
    }
    for (int i = 0; i < sim.config().extra_ticks; ++i) lines.push_back(telemetry_line(sim.idle()));
    return lines;
}

void simulate_headless(const std::filesystem::path& config, const std::filesystem::path& script,
                       const std::filesystem::path& out) {
    Simulation sim = Simulation::from_config(load_sim_config(config));
    const auto lines = run_headless(sim, load_script(script));
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    std::ofstream os(out, std::ios::binary);
    if (!os) throw AppError("cannot write " + out.string());
    for (const auto& l : lines) os << l << '\n';
}

}  // namespace gazechair::app
