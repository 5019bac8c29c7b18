#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gazechair/corpus.hpp"
#include "gazechair/matchers.hpp"
#include "gazechair/rng.hpp"

namespace gazechair::calibration {

using corpus::ScenarioTag;

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// What the frame actually shows, as far as the source knows.
struct FrameTruth {
    GazeClass shown = GazeClass::Forward;
    bool blink = false;  // eye closed while the user was asked for an open class
    bool lag = false;    // user still looking at the previous target
    bool operator==(const FrameTruth&) const = default;
};

struct SourcedFrame {
    EyeFrame frame;
    FrameTruth truth;
};

// Supplies frames for one acquisition attempt. Throws CalibrationError when
// it cannot provide `count` frames.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual std::vector<SourcedFrame> capture(GazeClass requested, const ScenarioTag& scenario, int attempt,
                                              int count) = 0;
    virtual std::string describe() const = 0;
};

// Simulated user behaviour.
struct UserBehavior {
    double blink_rate = 0.0;       // per-frame probability on open-eye classes
    int lag_frames = 0;            // leading frames showing the previous class
    double wrong_gaze_rate = 0.0;  // per-frame probability of a random other class
};

class SyntheticSource : public FrameSource {
public:
    SyntheticSource(std::uint64_t user_seed, UserBehavior behavior = {}, corpus::CorpusOptions options = {});
    std::vector<SourcedFrame> capture(GazeClass requested, const ScenarioTag& scenario, int attempt,
                                      int count) override;
    std::string describe() const override;

private:
    std::uint64_t user_seed_;
    UserBehavior behavior_;
    corpus::CorpusOptions options_;
};

// Replays frames from one user directory in the corpus layout, consuming each
// (scenario, class) bucket in file order.
class DirectorySource : public FrameSource {
public:
    explicit DirectorySource(const std::filesystem::path& user_dir);
    std::vector<SourcedFrame> capture(GazeClass requested, const ScenarioTag& scenario, int attempt,
                                      int count) override;
    std::string describe() const override;

private:
    std::filesystem::path dir_;
    std::map<std::pair<ScenarioTag, GazeClass>, std::vector<EyeFrame>> buckets_;
    std::map<std::pair<ScenarioTag, GazeClass>, std::size_t> cursor_;
};

struct CalibConfig {
    int attempts = 3;
    int frames_per_attempt = 200;
    int keep = 500;
    int train_per_class = 400;
    double vet_threshold = 0.80;
    int max_reselections = 3;
    int max_reacquisitions = 2;
    std::uint64_t seed = 1;
    std::vector<ScenarioTag> scenarios{corpus::kAllScenarios.begin(), corpus::kAllScenarios.end()};
    void validate() const;
};

// All frames acquired for one class in one scenario.
struct ClassCapture {
    GazeClass requested = GazeClass::Forward;
    std::vector<SourcedFrame> frames;
    std::vector<std::size_t> attempt_starts;  // offset of each attempt in frames
};

ClassCapture acquire(FrameSource& source, GazeClass requested, const ScenarioTag& scenario,
                     const CalibConfig& config, int first_attempt = 0);

// Uniformly random index into a non-empty frame set.
std::size_t select_template(std::size_t frame_count, Rng& rng);

enum class Verdict { Accept, ReselectTemplate, Reacquire };
std::string_view to_string(Verdict v);

// Accept at accuracy >= threshold; otherwise reselect until max_reselections
// have been spent, then reacquire.
Verdict verdict_for(double accuracy, int reselections_done, const CalibConfig& config);

using TempDataset = std::array<ClassCapture, kNumClasses>;

// Fraction of temp-dataset frames that whole-image matching assigns to the
// class they were requested as.
double vetting_accuracy(const TempDataset& temp, const matchers::TemplateSet& templates);

struct VetResult {
    double accuracy = 0.0;
    Verdict verdict = Verdict::Accept;
};
VetResult vet(const TempDataset& temp, const matchers::TemplateSet& templates, int reselections_done,
              const CalibConfig& config);

// Keeps the `keep` frames scoring highest against the class template (ties to
// the lower index). Returned indices are in frame order.
std::vector<std::size_t> clean(const ClassCapture& capture, const GrayImage& class_template, int keep);

// Cleaning score: correlation of the equalized frame with the equalized template.
double clean_score(const GrayImage& equalized_template, const EyeFrame& frame);

struct VetRecord {
    int acquisition = 0;
    int reselection = 0;
    std::array<std::size_t, kNumClasses> template_indices{};
    double accuracy = 0.0;
    Verdict verdict = Verdict::Accept;
};

struct ScenarioSession {
    ScenarioTag scenario;
    TempDataset temp;  // the accepted acquisition
    std::array<std::size_t, kNumClasses> template_indices{};
    std::vector<VetRecord> vetting;
    std::array<std::vector<std::size_t>, kNumClasses> retained;  // indices into temp[c].frames
};

struct CalibSession {
    std::string user_id;
    std::string source;
    CalibConfig config;
    std::vector<ScenarioSession> scenarios;
};

// The full acquisition / vetting / cleaning loop over every configured
// scenario. Throws CalibrationError when a scenario never passes vetting.
CalibSession run_calibration(FrameSource& source, const CalibConfig& config, std::string user_id = "user");

// Per class per scenario: train_per_class to train, the rest to test.
corpus::Split finalize(const CalibSession& session);

// Retained-frame truth, for oracle checks.
std::vector<FrameTruth> retained_truth(const ScenarioSession& s, GazeClass c);

// Whole-eye templates the scenario was vetted and cleaned with.
matchers::TemplateSet session_templates(const ScenarioSession& s);

nlohmann::json manifest(const CalibSession& session);
// <dir>/session.json plus the retained frames in the corpus layout.
void save_session(const CalibSession& session, const std::filesystem::path& dir);

}  // namespace gazechair::calibration
