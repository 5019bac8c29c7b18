#include "gazechair/calibration.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "gazechair/preprocess.hpp"

namespace gazechair::calibration {

namespace {

std::uint64_t scenario_index(const ScenarioTag& s) {
    return static_cast<std::uint64_t>(s.lighting) * 2 + static_cast<std::uint64_t>(s.glasses);
}

GazeClass previous_class(GazeClass c) { return class_at((index_of(c) + kNumClasses - 1) % kNumClasses); }

bool open_class(GazeClass c) { return c != GazeClass::Closed; }

}  // namespace

SyntheticSource::SyntheticSource(std::uint64_t user_seed, UserBehavior behavior, corpus::CorpusOptions options)
    : user_seed_(user_seed), behavior_(behavior), options_(std::move(options)) {
    if (!(behavior_.blink_rate >= 0 && behavior_.blink_rate <= 1) ||
        !(behavior_.wrong_gaze_rate >= 0 && behavior_.wrong_gaze_rate <= 1) || behavior_.lag_frames < 0) {
        throw CalibrationError("synthetic source: invalid user behaviour");
    }
}

std::vector<SourcedFrame> SyntheticSource::capture(GazeClass requested, const ScenarioTag& scenario, int attempt,
                                                   int count) {
    const std::uint64_t seed =
        mix_seed({user_seed_, index_of(requested), scenario_index(scenario), static_cast<std::uint64_t>(attempt)});
    Rng behavior_rng(mix_seed(seed, 0xb11c));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SourcedFrame> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        FrameTruth truth{requested, false, false};
        // Draw every variate each frame so one behaviour does not shift another's stream.
        const double wrong_draw = u(behavior_rng);
        const auto other = class_at((index_of(requested) + 1 + behavior_rng() % (kNumClasses - 1)) % kNumClasses);
        const double blink_draw = u(behavior_rng);
        if (i < behavior_.lag_frames) {
            truth.shown = previous_class(requested);
            truth.lag = true;
        } else if (wrong_draw < behavior_.wrong_gaze_rate) {
            truth.shown = other;
        } else if (open_class(requested) && blink_draw < behavior_.blink_rate) {
            truth.shown = GazeClass::Closed;
            truth.blink = true;
        }
        corpus::SynthParams p =
            corpus::sample_params(truth.shown, scenario, options_, mix_seed(seed, static_cast<std::uint64_t>(i)));
        p.frame_index = static_cast<std::uint64_t>(attempt) * static_cast<std::uint64_t>(count) + i;
        out.push_back({corpus::synth_eye(p), truth});
    }
    return out;
}

std::string SyntheticSource::describe() const { return "synthetic:" + std::to_string(user_seed_); }

DirectorySource::DirectorySource(const std::filesystem::path& user_dir) : dir_(user_dir) {
    const corpus::LabeledDataset ds = corpus::load_user(user_dir);
    for (const auto& item : ds.items) buckets_[{item.scenario, item.label}].push_back(item.frame);
}

std::vector<SourcedFrame> DirectorySource::capture(GazeClass requested, const ScenarioTag& scenario, int,
                                                   int count) {
    const auto key = std::make_pair(scenario, requested);
    const auto it = buckets_.find(key);
    std::size_t& pos = cursor_[key];
    const std::size_t available = it == buckets_.end() ? 0 : it->second.size() - pos;
    if (available < static_cast<std::size_t>(count)) {
        throw CalibrationError("source exhausted: " + dir_.string() + " has " + std::to_string(available) +
                               " frames left for " + corpus::scenario_name(scenario) + "/" +
                               std::string(to_string(requested)) + ", need " + std::to_string(count));
    }
    std::vector<SourcedFrame> out;
    for (int i = 0; i < count; ++i) out.push_back({it->second[pos++], {requested, false, false}});
    return out;
}

std::string DirectorySource::describe() const { return "dir:" + dir_.string(); }

void CalibConfig::validate() const {
    if (attempts < 1 || frames_per_attempt < 1) throw CalibrationError("calibration config: empty acquisition");
    if (keep < 1 || keep > attempts * frames_per_attempt) {
        throw CalibrationError("calibration config: keep must be in [1, attempts * frames_per_attempt]");
    }
    if (train_per_class < 1 || train_per_class >= keep) {
        throw CalibrationError("calibration config: need 1 <= train_per_class < keep");
    }
    if (!(vet_threshold >= 0 && vet_threshold <= 1)) throw CalibrationError("calibration config: bad threshold");
    if (max_reselections < 0 || max_reacquisitions < 0) throw CalibrationError("calibration config: negative retries");
    if (scenarios.empty()) throw CalibrationError("calibration config: no scenarios");
}

ClassCapture acquire(FrameSource& source, GazeClass requested, const ScenarioTag& scenario,
                     const CalibConfig& config, int first_attempt) {
    ClassCapture cap;
    cap.requested = requested;
    cap.frames.reserve(static_cast<std::size_t>(config.attempts * config.frames_per_attempt));
    for (int a = 0; a < config.attempts; ++a) {
        auto frames = source.capture(requested, scenario, first_attempt + a, config.frames_per_attempt);
        if (frames.size() != static_cast<std::size_t>(config.frames_per_attempt)) {
            throw CalibrationError("source returned " + std::to_string(frames.size()) + " frames, expected " +
                                   std::to_string(config.frames_per_attempt));
        }
        cap.attempt_starts.push_back(cap.frames.size());
        std::move(frames.begin(), frames.end(), std::back_inserter(cap.frames));
    }
    return cap;
}

std::size_t select_template(std::size_t frame_count, Rng& rng) {
    if (frame_count == 0) throw CalibrationError("select_template: no frames");
    return std::uniform_int_distribution<std::size_t>(0, frame_count - 1)(rng);
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::Accept: return "accept";
        case Verdict::ReselectTemplate: return "reselect_template";
        case Verdict::Reacquire: return "reacquire";
    }
    return "accept";
}

Verdict verdict_for(double accuracy, int reselections_done, const CalibConfig& config) {
    if (accuracy >= config.vet_threshold) return Verdict::Accept;
    return reselections_done < config.max_reselections ? Verdict::ReselectTemplate : Verdict::Reacquire;
}

double vetting_accuracy(const TempDataset& temp, const matchers::TemplateSet& templates) {
    std::size_t correct = 0, total = 0;
    for (const auto& cap : temp) {
        for (const auto& f : cap.frames) {
            correct += matchers::classify_whole(templates, preprocess::to_grayscale(f.frame)).gaze_class ==
                       cap.requested;
            ++total;
        }
    }
    if (total == 0) throw CalibrationError("vet: empty temp dataset");
    return static_cast<double>(correct) / static_cast<double>(total);
}

VetResult vet(const TempDataset& temp, const matchers::TemplateSet& templates, int reselections_done,
              const CalibConfig& config) {
    VetResult r;
    r.accuracy = vetting_accuracy(temp, templates);
    r.verdict = verdict_for(r.accuracy, reselections_done, config);
    return r;
}

double clean_score(const GrayImage& equalized_template, const EyeFrame& frame) {
    const GrayImage eq = preprocess::hist_equalize(preprocess::to_grayscale(frame));
    return static_cast<double>(matchers::correlate_at(equalized_template, eq, 0, 0));
}

std::vector<std::size_t> clean(const ClassCapture& capture, const GrayImage& class_template, int keep) {
    if (keep < 0 || capture.frames.size() < static_cast<std::size_t>(keep)) {
        throw CalibrationError("clean: " + std::to_string(capture.frames.size()) + " frames, need at least " +
                               std::to_string(keep));
    }
    const GrayImage eq_template = preprocess::hist_equalize(class_template);
    std::vector<double> score(capture.frames.size());
    for (std::size_t i = 0; i < score.size(); ++i) score[i] = clean_score(eq_template, capture.frames[i].frame);
    std::vector<std::size_t> order(score.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    order.resize(static_cast<std::size_t>(keep));
    std::sort(order.begin(), order.end());
    return order;
}

namespace {

matchers::TemplateSet templates_from(const TempDataset& temp, const std::array<std::size_t, kNumClasses>& idx) {
    std::array<GrayImage, kNumClasses> src;
    for (std::size_t c = 0; c < kNumClasses; ++c) src[c] = preprocess::to_grayscale(temp[c].frames[idx[c]].frame);
    return matchers::TemplateSet(std::move(src));
}

ScenarioSession calibrate_scenario(FrameSource& source, const ScenarioTag& scenario, const CalibConfig& config) {
    ScenarioSession s;
    s.scenario = scenario;
    Rng rng(mix_seed(config.seed, scenario_index(scenario)));
    for (int acq = 0; acq <= config.max_reacquisitions; ++acq) {
        for (GazeClass c : kAllClasses) {
            s.temp[index_of(c)] = acquire(source, c, scenario, config, acq * config.attempts);
        }
        for (int resel = 0;; ++resel) {
            std::array<std::size_t, kNumClasses> idx{};
            for (std::size_t c = 0; c < kNumClasses; ++c) idx[c] = select_template(s.temp[c].frames.size(), rng);
            const matchers::TemplateSet templates = templates_from(s.temp, idx);
            const VetResult r = vet(s.temp, templates, resel, config);
            s.vetting.push_back({acq, resel, idx, r.accuracy, r.verdict});
            if (r.verdict == Verdict::Accept) {
                s.template_indices = idx;
                for (GazeClass c : kAllClasses) {
                    s.retained[index_of(c)] = clean(s.temp[index_of(c)], templates.source(c), config.keep);
                }
                return s;
            }
            if (r.verdict == Verdict::Reacquire) break;
        }
    }
    throw CalibrationError("calibration failed for " + corpus::scenario_name(scenario) + ": vetting never reached " +
                           std::to_string(config.vet_threshold));
}

}  // namespace

CalibSession run_calibration(FrameSource& source, const CalibConfig& config, std::string user_id) {
    config.validate();
    CalibSession session;
    session.user_id = std::move(user_id);
    session.source = source.describe();
    session.config = config;
    for (const auto& scenario : config.scenarios) session.scenarios.push_back(calibrate_scenario(source, scenario, config));
    return session;
}

corpus::Split finalize(const CalibSession& session) {
    const CalibConfig& cfg = session.config;
    if (session.scenarios.empty()) throw CalibrationError("finalize: session has no scenarios");
    corpus::Split out;
    out.train.user_id = out.test.user_id = session.user_id;
    for (const auto& s : session.scenarios) {
        for (GazeClass c : kAllClasses) {
            const auto& kept = s.retained[index_of(c)];
            if (kept.size() != static_cast<std::size_t>(cfg.keep)) {
                throw CalibrationError("finalize: " + corpus::scenario_name(s.scenario) + "/" +
                                       std::string(to_string(c)) + " is not cleaned");
            }
            std::vector<std::size_t> order = kept;
            Rng rng(mix_seed({cfg.seed, scenario_index(s.scenario), index_of(c), 0xf1a1}));
            std::shuffle(order.begin(), order.end(), rng);
            const auto mid = order.begin() + cfg.train_per_class;
            std::sort(order.begin(), mid);
            std::sort(mid, order.end());
            for (auto it = order.begin(); it != order.end(); ++it) {
                corpus::LabeledFrame item{s.temp[index_of(c)].frames[*it].frame, c, s.scenario};
                (it < mid ? out.train : out.test).items.push_back(std::move(item));
            }
        }
    }
    return out;
}

std::vector<FrameTruth> retained_truth(const ScenarioSession& s, GazeClass c) {
    std::vector<FrameTruth> out;
    for (std::size_t i : s.retained[index_of(c)]) out.push_back(s.temp[index_of(c)].frames[i].truth);
    return out;
}

nlohmann::json manifest(const CalibSession& session) {
    const CalibConfig& cfg = session.config;
    nlohmann::json j;
    j["user_id"] = session.user_id;
    j["source"] = session.source;
    j["config"] = {{"attempts", cfg.attempts},
                   {"frames_per_attempt", cfg.frames_per_attempt},
                   {"keep", cfg.keep},
                   {"train_per_class", cfg.train_per_class},
                   {"vet_threshold", cfg.vet_threshold},
                   {"max_reselections", cfg.max_reselections},
                   {"max_reacquisitions", cfg.max_reacquisitions},
                   {"seed", cfg.seed}};
    auto per_class = [](const auto& arr, auto fn) {
        nlohmann::json o = nlohmann::json::object();
        for (GazeClass c : kAllClasses) o[std::string(to_string(c))] = fn(arr[index_of(c)]);
        return o;
    };
    auto identity = [](const auto& v) { return nlohmann::json(v); };
    j["scenarios"] = nlohmann::json::array();
    for (const auto& s : session.scenarios) {
        nlohmann::json sj;
        sj["scenario"] = corpus::scenario_name(s.scenario);
        sj["templates"] = per_class(s.template_indices, identity);
        sj["attempt_starts"] = per_class(s.temp, [](const ClassCapture& c) { return nlohmann::json(c.attempt_starts); });
        sj["vetting"] = nlohmann::json::array();
        for (const auto& v : s.vetting) {
            sj["vetting"].push_back({{"acquisition", v.acquisition},
                                     {"reselection", v.reselection},
                                     {"templates", per_class(v.template_indices, identity)},
                                     {"accuracy", v.accuracy},
                                     {"verdict", to_string(v.verdict)}});
        }
        sj["retained"] = per_class(s.retained, identity);
        j["scenarios"].push_back(std::move(sj));
    }
    return j;
}

matchers::TemplateSet session_templates(const ScenarioSession& s) { return templates_from(s.temp, s.template_indices); }

void save_session(const CalibSession& session, const std::filesystem::path& dir) {
    corpus::LabeledDataset ds;
    ds.user_id = session.user_id;
    for (const auto& s : session.scenarios) {
        for (GazeClass c : kAllClasses) {
            for (std::size_t i : s.retained[index_of(c)]) {
                ds.items.push_back({s.temp[index_of(c)].frames[i].frame, c, s.scenario});
            }
        }
    }
    corpus::save_corpus(ds, dir);
    std::ofstream out(dir / "session.json");
    if (!out) throw CalibrationError("cannot write " + (dir / "session.json").string());
    out << manifest(session).dump(2) << '\n';
}

}  // namespace gazechair::calibration
