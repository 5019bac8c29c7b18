// gazechair command-line front end.
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gazechair/app.hpp"
#include "gazechair/calibration.hpp"
#include "gazechair/cnn.hpp"
#include "gazechair/corpus.hpp"
#include "gazechair/evaluation.hpp"
#include "gazechair/rng.hpp"
#include "gazechair/service.hpp"

namespace fs = std::filesystem;
using namespace gazechair;

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<corpus::ScenarioTag> parse_scenarios(const std::vector<std::string>& names) {
    std::vector<corpus::ScenarioTag> out;
    for (const auto& n : names) out.push_back(corpus::parse_scenario_name(n));
    return out;
}

cnn::TrainConfig load_train_config(const std::string& path) {
    return path.empty() ? cnn::TrainConfig{} : cnn::train_config_from_json(read_json(path));
}

fs::path sibling(const fs::path& model, const std::string& suffix) {
    fs::path p = model;
    p.replace_filename(model.stem().string() + suffix);
    return p;
}

void print_iteration(const cnn::IterationRecord& r) {
    std::printf("iter %3d  loss %.4f  train_error %.4f  grad_norm %.4g  eps %.3g\n", r.iteration, r.loss,
                r.train_error, r.grad_norm, r.learning_rate);
    std::fflush(stdout);
}

void save_model(const cnn::Network& net, const cnn::TrainHistory& history, const fs::path& out) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    net.save(out);
    write_json(sibling(out, ".history.json"), cnn::history_to_json(history));
    std::printf("stopped: %s after %zu iterations (%.1f s)\nmodel: %s\n", std::string(cnn::to_string(history.stop)).c_str(),
                history.iterations.size(), history.seconds, out.string().c_str());
}

double holdout_accuracy(const cnn::Network& net, const corpus::LabeledDataset& test) {
    evaluation::ConfusionMatrix cm;
    for (const auto& item : test.items) cm.add(cnn::predict(net, item.frame).gaze_class, item.label);
    return evaluation::accuracy(cm);
}

// --- synth-gen ---

struct SynthGenOpts {
    int users = 0;
    int frames = 0;
    std::string out;
    std::uint64_t seed = 1;
    double noise = 3.0;
    std::vector<std::string> scenarios;
};

int synth_gen(const SynthGenOpts& o) {
    corpus::CorpusOptions opt;
    opt.noise_sigma = o.noise;
    if (!o.scenarios.empty()) opt.scenarios = parse_scenarios(o.scenarios);
    std::size_t files = 0;
    for (int u = 0; u < o.users; ++u) {
        char id[32];
        std::snprintf(id, sizeof id, "user_%02d", u + 1);
        opt.user_id = id;
        const auto ds = corpus::generate_user_corpus(mix_seed({o.seed, static_cast<std::uint64_t>(u)}), o.frames, opt);
        corpus::save_corpus(ds, o.out);
        files += ds.size();
        std::printf("%s: %zu frames\n", id, ds.size());
    }
    std::printf("wrote %zu files under %s\n", files, o.out.c_str());
    return 0;
}

// --- train ---

struct TrainOpts {
    std::string corpus, out, config;
};

int train(const TrainOpts& o) {
    if (!fs::is_directory(o.corpus)) throw std::runtime_error("corpus directory not found: " + o.corpus);
    const auto ds = corpus::load_corpus(o.corpus);
    if (ds.empty()) throw std::runtime_error("no frames under " + o.corpus);
    const auto config = load_train_config(o.config);
    std::printf("training on %zu frames\n", ds.size());
    cnn::TrainHistory history;
    const auto net = app::train_cnn(ds, cnn::NetworkSpec{}, config, &history, print_iteration);
    save_model(net, history, o.out);
    return 0;
}

// --- calibrate ---

struct CalibrateOpts {
    std::string source, out, user_dir, host = "127.0.0.1", config, session_dir, user_id = "user";
    unsigned short port = 0;
    std::uint64_t user_seed = 1, seed = 1;
    double blink_rate = 0.0;
    int lag_frames = 0;
    std::vector<std::string> scenarios;
};

int calibrate(const CalibrateOpts& o) {
    std::unique_ptr<calibration::FrameSource> source;
    if (o.source == "synthetic") {
        source = std::make_unique<calibration::SyntheticSource>(o.user_seed,
                                                                calibration::UserBehavior{o.blink_rate, o.lag_frames, 0.0});
    } else if (o.source == "dir") {
        if (o.user_dir.empty()) throw std::runtime_error("--source dir needs --user-dir");
        source = std::make_unique<calibration::DirectorySource>(o.user_dir);
    } else {
        source = std::make_unique<service::ServiceSource>(o.host, o.port ? o.port : service::port_from_env(), o.user_seed);
    }
    calibration::CalibConfig cfg;
    cfg.seed = o.seed;
    if (!o.scenarios.empty()) cfg.scenarios = parse_scenarios(o.scenarios);
    std::printf("calibrating from %s\n", source->describe().c_str());
    const auto session = calibration::run_calibration(*source, cfg, o.user_id);
    for (const auto& s : session.scenarios) {
        const auto& v = s.vetting.back();
        std::printf("%s: %zu vetting rounds, accepted at %.3f\n", corpus::scenario_name(s.scenario).c_str(),
                    s.vetting.size(), v.accuracy);
    }
    const fs::path out(o.out);
    const fs::path session_dir = o.session_dir.empty() ? sibling(out, "_session") : fs::path(o.session_dir);
    calibration::save_session(session, session_dir);
    for (const auto& s : session.scenarios) {
        calibration::session_templates(s).save(sibling(out, "_templates") / corpus::scenario_name(s.scenario));
    }
    const auto split = calibration::finalize(session);
    std::printf("session: %s (%zu train, %zu test)\n", session_dir.string().c_str(), split.train.size(), split.test.size());
    cnn::TrainHistory history;
    const auto net = app::train_cnn(split.train, cnn::NetworkSpec{}, load_train_config(o.config), &history, print_iteration);
    std::printf("holdout accuracy: %.4f\n", holdout_accuracy(net, split.test));
    save_model(net, history, out);
    return 0;
}

// --- eval ---

struct EvalOpts {
    std::string corpus, model, report, classifier = "cnn", config, format = "both";
    int cv = 5;
    std::uint64_t seed = 1;
};

int eval(const EvalOpts& o) {
    if (!fs::is_directory(o.corpus)) throw std::runtime_error("corpus directory not found: " + o.corpus);
    const auto users = corpus::load_users(o.corpus);
    if (users.empty()) throw std::runtime_error("no users under " + o.corpus);
    const auto kind = app::parse_classifier_kind(o.classifier);
    std::shared_ptr<const app::Classifier> loaded = app::load_classifier(kind, o.model);

    evaluation::Trainer trainer;
    if (kind == app::ClassifierKind::Cnn && o.cv >= 1) {
        trainer = app::cnn_trainer(cnn::Network::load(o.model).spec(), load_train_config(o.config));
    } else {
        // Template methods have nothing to fit; each fold scores the given model.
        trainer = [loaded](const corpus::LabeledDataset&, int) { return app::as_predictor(loaded); };
    }

    evaluation::MetricsReport report;
    report.user = users.size() == 1 ? users[0].user_id : "all";
    double train_seconds = 0.0;
    for (const auto& user : users) {
        evaluation::ConfusionMatrix user_cm;
        if (o.cv == 0) {
            const auto predict = app::as_predictor(loaded);
            for (const auto& item : user.items) user_cm.add(predict(item.frame), item.label);
        } else {
            const auto cv = evaluation::crossvalidate(user, o.cv, trainer, o.seed);
            if (report.folds.size() < cv.folds.size()) report.folds.resize(cv.folds.size());
            for (std::size_t f = 0; f < cv.folds.size(); ++f) report.folds[f] += cv.folds[f];
            for (double s : cv.train_seconds) train_seconds += s;
            user_cm = cv.total;
        }
        report.confusion += user_cm;
        report.per_user_accuracy.emplace_back(user.user_id, evaluation::accuracy(user_cm));
        std::printf("%s: accuracy %.4f over %llu frames\n", user.user_id.c_str(), evaluation::accuracy(user_cm),
                    static_cast<unsigned long long>(user_cm.total()));
        std::fflush(stdout);
    }
    report.accuracy = evaluation::accuracy(report.confusion);
    if (o.cv >= 1 && kind == app::ClassifierKind::Cnn) report.training_seconds = train_seconds;
    std::printf("overall accuracy: %.4f\n", report.accuracy);
    if (o.format == "json" || o.format == "both") {
        std::printf("report: %s\n", evaluation::emit_report(report, o.report, evaluation::ReportFormat::Json).string().c_str());
    }
    if (o.format == "csv" || o.format == "both") {
        std::printf("report: %s\n", evaluation::emit_report(report, o.report, evaluation::ReportFormat::Csv).string().c_str());
    }
    return 0;
}

// --- bench ---

struct BenchOpts {
    std::string model, classifier = "cnn", corpus, report;
    int frames = 1000;
    int repetitions = 1;
    std::uint64_t seed = 1;
};

int bench(const BenchOpts& o) {
    const auto kind = app::parse_classifier_kind(o.classifier);
    std::shared_ptr<const app::Classifier> classifier = app::load_classifier(kind, o.model);
    corpus::LabeledDataset ds;
    if (!o.corpus.empty()) {
        ds = corpus::load_corpus(o.corpus);
        if (ds.empty()) throw std::runtime_error("no frames under " + o.corpus);
    } else {
        ds = corpus::generate_user_corpus(o.seed, (o.frames + 3) / 4);
    }
    std::vector<EyeFrame> frames;
    for (std::size_t i = 0; frames.size() < static_cast<std::size_t>(o.frames); ++i) {
        frames.push_back(ds.items[i % ds.size()].frame);
    }
    const auto predict = app::as_predictor(classifier);
    evaluation::MetricsReport report;
    report.user = "bench";
    report.latency = evaluation::bench_latency(predict, frames, o.repetitions);
    for (std::size_t i = 0; i < frames.size(); ++i) report.confusion.add(predict(frames[i]), ds.items[i % ds.size()].label);
    report.accuracy = evaluation::accuracy(report.confusion);
    const auto& l = *report.latency;
    std::printf("frames %zu  median %.3f ms  p95 %.3f ms  mean %.3f ms  fps %.1f  accuracy %.4f\n", l.samples,
                l.median_ms, l.p95_ms, l.mean_ms, l.fps, report.accuracy);
    if (!o.report.empty()) {
        std::printf("report: %s\n", evaluation::emit_report(report, o.report, evaluation::ReportFormat::Json).string().c_str());
    }
    return 0;
}

// --- serve ---

struct ServeOpts {
    std::string address = "127.0.0.1", world;
    unsigned short port = 0;
};

int serve(const ServeOpts& o) {
    service::ServerOptions so;
    so.address = o.address;
    so.port = o.port ? o.port : service::port_from_env();
    if (!o.world.empty()) so.world = safety::load_world(o.world);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);  // server threads inherit the mask

    service::Server server(so);
    server.start();
    std::printf("listening on http://%s:%u\n", so.address.c_str(), server.port());
    std::fflush(stdout);
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Gaze-driven wheelchair control stack"};
    cli.require_subcommand(1);

    SynthGenOpts sg;
    auto* c_sg = cli.add_subcommand("synth-gen", "Write synthetic eye-image corpora");
    c_sg->add_option("--users", sg.users, "Number of users")->required()->check(CLI::PositiveNumber);
    c_sg->add_option("--frames-per-class", sg.frames, "Frames per class per user")->required()->check(CLI::PositiveNumber);
    c_sg->add_option("--out", sg.out, "Output root")->required();
    c_sg->add_option("--seed", sg.seed, "Generator seed");
    c_sg->add_option("--noise", sg.noise, "Sensor noise sigma")->check(CLI::NonNegativeNumber);
    c_sg->add_option("--scenarios", sg.scenarios, "Scenario names")->delimiter(',');

    TrainOpts tr;
    auto* c_tr = cli.add_subcommand("train", "Train the CNN on a corpus");
    c_tr->add_option("--corpus", tr.corpus, "Corpus root")->required();
    c_tr->add_option("--out", tr.out, "Model file")->required();
    c_tr->add_option("--config", tr.config, "Training config JSON")->check(CLI::ExistingFile);

    CalibrateOpts ca;
    auto* c_ca = cli.add_subcommand("calibrate", "Run the calibration pipeline, then train");
    c_ca->add_option("--source", ca.source, "Frame source")->required()->check(CLI::IsMember({"synthetic", "dir", "service"}));
    c_ca->add_option("--out", ca.out, "Model file")->required();
    c_ca->add_option("--user-dir", ca.user_dir, "User directory for --source dir");
    c_ca->add_option("--user-id", ca.user_id, "User id");
    c_ca->add_option("--user-seed", ca.user_seed, "Synthetic user seed");
    c_ca->add_option("--blink-rate", ca.blink_rate, "Synthetic blink probability")->check(CLI::Range(0.0, 1.0));
    c_ca->add_option("--lag-frames", ca.lag_frames, "Synthetic reaction lag")->check(CLI::NonNegativeNumber);
    c_ca->add_option("--host", ca.host, "Service host");
    c_ca->add_option("--port", ca.port, "Service port");
    c_ca->add_option("--seed", ca.seed, "Template and split seed");
    c_ca->add_option("--scenarios", ca.scenarios, "Scenario names")->delimiter(',');
    c_ca->add_option("--session-dir", ca.session_dir, "Where to keep the cleaned frames");
    c_ca->add_option("--config", ca.config, "Training config JSON")->check(CLI::ExistingFile);

    EvalOpts ev;
    auto* c_ev = cli.add_subcommand("eval", "Cross-validate and write a metrics report");
    c_ev->add_option("--corpus", ev.corpus, "Corpus root")->required();
    c_ev->add_option("--model", ev.model, "Model file or template directory")->required();
    c_ev->add_option("--cv", ev.cv, "Folds; 1 = 80/20 holdout, 0 = score the model as is")->check(CLI::NonNegativeNumber);
    c_ev->add_option("--report", ev.report, "Report directory")->required();
    c_ev->add_option("--classifier", ev.classifier, "cnn, whole_template, pupil_template or lbp");
    c_ev->add_option("--config", ev.config, "Training config JSON for per-fold training")->check(CLI::ExistingFile);
    c_ev->add_option("--format", ev.format, "json, csv or both")->check(CLI::IsMember({"json", "csv", "both"}));
    c_ev->add_option("--seed", ev.seed, "Fold seed");

    BenchOpts be;
    auto* c_be = cli.add_subcommand("bench", "Time per-frame prediction");
    c_be->add_option("--model", be.model, "Model file or template directory")->required();
    c_be->add_option("--classifier", be.classifier, "Classifier kind");
    c_be->add_option("--corpus", be.corpus, "Frames to time (default: synthetic)");
    c_be->add_option("--frames", be.frames, "Frames per pass")->check(CLI::PositiveNumber);
    c_be->add_option("--repetitions", be.repetitions, "Passes")->check(CLI::PositiveNumber);
    c_be->add_option("--report", be.report, "Report directory");
    c_be->add_option("--seed", be.seed, "Synthetic frame seed");

    bool headless = false;
    std::string sim_config, sim_script, sim_out;
    auto* c_si = cli.add_subcommand("simulate", "Replay a scripted session");
    c_si->add_flag("--headless", headless, "Run without the service");
    c_si->add_option("--config", sim_config, "Session config JSON")->required()->check(CLI::ExistingFile);
    c_si->add_option("--script", sim_script, "Event script (JSONL)")->required()->check(CLI::ExistingFile);
    c_si->add_option("--out", sim_out, "Telemetry output (JSONL)")->required();

    ServeOpts se;
    auto* c_se = cli.add_subcommand("serve", "Run the HTTP/WebSocket service");
    c_se->add_option("--port", se.port, "Port (default: GAZECHAIR_PORT or 8765)");
    c_se->add_option("--address", se.address, "Bind address");
    c_se->add_option("--world", se.world, "Initial world JSON")->check(CLI::ExistingFile);

    CLI11_PARSE(cli, argc, argv);

    try {
        if (c_sg->parsed()) return synth_gen(sg);
        if (c_tr->parsed()) return train(tr);
        if (c_ca->parsed()) return calibrate(ca);
        if (c_ev->parsed()) return eval(ev);
        if (c_be->parsed()) return bench(be);
        if (c_si->parsed()) {
            if (!headless) throw std::runtime_error("only --headless is supported; use `serve` for live sessions");
            app::simulate_headless(sim_config, sim_script, sim_out);
            return 0;
        }
        if (c_se->parsed()) return serve(se);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
