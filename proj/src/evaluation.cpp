#include "gazechair/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gazechair/rng.hpp"

namespace gazechair::evaluation {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts_) t = std::accumulate(row.begin(), row.end(), t);
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < kNumClasses; ++i) t += counts_[i][i];
    return t;
}

std::uint64_t ConfusionMatrix::actual_total(GazeClass actual) const {
    std::uint64_t t = 0;
    for (const auto& row : counts_) t += row[index_of(actual)];
    return t;
}

std::array<std::array<double, kNumClasses>, kNumClasses> ConfusionMatrix::normalized() const {
    std::array<std::array<double, kNumClasses>, kNumClasses> out{};
    for (std::size_t col = 0; col < kNumClasses; ++col) {
        const std::uint64_t n = actual_total(class_at(col));
        if (n == 0) continue;
        // Largest-remainder rounding in units of 0.01 %.
        std::array<std::int64_t, kNumClasses> units{};
        std::array<double, kNumClasses> remainder{};
        std::int64_t assigned = 0;
        for (std::size_t row = 0; row < kNumClasses; ++row) {
            const double exact = 10000.0 * static_cast<double>(counts_[row][col]) / static_cast<double>(n);
            units[row] = static_cast<std::int64_t>(std::floor(exact));
            remainder[row] = exact - static_cast<double>(units[row]);
            assigned += units[row];
        }
        std::array<std::size_t, kNumClasses> order{};
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
        for (std::size_t i = 0; assigned < 10000; ++i, ++assigned) ++units[order[i % kNumClasses]];
        for (std::size_t row = 0; row < kNumClasses; ++row) out[row][col] = static_cast<double>(units[row]) / 100.0;
    }
    return out;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (std::size_t r = 0; r < kNumClasses; ++r)
        for (std::size_t c = 0; c < kNumClasses; ++c) counts_[r][c] += other.counts_[r][c];
    return *this;
}

double accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t n = cm.total();
    if (n == 0) throw EvaluationError("accuracy: empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

std::vector<std::vector<std::size_t>> stratified_folds(const corpus::LabeledDataset& dataset, int k,
                                                       std::uint64_t seed) {
    if (k < 2) throw EvaluationError("stratified_folds: k must be >= 2");
    if (dataset.size() < static_cast<std::size_t>(k)) {
        throw EvaluationError("stratified_folds: " + std::to_string(dataset.size()) + " items for " +
                              std::to_string(k) + " folds");
    }
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class[index_of(dataset.items[i].label)].push_back(i);
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    std::size_t next = 0;  // continue dealing where the previous class stopped so fold sizes stay balanced
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i : idx) folds[next++ % folds.size()].push_back(i);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

namespace {

corpus::LabeledDataset subset(const corpus::LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    corpus::LabeledDataset out;
    out.user_id = ds.user_id;
    out.items.reserve(idx.size());
    for (std::size_t i : idx) out.items.push_back(ds.items[i]);
    return out;
}

ConfusionMatrix evaluate(const Predictor& predict, const corpus::LabeledDataset& test) {
    ConfusionMatrix cm;
    for (const auto& item : test.items) cm.add(predict(item.frame), item.label);
    return cm;
}

}  // namespace

CrossValidation crossvalidate(const corpus::LabeledDataset& dataset, int k, const Trainer& trainer,
                              std::uint64_t seed) {
    if (k < 1) throw EvaluationError("crossvalidate: k must be >= 1");
    CrossValidation cv;
    auto run = [&](const corpus::LabeledDataset& train, const corpus::LabeledDataset& test, int fold) {
        const auto start = std::chrono::steady_clock::now();
        const Predictor predict = trainer(train, fold);
        cv.train_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        cv.folds.push_back(evaluate(predict, test));
        cv.total += cv.folds.back();
    };
    if (k == 1) {
        const corpus::Split s = corpus::split(dataset, 0.8, seed);
        run(s.train, s.test, 0);
        return cv;
    }
    const auto folds = stratified_folds(dataset, k, seed);
    for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx;
        for (int g = 0; g < k; ++g) {
            if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
        }
        std::sort(train_idx.begin(), train_idx.end());
        run(subset(dataset, train_idx), subset(dataset, folds[f]), f);
    }
    return cv;
}

LatencyStats latency_stats(std::vector<double> seconds) {
    if (seconds.empty()) throw EvaluationError("latency_stats: no samples");
    LatencyStats s;
    s.samples = seconds.size();
    std::sort(seconds.begin(), seconds.end());
    const std::size_t n = seconds.size();
    const double median = n % 2 == 1 ? seconds[n / 2] : 0.5 * (seconds[n / 2 - 1] + seconds[n / 2]);
    // Nearest-rank percentile.
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    const double mean = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(n);
    s.median_ms = median * 1e3;
    s.p95_ms = seconds[std::max<std::size_t>(rank, 1) - 1] * 1e3;
    s.mean_ms = mean * 1e3;
    s.fps = mean > 0 ? 1.0 / mean : 0.0;
    return s;
}

LatencyStats bench_latency(const Predictor& predict, std::span<const EyeFrame> frames, int repetitions) {
    if (frames.empty() || repetitions < 1) throw EvaluationError("bench_latency: nothing to time");
    std::vector<double> seconds;
    seconds.reserve(frames.size() * static_cast<std::size_t>(repetitions));
    volatile int sink = 0;
    for (int r = 0; r < repetitions; ++r) {
        for (const auto& f : frames) {
            const auto start = std::chrono::steady_clock::now();
            const GazeClass c = predict(f);
            const auto stop = std::chrono::steady_clock::now();
            sink = sink + static_cast<int>(c);
            seconds.push_back(std::chrono::duration<double>(stop - start).count());
        }
    }
    return latency_stats(std::move(seconds));
}

double training_time_estimate(std::size_t items, int iterations, double seconds_per_item_iteration) {
    if (iterations < 0 || !(seconds_per_item_iteration >= 0)) {
        throw EvaluationError("training_time_estimate: negative input");
    }
    return static_cast<double>(items) * iterations * seconds_per_item_iteration;
}

namespace {

nlohmann::ordered_json cm_json(const ConfusionMatrix& cm) {
    nlohmann::ordered_json j;
    j["rows"] = "predicted";
    j["columns"] = "actual";
    j["classes"] = nlohmann::ordered_json::array();
    for (GazeClass c : kAllClasses) j["classes"].push_back(to_string(c));
    j["counts"] = cm.counts();
    j["normalized_percent"] = cm.normalized();
    j["accuracy"] = cm.total() > 0 ? nlohmann::ordered_json(accuracy(cm)) : nlohmann::ordered_json(nullptr);
    return j;
}

ConfusionMatrix cm_from(const nlohmann::json& j) {
    return ConfusionMatrix(j.at("counts").get<ConfusionMatrix::Counts>());
}

std::string now_stamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
    return os.str();
}

}  // namespace

nlohmann::ordered_json report_to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["user"] = r.user;
    j["timestamp"] = r.timestamp;
    j["accuracy"] = r.accuracy;
    j["confusion"] = cm_json(r.confusion);
    j["folds"] = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) j["folds"].push_back(cm_json(f));
    j["per_user_accuracy"] = nlohmann::ordered_json::array();
    for (const auto& [user, acc] : r.per_user_accuracy) {
        j["per_user_accuracy"].push_back({{"user", user}, {"accuracy", acc}});
    }
    if (r.latency) {
        j["latency"] = {{"samples", r.latency->samples},
                        {"median_ms", r.latency->median_ms},
                        {"p95_ms", r.latency->p95_ms},
                        {"mean_ms", r.latency->mean_ms},
                        {"fps", r.latency->fps}};
    } else {
        j["latency"] = nullptr;
    }
    j["training_seconds"] = r.training_seconds ? nlohmann::ordered_json(*r.training_seconds) : nlohmann::ordered_json(nullptr);
    return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.user = j.at("user").get<std::string>();
        r.timestamp = j.at("timestamp").get<std::string>();
        r.accuracy = j.at("accuracy").get<double>();
        r.confusion = cm_from(j.at("confusion"));
        for (const auto& f : j.at("folds")) r.folds.push_back(cm_from(f));
        for (const auto& u : j.at("per_user_accuracy")) {
            r.per_user_accuracy.emplace_back(u.at("user").get<std::string>(), u.at("accuracy").get<double>());
        }
        if (!j.at("latency").is_null()) {
            const auto& l = j.at("latency");
            r.latency = LatencyStats{l.at("samples").get<std::size_t>(), l.at("median_ms").get<double>(),
                                     l.at("p95_ms").get<double>(), l.at("mean_ms").get<double>(),
                                     l.at("fps").get<double>()};
        }
        if (!j.at("training_seconds").is_null()) r.training_seconds = j.at("training_seconds").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw EvaluationError(std::string("report: ") + e.what());
    }
    return r;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    const auto norm = cm.normalized();
    std::ostringstream os;
    os << "predicted\\actual";
    for (GazeClass c : kAllClasses) os << ',' << to_string(c);
    os << '\n' << std::fixed << std::setprecision(2);
    for (GazeClass p : kAllClasses) {
        os << to_string(p);
        for (GazeClass a : kAllClasses) os << ',' << norm[index_of(p)][index_of(a)];
        os << '\n';
    }
    return os.str();
}

std::filesystem::path emit_report(const MetricsReport& r, const std::filesystem::path& dir, ReportFormat format) {
    MetricsReport stamped = r;
    if (stamped.timestamp.empty()) stamped.timestamp = now_stamp();
    std::filesystem::create_directories(dir);
    const auto path = dir / ("report_" + stamped.user + "_" + stamped.timestamp +
                             (format == ReportFormat::Json ? ".json" : ".csv"));
    std::ofstream out(path);
    if (!out) throw EvaluationError("cannot write " + path.string());
    if (format == ReportFormat::Json) out << report_to_json(stamped).dump(2) << '\n';
    else out << confusion_csv(stamped.confusion);
    return path;
}

}  // namespace gazechair::evaluation
