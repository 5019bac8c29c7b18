#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gazechair/corpus.hpp"

namespace gazechair::evaluation {

class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rows are predicted classes, columns actual classes.
class ConfusionMatrix {
public:
    using Counts = std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses>;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(const Counts& counts) : counts_(counts) {}

    void add(GazeClass predicted, GazeClass actual, std::uint64_t n = 1) {
        counts_[index_of(predicted)][index_of(actual)] += n;
    }
    std::uint64_t at(GazeClass predicted, GazeClass actual) const {
        return counts_[index_of(predicted)][index_of(actual)];
    }
    const Counts& counts() const { return counts_; }
    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t actual_total(GazeClass actual) const;

    // Percent of each actual-class column, rounded to hundredths so that every
    // non-empty column sums to exactly 100.00.
    std::array<std::array<double, kNumClasses>, kNumClasses> normalized() const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
    bool operator==(const ConfusionMatrix&) const = default;

private:
    Counts counts_{};
};

// trace / total; throws on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

// k disjoint folds covering the dataset; each class is dealt round-robin over
// the folds after a seeded shuffle. Fold contents are in dataset order.
std::vector<std::vector<std::size_t>> stratified_folds(const corpus::LabeledDataset& dataset, int k,
                                                       std::uint64_t seed);

using Predictor = std::function<GazeClass(const EyeFrame&)>;
// Builds a predictor from a training set; fold is the validation fold index.
using Trainer = std::function<Predictor(const corpus::LabeledDataset& train, int fold)>;

struct CrossValidation {
    std::vector<ConfusionMatrix> folds;
    ConfusionMatrix total;
    std::vector<double> train_seconds;
};

// k >= 2: each fold validated once. k == 1: a single stratified 80/20 holdout.
CrossValidation crossvalidate(const corpus::LabeledDataset& dataset, int k, const Trainer& trainer,
                              std::uint64_t seed);

struct LatencyStats {
    std::size_t samples = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double mean_ms = 0.0;
    double fps = 0.0;  // 1 / mean
};

// Times each call separately over repetitions passes of frames.
LatencyStats bench_latency(const Predictor& predict, std::span<const EyeFrame> frames, int repetitions);
LatencyStats latency_stats(std::vector<double> seconds);

// Upper bound on training time: items * iterations * time per item-iteration.
double training_time_estimate(std::size_t items, int iterations, double seconds_per_item_iteration);

struct MetricsReport {
    std::string user;
    std::string timestamp;  // filled by emit_report when empty
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    std::vector<ConfusionMatrix> folds;
    std::vector<std::pair<std::string, double>> per_user_accuracy;
    std::optional<LatencyStats> latency;
    std::optional<double> training_seconds;
};

nlohmann::ordered_json report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
// Header plus one row per predicted class of normalized percentages.
std::string confusion_csv(const ConfusionMatrix& cm);

enum class ReportFormat { Json, Csv };
// Writes <dir>/report_<user>_<timestamp>.<ext>; returns the path.
std::filesystem::path emit_report(const MetricsReport& r, const std::filesystem::path& dir, ReportFormat format);

}  // namespace gazechair::evaluation
