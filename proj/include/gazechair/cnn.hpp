#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gazechair/gaze_class.hpp"
#include "gazechair/image.hpp"

namespace gazechair::cnn {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Shape3 {
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
    bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& s);  // "62x62x16"

// Planar activation map, [channel][row][col].
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(Shape3 shape, double fill = 0.0);
    Tensor3(Shape3 shape, std::vector<double> values);

    const Shape3& shape() const { return shape_; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    int channels() const { return shape_.channels; }

    double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x]; }
    double at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
    }
    double* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * shape_.height * shape_.width; }
    const double* plane(int c) const { return data_.data() + static_cast<std::size_t>(c) * shape_.height * shape_.width; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

private:
    Shape3 shape_;
    std::vector<double> data_;
};

Tensor3 to_tensor(const NormalizedImage& image);

// Building blocks, exposed so each can be gradient-checked on its own.
namespace layers {

// Valid (no padding) stride-1 convolution; weights laid out [out][in][ky][kx].
Tensor3 conv_forward(const Tensor3& input, std::span<const double> weights, std::span<const double> bias,
                     int filters, int kernel);
// Accumulates into weight_grad / bias_grad; writes input_grad when non-null.
void conv_backward(const Tensor3& input, const Tensor3& out_grad, std::span<const double> weights, int kernel,
                   std::span<double> weight_grad, std::span<double> bias_grad, Tensor3* input_grad);

// maxpool_backward followed by conv_backward, visiting only the pooled winners.
void conv_pool_backward(const Tensor3& input, const Shape3& conv_shape, const Tensor3& pooled_grad,
                        const std::vector<std::size_t>& argmax, std::span<const double> weights, int kernel,
                        std::span<double> weight_grad, std::span<double> bias_grad, Tensor3* input_grad);

// Non-overlapping max pool with floor division of the spatial dims. argmax
// holds the flat input index per output cell; ties keep the first in row-major order.
Tensor3 maxpool_forward(const Tensor3& input, int factor_y, int factor_x, std::vector<std::size_t>& argmax);
Tensor3 maxpool_backward(const Shape3& input_shape, const Tensor3& out_grad, const std::vector<std::size_t>& argmax);

// y = W x + b, W laid out [out][in].
std::vector<double> dense_forward(std::span<const double> x, std::span<const double> weights,
                                  std::span<const double> bias);
void dense_backward(std::span<const double> x, std::span<const double> out_grad, std::span<const double> weights,
                    std::span<double> weight_grad, std::span<double> bias_grad, std::span<double> input_grad);

void tanh_inplace(std::span<double> v);
// grad *= 1 - y^2, with y the tanh output.
void tanh_backward(std::span<const double> y, std::span<double> grad);

}  // namespace layers

struct NetworkSpec {
    int input_height = 64;
    int input_width = 64;
    int input_channels = 3;
    int kernel = 3;
    int conv1_filters = 16;
    int pool1_factor = 4;
    int conv2_filters = 12;
    int fc_hidden = 16;
    int outputs = static_cast<int>(kNumClasses);

    bool operator==(const NetworkSpec&) const = default;
};

// Shape chain: input, conv1, pool1, conv2, pool2, fc1, output.
struct ShapeChain {
    Shape3 input, conv1, pool1, conv2, pool2, fc1, output;
    int pool2_factor_y = 0;
    int pool2_factor_x = 0;
};

// Throws ShapeError when the layer sizes leave no spatial extent.
ShapeChain shape_chain(const NetworkSpec& spec);

// One set of trainable tensors; also used for gradients.
struct Parameters {
    std::vector<double> conv1_w, conv1_b;
    std::vector<double> conv2_w, conv2_b;
    std::vector<double> fc1_w, fc1_b;
    std::vector<double> out_w, out_b;

    static Parameters zeros(const NetworkSpec& spec);

    // Visits tensors in a fixed order with their names.
    void for_each(const std::function<void(const char*, std::vector<double>&)>& fn);
    void for_each(const std::function<void(const char*, const std::vector<double>&)>& fn) const;

    std::size_t count() const;
    double l2_norm() const;
    void add_scaled(const Parameters& other, double scale);  // this += scale * other
};

using ScoreVector = std::array<double, kNumClasses>;
using ProbVector = std::array<double, kNumClasses>;

// Intermediate activations of one forward pass. tanh is strictly increasing,
// so max(tanh(z)) = tanh(max(z)): conv outputs are pooled before activation
// and only the surviving cells pass through tanh.
struct Trace {
    Tensor3 conv1;  // pre-activation
    Tensor3 pool1;  // tanh(maxpool(conv1))
    std::vector<std::size_t> pool1_argmax;
    Tensor3 conv2;  // pre-activation
    Tensor3 pool2;  // tanh(maxpool(conv2))
    std::vector<std::size_t> pool2_argmax;
    std::vector<double> fc1;
    std::vector<double> output;
};

class Network {
public:
    explicit Network(NetworkSpec spec = {});
    Network(NetworkSpec spec, Parameters params);

    // Weights and biases uniform in [-scale, scale].
    static Network random(const NetworkSpec& spec, std::uint64_t seed, double scale = 0.1);

    const NetworkSpec& spec() const { return spec_; }
    const ShapeChain& shapes() const { return shapes_; }
    Parameters& params() { return params_; }
    const Parameters& params() const { return params_; }

    std::vector<double> forward(const Tensor3& input, Trace* trace = nullptr) const;

    void save(const std::filesystem::path& path) const;
    static Network load(const std::filesystem::path& path);
    std::string to_json() const;
    static Network from_json(const std::string& text);

private:
    NetworkSpec spec_;
    ShapeChain shapes_;
    Parameters params_;
};

// Raw output scores for one normalized image.
ScoreVector forward(const Network& net, const NormalizedImage& input);

ProbVector softmax(const ScoreVector& scores);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// +1 at the true class, -1 elsewhere.
std::vector<double> target_encoding(GazeClass label, int outputs = static_cast<int>(kNumClasses));

// Plain sum of squared errors against the +/-1 target encoding.
double loss(std::span<const double> scores, GazeClass target);

struct Example {
    Tensor3 input;
    GazeClass label = GazeClass::Right;
};

struct BatchResult {
    double loss = 0.0;
    std::size_t errors = 0;
    Parameters gradient;
};

// Adds one item's loss, error and gradient into acc (acc.gradient must be sized).
void accumulate(const Network& net, const Example& example, BatchResult& acc);

// Total loss over the batch and its exact gradient. Items are processed in
// fixed-size chunks reduced in order, so the result is independent of threads.
BatchResult backward(const Network& net, std::span<const Example> batch, int threads = 1);

// Online: one BP iteration is a pass over the shuffled set with a parameter
// update after every sample. FullBatch: one update per pass with the summed
// gradient.
enum class UpdateMode { Online, FullBatch };

struct TrainConfig {
    UpdateMode mode = UpdateMode::Online;
    double epsilon0 = 0.001;
    double lr_up = 1.05;
    double lr_down = 0.70;
    int max_iters = 100;
    double min_train_error = 0.01;
    double min_grad_norm = 0.001;
    std::uint64_t seed = 1;
    int threads = 1;

    void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);

enum class StopReason { TrainError, MaxIterations, GradientNorm };
std::string_view to_string(StopReason r);

struct IterationRecord {
    int iteration = 0;
    double loss = 0.0;
    double train_error = 0.0;
    double grad_norm = 0.0;
    double learning_rate = 0.0;  // step size applied at this iteration
};

struct TrainHistory {
    std::vector<IterationRecord> iterations;
    StopReason stop = StopReason::MaxIterations;
    double seconds = 0.0;
};

nlohmann::json history_to_json(const TrainHistory& h);

using IterationCallback = std::function<void(const IterationRecord&)>;

// Global step adaptation: grows by lr_up after a loss decrease, shrinks by
// lr_down otherwise (an unchanged loss counts as no decrease).
double next_step(double eps, double loss, double previous_loss, const TrainConfig& config);

// Backpropagation with the adaptive global step. Stops on training error,
// gradient norm or the iteration cap, whichever comes first.
TrainHistory train(Network& net, std::span<const Example> train_set, const TrainConfig& config,
                   const IterationCallback& on_iteration = {});

// Initializes a fresh network from config.seed and trains it.
Network train_new(const NetworkSpec& spec, std::span<const Example> train_set, const TrainConfig& config,
                  TrainHistory* history = nullptr, const IterationCallback& on_iteration = {});

struct Prediction {
    GazeClass gaze_class = GazeClass::Right;
    ScoreVector scores{};
    ProbVector probs{};
};

// decimate + normalize, forward, softmax, argmax.
Prediction predict(const Network& net, const EyeFrame& frame);

Example make_example(const EyeFrame& frame, GazeClass label);

}  // namespace gazechair::cnn
