#include "gazechair/cnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "gazechair/preprocess.hpp"
#include "gazechair/rng.hpp"

namespace gazechair::cnn {

std::string to_string(const Shape3& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

Tensor3::Tensor3(Shape3 shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor3::Tensor3(Shape3 shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.size()) throw ShapeError("Tensor3: value count does not match shape");
}

Tensor3 to_tensor(const NormalizedImage& image) {
    return Tensor3({image.height, image.width, image.channels}, image.values);
}

namespace layers {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor3 conv_forward(const Tensor3& input, std::span<const double> weights, std::span<const double> bias,
                     int filters, int kernel) {
    const int in_c = input.channels();
    const int oh = input.height() - kernel + 1;
    const int ow = input.width() - kernel + 1;
    if (oh < 1 || ow < 1) throw ShapeError("conv: kernel larger than input");
    const Eigen::Index taps = static_cast<Eigen::Index>(in_c) * kernel * kernel;
    if (weights.size() != static_cast<std::size_t>(filters) * taps || bias.size() != static_cast<std::size_t>(filters)) {
        throw ShapeError("conv: parameter size mismatch");
    }
    const Eigen::Index cells = static_cast<Eigen::Index>(oh) * ow;

    // im2col: one row per (channel, ky, kx) tap, one column per output cell.
    RowMatrix patches(taps, cells);
    const int iw = input.width();
    for (int c = 0; c < in_c; ++c) {
        const double* in = input.plane(c);
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                double* row = patches.row((c * kernel + ky) * kernel + kx).data();
                for (int y = 0; y < oh; ++y) {
                    std::copy_n(in + static_cast<std::size_t>(y + ky) * iw + kx, ow, row + static_cast<std::size_t>(y) * ow);
                }
            }
        }
    }

    Tensor3 out({oh, ow, filters});
    Eigen::Map<RowMatrix> result(out.values().data(), filters, cells);
    Eigen::Map<const RowMatrix> w(weights.data(), filters, taps);
    Eigen::Map<const Eigen::VectorXd> b(bias.data(), filters);
    result.noalias() = w * patches;
    result.colwise() += b;
    return out;
}

void conv_backward(const Tensor3& input, const Tensor3& out_grad, std::span<const double> weights, int kernel,
                   std::span<double> weight_grad, std::span<double> bias_grad, Tensor3* input_grad) {
    const int in_c = input.channels();
    const int filters = out_grad.channels();
    const int oh = out_grad.height(), ow = out_grad.width();
    if (input_grad != nullptr && !(input_grad->shape() == input.shape())) *input_grad = Tensor3(input.shape());
    for (int f = 0; f < filters; ++f) {
        const double* g = out_grad.plane(f);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const double d = g[static_cast<std::size_t>(y) * ow + x];
                if (d == 0.0) continue;
                bias_grad[f] += d;
                for (int c = 0; c < in_c; ++c) {
                    const std::size_t base = ((static_cast<std::size_t>(f) * in_c + c) * kernel) * kernel;
                    for (int ky = 0; ky < kernel; ++ky) {
                        for (int kx = 0; kx < kernel; ++kx) {
                            const std::size_t wi = base + ky * kernel + kx;
                            weight_grad[wi] += d * input.at(c, y + ky, x + kx);
                            if (input_grad != nullptr) input_grad->at(c, y + ky, x + kx) += d * weights[wi];
                        }
                    }
                }
            }
        }
    }
}

Tensor3 maxpool_forward(const Tensor3& input, int factor_y, int factor_x, std::vector<std::size_t>& argmax) {
    if (factor_y < 1 || factor_x < 1) throw ShapeError("maxpool: factor must be >= 1");
    const int oh = input.height() / factor_y;
    const int ow = input.width() / factor_x;
    if (oh < 1 || ow < 1) throw ShapeError("maxpool: factor larger than input");
    Tensor3 out({oh, ow, input.channels()});
    argmax.assign(out.shape().size(), 0);
    std::size_t k = 0;
    for (int c = 0; c < input.channels(); ++c) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++k) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (int dy = 0; dy < factor_y; ++dy) {
                    const int y = oy * factor_y + dy;
                    for (int dx = 0; dx < factor_x; ++dx) {
                        const int x = ox * factor_x + dx;
                        const std::size_t idx = (static_cast<std::size_t>(c) * input.height() + y) * input.width() + x;
                        const double v = input.values()[idx];
                        if (v > best) {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.values()[k] = best;
                argmax[k] = best_idx;
            }
        }
    }
    return out;
}

Tensor3 maxpool_backward(const Shape3& input_shape, const Tensor3& out_grad, const std::vector<std::size_t>& argmax) {
    Tensor3 grad(input_shape);
    auto g = out_grad.values();
    for (std::size_t k = 0; k < g.size(); ++k) grad.values()[argmax[k]] += g[k];
    return grad;
}

void conv_pool_backward(const Tensor3& input, const Shape3& conv_shape, const Tensor3& pooled_grad,
                        const std::vector<std::size_t>& argmax, std::span<const double> weights, int kernel,
                        std::span<double> weight_grad, std::span<double> bias_grad, Tensor3* input_grad) {
    const int in_c = input.channels();
    const std::size_t plane = static_cast<std::size_t>(conv_shape.height) * conv_shape.width;
    if (input_grad != nullptr) *input_grad = Tensor3(input.shape());
    auto g = pooled_grad.values();
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double d = g[k];
        if (d == 0.0) continue;
        const std::size_t idx = argmax[k];
        const int f = static_cast<int>(idx / plane);
        const int y = static_cast<int>((idx % plane) / conv_shape.width);
        const int x = static_cast<int>(idx % conv_shape.width);
        bias_grad[f] += d;
        for (int c = 0; c < in_c; ++c) {
            const std::size_t base = ((static_cast<std::size_t>(f) * in_c + c) * kernel) * kernel;
            for (int ky = 0; ky < kernel; ++ky) {
                const double* in = &input.plane(c)[static_cast<std::size_t>(y + ky) * input.width() + x];
                double* wg = &weight_grad[base + static_cast<std::size_t>(ky) * kernel];
                for (int kx = 0; kx < kernel; ++kx) wg[kx] += d * in[kx];
                if (input_grad != nullptr) {
                    const double* w = &weights[base + static_cast<std::size_t>(ky) * kernel];
                    double* ig = &input_grad->plane(c)[static_cast<std::size_t>(y + ky) * input.width() + x];
                    for (int kx = 0; kx < kernel; ++kx) ig[kx] += d * w[kx];
                }
            }
        }
    }
}

std::vector<double> dense_forward(std::span<const double> x, std::span<const double> weights,
                                  std::span<const double> bias) {
    const std::size_t n_in = x.size(), n_out = bias.size();
    if (weights.size() != n_in * n_out) throw ShapeError("dense: parameter size mismatch");
    std::vector<double> y(bias.begin(), bias.end());
    for (std::size_t o = 0; o < n_out; ++o) {
        const double* w = &weights[o * n_in];
        double acc = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
        y[o] += acc;
    }
    return y;
}

void dense_backward(std::span<const double> x, std::span<const double> out_grad, std::span<const double> weights,
                    std::span<double> weight_grad, std::span<double> bias_grad, std::span<double> input_grad) {
    const std::size_t n_in = x.size(), n_out = out_grad.size();
    std::fill(input_grad.begin(), input_grad.end(), 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
        const double d = out_grad[o];
        bias_grad[o] += d;
        for (std::size_t i = 0; i < n_in; ++i) {
            weight_grad[o * n_in + i] += d * x[i];
            input_grad[i] += d * weights[o * n_in + i];
        }
    }
}

void tanh_inplace(std::span<double> v) {
    for (double& e : v) e = std::tanh(e);
}

void tanh_backward(std::span<const double> y, std::span<double> grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - y[i] * y[i];
}

}  // namespace layers

ShapeChain shape_chain(const NetworkSpec& spec) {
    if (spec.input_height < 1 || spec.input_width < 1 || spec.input_channels < 1 || spec.kernel < 1 ||
        spec.conv1_filters < 1 || spec.conv2_filters < 1 || spec.fc_hidden < 1 || spec.outputs < 1 ||
        spec.pool1_factor < 1) {
        throw ShapeError("network spec: all sizes must be positive");
    }
    ShapeChain s;
    s.input = {spec.input_height, spec.input_width, spec.input_channels};
    s.conv1 = {s.input.height - spec.kernel + 1, s.input.width - spec.kernel + 1, spec.conv1_filters};
    s.pool1 = {s.conv1.height / spec.pool1_factor, s.conv1.width / spec.pool1_factor, spec.conv1_filters};
    s.conv2 = {s.pool1.height - spec.kernel + 1, s.pool1.width - spec.kernel + 1, spec.conv2_filters};
    if (s.conv1.height < 1 || s.conv1.width < 1 || s.pool1.height < 1 || s.pool1.width < 1 || s.conv2.height < 1 ||
        s.conv2.width < 1) {
        throw ShapeError("network spec: input too small for the layer stack");
    }
    // Second pool collapses whatever survives to 1x1.
    s.pool2_factor_y = s.conv2.height;
    s.pool2_factor_x = s.conv2.width;
    s.pool2 = {1, 1, spec.conv2_filters};
    s.fc1 = {1, 1, spec.fc_hidden};
    s.output = {1, 1, spec.outputs};
    return s;
}

Parameters Parameters::zeros(const NetworkSpec& spec) {
    const auto k2 = static_cast<std::size_t>(spec.kernel) * spec.kernel;
    Parameters p;
    p.conv1_w.assign(static_cast<std::size_t>(spec.conv1_filters) * spec.input_channels * k2, 0.0);
    p.conv1_b.assign(static_cast<std::size_t>(spec.conv1_filters), 0.0);
    p.conv2_w.assign(static_cast<std::size_t>(spec.conv2_filters) * spec.conv1_filters * k2, 0.0);
    p.conv2_b.assign(static_cast<std::size_t>(spec.conv2_filters), 0.0);
    p.fc1_w.assign(static_cast<std::size_t>(spec.fc_hidden) * spec.conv2_filters, 0.0);
    p.fc1_b.assign(static_cast<std::size_t>(spec.fc_hidden), 0.0);
    p.out_w.assign(static_cast<std::size_t>(spec.outputs) * spec.fc_hidden, 0.0);
    p.out_b.assign(static_cast<std::size_t>(spec.outputs), 0.0);
    return p;
}

void Parameters::for_each(const std::function<void(const char*, std::vector<double>&)>& fn) {
    fn("conv1_w", conv1_w);
    fn("conv1_b", conv1_b);
    fn("conv2_w", conv2_w);
    fn("conv2_b", conv2_b);
    fn("fc1_w", fc1_w);
    fn("fc1_b", fc1_b);
    fn("out_w", out_w);
    fn("out_b", out_b);
}

void Parameters::for_each(const std::function<void(const char*, const std::vector<double>&)>& fn) const {
    const_cast<Parameters*>(this)->for_each([&fn](const char* name, std::vector<double>& v) { fn(name, v); });
}

std::size_t Parameters::count() const {
    std::size_t n = 0;
    for_each([&n](const char*, const std::vector<double>& v) { n += v.size(); });
    return n;
}

double Parameters::l2_norm() const {
    double ss = 0.0;
    for_each([&ss](const char*, const std::vector<double>& v) {
        for (double e : v) ss += e * e;
    });
    return std::sqrt(ss);
}

void Parameters::add_scaled(const Parameters& other, double scale) {
    std::vector<const std::vector<double>*> src;
    other.for_each([&src](const char*, const std::vector<double>& v) { src.push_back(&v); });
    std::size_t k = 0;
    for_each([&](const char*, std::vector<double>& v) {
        const auto& o = *src[k++];
        if (o.size() != v.size()) throw ShapeError("add_scaled: parameter shape mismatch");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += scale * o[i];
    });
}

namespace {

void check_params(const NetworkSpec& spec, const Parameters& params) {
    const Parameters expected = Parameters::zeros(spec);
    std::vector<std::size_t> sizes;
    expected.for_each([&sizes](const char*, const std::vector<double>& v) { sizes.push_back(v.size()); });
    std::size_t k = 0;
    params.for_each([&](const char* name, const std::vector<double>& v) {
        if (v.size() != sizes[k++]) {
            throw ShapeError(std::string("parameter '") + name + "' has " + std::to_string(v.size()) +
                             " entries, expected " + std::to_string(sizes[k - 1]));
        }
    });
}

}  // namespace

Network::Network(NetworkSpec spec) : spec_(spec), shapes_(shape_chain(spec)), params_(Parameters::zeros(spec)) {}

Network::Network(NetworkSpec spec, Parameters params)
    : spec_(spec), shapes_(shape_chain(spec)), params_(std::move(params)) {
    check_params(spec_, params_);
}

Network Network::random(const NetworkSpec& spec, std::uint64_t seed, double scale) {
    Network net(spec);
    Rng rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    net.params_.for_each([&](const char*, std::vector<double>& v) {
        for (double& e : v) e = dist(rng);
    });
    return net;
}

std::vector<double> Network::forward(const Tensor3& input, Trace* trace) const {
    if (!(input.shape() == shapes_.input)) {
        throw ShapeError("forward: input is " + to_string(input.shape()) + ", network expects " +
                         to_string(shapes_.input));
    }
    Trace local;
    Trace& t = trace != nullptr ? *trace : local;
    t.conv1 = layers::conv_forward(input, params_.conv1_w, params_.conv1_b, spec_.conv1_filters, spec_.kernel);
    t.pool1 = layers::maxpool_forward(t.conv1, spec_.pool1_factor, spec_.pool1_factor, t.pool1_argmax);
    layers::tanh_inplace(t.pool1.values());
    t.conv2 = layers::conv_forward(t.pool1, params_.conv2_w, params_.conv2_b, spec_.conv2_filters, spec_.kernel);
    t.pool2 = layers::maxpool_forward(t.conv2, shapes_.pool2_factor_y, shapes_.pool2_factor_x, t.pool2_argmax);
    layers::tanh_inplace(t.pool2.values());
    t.fc1 = layers::dense_forward(t.pool2.values(), params_.fc1_w, params_.fc1_b);
    layers::tanh_inplace(t.fc1);
    t.output = layers::dense_forward(t.fc1, params_.out_w, params_.out_b);
    layers::tanh_inplace(t.output);
    return t.output;
}

namespace {

constexpr const char* kFormatName = "gazechair-cnn";
constexpr int kFormatVersion = 1;

}  // namespace

std::string Network::to_json() const {
    nlohmann::ordered_json j;
    j["format"] = kFormatName;
    j["version"] = kFormatVersion;
    j["spec"] = {{"input", {spec_.input_height, spec_.input_width, spec_.input_channels}},
                 {"kernel", spec_.kernel},
                 {"conv1_filters", spec_.conv1_filters},
                 {"pool1_factor", spec_.pool1_factor},
                 {"conv2_filters", spec_.conv2_filters},
                 {"fc_hidden", spec_.fc_hidden},
                 {"outputs", spec_.outputs},
                 {"activation", "tanh"}};
    j["preprocess"] = {{"resize", {preprocess::kNetInputSize, preprocess::kNetInputSize}},
                       {"resample", "area"},
                       {"normalize", "per_image_zscore"},
                       {"sigma_floor", preprocess::kSigmaFloor}};
    nlohmann::ordered_json params;
    params_.for_each([&params](const char* name, const std::vector<double>& v) { params[name] = v; });
    j["params"] = std::move(params);
    return j.dump();
}

Network Network::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ShapeError(std::string("model: invalid JSON: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kFormatName) throw ShapeError("model: unknown format");
        if (j.at("version").get<int>() != kFormatVersion) throw ShapeError("model: unsupported version");
        const auto& s = j.at("spec");
        NetworkSpec spec;
        const auto input = s.at("input").get<std::vector<int>>();
        if (input.size() != 3) throw ShapeError("model: input must have 3 dims");
        spec.input_height = input[0];
        spec.input_width = input[1];
        spec.input_channels = input[2];
        spec.kernel = s.at("kernel").get<int>();
        spec.conv1_filters = s.at("conv1_filters").get<int>();
        spec.pool1_factor = s.at("pool1_factor").get<int>();
        spec.conv2_filters = s.at("conv2_filters").get<int>();
        spec.fc_hidden = s.at("fc_hidden").get<int>();
        spec.outputs = s.at("outputs").get<int>();
        Parameters p;
        const auto& pj = j.at("params");
        p.for_each([&pj](const char* name, std::vector<double>& v) { v = pj.at(name).get<std::vector<double>>(); });
        return Network(spec, std::move(p));
    } catch (const nlohmann::json::exception& e) {
        throw ShapeError(std::string("model: malformed field: ") + e.what());
    }
}

void Network::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model to " + path.string());
    out << to_json() << '\n';
}

Network Network::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read model " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

ScoreVector forward(const Network& net, const NormalizedImage& input) {
    if (net.spec().outputs != static_cast<int>(kNumClasses)) throw ShapeError("forward: network must have 4 outputs");
    const auto out = net.forward(to_tensor(input));
    ScoreVector s{};
    std::copy(out.begin(), out.end(), s.begin());
    return s;
}

ProbVector softmax(const ScoreVector& scores) {
    const double m = *std::max_element(scores.begin(), scores.end());
    ProbVector p{};
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(scores[i] - m);
        z += p[i];
    }
    for (double& e : p) e /= z;
    return p;
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

std::vector<double> target_encoding(GazeClass label, int outputs) {
    std::vector<double> t(static_cast<std::size_t>(outputs), -1.0);
    t.at(index_of(label)) = 1.0;
    return t;
}

double loss(std::span<const double> scores, GazeClass target) {
    const auto t = target_encoding(target, static_cast<int>(scores.size()));
    double e = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) e += (scores[i] - t[i]) * (scores[i] - t[i]);
    return e;
}

namespace {

constexpr std::size_t kChunk = 32;

}  // namespace

void accumulate(const Network& net, const Example& ex, BatchResult& acc) {
    const NetworkSpec& spec = net.spec();
    const Parameters& p = net.params();
    Trace t;
    const auto y = net.forward(ex.input, &t);
    acc.loss += loss(y, ex.label);
    if (argmax(y) != index_of(ex.label)) ++acc.errors;

    const auto target = target_encoding(ex.label, spec.outputs);
    std::vector<double> g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = 2.0 * (y[i] - target[i]);
    Parameters& grad = acc.gradient;

    layers::tanh_backward(t.output, g);
    std::vector<double> d_fc1(t.fc1.size());
    layers::dense_backward(t.fc1, g, p.out_w, grad.out_w, grad.out_b, d_fc1);
    layers::tanh_backward(t.fc1, d_fc1);
    std::vector<double> d_pool2(t.pool2.values().size());
    layers::dense_backward(t.pool2.values(), d_fc1, p.fc1_w, grad.fc1_w, grad.fc1_b, d_pool2);
    layers::tanh_backward(t.pool2.values(), d_pool2);

    Tensor3 d_pool1;
    layers::conv_pool_backward(t.pool1, t.conv2.shape(), Tensor3(t.pool2.shape(), std::move(d_pool2)),
                               t.pool2_argmax, p.conv2_w, spec.kernel, grad.conv2_w, grad.conv2_b, &d_pool1);
    layers::tanh_backward(t.pool1.values(), d_pool1.values());
    layers::conv_pool_backward(ex.input, t.conv1.shape(), d_pool1, t.pool1_argmax, p.conv1_w, spec.kernel,
                               grad.conv1_w, grad.conv1_b, nullptr);
}

BatchResult backward(const Network& net, std::span<const Example> batch, int threads) {
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
    std::vector<BatchResult> partial(n_chunks);
    auto run_chunk = [&](std::size_t c) {
        BatchResult& r = partial[c];
        r.gradient = Parameters::zeros(net.spec());
        const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) accumulate(net, batch[i], r);
    };

    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, n_chunks);
    if (workers == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
            });
        }
    }

    BatchResult total;
    total.gradient = Parameters::zeros(net.spec());
    for (const auto& r : partial) {
        total.loss += r.loss;
        total.errors += r.errors;
        total.gradient.add_scaled(r.gradient, 1.0);
    }
    return total;
}

void TrainConfig::validate() const {
    if (!(epsilon0 > 0)) throw std::invalid_argument("train config: epsilon0 must be > 0");
    if (!(lr_down > 0 && lr_down < 1 && lr_up > 1)) {
        throw std::invalid_argument("train config: require 0 < lr_down < 1 < lr_up");
    }
    if (max_iters < 1) throw std::invalid_argument("train config: max_iters must be >= 1");
    if (!(min_train_error > 0) || !(min_grad_norm > 0)) {
        throw std::invalid_argument("train config: stopping thresholds must be > 0");
    }
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
    TrainConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "mode") {
                const auto m = v.get<std::string>();
                if (m == "online") c.mode = UpdateMode::Online;
                else if (m == "full_batch") c.mode = UpdateMode::FullBatch;
                else throw std::invalid_argument("train config: unknown mode '" + m + "'");
            } else if (key == "epsilon0") c.epsilon0 = v.get<double>();
            else if (key == "lr_up") c.lr_up = v.get<double>();
            else if (key == "lr_down") c.lr_down = v.get<double>();
            else if (key == "max_iters") c.max_iters = v.get<int>();
            else if (key == "min_train_error") c.min_train_error = v.get<double>();
            else if (key == "min_grad_norm") c.min_grad_norm = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "threads") c.threads = v.get<int>();
            else throw std::invalid_argument("train config: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"mode", c.mode == UpdateMode::Online ? "online" : "full_batch"},
            {"epsilon0", c.epsilon0},
            {"lr_up", c.lr_up},
            {"lr_down", c.lr_down},
            {"max_iters", c.max_iters},
            {"min_train_error", c.min_train_error},
            {"min_grad_norm", c.min_grad_norm},
            {"seed", c.seed},
            {"threads", c.threads}};
}

nlohmann::json history_to_json(const TrainHistory& h) {
    nlohmann::json its = nlohmann::json::array();
    for (const auto& r : h.iterations) {
        its.push_back({{"iteration", r.iteration},
                       {"loss", r.loss},
                       {"train_error", r.train_error},
                       {"grad_norm", r.grad_norm},
                       {"learning_rate", r.learning_rate}});
    }
    return {{"stop", to_string(h.stop)}, {"seconds", h.seconds}, {"iterations", its}};
}

std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::TrainError: return "train_error";
        case StopReason::MaxIterations: return "max_iterations";
        case StopReason::GradientNorm: return "gradient_norm";
    }
    return "unknown";
}

double next_step(double eps, double loss, double previous_loss, const TrainConfig& config) {
    return eps * (loss < previous_loss ? config.lr_up : config.lr_down);
}

namespace {

// One online pass: per-sample updates in a seeded shuffled order. The returned
// gradient is the sum of the per-sample gradients seen during the pass.
BatchResult online_pass(Network& net, std::span<const Example> set, double eps, Rng& rng) {
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    BatchResult pass;
    pass.gradient = Parameters::zeros(net.spec());
    BatchResult item;
    for (std::size_t i : order) {
        item.loss = 0.0;
        item.errors = 0;
        item.gradient = Parameters::zeros(net.spec());
        accumulate(net, set[i], item);
        pass.loss += item.loss;
        pass.errors += item.errors;
        pass.gradient.add_scaled(item.gradient, 1.0);
        net.params().add_scaled(item.gradient, -eps);
    }
    return pass;
}

}  // namespace

TrainHistory train(Network& net, std::span<const Example> train_set, const TrainConfig& config,
                   const IterationCallback& on_iteration) {
    config.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    const auto start = std::chrono::steady_clock::now();

    TrainHistory history;
    Rng rng(mix_seed(config.seed, 0x0a11));
    double eps = config.epsilon0;
    // Loss the next iteration is compared against. Online passes measure loss
    // while updating, so their first reference is the untrained network's loss.
    double reference = std::numeric_limits<double>::infinity();
    if (config.mode == UpdateMode::Online) {
        reference = 0.0;
        for (const auto& ex : train_set) reference += loss(net.forward(ex.input), ex.label);
    }
    history.stop = StopReason::MaxIterations;
    for (int it = 0; it < config.max_iters; ++it) {
        BatchResult r;
        if (config.mode == UpdateMode::Online) {
            if (it > 0) {
                eps = next_step(eps, history.iterations.back().loss, reference, config);
                reference = history.iterations.back().loss;
            }
            r = online_pass(net, train_set, eps, rng);
        } else {
            r = backward(net, train_set, config.threads);
            if (it > 0) eps = next_step(eps, r.loss, reference, config);
            reference = r.loss;
        }

        IterationRecord rec;
        rec.iteration = it;
        rec.loss = r.loss;
        rec.train_error = static_cast<double>(r.errors) / static_cast<double>(train_set.size());
        rec.grad_norm = r.gradient.l2_norm();
        rec.learning_rate = eps;
        history.iterations.push_back(rec);
        if (on_iteration) on_iteration(rec);

        if (rec.train_error <= config.min_train_error) {
            history.stop = StopReason::TrainError;
            break;
        }
        if (rec.grad_norm < config.min_grad_norm) {
            history.stop = StopReason::GradientNorm;
            break;
        }
        if (config.mode == UpdateMode::FullBatch) net.params().add_scaled(r.gradient, -eps);
    }
    history.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return history;
}

Network train_new(const NetworkSpec& spec, std::span<const Example> train_set, const TrainConfig& config,
                  TrainHistory* history, const IterationCallback& on_iteration) {
    Network net = Network::random(spec, config.seed);
    TrainHistory h = train(net, train_set, config, on_iteration);
    if (history != nullptr) *history = std::move(h);
    return net;
}

Example make_example(const EyeFrame& frame, GazeClass label) {
    return {to_tensor(preprocess::prepare_cnn_input(frame)), label};
}

Prediction predict(const Network& net, const EyeFrame& frame) {
    Prediction p;
    p.scores = forward(net, preprocess::prepare_cnn_input(frame));
    p.probs = softmax(p.scores);
    p.gaze_class = class_at(argmax(p.scores));
    return p;
}

}  // namespace gazechair::cnn
