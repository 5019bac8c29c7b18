#include <doctest.h>

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "gazechair/cnn.hpp"
#include "gazechair/corpus.hpp"
#include "gradient_oracle.hpp"
#include "temp_dir.hpp"

using namespace gazechair;
using namespace gazechair::cnn;

namespace {

Tensor3 random_tensor(Shape3 s, Rng& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor3 t(s);
    for (double& v : t.values()) v = u(rng);
    return t;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n);
    for (double& e : v) e = u(rng);
    return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Numeric derivative of f with respect to v[i].
template <typename F>
double numeric(std::vector<double>& v, std::size_t i, F f, double h = 1e-6) {
    const double saved = v[i];
    v[i] = saved + h;
    const double up = f();
    v[i] = saved - h;
    const double down = f();
    v[i] = saved;
    return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("default shape chain") {
    const ShapeChain s = shape_chain(NetworkSpec{});
    CHECK(to_string(s.input) == "64x64x3");
    CHECK(to_string(s.conv1) == "62x62x16");
    CHECK(to_string(s.pool1) == "15x15x16");
    CHECK(to_string(s.conv2) == "13x13x12");
    CHECK(to_string(s.pool2) == "1x1x12");
    CHECK(to_string(s.fc1) == "1x1x16");
    CHECK(to_string(s.output) == "1x1x4");
}

TEST_CASE("shape errors") {
    NetworkSpec tiny;
    tiny.input_height = tiny.input_width = 4;
    CHECK_THROWS_AS(shape_chain(tiny), ShapeError);
    const Network net;
    CHECK_THROWS_AS(net.forward(Tensor3({32, 32, 3})), ShapeError);
}

TEST_CASE("zero network outputs zeros and uniform probabilities") {
    const Network net;
    const std::vector<double> out = net.forward(Tensor3({64, 64, 3}, 0.3));
    CHECK(out == std::vector<double>(4, 0.0));
    EyeFrame f;
    f.image = RgbImage(64, 64, 90);
    const Prediction p = predict(net, f);
    for (double q : p.probs) CHECK(q == doctest::Approx(0.25));
    CHECK(p.gaze_class == GazeClass::Right);
}

TEST_CASE("forward is deterministic") {
    const Network net = Network::random(NetworkSpec{}, 3);
    Rng rng(1);
    const Tensor3 x = random_tensor({64, 64, 3}, rng);
    CHECK(net.forward(x) == net.forward(x));
}

TEST_CASE("softmax, argmax, target encoding, loss") {
    const ProbVector p = softmax({1, 1, 1, 1});
    for (double v : p) CHECK(v == doctest::Approx(0.25));
    const ProbVector big = softmax({1000, 0, 0, 0});
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(std::isfinite(big[1]));

    const std::vector<double> tie{0.2, 0.7, 0.7, 0.1};
    CHECK(argmax(tie) == 1);
    CHECK(target_encoding(GazeClass::Left) == std::vector<double>{-1, -1, 1, -1});

    const std::vector<double> perfect{1, -1, -1, -1};
    CHECK(loss(perfect, GazeClass::Right) == 0.0);
    const std::vector<double> zeros(4, 0.0);
    CHECK(loss(zeros, GazeClass::Closed) == 4.0);
}

TEST_CASE("softmax sums to one") {
    Rng rng(2);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int trial = 0; trial < 100; ++trial) {
        const ProbVector p = softmax({u(rng), u(rng), u(rng), u(rng)});
        CHECK(p[0] + p[1] + p[2] + p[3] == doctest::Approx(1.0).epsilon(1e-12));
        for (double v : p) CHECK(v >= 0.0);
    }
}

TEST_CASE("layer: conv backward matches finite differences") {
    Rng rng(3);
    const int filters = 3, kernel = 3;
    Tensor3 x = random_tensor({7, 6, 2}, rng);
    std::vector<double> w = random_vec(filters * 2 * 9, rng), b = random_vec(filters, rng);
    const Tensor3 g = random_tensor({5, 4, filters}, rng);
    auto objective = [&] { return dot(layers::conv_forward(x, w, b, filters, kernel).values(), g.values()); };

    std::vector<double> wg(w.size(), 0.0), bg(b.size(), 0.0);
    Tensor3 xg;
    layers::conv_backward(x, g, w, kernel, wg, bg, &xg);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(wg[i] == doctest::Approx(numeric(w, i, objective)).epsilon(1e-6));
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(bg[i] == doctest::Approx(numeric(b, i, objective)).epsilon(1e-6));
    std::vector<double> xv(x.values().begin(), x.values().end());
    auto objective_x = [&] {
        Tensor3 t(x.shape(), xv);
        return dot(layers::conv_forward(t, w, b, filters, kernel).values(), g.values());
    };
    for (std::size_t i = 0; i < xv.size(); ++i)
        CHECK(xg.values()[i] == doctest::Approx(numeric(xv, i, objective_x)).epsilon(1e-6));
}

TEST_CASE("layer: conv forward matches a direct sum") {
    Rng rng(4);
    const Tensor3 x = random_tensor({6, 5, 2}, rng);
    const std::vector<double> w = random_vec(2 * 2 * 9, rng), b = random_vec(2, rng);
    const Tensor3 y = layers::conv_forward(x, w, b, 2, 3);
    for (int o = 0; o < 2; ++o)
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 3; ++c) {
                double s = b[o];
                for (int i = 0; i < 2; ++i)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) s += w[((o * 2 + i) * 3 + ky) * 3 + kx] * x.at(i, r + ky, c + kx);
                CHECK(y.at(o, r, c) == doctest::Approx(s).epsilon(1e-12));
            }
}

TEST_CASE("layer: maxpool backward matches finite differences") {
    Rng rng(5);
    const Tensor3 x = random_tensor({9, 8, 2}, rng);
    std::vector<std::size_t> arg;
    const Tensor3 y = layers::maxpool_forward(x, 4, 4, arg);
    CHECK(to_string(y.shape()) == "2x2x2");
    const Tensor3 g = random_tensor(y.shape(), rng);
    const Tensor3 xg = layers::maxpool_backward(x.shape(), g, arg);
    std::vector<double> xv(x.values().begin(), x.values().end());
    auto objective = [&] {
        std::vector<std::size_t> a;
        return dot(layers::maxpool_forward(Tensor3(x.shape(), xv), 4, 4, a).values(), g.values());
    };
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(xg.values()[i] == doctest::Approx(numeric(xv, i, objective)));
}

TEST_CASE("layer: maxpool keeps the first maximum") {
    std::vector<std::size_t> arg;
    const Tensor3 x({2, 2, 1}, 1.0);
    layers::maxpool_forward(x, 2, 2, arg);
    CHECK(arg == std::vector<std::size_t>{0});
}

TEST_CASE("layer: fused conv+pool backward equals the two-step path") {
    Rng rng(6);
    const int filters = 3;
    const Tensor3 x = random_tensor({11, 10, 2}, rng);
    const std::vector<double> w = random_vec(filters * 2 * 9, rng), b = random_vec(filters, rng);
    const Tensor3 conv = layers::conv_forward(x, w, b, filters, 3);
    std::vector<std::size_t> arg;
    const Tensor3 pooled = layers::maxpool_forward(conv, 2, 2, arg);
    const Tensor3 g = random_tensor(pooled.shape(), rng);

    std::vector<double> wg1(w.size(), 0), bg1(b.size(), 0), wg2(w.size(), 0), bg2(b.size(), 0);
    Tensor3 xg1, xg2;
    layers::conv_backward(x, layers::maxpool_backward(conv.shape(), g, arg), w, 3, wg1, bg1, &xg1);
    layers::conv_pool_backward(x, conv.shape(), g, arg, w, 3, wg2, bg2, &xg2);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(wg2[i] == doctest::Approx(wg1[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(bg2[i] == doctest::Approx(bg1[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < xg1.values().size(); ++i)
        CHECK(xg2.values()[i] == doctest::Approx(xg1.values()[i]).epsilon(1e-12));
}

TEST_CASE("layer: dense and tanh backward match finite differences") {
    Rng rng(7);
    std::vector<double> x = random_vec(5, rng), w = random_vec(15, rng), b = random_vec(3, rng);
    const std::vector<double> g = random_vec(3, rng);
    auto objective = [&] {
        std::vector<double> y = layers::dense_forward(x, w, b);
        layers::tanh_inplace(y);
        return dot(y, g);
    };
    std::vector<double> y = layers::dense_forward(x, w, b);
    layers::tanh_inplace(y);
    std::vector<double> dy = g;
    layers::tanh_backward(y, dy);
    std::vector<double> wg(w.size(), 0), bg(b.size(), 0), xg(x.size(), 0);
    layers::dense_backward(x, dy, w, wg, bg, xg);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(wg[i] == doctest::Approx(numeric(w, i, objective)).epsilon(1e-6));
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(bg[i] == doctest::Approx(numeric(b, i, objective)).epsilon(1e-6));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(xg[i] == doctest::Approx(numeric(x, i, objective)).epsilon(1e-6));
}

TEST_CASE("full gradient matches finite differences on the reduced network") {
    const NetworkSpec spec = test::reduced_spec();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        const Network net = Network::random(spec, seed, 0.5);
        const auto batch = test::random_batch(spec, 3, rng);
        const auto r = test::check_gradient(net, batch);
        INFO("seed " << seed << " worst " << r.worst_tensor);
        CHECK(r.max_rel_err < 1e-4);
    }
    // Both pools non-trivial.
    NetworkSpec wide = spec;
    wide.pool1_factor = 1;
    Rng rng(99);
    const Network net = Network::random(wide, 99, 0.5);
    CHECK(test::check_gradient(net, test::random_batch(wide, 2, rng)).max_rel_err < 1e-4);
}

TEST_CASE("batch gradient is additive and thread-independent") {
    const NetworkSpec spec = test::reduced_spec();
    Rng rng(8);
    const Network net = Network::random(spec, 8, 0.5);
    auto batch = test::random_batch(spec, 70, rng);
    const BatchResult once = backward(net, batch);
    const BatchResult threaded = backward(net, batch, 4);
    CHECK(threaded.loss == once.loss);
    CHECK(threaded.gradient.conv1_w == once.gradient.conv1_w);
    CHECK(threaded.gradient.out_b == once.gradient.out_b);

    auto doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const BatchResult twice = backward(net, doubled);
    CHECK(twice.loss == doctest::Approx(2 * once.loss));
    for (std::size_t i = 0; i < once.gradient.conv2_w.size(); ++i)
        CHECK(twice.gradient.conv2_w[i] == doctest::Approx(2 * once.gradient.conv2_w[i]));
}

TEST_CASE("zero input and biases give zero conv weight gradients") {
    const NetworkSpec spec = test::reduced_spec();
    Network net = Network::random(spec, 9, 0.5);
    std::fill(net.params().conv1_b.begin(), net.params().conv1_b.end(), 0.0);
    std::fill(net.params().conv2_b.begin(), net.params().conv2_b.end(), 0.0);
    const std::vector<Example> batch{{Tensor3({8, 8, 1}), GazeClass::Left}};
    const BatchResult r = backward(net, batch);
    for (double v : r.gradient.conv1_w) CHECK(v == 0.0);
    for (double v : r.gradient.conv2_w) CHECK(v == 0.0);
}

TEST_CASE("step adaptation") {
    const TrainConfig cfg;
    CHECK(next_step(0.001, 9.0, 10.0, cfg) == doctest::Approx(0.00105));
    CHECK(next_step(0.001, 11.0, 10.0, cfg) == doctest::Approx(0.0007));
    CHECK(next_step(0.001, 10.0, 10.0, cfg) == doctest::Approx(0.0007));
}

TEST_CASE("training config validation") {
    TrainConfig cfg;
    cfg.lr_down = 1.2;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.epsilon0 = 0;
    CHECK_THROWS(cfg.validate());
}

namespace {

// Two easily separated classes: bright left half vs bright right half.
std::vector<Example> toy_set(const NetworkSpec& spec, int n, Rng& rng) {
    std::normal_distribution<double> noise(0, 0.1);
    std::vector<Example> out;
    for (int i = 0; i < n; ++i) {
        const bool right = i % 2 == 0;
        Tensor3 t({spec.input_height, spec.input_width, spec.input_channels});
        for (int y = 0; y < spec.input_height; ++y)
            for (int x = 0; x < spec.input_width; ++x)
                t.at(0, y, x) = ((x >= spec.input_width / 2) == right ? 1.0 : -1.0) + noise(rng);
        out.push_back({std::move(t), right ? GazeClass::Right : GazeClass::Left});
    }
    return out;
}

}  // namespace

TEST_CASE("training converges on a separable toy set in both modes") {
    const NetworkSpec spec = test::reduced_spec();
    Rng rng(10);
    const auto set = toy_set(spec, 40, rng);
    for (UpdateMode mode : {UpdateMode::Online, UpdateMode::FullBatch}) {
        TrainConfig cfg;
        cfg.mode = mode;
        cfg.epsilon0 = mode == UpdateMode::Online ? 0.01 : 0.002;
        cfg.seed = 4;
        TrainHistory h;
        const Network net = train_new(spec, set, cfg, &h);
        CHECK(h.stop == StopReason::TrainError);
        CHECK(h.iterations.back().train_error <= 0.01);
        CHECK(h.iterations.size() < 100);

        // Recorded steps obey the adaptation rule.
        for (std::size_t i = 1; i < h.iterations.size(); ++i) {
            const double prev_step = h.iterations[i - 1].learning_rate;
            const double step = h.iterations[i].learning_rate;
            CHECK((step == doctest::Approx(prev_step * 1.05) || step == doctest::Approx(prev_step * 0.70)));
        }
        if (mode == UpdateMode::FullBatch) {
            for (std::size_t i = 1; i < h.iterations.size(); ++i) {
                const bool decreased = h.iterations[i].loss < h.iterations[i - 1].loss;
                CHECK(h.iterations[i].learning_rate ==
                      doctest::Approx(h.iterations[i - 1].learning_rate * (decreased ? 1.05 : 0.70)));
            }
        }
        CHECK(h.iterations.front().learning_rate == doctest::Approx(cfg.epsilon0));
    }
}

TEST_CASE("training stops at the iteration cap") {
    const NetworkSpec spec = test::reduced_spec();
    Rng rng(11);
    const auto set = test::random_batch(spec, 20, rng);
    TrainConfig cfg;
    cfg.max_iters = 3;
    cfg.min_grad_norm = 1e-12;
    TrainHistory h;
    train_new(spec, set, cfg, &h);
    CHECK(h.iterations.size() == 3);
    CHECK(h.stop == StopReason::MaxIterations);
}

TEST_CASE("training is deterministic for a fixed seed") {
    const NetworkSpec spec = test::reduced_spec();
    Rng rng(12);
    const auto set = toy_set(spec, 20, rng);
    TrainConfig cfg;
    cfg.max_iters = 4;
    const Network a = train_new(spec, set, cfg);
    const Network b = train_new(spec, set, cfg);
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("network round-trips through JSON bit-exactly") {
    test::TempDir dir;
    const Network net = Network::random(NetworkSpec{}, 13);
    net.save(dir.path() / "net.json");
    const Network back = Network::load(dir.path() / "net.json");
    CHECK(back.spec() == net.spec());
    CHECK(back.params().conv1_w == net.params().conv1_w);
    CHECK(back.params().out_b == net.params().out_b);
    Rng rng(13);
    const Tensor3 x = random_tensor({64, 64, 3}, rng);
    CHECK(back.forward(x) == net.forward(x));
}

TEST_CASE("loading rejects malformed or mismatched files") {
    CHECK_THROWS(Network::from_json("{}"));
    CHECK_THROWS(Network::from_json("not json"));
    auto j = nlohmann::json::parse(Network::random(test::reduced_spec(), 1).to_json());
    j["params"]["conv1_w"].erase(0);
    CHECK_THROWS(Network::from_json(j.dump()));
}

TEST_CASE("predict on a synthetic frame returns a distribution") {
    const Network net = Network::random(NetworkSpec{}, 14);
    corpus::SynthParams p;
    p.width = 120;
    p.height = 90;
    const Prediction pr = predict(net, corpus::synth_eye(p));
    double s = 0;
    for (double v : pr.probs) s += v;
    CHECK(s == doctest::Approx(1.0));
    CHECK(pr.gaze_class == class_at(argmax(pr.scores)));
}

TEST_CASE("train config JSON") {
    const auto c = cnn::train_config_from_json(nlohmann::json::parse(
        R"({"mode": "full_batch", "epsilon0": 0.01, "max_iters": 7, "seed": 3, "min_train_error": 0.05})"));
    CHECK(c.mode == cnn::UpdateMode::FullBatch);
    CHECK(c.epsilon0 == 0.01);
    CHECK(c.max_iters == 7);
    CHECK(c.seed == 3);
    CHECK(c.lr_up == 1.05);
    const auto back = cnn::train_config_from_json(cnn::train_config_to_json(c));
    CHECK(back.mode == c.mode);
    CHECK(back.min_train_error == c.min_train_error);
    CHECK_THROWS_AS(cnn::train_config_from_json(nlohmann::json::parse(R"({"iters": 3})")), std::invalid_argument);
    CHECK_THROWS_AS(cnn::train_config_from_json(nlohmann::json::parse(R"({"mode": "sgd"})")), std::invalid_argument);
    CHECK_THROWS_AS(cnn::train_config_from_json(nlohmann::json::parse(R"({"max_iters": 0})")), std::invalid_argument);
    CHECK_THROWS_AS(cnn::train_config_from_json(nlohmann::json::parse(R"({"seed": "x"})")), std::invalid_argument);

    cnn::TrainHistory h;
    h.iterations.push_back({0, 2.0, 0.5, 1.0, 0.001});
    h.stop = cnn::StopReason::TrainError;
    const auto j = cnn::history_to_json(h);
    CHECK(j["stop"] == cnn::to_string(cnn::StopReason::TrainError));
    CHECK(j["iterations"].size() == 1);
    CHECK(j["iterations"][0]["train_error"] == 0.5);
}
