#include <doctest.h>

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "gazechair/control.hpp"
#include "gazechair/rng.hpp"

using namespace gazechair;
using namespace gazechair::control;

namespace {

std::vector<FusedResult> window_of(std::initializer_list<std::pair<int, FusedResult>> runs) {
    std::vector<FusedResult> w;
    for (const auto& [n, f] : runs) w.insert(w.end(), static_cast<std::size_t>(n), f);
    return w;
}

EyeReading eye(GazeClass c) { return {c, std::nullopt}; }

safety::SafetyState clear() { return {}; }

safety::SafetyState blocked(double d) {
    safety::SafetyState s;
    s.emergency_stop = true;
    s.min_distance = d;
    return s;
}

}  // namespace

TEST_CASE("fuse") {
    CHECK(fuse(GazeClass::Right, GazeClass::Right) == FusedResult(GazeClass::Right));
    CHECK_FALSE(fuse(GazeClass::Right, GazeClass::Left).has_value());
    CHECK(fuse(GazeClass::Closed, GazeClass::Closed) == FusedResult(GazeClass::Closed));
    for (GazeClass a : kAllClasses)
        for (GazeClass b : kAllClasses) CHECK(fuse(a, b).has_value() == fuse(b, a).has_value());
    CHECK(fused_name(std::nullopt) == "disagree");
}

TEST_CASE("wink detector") {
    WinkDetector w(15);
    int toggles = 0;
    for (int i = 0; i < 15; ++i) toggles += w.push(GazeClass::Closed, GazeClass::Forward);
    CHECK(toggles == 1);

    WinkDetector blink(15);
    toggles = 0;
    for (int i = 0; i < 15; ++i) toggles += blink.push(GazeClass::Closed, GazeClass::Closed);
    CHECK(toggles == 0);

    WinkDetector held(15);
    toggles = 0;
    for (int i = 0; i < 30; ++i) toggles += held.push(GazeClass::Closed, GazeClass::Forward);
    CHECK(toggles == 1);

    // Two winks separated by an open frame toggle twice.
    WinkDetector twice(3);
    toggles = 0;
    for (int i = 0; i < 3; ++i) toggles += twice.push(GazeClass::Closed, GazeClass::Left);
    toggles += twice.push(GazeClass::Forward, GazeClass::Forward);
    for (int i = 0; i < 3; ++i) toggles += twice.push(GazeClass::Closed, GazeClass::Left);
    CHECK(toggles == 2);

    // A blink in the middle restarts the count.
    WinkDetector broken(5);
    toggles = 0;
    for (int i = 0; i < 4; ++i) toggles += broken.push(GazeClass::Closed, GazeClass::Forward);
    toggles += broken.push(GazeClass::Closed, GazeClass::Closed);
    for (int i = 0; i < 4; ++i) toggles += broken.push(GazeClass::Closed, GazeClass::Forward);
    CHECK(toggles == 0);
    // Right-eye wink is not the toggle.
    WinkDetector right(2);
    CHECK_FALSE(right.push(GazeClass::Forward, GazeClass::Closed));
    CHECK_FALSE(right.push(GazeClass::Forward, GazeClass::Closed));
}

TEST_CASE("aggregate") {
    const ControlConfig cfg;
    CHECK(aggregate(window_of({{10, GazeClass::Forward}}), cfg) == Command::Forward);
    CHECK(aggregate(window_of({{5, GazeClass::Left}, {5, std::nullopt}}), cfg) == Command::Stop);
    CHECK(aggregate(window_of({{6, GazeClass::Right}, {4, GazeClass::Left}}), cfg) == Command::Right);
    CHECK(aggregate(window_of({{10, GazeClass::Closed}}), cfg) == Command::Stop);
    CHECK(aggregate(window_of({{10, std::nullopt}}), cfg) == Command::Stop);
    CHECK_THROWS_AS(aggregate(window_of({{9, GazeClass::Forward}}), cfg), ControlError);
}

TEST_CASE("aggregate is permutation-invariant") {
    const ControlConfig cfg;
    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<FusedResult> w;
        for (int i = 0; i < 10; ++i) {
            const auto k = rng() % 5;
            w.push_back(k == 4 ? FusedResult{} : FusedResult{class_at(k)});
        }
        const Command expected = aggregate(w, cfg);
        std::shuffle(w.begin(), w.end(), rng);
        CHECK(aggregate(w, cfg) == expected);
    }
}

TEST_CASE("servo mapping is a bijection") {
    std::set<std::pair<double, double>> seen;
    for (Command c : kAllCommands) {
        const ServoPositions p = command_to_servo(c);
        seen.insert({p.servo_a, p.servo_b});
        CHECK(servo_to_command(p) == c);
    }
    CHECK(seen.size() == 4);
    CHECK(command_to_servo(Command::Stop) == ServoPositions{90, 90});
    CHECK_FALSE(command_to_servo(Command::Forward) == command_to_servo(Command::Stop));
    CHECK_FALSE(servo_to_command({0, 0}).has_value());
    ServoTable bad;
    bad.b_deflected = bad.b_neutral;
    CHECK_THROWS_AS(bad.validate(), ControlError);
}

TEST_CASE("kinematics") {
    ControlConfig cfg;
    cfg.cruise_speed = 1.0;
    const ChairState s{};
    const ChairState f = step_kinematics(s, Command::Forward, 0.1, cfg);
    CHECK(f.x == doctest::Approx(0.1));
    CHECK(f.y == 0.0);
    CHECK(f.speed == 1.0);

    const ChairState start{1.0, 2.0, 0.3, 0.7, true};
    const ChairState stopped = step_kinematics(start, Command::Stop, 0.5, cfg);
    CHECK(stopped.x == start.x);
    CHECK(stopped.y == start.y);
    CHECK(stopped.heading == start.heading);
    CHECK(stopped.speed == 0.0);

    const ChairState left = step_kinematics(s, Command::Left, safety::kPi / (2 * cfg.turn_rate), cfg);
    CHECK(left.heading == doctest::Approx(safety::kPi / 2));
    CHECK(left.x == 0.0);
    const ChairState right = step_kinematics(s, Command::Right, 1.0, cfg);
    CHECK(right.heading == doctest::Approx(-cfg.turn_rate));
    CHECK_THROWS_AS(step_kinematics(s, Command::Stop, 0.0, cfg), ControlError);

    cfg.cruise_speed = 6.0;
    CHECK_THROWS_AS(cfg.validate(), ControlError);
}

TEST_CASE("speed never exceeds the cap") {
    ControlConfig cfg;
    cfg.cruise_speed = safety::kMaxChairSpeed;
    Rng rng(2);
    ChairState s;
    for (int i = 0; i < 1000; ++i) {
        s = step_kinematics(s, kAllCommands[rng() % 4], 0.05, cfg);
        CHECK(s.speed <= safety::kMaxChairSpeed);
        CHECK(s.speed >= 0.0);
    }
}

TEST_CASE("config validation and JSON") {
    ControlConfig cfg;
    cfg.majority = 11;
    CHECK_THROWS_AS(cfg.validate(), ControlError);
    cfg = {};
    cfg.wink_frames = 0;
    CHECK_THROWS_AS(cfg.validate(), ControlError);

    const auto j = nlohmann::json::parse(R"({"window": 5, "majority": 3, "start_engaged": true})");
    const ControlConfig c = config_from_json(j);
    CHECK(c.window == 5);
    CHECK(c.majority == 3);
    CHECK(c.start_engaged);
    CHECK(c.wink_frames == 15);
    CHECK(config_from_json(config_to_json(c)).window == 5);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"windw": 5})")), ControlError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"window": "x"})")), ControlError);
}

TEST_CASE("controller: not engaged means Stop") {
    Controller ctl;
    for (int i = 0; i < 30; ++i) {
        const Telemetry t = ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), clear());
        CHECK(t.command == Command::Stop);
        CHECK_FALSE(t.engaged);
    }
    CHECK(ctl.state().x == 0.0);
}

TEST_CASE("controller: wink engages, ten agreed Forward frames drive") {
    ControlConfig cfg;
    Controller ctl(cfg);
    Telemetry t;
    for (int i = 0; i < cfg.wink_frames; ++i) t = ctl.tick(eye(GazeClass::Closed), eye(GazeClass::Forward), clear());
    CHECK(t.engaged);
    CHECK(t.command == Command::Stop);
    for (int i = 0; i < 9; ++i) {
        t = ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), clear());
        CHECK(t.command == Command::Stop);
    }
    t = ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), clear());
    CHECK(t.command == Command::Forward);
    CHECK(t.pose.x == doctest::Approx(cfg.cruise_speed / cfg.tick_rate));
    // Held until the next window completes.
    t = ctl.tick(eye(GazeClass::Left), eye(GazeClass::Right), clear());
    CHECK(t.command == Command::Forward);
    CHECK(t.fused == std::nullopt);

    // Second wink disengages.
    for (int i = 0; i < cfg.wink_frames; ++i) t = ctl.tick(eye(GazeClass::Closed), eye(GazeClass::Left), clear());
    CHECK_FALSE(t.engaged);
    CHECK(t.command == Command::Stop);
}

TEST_CASE("controller: obstacle overrides Forward gaze") {
    ControlConfig cfg;
    cfg.start_engaged = true;
    Controller ctl(cfg);
    Telemetry t;
    for (int i = 0; i < 10; ++i) t = ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), clear());
    CHECK(t.command == Command::Forward);
    t = ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), blocked(0.5));
    CHECK(t.command == Command::Stop);
    CHECK(t.emergency_stop);
    REQUIRE(t.min_distance_m);
    CHECK(*t.min_distance_m == 0.5);
    const double x = t.pose.x;
    t = ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), clear());
    CHECK(t.command == Command::Stop);  // fresh window after the stop
    CHECK(t.pose.x == x);
}

TEST_CASE("controller: classifier failure counts as disagreement") {
    ControlConfig cfg;
    cfg.start_engaged = true;
    Controller ctl(cfg);
    Telemetry t;
    for (int i = 0; i < 10; ++i) t = ctl.tick(std::nullopt, eye(GazeClass::Forward), clear());
    CHECK(t.command == Command::Stop);
    CHECK_FALSE(t.fused.has_value());
}

TEST_CASE("controller: blink while driving stops at the next window") {
    ControlConfig cfg;
    cfg.start_engaged = true;
    Controller ctl(cfg);
    Telemetry t;
    for (int i = 0; i < 10; ++i) t = ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), clear());
    CHECK(t.command == Command::Forward);
    for (int i = 0; i < 10; ++i) t = ctl.tick(eye(GazeClass::Closed), eye(GazeClass::Closed), clear());
    CHECK(t.command == Command::Stop);
    CHECK(t.engaged);
}

TEST_CASE("controller: reset restores the initial state") {
    ControlConfig cfg;
    cfg.start_engaged = true;
    Controller ctl(cfg);
    for (int i = 0; i < 25; ++i) ctl.tick(eye(GazeClass::Forward), eye(GazeClass::Forward), clear());
    ctl.reset();
    CHECK(ctl.ticks() == 0);
    CHECK(ctl.state().x == 0.0);
    CHECK(ctl.state().engaged);
    CHECK(ctl.pending() == 0);
}

TEST_CASE("telemetry JSON schema") {
    Telemetry t;
    t.tick = 7;
    t.left = EyeReading{GazeClass::Right, ProbVector{0.7, 0.1, 0.1, 0.1}};
    t.right = eye(GazeClass::Right);
    t.fused = GazeClass::Right;
    t.command = Command::Right;
    const auto j = telemetry_to_json(t);
    CHECK(j["tick"] == 7);
    CHECK(j["left"]["class"] == "right");
    CHECK(j["left"]["probs"].size() == 4);
    CHECK(j["right"]["probs"].is_null());
    CHECK(j["fused"] == "right");
    CHECK(j["command"] == "right");
    CHECK(j["min_distance_m"].is_null());
    CHECK(j["pose"].contains("heading"));
    t.left.reset();
    CHECK(telemetry_to_json(t)["left"]["class"].is_null());
}

TEST_CASE("no motion from disagreement, small exhaustive sweep") {
    // Every 3-valued window of length 6 with majority 4.
    ControlConfig cfg;
    cfg.window = 6;
    cfg.majority = 4;
    const std::array<FusedResult, 3> values{FusedResult{}, GazeClass::Forward, GazeClass::Left};
    for (int code = 0; code < 729; ++code) {
        std::vector<FusedResult> w;
        int agreed = 0;
        for (int i = 0, c = code; i < 6; ++i, c /= 3) {
            w.push_back(values[c % 3]);
            agreed += values[c % 3].has_value();
        }
        if (agreed == 0) CHECK(aggregate(w, cfg) == Command::Stop);
        DecisionCore core(cfg);
        for (const auto& f : w) CHECK(core.step(f, true, true) == Command::Stop);
    }
}
