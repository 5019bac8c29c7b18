#include "gazechair/control.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace gazechair::control {

std::string_view to_string(Command c) {
    switch (c) {
        case Command::Stop: return "stop";
        case Command::Forward: return "forward";
        case Command::Left: return "left";
        case Command::Right: return "right";
    }
    return "stop";
}

std::optional<Command> parse_command(std::string_view name) {
    for (Command c : kAllCommands) {
        if (to_string(c) == name) return c;
    }
    return std::nullopt;
}

void ServoTable::validate() const {
    if (a_neutral == a_deflected || b_neutral == b_deflected) {
        throw ControlError("servo table: neutral and deflected angles must differ");
    }
}

ServoPositions command_to_servo(Command c, const ServoTable& t) {
    switch (c) {
        case Command::Stop: return {t.a_neutral, t.b_neutral};
        case Command::Forward: return {t.a_deflected, t.b_deflected};
        case Command::Left: return {t.a_deflected, t.b_neutral};
        case Command::Right: return {t.a_neutral, t.b_deflected};
    }
    return {t.a_neutral, t.b_neutral};
}

std::optional<Command> servo_to_command(const ServoPositions& p, const ServoTable& table) {
    for (Command c : kAllCommands) {
        if (command_to_servo(c, table) == p) return c;
    }
    return std::nullopt;
}

void ControlConfig::validate() const {
    if (window < 1) throw ControlError("control config: window must be >= 1");
    if (majority < 1 || majority > window) throw ControlError("control config: need 1 <= majority <= window");
    if (wink_frames < 1) throw ControlError("control config: wink_frames must be >= 1");
    if (!(cruise_speed >= 0 && cruise_speed <= safety::kMaxChairSpeed)) {
        throw ControlError("control config: cruise_speed must be in [0, 5.56] m/s");
    }
    if (!(turn_rate >= 0) || !std::isfinite(turn_rate)) throw ControlError("control config: bad turn_rate");
    if (!(tick_rate > 0) || !std::isfinite(tick_rate)) throw ControlError("control config: tick_rate must be > 0");
    servos.validate();
}

nlohmann::json config_to_json(const ControlConfig& c) {
    return {{"window", c.window},
            {"majority", c.majority},
            {"wink_frames", c.wink_frames},
            {"cruise_speed", c.cruise_speed},
            {"turn_rate", c.turn_rate},
            {"tick_rate", c.tick_rate},
            {"start_engaged", c.start_engaged},
            {"servos",
             {{"a_neutral", c.servos.a_neutral},
              {"a_deflected", c.servos.a_deflected},
              {"b_neutral", c.servos.b_neutral},
              {"b_deflected", c.servos.b_deflected}}}};
}

ControlConfig config_from_json(const nlohmann::json& j, ControlConfig c) {
    if (!j.is_object()) throw ControlError("control config: expected an object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "window") c.window = value.get<int>();
            else if (key == "majority") c.majority = value.get<int>();
            else if (key == "wink_frames") c.wink_frames = value.get<int>();
            else if (key == "cruise_speed") c.cruise_speed = value.get<double>();
            else if (key == "turn_rate") c.turn_rate = value.get<double>();
            else if (key == "tick_rate") c.tick_rate = value.get<double>();
            else if (key == "start_engaged") c.start_engaged = value.get<bool>();
            else if (key == "servos") {
                for (const auto& [sk, sv] : value.items()) {
                    if (sk == "a_neutral") c.servos.a_neutral = sv.get<double>();
                    else if (sk == "a_deflected") c.servos.a_deflected = sv.get<double>();
                    else if (sk == "b_neutral") c.servos.b_neutral = sv.get<double>();
                    else if (sk == "b_deflected") c.servos.b_deflected = sv.get<double>();
                    else throw ControlError("control config: unknown servo key '" + sk + "'");
                }
            } else {
                throw ControlError("control config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ControlError(std::string("control config: ") + e.what());
    }
    c.validate();
    return c;
}

FusedResult fuse(GazeClass left, GazeClass right) {
    if (left == right) return left;
    return std::nullopt;
}

std::string_view fused_name(const FusedResult& f) { return f ? to_string(*f) : std::string_view("disagree"); }

Command class_to_command(GazeClass c) {
    switch (c) {
        case GazeClass::Forward: return Command::Forward;
        case GazeClass::Left: return Command::Left;
        case GazeClass::Right: return Command::Right;
        case GazeClass::Closed: return Command::Stop;
    }
    return Command::Stop;
}

Command aggregate(std::span<const FusedResult> window, const ControlConfig& config) {
    if (window.size() != static_cast<std::size_t>(config.window)) {
        throw ControlError("aggregate: window length " + std::to_string(window.size()) + " != " +
                           std::to_string(config.window));
    }
    std::array<int, kNumClasses> votes{};
    for (const auto& f : window) {
        if (f) ++votes[index_of(*f)];
    }
    // Lowest class wins a tie, which only arises when majority <= window / 2.
    const auto best = std::max_element(votes.begin(), votes.end());
    if (*best < config.majority) return Command::Stop;
    return class_to_command(class_at(static_cast<std::size_t>(best - votes.begin())));
}

WinkDetector::WinkDetector(int wink_frames) : wink_frames_(wink_frames) {
    if (wink_frames < 1) throw ControlError("wink detector: K must be >= 1");
}

bool WinkDetector::push(GazeClass left, GazeClass right) {
    if (left != GazeClass::Closed || right == GazeClass::Closed) {
        interrupt();
        return false;
    }
    ++run_;
    if (armed_ && run_ >= wink_frames_) {
        armed_ = false;
        return true;
    }
    return false;
}

void WinkDetector::interrupt() {
    run_ = 0;
    armed_ = true;
}

void WinkDetector::reset() { interrupt(); }

ChairState step_kinematics(const ChairState& state, Command cmd, double dt, const ControlConfig& config) {
    if (!(dt > 0)) throw ControlError("step_kinematics: dt must be positive");
    ChairState next = state;
    next.speed = 0.0;
    switch (cmd) {
        case Command::Stop: break;
        case Command::Forward: {
            next.speed = std::clamp(config.cruise_speed, 0.0, safety::kMaxChairSpeed);
            next.x += next.speed * dt * std::cos(state.heading);
            next.y += next.speed * dt * std::sin(state.heading);
            break;
        }
        case Command::Left: next.heading += config.turn_rate * dt; break;
        case Command::Right: next.heading -= config.turn_rate * dt; break;
    }
    return next;
}

DecisionCore::DecisionCore(const ControlConfig& config) : config_(config) {
    config_.validate();
    window_.reserve(static_cast<std::size_t>(config_.window));
}

Command DecisionCore::step(const FusedResult& fused, bool engaged, bool emergency) {
    if (emergency || !engaged) {
        reset();
        return Command::Stop;
    }
    window_.push_back(fused);
    if (window_.size() == static_cast<std::size_t>(config_.window)) {
        held_ = aggregate(window_, config_);
        window_.clear();
    }
    return held_;
}

void DecisionCore::reset() {
    window_.clear();
    held_ = Command::Stop;
}

namespace {

nlohmann::json eye_json(const std::optional<EyeReading>& r) {
    if (!r) return {{"class", nullptr}, {"probs", nullptr}};
    nlohmann::json probs = nullptr;
    if (r->probs) probs = nlohmann::json(*r->probs);
    return {{"class", to_string(r->gaze_class)}, {"probs", probs}};
}

}  // namespace

nlohmann::json telemetry_to_json(const Telemetry& t) {
    nlohmann::json j;
    j["tick"] = t.tick;
    j["left"] = eye_json(t.left);
    j["right"] = eye_json(t.right);
    j["fused"] = fused_name(t.fused);
    j["command"] = to_string(t.command);
    j["engaged"] = t.engaged;
    j["emergency_stop"] = t.emergency_stop;
    j["min_distance_m"] = t.min_distance_m ? nlohmann::json(*t.min_distance_m) : nlohmann::json(nullptr);
    j["pose"] = {{"x", t.pose.x}, {"y", t.pose.y}, {"heading", t.pose.heading}};
    return j;
}

Controller::Controller(ControlConfig config, ChairState initial)
    : config_(config), initial_(initial), state_(initial), wink_(config.wink_frames), core_(config) {
    config_.validate();
    if (config_.start_engaged) initial_.engaged = true;
    state_ = initial_;
}

Telemetry Controller::tick(const std::optional<EyeReading>& left, const std::optional<EyeReading>& right,
                           const safety::SafetyState& safety) {
    Telemetry t;
    t.tick = tick_++;
    t.left = left;
    t.right = right;

    bool toggled = false;
    if (left && right) {
        toggled = wink_.push(left->gaze_class, right->gaze_class);
        t.fused = fuse(left->gaze_class, right->gaze_class);
    } else {
        wink_.interrupt();
    }
    if (toggled) {
        state_.engaged = !state_.engaged;
        core_.reset();
    }

    t.emergency_stop = safety.emergency_stop;
    t.min_distance_m = safety.min_distance;
    // The wink frame itself never moves the chair.
    t.command = toggled ? Command::Stop : core_.step(t.fused, state_.engaged, safety.emergency_stop);

    state_ = step_kinematics(state_, t.command, 1.0 / config_.tick_rate, config_);
    t.engaged = state_.engaged;
    t.pose = state_.pose();
    return t;
}

void Controller::reset() {
    state_ = initial_;
    wink_.reset();
    core_.reset();
    tick_ = 0;
}

}  // namespace gazechair::control
