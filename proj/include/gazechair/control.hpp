#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gazechair/gaze_class.hpp"
#include "gazechair/safety.hpp"

namespace gazechair::control {

class ControlError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Command { Stop = 0, Forward = 1, Left = 2, Right = 3 };
inline constexpr std::array<Command, 4> kAllCommands = {Command::Stop, Command::Forward, Command::Left,
                                                        Command::Right};

std::string_view to_string(Command c);
std::optional<Command> parse_command(std::string_view name);

struct ServoPositions {
    double servo_a = 90.0;  // degrees
    double servo_b = 90.0;
    bool operator==(const ServoPositions&) const = default;
};

// Each servo has a neutral and a deflected angle; the four combinations name
// the four commands. Stop is both neutral.
struct ServoTable {
    double a_neutral = 90.0, a_deflected = 60.0;
    double b_neutral = 90.0, b_deflected = 120.0;
    void validate() const;
};

ServoPositions command_to_servo(Command c, const ServoTable& table = {});
std::optional<Command> servo_to_command(const ServoPositions& p, const ServoTable& table = {});

struct ChairState {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;  // radians, CCW
    double speed = 0.0;    // m/s
    bool engaged = false;
    safety::Pose pose() const { return {x, y, heading}; }
    bool operator==(const ChairState&) const = default;
};

struct ControlConfig {
    int window = 10;
    int majority = 6;
    int wink_frames = 15;
    double cruise_speed = 1.0;       // m/s
    double turn_rate = 0.7853981633974483;  // rad/s (45 deg/s)
    double tick_rate = 30.0;         // Hz
    bool start_engaged = false;
    ServoTable servos;
    void validate() const;
};

nlohmann::json config_to_json(const ControlConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ControlConfig config_from_json(const nlohmann::json& j, ControlConfig base = {});

// Agreed class, or empty for disagreement.
using FusedResult = std::optional<GazeClass>;

FusedResult fuse(GazeClass left, GazeClass right);
std::string_view fused_name(const FusedResult& f);  // class name or "disagree"

Command class_to_command(GazeClass c);

// >= majority entries agreeing on one class -> that class's command, else Stop.
Command aggregate(std::span<const FusedResult> window, const ControlConfig& config);

// Left-eye wink toggle: fires once when the left eye has been Closed with the
// right eye open for wink_frames consecutive frames. Any other frame ends the
// run and re-arms the detector.
class WinkDetector {
public:
    explicit WinkDetector(int wink_frames = 15);
    // Returns true when this frame completes a wink.
    bool push(GazeClass left, GazeClass right);
    // A frame with no usable reading: ends any run in progress.
    void interrupt();
    void reset();

private:
    int wink_frames_;
    int run_ = 0;
    bool armed_ = true;
};

// Turn-in-place steering; speed never exceeds the chair's 5.56 m/s cap.
ChairState step_kinematics(const ChairState& state, Command cmd, double dt, const ControlConfig& config);

// The gated window vote: emergency or disengaged -> Stop and a fresh window;
// otherwise the command decided by the last completed window is held.
class DecisionCore {
public:
    explicit DecisionCore(const ControlConfig& config);
    Command step(const FusedResult& fused, bool engaged, bool emergency);
    void reset();
    std::size_t pending() const { return window_.size(); }
    Command held() const { return held_; }

private:
    ControlConfig config_;
    std::vector<FusedResult> window_;
    Command held_ = Command::Stop;
};

using ProbVector = std::array<double, kNumClasses>;

struct EyeReading {
    GazeClass gaze_class = GazeClass::Forward;
    std::optional<ProbVector> probs;  // empty for class-level inputs
};

struct Telemetry {
    std::uint64_t tick = 0;
    std::optional<EyeReading> left, right;  // empty: classifier failure
    FusedResult fused;
    Command command = Command::Stop;
    bool engaged = false;
    bool emergency_stop = false;
    std::optional<double> min_distance_m;
    safety::Pose pose;  // after this tick's motion
};

nlohmann::json telemetry_to_json(const Telemetry& t);

class Controller {
public:
    explicit Controller(ControlConfig config = {}, ChairState initial = {});

    // One loop iteration: wink toggle, safety gate, engagement gate, window
    // vote, then kinematics over 1 / tick_rate seconds.
    Telemetry tick(const std::optional<EyeReading>& left, const std::optional<EyeReading>& right,
                   const safety::SafetyState& safety);

    const ChairState& state() const { return state_; }
    const ControlConfig& config() const { return config_; }
    std::uint64_t ticks() const { return tick_; }
    std::size_t pending() const { return core_.pending(); }
    // Back to the initial state and tick 0.
    void reset();

private:
    ControlConfig config_;
    ChairState initial_;
    ChairState state_;
    WinkDetector wink_;
    DecisionCore core_;
    std::uint64_t tick_ = 0;
};

}  // namespace gazechair::control
