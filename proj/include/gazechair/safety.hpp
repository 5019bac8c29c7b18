#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace gazechair::safety {

inline constexpr double kSpeedOfSound = 340.0;  // m/s
inline constexpr double kMaxChairSpeed = 5.56;  // m/s (20 km/h)
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegree = kPi / 180.0;

class SafetyError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2&) const = default;
};

// World pose. Chair frame: +x forward, +y to the left; heading is CCW from world +x.
struct Pose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    bool operator==(const Pose&) const = default;
};

enum class Pitch { Level, SlantedDown };

struct UltrasonicSensor {
    Vec2 mount_offset;  // chair frame
    double yaw = 0.0;   // chair frame, CCW
    Pitch pitch = Pitch::Level;
    double beam_half_angle = 43.0 / 6.0 * kDegree;
    double max_range = 4.0;
    void validate() const;
};

struct SensorArray {
    static constexpr std::size_t kSensorCount = 5;
    std::vector<UltrasonicSensor> sensors;  // left to right, slanted sensors interleaved
    double stop_threshold = 1.0;
    double speed_of_sound = kSpeedOfSound;
    double total_delay = 0.002;  // seconds, for the motion error bound
    void validate() const;
};

// Outer level sensor placement for the left side; the right side mirrors it.
struct LevelLayout {
    double half_angle = 0.0;
    double outer_yaw = 0.0;
    double outer_lateral = 0.0;  // negative: mounted right of centre, aimed left
};

// Places three level sensors so their footprints at `range` ahead span
// `band_width` with `gap` between neighbouring footprints.
LevelLayout solve_level_layout(double half_angle, double band_width, double gap, double range);

// Three level sensors with 43 degrees of combined beam, a 1 m band at 1 m,
// 8 cm gaps, and two slanted sensors between them.
SensorArray default_array();

struct Circle {
    Vec2 center;
    double radius = 0.0;
    bool low_profile = false;
    bool operator==(const Circle&) const = default;
};

struct Segment {
    Vec2 a, b;
    bool low_profile = false;
    bool operator==(const Segment&) const = default;
};

using Obstacle = std::variant<Circle, Segment>;

struct World2D {
    std::vector<Obstacle> obstacles;
    void validate() const;
    bool operator==(const World2D&) const = default;
};

// JSON list of {type, center, radius | endpoints, low_profile}.
nlohmann::json world_to_json(const World2D& world);
World2D world_from_json(const nlohmann::json& j);
World2D load_world(const std::string& path);
void save_world(const World2D& world, const std::string& path);

// distance = travel_time / 2 * speed
double echo_to_distance(double travel_time, double speed_of_sound = kSpeedOfSound);
double distance_to_echo(double distance, double speed_of_sound = kSpeedOfSound);
// Distance error accrued while the echo is in flight: delay * chair speed.
double error_bound(double total_delay, double chair_speed);

Vec2 sensor_origin(const UltrasonicSensor& sensor, const Pose& pose);
double sensor_bearing(const UltrasonicSensor& sensor, const Pose& pose);

// Nearest distance from the sensor to any visible obstacle inside its beam
// sector, ignoring max_range.
std::optional<double> nearest_in_beam(const World2D& world, const UltrasonicSensor& sensor, const Pose& pose);

struct EchoResult {
    std::optional<double> travel_time;  // empty: timeout
    bool timeout() const { return !travel_time.has_value(); }
};

// Level sensors see full-height obstacles only; slanted sensors see only
// low-profile obstacles.
EchoResult ping(const World2D& world, const UltrasonicSensor& sensor, const Pose& pose,
                double speed_of_sound = kSpeedOfSound);

struct SafetyState {
    bool emergency_stop = false;
    std::optional<double> min_distance;  // empty when no sensor got an echo
    std::vector<std::optional<double>> readings;  // per sensor, meters
};

// Inclusive threshold: an echo at exactly stop_threshold stops the chair.
SafetyState safety_check(const SensorArray& array, const World2D& world, const Pose& pose);

}  // namespace gazechair::safety
