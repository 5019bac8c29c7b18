#include "gazechair/safety.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace gazechair::safety {

namespace {

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
Vec2 sub(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }
double norm(Vec2 v) { return std::hypot(v.x, v.y); }

double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2 * kPi);
    if (a < 0) a += 2 * kPi;
    return a - kPi;
}

bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

// c is the circle centre relative to the sensor origin.
std::optional<double> circle_in_beam(Vec2 c, double r, double bearing, double half_angle) {
    const double l = norm(c);
    if (l <= r) return 0.0;
    if (std::abs(wrap_angle(std::atan2(c.y, c.x) - bearing)) <= half_angle) return l - r;
    // Centre direction lies outside the sector: the nearest point of
    // disc-and-sector sits on one of the boundary rays.
    std::optional<double> best;
    for (double side : {-1.0, 1.0}) {
        const double b = dot(c, unit(bearing + side * half_angle));
        const double disc = b * b - (l * l - r * r);
        if (b <= 0 || disc < 0) continue;
        const double t = b - std::sqrt(disc);
        if (!best || t < *best) best = t;
    }
    return best;
}

// a, b relative to the sensor origin.
std::optional<double> segment_in_beam(Vec2 a, Vec2 b, double bearing, double half_angle) {
    const Vec2 d = sub(b, a);
    const Vec2 left = unit(bearing + half_angle);
    const Vec2 right = unit(bearing - half_angle);
    // The sector is {p : cross(left, p) <= 0 and cross(right, p) >= 0}; clip
    // p(t) = a + t d, t in [0, 1], against both half-planes.
    double t0 = 0.0, t1 = 1.0;
    auto clip = [&](double f0, double f1) {  // keep f0 + t f1 >= 0
        if (f1 == 0.0) {
            if (f0 < 0) t1 = -1.0;
            return;
        }
        const double t = -f0 / f1;
        if (f1 > 0) t0 = std::max(t0, t);
        else t1 = std::min(t1, t);
    };
    clip(-cross(left, a), -cross(left, d));
    clip(cross(right, a), cross(right, d));
    if (t0 > t1) return std::nullopt;
    const double dd = dot(d, d);
    double t = dd > 0 ? -dot(a, d) / dd : t0;
    t = std::clamp(t, t0, t1);
    return norm({a.x + t * d.x, a.y + t * d.y});
}

}  // namespace

void UltrasonicSensor::validate() const {
    if (!(beam_half_angle > 0) || !(beam_half_angle < kPi / 2)) {
        throw SafetyError("sensor: beam half-angle must be in (0, 90) degrees");
    }
    if (!(max_range > 0)) throw SafetyError("sensor: max_range must be positive");
    if (!finite(mount_offset) || !std::isfinite(yaw)) throw SafetyError("sensor: non-finite mount");
}

void SensorArray::validate() const {
    if (sensors.size() != kSensorCount) throw SafetyError("sensor array: exactly 5 sensors required");
    for (const auto& s : sensors) s.validate();
    if (!(stop_threshold > 0)) throw SafetyError("sensor array: stop_threshold must be positive");
    if (!(speed_of_sound > 0)) throw SafetyError("sensor array: speed_of_sound must be positive");
    if (!(total_delay >= 0)) throw SafetyError("sensor array: total_delay must be non-negative");
}

LevelLayout solve_level_layout(double half_angle, double band_width, double gap, double range) {
    if (!(half_angle > 0 && half_angle < kPi / 6) || !(band_width > 0) || !(gap >= 0) || !(range > 0)) {
        throw SafetyError("level layout: invalid parameters");
    }
    const double inner_edge = range * std::tan(half_angle) + gap;
    const double needed = band_width / 2 - inner_edge;
    if (!(needed > 0)) throw SafetyError("level layout: centre beam already covers the band");
    // Footprint width range*(tan(yaw+a) - tan(yaw-a)) grows with yaw on (0, pi/2 - a).
    auto width = [&](double yaw) { return range * (std::tan(yaw + half_angle) - std::tan(yaw - half_angle)); };
    double lo = 0.0, hi = kPi / 2 - half_angle - 1e-9;
    if (width(hi) < needed) throw SafetyError("level layout: band unreachable");
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (width(mid) < needed ? lo : hi) = mid;
    }
    LevelLayout out;
    out.half_angle = half_angle;
    out.outer_yaw = 0.5 * (lo + hi);
    out.outer_lateral = inner_edge - range * std::tan(out.outer_yaw - half_angle);
    return out;
}

SensorArray default_array() {
    constexpr double kFront = 0.35;  // sensor bar ahead of the chair origin
    const LevelLayout layout = solve_level_layout(43.0 / 6.0 * kDegree, 1.0, 0.08, 1.0);
    auto level = [&](double lateral, double yaw) {
        UltrasonicSensor s;
        s.mount_offset = {kFront, lateral};
        s.yaw = yaw;
        s.beam_half_angle = layout.half_angle;
        s.max_range = 4.0;
        return s;
    };
    auto slanted = [&](double lateral, double yaw) {
        UltrasonicSensor s = level(lateral, yaw);
        s.pitch = Pitch::SlantedDown;
        s.max_range = 2.0;
        return s;
    };
    SensorArray a;
    a.sensors = {
        level(layout.outer_lateral, layout.outer_yaw),
        slanted(0.15, layout.outer_yaw / 2),
        level(0.0, 0.0),
        slanted(-0.15, -layout.outer_yaw / 2),
        level(-layout.outer_lateral, -layout.outer_yaw),
    };
    return a;
}

void World2D::validate() const {
    for (const auto& o : obstacles) {
        if (const auto* c = std::get_if<Circle>(&o)) {
            if (!(c->radius > 0)) throw SafetyError("world: circle radius must be positive");
            if (!finite(c->center) || !std::isfinite(c->radius)) throw SafetyError("world: non-finite circle");
        } else {
            const auto& s = std::get<Segment>(o);
            if (!finite(s.a) || !finite(s.b)) throw SafetyError("world: non-finite segment");
        }
    }
}

namespace {

nlohmann::json point_json(Vec2 p) { return nlohmann::json::array({p.x, p.y}); }

Vec2 point_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw SafetyError("world: point must be [x, y]");
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace

nlohmann::json world_to_json(const World2D& world) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& o : world.obstacles) {
        if (const auto* c = std::get_if<Circle>(&o)) {
            out.push_back({{"type", "circle"},
                           {"center", point_json(c->center)},
                           {"radius", c->radius},
                           {"low_profile", c->low_profile}});
        } else {
            const auto& s = std::get<Segment>(o);
            out.push_back({{"type", "segment"},
                           {"endpoints", nlohmann::json::array({point_json(s.a), point_json(s.b)})},
                           {"low_profile", s.low_profile}});
        }
    }
    return out;
}

World2D world_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw SafetyError("world: expected a JSON list of obstacles");
    World2D w;
    try {
        for (const auto& o : j) {
            const std::string type = o.at("type").get<std::string>();
            const bool low = o.value("low_profile", false);
            if (type == "circle") {
                w.obstacles.emplace_back(Circle{point_from(o.at("center")), o.at("radius").get<double>(), low});
            } else if (type == "segment") {
                const auto& e = o.at("endpoints");
                if (!e.is_array() || e.size() != 2) throw SafetyError("world: segment needs two endpoints");
                w.obstacles.emplace_back(Segment{point_from(e.at(0)), point_from(e.at(1)), low});
            } else {
                throw SafetyError("world: unknown obstacle type '" + type + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SafetyError(std::string("world: ") + e.what());
    }
    w.validate();
    return w;
}

World2D load_world(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SafetyError("world: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SafetyError("world: " + path + ": " + e.what());
    }
    return world_from_json(j);
}

void save_world(const World2D& world, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SafetyError("world: cannot write " + path);
    out << world_to_json(world).dump(2) << '\n';
}

double echo_to_distance(double travel_time, double speed_of_sound) {
    if (!(travel_time >= 0)) throw SafetyError("echo_to_distance: travel time must be non-negative");
    return travel_time / 2 * speed_of_sound;
}

double distance_to_echo(double distance, double speed_of_sound) {
    if (!(distance >= 0)) throw SafetyError("distance_to_echo: distance must be non-negative");
    return 2 * distance / speed_of_sound;
}

double error_bound(double total_delay, double chair_speed) {
    if (!(total_delay >= 0) || !(chair_speed >= 0)) throw SafetyError("error_bound: inputs must be non-negative");
    return total_delay * chair_speed;
}

Vec2 sensor_origin(const UltrasonicSensor& sensor, const Pose& pose) {
    const double c = std::cos(pose.heading), s = std::sin(pose.heading);
    return {pose.x + c * sensor.mount_offset.x - s * sensor.mount_offset.y,
            pose.y + s * sensor.mount_offset.x + c * sensor.mount_offset.y};
}

double sensor_bearing(const UltrasonicSensor& sensor, const Pose& pose) { return pose.heading + sensor.yaw; }

std::optional<double> nearest_in_beam(const World2D& world, const UltrasonicSensor& sensor, const Pose& pose) {
    const Vec2 o = sensor_origin(sensor, pose);
    const double bearing = sensor_bearing(sensor, pose);
    const bool slanted = sensor.pitch == Pitch::SlantedDown;
    std::optional<double> best;
    for (const auto& obstacle : world.obstacles) {
        std::optional<double> d;
        if (const auto* c = std::get_if<Circle>(&obstacle)) {
            if (c->low_profile != slanted) continue;
            d = circle_in_beam(sub(c->center, o), c->radius, bearing, sensor.beam_half_angle);
        } else {
            const auto& s = std::get<Segment>(obstacle);
            if (s.low_profile != slanted) continue;
            d = segment_in_beam(sub(s.a, o), sub(s.b, o), bearing, sensor.beam_half_angle);
        }
        if (d && (!best || *d < *best)) best = d;
    }
    return best;
}

EchoResult ping(const World2D& world, const UltrasonicSensor& sensor, const Pose& pose, double speed_of_sound) {
    const auto d = nearest_in_beam(world, sensor, pose);
    if (!d || *d > sensor.max_range) return {};
    return {distance_to_echo(*d, speed_of_sound)};
}

SafetyState safety_check(const SensorArray& array, const World2D& world, const Pose& pose) {
    SafetyState state;
    state.readings.reserve(array.sensors.size());
    for (const auto& sensor : array.sensors) {
        const EchoResult echo = ping(world, sensor, pose, array.speed_of_sound);
        std::optional<double> reading;
        if (!echo.timeout()) reading = echo_to_distance(*echo.travel_time, array.speed_of_sound);
        state.readings.push_back(reading);
        if (reading && (!state.min_distance || *reading < *state.min_distance)) state.min_distance = reading;
    }
    state.emergency_stop = state.min_distance && *state.min_distance <= array.stop_threshold;
    return state;
}

}  // namespace gazechair::safety
