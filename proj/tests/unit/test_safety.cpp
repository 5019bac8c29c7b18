#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "gazechair/rng.hpp"
#include "gazechair/safety.hpp"
#include "temp_dir.hpp"

using namespace gazechair;
using namespace gazechair::safety;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Distance along the ray at angle th from o to the first point of the obstacle.
double ray_hit(const Obstacle& obs, Vec2 o, double th) {
    const double ux = std::cos(th), uy = std::sin(th);
    if (const auto* c = std::get_if<Circle>(&obs)) {
        const double cx = c->center.x - o.x, cy = c->center.y - o.y;
        const double c2 = cx * cx + cy * cy - c->radius * c->radius;
        if (c2 <= 0) return 0.0;
        const double b = cx * ux + cy * uy;
        const double disc = b * b - c2;
        if (b <= 0 || disc < 0) return kInf;
        return b - std::sqrt(disc);
    }
    const auto& s = std::get<Segment>(obs);
    const double ax = s.a.x - o.x, ay = s.a.y - o.y, dx = s.b.x - s.a.x, dy = s.b.y - s.a.y;
    // o + t u = a + k d
    const double den = ux * (-dy) - uy * (-dx);
    if (std::abs(den) < 1e-15) return kInf;
    const double t = (ax * (-dy) - ay * (-dx)) / den;
    const double k = (ux * ay - uy * ax) / den;
    if (t < 0 || k < 0 || k > 1) return kInf;
    return t;
}

// Minimum of ray_hit over the sector: dense sampling, then golden-section
// refinement around the best sample; segment endpoints inside the sector are
// added as explicit candidates.
double sector_oracle(const Obstacle& obs, Vec2 o, double bearing, double half) {
    const int n = 4000;
    const double lo = bearing - half, step = 2 * half / n;
    double best = kInf;
    int best_i = -1;
    for (int i = 0; i <= n; ++i) {
        const double v = ray_hit(obs, o, lo + i * step);
        if (v < best) {
            best = v;
            best_i = i;
        }
    }
    if (best_i >= 0) {
        double a = lo + std::max(0, best_i - 1) * step, b = lo + std::min(n, best_i + 1) * step;
        const double g = (std::sqrt(5.0) - 1) / 2;
        for (int it = 0; it < 200; ++it) {
            const double m1 = b - g * (b - a), m2 = a + g * (b - a);
            if (ray_hit(obs, o, m1) <= ray_hit(obs, o, m2)) b = m2;
            else a = m1;
        }
        best = std::min({best, ray_hit(obs, o, a), ray_hit(obs, o, b)});
    }
    if (const auto* s = std::get_if<Segment>(&obs)) {
        for (Vec2 p : {s->a, s->b}) {
            const double dx = p.x - o.x, dy = p.y - o.y;
            double rel = std::remainder(std::atan2(dy, dx) - bearing, 2 * kPi);
            if (std::abs(rel) <= half) best = std::min(best, std::hypot(dx, dy));
        }
    }
    return best;
}

UltrasonicSensor sensor_at_origin(double half_angle_deg = 7.0, double range = 4.0) {
    UltrasonicSensor s;
    s.beam_half_angle = half_angle_deg * kDegree;
    s.max_range = range;
    return s;
}

// Interval covered at forward distance `ahead` by a sensor's beam, chair frame.
std::pair<double, double> footprint(const UltrasonicSensor& s, double ahead) {
    const double a = s.mount_offset.y + ahead * std::tan(s.yaw - s.beam_half_angle);
    const double b = s.mount_offset.y + ahead * std::tan(s.yaw + s.beam_half_angle);
    return {a, b};
}

}  // namespace

TEST_CASE("echo_to_distance") {
    CHECK(echo_to_distance(0.010) == 1.7);
    CHECK(echo_to_distance(0.0) == 0.0);
    const double t = 2 * 1.75 / 340;
    CHECK(t == doctest::Approx(0.01029).epsilon(1e-3));
    CHECK(echo_to_distance(t) == doctest::Approx(1.75).epsilon(1e-15));
    CHECK_THROWS_AS(echo_to_distance(-1e-3), SafetyError);
}

TEST_CASE("echo_to_distance is linear") {
    Rng rng(1);
    std::uniform_real_distribution<double> u(0, 0.05), k(0, 10);
    for (int i = 0; i < 1000; ++i) {
        const double t = u(rng), a = k(rng);
        CHECK(echo_to_distance(a * t) == doctest::Approx(a * echo_to_distance(t)).epsilon(1e-14));
    }
}

TEST_CASE("error_bound") {
    CHECK(error_bound(0.002, 5.56) == doctest::Approx(0.01112).epsilon(1e-14));
    CHECK(std::round(error_bound(0.002, 5.56) * 1000) / 1000 == 0.011);
    CHECK(error_bound(0.0, 5.56) == 0.0);
    CHECK(error_bound(0.001, 5.56) == doctest::Approx(0.00556));
    CHECK_THROWS_AS(error_bound(-1, 1), SafetyError);
}

TEST_CASE("ping examples") {
    const UltrasonicSensor s = sensor_at_origin();
    World2D ahead{{Circle{{2.0, 0.0}, 0.3, false}}};
    const EchoResult e = ping(ahead, s, Pose{});
    REQUIRE_FALSE(e.timeout());
    CHECK(*e.travel_time == doctest::Approx(0.010).epsilon(1e-12));

    World2D aside{{Circle{{0.0, 2.0}, 0.3, false}}};
    CHECK(ping(aside, s, Pose{}).timeout());

    World2D far{{Circle{{10.5, 0.0}, 0.5, false}}};
    CHECK(ping(far, s, Pose{}).timeout());
    CHECK(ping(World2D{}, s, Pose{}).timeout());
}

TEST_CASE("ping respects pitch and the low-profile flag") {
    UltrasonicSensor level = sensor_at_origin();
    UltrasonicSensor slanted = level;
    slanted.pitch = Pitch::SlantedDown;
    World2D curb{{Segment{{1.0, -1.0}, {1.0, 1.0}, true}}};
    CHECK(ping(curb, level, Pose{}).timeout());
    CHECK_FALSE(ping(curb, slanted, Pose{}).timeout());
    World2D wall{{Segment{{1.0, -1.0}, {1.0, 1.0}, false}}};
    CHECK_FALSE(ping(wall, level, Pose{}).timeout());
    CHECK(ping(wall, slanted, Pose{}).timeout());
}

TEST_CASE("ping sees a circle through the beam edge") {
    // Centre bearing is outside the cone but the disc reaches into it.
    const UltrasonicSensor s = sensor_at_origin(7.0);
    World2D w{{Circle{{2.0, 0.6}, 0.45, false}}};
    const auto d = nearest_in_beam(w, s, Pose{});
    REQUIRE(d.has_value());
    CHECK(*d == doctest::Approx(sector_oracle(w.obstacles[0], {0, 0}, 0.0, 7.0 * kDegree)).epsilon(1e-9));
}

TEST_CASE("ping matches the sector oracle on random worlds") {
    Rng rng(2);
    std::uniform_real_distribution<double> pos(-3, 3), rad(0.05, 0.8), ang(-kPi, kPi), half(2, 30);
    int hits = 0;
    for (int trial = 0; trial < 400; ++trial) {
        UltrasonicSensor s = sensor_at_origin(half(rng), 3.0);
        s.mount_offset = {pos(rng) * 0.1, pos(rng) * 0.1};
        s.yaw = ang(rng) * 0.3;
        const Pose pose{pos(rng), pos(rng), ang(rng)};
        const Vec2 o = sensor_origin(s, pose);
        World2D w;
        if (trial % 2 == 0) {
            w.obstacles.emplace_back(Circle{{o.x + pos(rng), o.y + pos(rng)}, rad(rng), false});
        } else {
            w.obstacles.emplace_back(Segment{{o.x + pos(rng), o.y + pos(rng)}, {o.x + pos(rng), o.y + pos(rng)}, false});
        }
        const double oracle = sector_oracle(w.obstacles[0], o, sensor_bearing(s, pose), s.beam_half_angle);
        const auto got = nearest_in_beam(w, s, pose);
        const EchoResult e = ping(w, s, pose);
        if (oracle == kInf) {
            CHECK_FALSE(got.has_value());
            CHECK(e.timeout());
            continue;
        }
        REQUIRE(got.has_value());
        CHECK(std::abs(*got - oracle) <= 1e-9);
        if (oracle <= s.max_range - 1e-9) {
            REQUIRE_FALSE(e.timeout());
            const double d = echo_to_distance(*e.travel_time);
            CHECK(d <= s.max_range);
            CHECK(std::abs(d - oracle) <= 1e-9);
            ++hits;
        } else if (oracle > s.max_range + 1e-9) {
            CHECK(e.timeout());
        }
    }
    CHECK(hits > 50);
}

TEST_CASE("default geometry reproduces the coverage figures") {
    const SensorArray a = default_array();
    CHECK_NOTHROW(a.validate());
    std::vector<std::pair<double, double>> spans;
    double total_angle = 0;
    for (const auto& s : a.sensors) {
        if (s.pitch != Pitch::Level) continue;
        total_angle += 2 * s.beam_half_angle;
        spans.push_back(footprint(s, 1.0));
    }
    REQUIRE(spans.size() == 3);
    CHECK(total_angle / kDegree == doctest::Approx(43.0).epsilon(1e-12));
    std::sort(spans.begin(), spans.end());
    CHECK(spans.back().second - spans.front().first >= 1.0 - 1e-9);
    for (std::size_t i = 1; i < spans.size(); ++i) {
        const double gap = spans[i].first - spans[i - 1].second;
        CHECK(gap <= 0.08 + 1e-9);
    }
    // Slanted sensors sit between the level ones.
    CHECK(a.sensors[1].pitch == Pitch::SlantedDown);
    CHECK(a.sensors[3].pitch == Pitch::SlantedDown);
}

TEST_CASE("default array detects an obstacle anywhere in the 1 m band at 1 m") {
    const SensorArray a = default_array();
    const double front = a.sensors[2].mount_offset.x;
    int covered = 0, total = 0;
    for (double y = -0.5; y <= 0.5; y += 0.01) {
        World2D w{{Circle{{front + 1.0 + 0.05, y}, 0.05, false}}};
        ++total;
        covered += safety_check(a, w, Pose{}).min_distance.has_value();
    }
    CHECK(covered == total);
}

TEST_CASE("safety_check examples") {
    SensorArray a = default_array();
    // Sensor bar at the world origin.
    const Pose pose{-a.sensors[2].mount_offset.x, 0, 0};
    auto ahead = [](double d) { return World2D{{Circle{{d + 0.5, 0.0}, 0.5, false}}}; };

    SafetyState s = safety_check(a, ahead(0.5), pose);
    CHECK(s.emergency_stop);
    REQUIRE(s.min_distance);
    CHECK(*s.min_distance == doctest::Approx(0.5));

    CHECK_FALSE(safety_check(a, ahead(1.5), pose).emergency_stop);
    const SafetyState empty = safety_check(a, World2D{}, pose);
    CHECK_FALSE(empty.emergency_stop);
    CHECK_FALSE(empty.min_distance);
    CHECK(empty.readings.size() == 5);

    const SafetyState edge = safety_check(a, ahead(1.0), pose);
    REQUIRE(edge.min_distance);
    CHECK(*edge.min_distance == 1.0);
    CHECK(edge.emergency_stop);
}

TEST_CASE("safety_check is monotone under obstacle removal") {
    const SensorArray a = default_array();
    Rng rng(3);
    std::uniform_real_distribution<double> pos(-2.5, 2.5), rad(0.05, 0.5);
    for (int trial = 0; trial < 200; ++trial) {
        World2D w;
        for (int i = 0; i < 6; ++i) {
            if (i % 3 == 2) {
                w.obstacles.emplace_back(Segment{{pos(rng), pos(rng)}, {pos(rng), pos(rng)}, rng() % 2 == 0});
            } else {
                w.obstacles.emplace_back(Circle{{pos(rng), pos(rng)}, rad(rng), rng() % 2 == 0});
            }
        }
        const bool before = safety_check(a, w, Pose{}).emergency_stop;
        World2D fewer = w;
        fewer.obstacles.erase(fewer.obstacles.begin() + static_cast<long>(rng() % fewer.obstacles.size()));
        const bool after = safety_check(a, fewer, Pose{}).emergency_stop;
        CHECK((before || !after));
    }
}

TEST_CASE("validation") {
    SensorArray a = default_array();
    a.sensors.pop_back();
    CHECK_THROWS_AS(a.validate(), SafetyError);
    a = default_array();
    a.stop_threshold = 0;
    CHECK_THROWS_AS(a.validate(), SafetyError);
    UltrasonicSensor s;
    s.beam_half_angle = 0;
    CHECK_THROWS_AS(s.validate(), SafetyError);
    World2D w{{Circle{{1, 1}, 0.0, false}}};
    CHECK_THROWS_AS(w.validate(), SafetyError);
}

TEST_CASE("world JSON round trip") {
    World2D w{{Circle{{1.5, -0.25}, 0.3, false}, Segment{{0, 2}, {3, 2}, true}}};
    const nlohmann::json j = world_to_json(w);
    CHECK(j[0]["type"] == "circle");
    CHECK(j[1]["endpoints"][1][0] == 3.0);
    CHECK(world_from_json(j) == w);
    CHECK(world_to_json(world_from_json(nlohmann::json::parse(j.dump()))).dump() == j.dump());

    test::TempDir dir;
    const auto path = (dir.path() / "world.json").string();
    save_world(w, path);
    CHECK(load_world(path) == w);

    CHECK_THROWS_AS(world_from_json(nlohmann::json::parse(R"([{"type":"blob"}])")), SafetyError);
    CHECK_THROWS_AS(world_from_json(nlohmann::json::parse(R"({"type":"circle"})")), SafetyError);
    CHECK_THROWS_AS(world_from_json(nlohmann::json::parse(R"([{"type":"circle","center":[0,0],"radius":-1}])")),
                    SafetyError);
}
