#include "gazechair/gaze_class.hpp"

namespace gazechair {

std::string_view to_string(GazeClass c) {
    switch (c) {
        case GazeClass::Right: return "right";
        case GazeClass::Forward: return "forward";
        case GazeClass::Left: return "left";
        case GazeClass::Closed: return "closed";
    }
    return "unknown";
}

std::optional<GazeClass> parse_gaze_class(std::string_view name) {
    for (GazeClass c : kAllClasses) {
        if (to_string(c) == name) return c;
    }
    return std::nullopt;
}

std::string_view to_string(EyeSide s) { return s == EyeSide::Left ? "left" : "right"; }

}  // namespace gazechair
