#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace gazechair {

// Canonical order doubles as tie-break order and confusion-matrix axis order.
enum class GazeClass : int { Right = 0, Forward = 1, Left = 2, Closed = 3 };

inline constexpr std::size_t kNumClasses = 4;

inline constexpr std::array<GazeClass, kNumClasses> kAllClasses = {
    GazeClass::Right, GazeClass::Forward, GazeClass::Left, GazeClass::Closed};

constexpr std::size_t index_of(GazeClass c) { return static_cast<std::size_t>(c); }

constexpr GazeClass class_at(std::size_t i) { return kAllClasses.at(i); }

// Lowercase names, as used for corpus directories and JSON.
std::string_view to_string(GazeClass c);

std::optional<GazeClass> parse_gaze_class(std::string_view name);

enum class EyeSide { Left, Right };

std::string_view to_string(EyeSide s);

}  // namespace gazechair
