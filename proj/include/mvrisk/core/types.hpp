#pragma once

#include <string>
#include <string_view>

#include "mvrisk/core/errors.hpp"

namespace mvrisk {

enum class Laterality { Left, Right };
enum class ViewPosition { CC, MLO };

inline std::string_view to_string(Laterality l) { return l == Laterality::Left ? "L" : "R"; }
inline std::string_view to_string(ViewPosition v) { return v == ViewPosition::CC ? "CC" : "MLO"; }

inline Laterality opposite(Laterality l) { return l == Laterality::Left ? Laterality::Right : Laterality::Left; }

inline ViewPosition parse_view_position(std::string_view s) {
    if (s == "CC") return ViewPosition::CC;
    if (s == "MLO") return ViewPosition::MLO;
    throw InvalidParameter("unknown view position '" + std::string(s) + "'");
}

}  // namespace mvrisk
