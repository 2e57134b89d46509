#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "bogcn/linalg.hpp"

namespace bogcn {

enum class Direction { maximize, minimize };

inline std::string to_string(Direction d) {
    return d == Direction::maximize ? "max" : "min";
}

/// m objective values for one architecture, aligned with an ObjectiveSpec.
using ObjectiveVector = Vector;

/// Names, optimization directions and costly flags for the m objectives of
/// an experiment. costly = needs full evaluation and a surrogate;
/// non-costly objectives are computable exactly from the architecture.
struct ObjectiveSpec {
    std::vector<std::string> names;
    std::vector<Direction> directions;
    std::vector<bool> costly;

    std::size_t m() const { return names.size(); }

    void validate() const {
        if (names.empty()) throw std::invalid_argument("objectives: need m >= 1");
        if (directions.size() != names.size() || costly.size() != names.size())
            throw std::invalid_argument("objectives: field lengths differ");
    }

    static ObjectiveSpec single(const std::string& name,
                                Direction dir = Direction::maximize) {
        return ObjectiveSpec{{name}, {dir}, {true}};
    }
};

}  // namespace bogcn
