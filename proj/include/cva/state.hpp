#pragma once

#include <array>
#include <cmath>
#include <string_view>

namespace cva {

inline constexpr int kStateDim = 3;
inline constexpr std::array<std::string_view, kStateDim> kStateNames{"translation", "rotation", "knob"};

// Controller command; raw components live in [-1, 1].
struct StateVector {
    double translation = 0.0;
    double rotation = 0.0;
    double knob = 0.0;

    double operator[](int i) const { return i == 0 ? translation : (i == 1 ? rotation : knob); }
    double& operator[](int i) { return i == 0 ? translation : (i == 1 ? rotation : knob); }

    bool finite() const {
        return std::isfinite(translation) && std::isfinite(rotation) && std::isfinite(knob);
    }
    bool in_range() const {
        return finite() && std::abs(translation) <= 1.0 && std::abs(rotation) <= 1.0 &&
               std::abs(knob) <= 1.0;
    }
    friend bool operator==(const StateVector&, const StateVector&) = default;
};

}  // namespace cva
