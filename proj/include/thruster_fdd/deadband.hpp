#pragma once

#include <cmath>

namespace tfdd {

/// Shifted dead zone rescaled so that +-1 maps to +-1; zero inside the band.
inline double deadband(double u, double width) {
    const double a = std::abs(u);
    if (a <= width) return 0.0;
    return std::copysign((a - width) / (1.0 - width), u);
}

} // namespace tfdd
