#pragma once

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>

namespace tfdd {

enum class Activation { Tanh, Linear, Softmax, HardSigmoid, Logistic };

inline std::string_view name_of(Activation a) {
    switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Linear: return "linear";
    case Activation::Softmax: return "softmax";
    case Activation::HardSigmoid: return "hard_sigmoid";
    case Activation::Logistic: return "logistic";
    }
    return "?";
}

inline Activation parse_activation(std::string_view s) {
    for (auto a : {Activation::Tanh, Activation::Linear, Activation::Softmax, Activation::HardSigmoid,
                   Activation::Logistic})
        if (name_of(a) == s) return a;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double hard_sigmoid(double x) { return std::clamp(0.2 * x + 0.5, 0.0, 1.0); }

/// Applies `a` in place to a vector of pre-activations.
inline void activate(Activation a, std::span<double> z) {
    switch (a) {
    case Activation::Tanh:
        for (auto& x : z) x = std::tanh(x);
        break;
    case Activation::Linear: break;
    case Activation::Logistic:
        for (auto& x : z) x = logistic(x);
        break;
    case Activation::HardSigmoid:
        for (auto& x : z) x = hard_sigmoid(x);
        break;
    case Activation::Softmax: {
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (auto& x : z) s += (x = std::exp(x - m));
        for (auto& x : z) x /= s;
        break;
    }
    }
}

/// Derivative of an element-wise activation expressed through its output.
inline double derivative_from_output(Activation a, double y) {
    switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Linear: return 1.0;
    case Activation::Logistic: return y * (1.0 - y);
    case Activation::HardSigmoid: return (y > 0.0 && y < 1.0) ? 0.2 : 0.0;
    case Activation::Softmax: break;
    }
    throw ConfigError("softmax has no element-wise derivative");
}

/// Maps dL/dy to dL/dz in place, given outputs y = a(z).
inline void backprop_activation(Activation a, std::span<const double> y, std::span<double> grad) {
    if (a == Activation::Softmax) {
        double dot = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) dot += grad[k] * y[k];
        for (std::size_t k = 0; k < y.size(); ++k) grad[k] = y[k] * (grad[k] - dot);
        return;
    }
    for (std::size_t k = 0; k < y.size(); ++k) grad[k] *= derivative_from_output(a, y[k]);
}

} // namespace tfdd
