#pragma once

// Central finite-difference verification of backward_sequence.

#include "network.hpp"

#include <algorithm>
#include <cmath>

namespace tfdd {

struct GradientCheckResult {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t parameters = 0;
};

/// Compares analytic gradients of the window loss against
/// (L(p + h) - L(p - h)) / 2h for every parameter. The relative error of one
/// entry is |a - n| / max(|a|, |n|, floor); the floor keeps round-off on
/// vanishing gradients from dominating.
inline GradientCheckResult gradient_check(const Network& net, std::span<const Vector> inputs,
                                          std::span<const Vector> targets, LossKind kind, double h = 1e-5,
                                          double floor = 1e-4) {
    const auto state = net.zero_state();
    auto loss_at = [&](const Network& n) {
        auto tr = forward_sequence(n, inputs, state, {}, false);
        return sequence_loss(kind, tr.outputs, targets).value;
    };

    Network analytic = net.zeros_like();
    {
        auto tr = forward_sequence(net, inputs, state, {}, true);
        std::vector<Vector> dy;
        sequence_loss(kind, tr.outputs, targets, &dy);
        backward_sequence(net, tr, dy, analytic);
    }
    std::vector<double> a;
    analytic.for_each_param([&](std::span<const double> s) { a.insert(a.end(), s.begin(), s.end()); });

    Network probe = net;
    std::vector<std::span<double>> views;
    probe.for_each_param([&](std::span<double> s) { views.push_back(s); });

    GradientCheckResult out;
    std::size_t flat = 0;
    for (auto& view : views) {
        for (auto& p : view) {
            const double saved = p;
            p = saved + h;
            const double up = loss_at(probe);
            p = saved - h;
            const double down = loss_at(probe);
            p = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double diff = std::abs(a[flat] - numeric);
            const double denom = std::max({std::abs(a[flat]), std::abs(numeric), floor});
            out.max_absolute_error = std::max(out.max_absolute_error, diff);
            out.max_relative_error = std::max(out.max_relative_error, diff / denom);
            ++flat;
        }
    }
    out.parameters = flat;
    return out;
}

} // namespace tfdd
