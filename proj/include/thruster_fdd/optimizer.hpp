#pragma once

#include "network.hpp"

#include <cmath>
#include <string>

namespace tfdd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// ADAM moments. `m` and `v` are laid out like the network parameters.
struct OptimizerState {
    std::size_t step = 0;
    Network m, v;
    AdamConfig config;

    OptimizerState() = default;
    OptimizerState(const Network& params, AdamConfig cfg = {})
        : m(params.zeros_like()), v(params.zeros_like()), config(cfg) {}
};

/// One bias-corrected ADAM step. Throws NumericError on non-finite gradients
/// and leaves parameters untouched in that case.
inline void adam_update(Network& params, const Network& grads, OptimizerState& state) {
    std::vector<std::span<double>> p, m, v;
    std::vector<std::span<const double>> g;
    params.for_each_param([&](std::span<double> s) { p.push_back(s); });
    state.m.for_each_param([&](std::span<double> s) { m.push_back(s); });
    state.v.for_each_param([&](std::span<double> s) { v.push_back(s); });
    grads.for_each_param([&](std::span<const double> s) { g.push_back(s); });
    require(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(), "adam: tensor count mismatch");
    for (std::size_t k = 0; k < p.size(); ++k) {
        require(p[k].size() == g[k].size() && p[k].size() == m[k].size() && p[k].size() == v[k].size(),
                "adam: tensor shape mismatch");
        for (double x : g[k])
            if (!std::isfinite(x)) throw NumericError("adam: non-finite gradient in tensor " + std::to_string(k));
    }

    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(c.beta1, t);
    const double correct2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t k = 0; k < p.size(); ++k) {
        for (std::size_t j = 0; j < p[k].size(); ++j) {
            const double gj = g[k][j];
            m[k][j] = c.beta1 * m[k][j] + (1.0 - c.beta1) * gj;
            v[k][j] = c.beta2 * v[k][j] + (1.0 - c.beta2) * gj * gj;
            const double mhat = m[k][j] / correct1;
            const double vhat = v[k][j] / correct2;
            p[k][j] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
inline void clip_gradients(Network& grads, double max_norm) {
    double sq = 0.0;
    grads.for_each_param([&](std::span<const double> s) {
        for (double x : s) sq += x * x;
    });
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    grads.for_each_param([&](std::span<double> s) {
        for (auto& x : s) x *= scale;
    });
}

} // namespace tfdd
