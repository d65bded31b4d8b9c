#pragma once

#include "activation.hpp"
#include "matrix.hpp"
#include "rng.hpp"

#include <cmath>
#include <span>

namespace tfdd {

struct DenseLayer {
    Matrix weights; // out x in
    Vector bias;    // out
    Activation activation = Activation::Tanh;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out, Activation a) : weights(out, in), bias(out, 0.0), activation(a) {}

    std::size_t input_size() const { return weights.cols; }
    std::size_t output_size() const { return weights.rows; }

    template <typename F>
    void for_each_param(F&& f) {
        f(std::span<double>(weights.data));
        f(std::span<double>(bias));
    }

    void check() const {
        require(bias.size() == weights.rows, "dense: bias length != weight rows");
        require(weights.data.size() == weights.rows * weights.cols, "dense: weight storage mismatch");
    }
};

/// Input weights, recurrent weights and bias of one gate.
struct GateParams {
    Matrix input_weights;     // hidden x input
    Matrix recurrent_weights; // hidden x hidden
    Vector bias;              // hidden

    GateParams() = default;
    GateParams(std::size_t in, std::size_t hidden)
        : input_weights(hidden, in), recurrent_weights(hidden, hidden), bias(hidden, 0.0) {}

    template <typename F>
    void for_each_param(F&& f) {
        f(std::span<double>(input_weights.data));
        f(std::span<double>(recurrent_weights.data));
        f(std::span<double>(bias));
    }

    void check(std::size_t in, std::size_t hidden) const {
        require(input_weights.rows == hidden && input_weights.cols == in &&
                    input_weights.data.size() == hidden * in,
                "gate: input weights must be hidden x input");
        require(recurrent_weights.rows == hidden && recurrent_weights.cols == hidden &&
                    recurrent_weights.data.size() == hidden * hidden,
                "gate: recurrent weights must be hidden x hidden");
        require(bias.size() == hidden, "gate: bias length != hidden size");
    }

    /// out = W x + U h + b
    void preactivation(std::span<const double> x, std::span<const double> h, std::span<double> out) const {
        std::copy(bias.begin(), bias.end(), out.begin());
        gemv_acc(input_weights, x, out);
        gemv_acc(recurrent_weights, h, out);
    }

    /// Accumulates parameter gradients for dz, and the input/recurrent
    /// gradients into dx / dh.
    void backward(std::span<const double> dz, std::span<const double> x, std::span<const double> h,
                  GateParams& grad, std::span<double> dx, std::span<double> dh) const {
        outer_acc(grad.input_weights, dz, x);
        outer_acc(grad.recurrent_weights, dz, h);
        for (std::size_t k = 0; k < dz.size(); ++k) grad.bias[k] += dz[k];
        gemv_t_acc(input_weights, dz, dx);
        gemv_t_acc(recurrent_weights, dz, dh);
    }
};

struct RecurrentState {
    Vector h;
    Vector c; // LSTM only

    static RecurrentState zeros(std::size_t hidden, bool with_cell) {
        return {Vector(hidden, 0.0), with_cell ? Vector(hidden, 0.0) : Vector{}};
    }
};

/// LSTM cell. The cell and hidden nonlinearities are tanh; the gate
/// nonlinearity is configurable (logistic or hard sigmoid).
struct LstmCell {
    GateParams forget, input, output, candidate;
    Activation gate_activation = Activation::Logistic;

    LstmCell() = default;
    LstmCell(std::size_t in, std::size_t hidden, Activation gate = Activation::Logistic)
        : forget(in, hidden), input(in, hidden), output(in, hidden), candidate(in, hidden), gate_activation(gate) {}

    std::size_t input_size() const { return forget.input_weights.cols; }
    std::size_t hidden_size() const { return forget.input_weights.rows; }

    template <typename F>
    void for_each_param(F&& f) {
        forget.for_each_param(f);
        input.for_each_param(f);
        output.for_each_param(f);
        candidate.for_each_param(f);
    }

    void check() const {
        const auto in = input_size(), hid = hidden_size();
        for (const auto* g : {&forget, &input, &output, &candidate}) g->check(in, hid);
        require(gate_activation == Activation::Logistic || gate_activation == Activation::HardSigmoid,
                "lstm: gate activation must be logistic or hard_sigmoid");
    }
};

/// GRU cell: z = g(Wz x + Uz h + bz), r = g(Wr x + Ur h + br),
/// h~ = tanh(Wh x + Uh (r o h) + bh), h' = (1 - z) o h + z o h~.
struct GruCell {
    GateParams update, reset, candidate;
    Activation gate_activation = Activation::Logistic;

    GruCell() = default;
    GruCell(std::size_t in, std::size_t hidden, Activation gate = Activation::Logistic)
        : update(in, hidden), reset(in, hidden), candidate(in, hidden), gate_activation(gate) {}

    std::size_t input_size() const { return update.input_weights.cols; }
    std::size_t hidden_size() const { return update.input_weights.rows; }

    template <typename F>
    void for_each_param(F&& f) {
        update.for_each_param(f);
        reset.for_each_param(f);
        candidate.for_each_param(f);
    }

    void check() const {
        const auto in = input_size(), hid = hidden_size();
        for (const auto* g : {&update, &reset, &candidate}) g->check(in, hid);
        require(gate_activation == Activation::Logistic || gate_activation == Activation::HardSigmoid,
                "gru: gate activation must be logistic or hard_sigmoid");
    }
};

// ---------------------------------------------------------------------------
// Forward steps with the intermediate values needed for backpropagation.

struct DenseCache {
    Vector x, y;
};

inline Vector dense_forward(const DenseLayer& layer, std::span<const double> x, DenseCache* cache = nullptr) {
    require(x.size() == layer.input_size(), "dense: input length " + std::to_string(x.size()) +
                                                " != " + std::to_string(layer.input_size()));
    Vector y(layer.bias);
    gemv_acc(layer.weights, x, y);
    activate(layer.activation, y);
    if (cache) {
        cache->x.assign(x.begin(), x.end());
        cache->y = y;
    }
    return y;
}

/// dy is consumed (turned into dz). Returns dL/dx.
inline Vector dense_backward(const DenseLayer& layer, const DenseCache& cache, Vector dy, DenseLayer& grad) {
    backprop_activation(layer.activation, cache.y, dy);
    outer_acc(grad.weights, dy, cache.x);
    for (std::size_t k = 0; k < dy.size(); ++k) grad.bias[k] += dy[k];
    Vector dx(layer.input_size(), 0.0);
    gemv_t_acc(layer.weights, dy, dx);
    return dx;
}

struct LstmCache {
    Vector x, h_prev, c_prev, f, i, o, g, c, tanh_c;
};

inline RecurrentState lstm_step(const LstmCell& cell, std::span<const double> x, const RecurrentState& state,
                                LstmCache* cache = nullptr) {
    const auto hid = cell.hidden_size();
    require(x.size() == cell.input_size(), "lstm: input length mismatch");
    require(state.h.size() == hid && state.c.size() == hid, "lstm: state length mismatch");

    Vector f(hid), i(hid), o(hid), g(hid);
    cell.forget.preactivation(x, state.h, f);
    cell.input.preactivation(x, state.h, i);
    cell.output.preactivation(x, state.h, o);
    cell.candidate.preactivation(x, state.h, g);
    activate(cell.gate_activation, f);
    activate(cell.gate_activation, i);
    activate(cell.gate_activation, o);
    activate(Activation::Tanh, g);

    RecurrentState next{Vector(hid), Vector(hid)};
    Vector tanh_c(hid);
    for (std::size_t k = 0; k < hid; ++k) {
        next.c[k] = f[k] * state.c[k] + i[k] * g[k];
        tanh_c[k] = std::tanh(next.c[k]);
        next.h[k] = o[k] * tanh_c[k];
    }
    if (cache) {
        cache->x.assign(x.begin(), x.end());
        cache->h_prev = state.h;
        cache->c_prev = state.c;
        cache->f = std::move(f);
        cache->i = std::move(i);
        cache->o = std::move(o);
        cache->g = std::move(g);
        cache->c = next.c;
        cache->tanh_c = std::move(tanh_c);
    }
    return next;
}

/// One reverse step. On entry dh/dc hold dL/dh_t and dL/dc_t; on exit they
/// hold dL/dh_{t-1} and dL/dc_{t-1}. Returns dL/dx_t.
inline Vector lstm_backward(const LstmCell& cell, const LstmCache& k, Vector& dh, Vector& dc, LstmCell& grad) {
    const auto hid = cell.hidden_size();
    const auto gate = cell.gate_activation;
    Vector dzf(hid), dzi(hid), dzo(hid), dzg(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        const double dct = dc[j] + dh[j] * k.o[j] * (1.0 - k.tanh_c[j] * k.tanh_c[j]);
        dzo[j] = dh[j] * k.tanh_c[j] * derivative_from_output(gate, k.o[j]);
        dzf[j] = dct * k.c_prev[j] * derivative_from_output(gate, k.f[j]);
        dzi[j] = dct * k.g[j] * derivative_from_output(gate, k.i[j]);
        dzg[j] = dct * k.i[j] * (1.0 - k.g[j] * k.g[j]);
        dc[j] = dct * k.f[j];
    }
    Vector dx(cell.input_size(), 0.0);
    std::fill(dh.begin(), dh.end(), 0.0);
    cell.forget.backward(dzf, k.x, k.h_prev, grad.forget, dx, dh);
    cell.input.backward(dzi, k.x, k.h_prev, grad.input, dx, dh);
    cell.output.backward(dzo, k.x, k.h_prev, grad.output, dx, dh);
    cell.candidate.backward(dzg, k.x, k.h_prev, grad.candidate, dx, dh);
    return dx;
}

struct GruCache {
    Vector x, h_prev, z, r, rh, hc;
};

inline RecurrentState gru_step(const GruCell& cell, std::span<const double> x, const RecurrentState& state,
                               GruCache* cache = nullptr) {
    const auto hid = cell.hidden_size();
    require(x.size() == cell.input_size(), "gru: input length mismatch");
    require(state.h.size() == hid, "gru: state length mismatch");

    Vector z(hid), r(hid), hc(hid), rh(hid);
    cell.update.preactivation(x, state.h, z);
    cell.reset.preactivation(x, state.h, r);
    activate(cell.gate_activation, z);
    activate(cell.gate_activation, r);
    for (std::size_t k = 0; k < hid; ++k) rh[k] = r[k] * state.h[k];
    cell.candidate.preactivation(x, rh, hc);
    activate(Activation::Tanh, hc);

    RecurrentState next{Vector(hid), {}};
    for (std::size_t k = 0; k < hid; ++k) next.h[k] = (1.0 - z[k]) * state.h[k] + z[k] * hc[k];
    if (cache) {
        cache->x.assign(x.begin(), x.end());
        cache->h_prev = state.h;
        cache->z = std::move(z);
        cache->r = std::move(r);
        cache->rh = std::move(rh);
        cache->hc = std::move(hc);
    }
    return next;
}

/// As lstm_backward, without a cell state.
inline Vector gru_backward(const GruCell& cell, const GruCache& k, Vector& dh, GruCell& grad) {
    const auto hid = cell.hidden_size();
    const auto gate = cell.gate_activation;
    Vector dzz(hid), dzh(hid), dh_prev(hid, 0.0), drh(hid, 0.0), dx(cell.input_size(), 0.0);
    for (std::size_t j = 0; j < hid; ++j) {
        dzz[j] = dh[j] * (k.hc[j] - k.h_prev[j]) * derivative_from_output(gate, k.z[j]);
        dzh[j] = dh[j] * k.z[j] * (1.0 - k.hc[j] * k.hc[j]);
        dh_prev[j] = dh[j] * (1.0 - k.z[j]);
    }
    cell.candidate.backward(dzh, k.x, k.rh, grad.candidate, dx, drh);
    Vector dzr(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        dzr[j] = drh[j] * k.h_prev[j] * derivative_from_output(gate, k.r[j]);
        dh_prev[j] += drh[j] * k.r[j];
    }
    cell.update.backward(dzz, k.x, k.h_prev, grad.update, dx, dh_prev);
    cell.reset.backward(dzr, k.x, k.h_prev, grad.reset, dx, dh_prev);
    dh = std::move(dh_prev);
    return dx;
}

/// Glorot-uniform fill with limit sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Matrix& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
    for (auto& w : m.data) w = rng.uniform(-limit, limit);
}

} // namespace tfdd
