#pragma once

// Layer stacks evaluated over sequences, with reverse-mode gradients
// unrolled through time.

#include "layers.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace tfdd {

using Layer = std::variant<DenseLayer, LstmCell, GruCell>;

enum class UnitKind { Perceptron, Lstm, Gru };

inline std::string_view name_of(UnitKind k) {
    switch (k) {
    case UnitKind::Perceptron: return "P";
    case UnitKind::Lstm: return "L";
    case UnitKind::Gru: return "G";
    }
    return "?";
}

/// One hidden layer of a preset layout, e.g. 24L or 16P.
struct LayerSpec {
    std::size_t width = 0;
    UnitKind unit = UnitKind::Perceptron;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Parses "24L,16P,16P".
inline std::vector<LayerSpec> parse_layout(std::string_view text) {
    std::vector<LayerSpec> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find(',', pos);
        if (end == std::string_view::npos) end = text.size();
        auto tok = text.substr(pos, end - pos);
        while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
        while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
        if (tok.size() < 2) throw ConfigError("bad layer token '" + std::string(tok) + "'");
        LayerSpec spec;
        switch (tok.back()) {
        case 'P': spec.unit = UnitKind::Perceptron; break;
        case 'L': spec.unit = UnitKind::Lstm; break;
        case 'G': spec.unit = UnitKind::Gru; break;
        default: throw ConfigError("bad unit kind in '" + std::string(tok) + "'");
        }
        try {
            spec.width = std::stoul(std::string(tok.substr(0, tok.size() - 1)));
        } catch (const std::exception&) {
            throw ConfigError("bad layer width in '" + std::string(tok) + "'");
        }
        if (spec.width == 0) throw ConfigError("layer width must be > 0");
        out.push_back(spec);
        pos = end + 1;
    }
    return out;
}

inline std::string format_layout(const std::vector<LayerSpec>& layout) {
    std::string s;
    for (const auto& l : layout) {
        if (!s.empty()) s += ',';
        s += std::to_string(l.width);
        s += name_of(l.unit);
    }
    return s;
}

inline std::size_t layer_input_size(const Layer& l) {
    return std::visit([](const auto& x) { return x.input_size(); }, l);
}

inline std::size_t layer_output_size(const Layer& l) {
    return std::visit(
        [](const auto& x) {
            if constexpr (std::is_same_v<std::decay_t<decltype(x)>, DenseLayer>) return x.output_size();
            else return x.hidden_size();
        },
        l);
}

inline bool is_recurrent(const Layer& l) { return !std::holds_alternative<DenseLayer>(l); }

struct Network {
    std::vector<Layer> layers;

    std::size_t input_size() const { return layers.empty() ? 0 : layer_input_size(layers.front()); }
    std::size_t output_size() const { return layers.empty() ? 0 : layer_output_size(layers.back()); }

    /// Index one past the last recurrent layer; layers from here on are
    /// stateless and only need evaluating where an output is wanted.
    std::size_t tail_begin() const {
        std::size_t t = 0;
        for (std::size_t k = 0; k < layers.size(); ++k)
            if (is_recurrent(layers[k])) t = k + 1;
        return t;
    }

    bool recurrent() const { return tail_begin() > 0; }

    void check() const {
        require(!layers.empty(), "network has no layers");
        for (std::size_t k = 0; k < layers.size(); ++k) {
            std::visit([](const auto& x) { x.check(); }, layers[k]);
            if (k > 0)
                require(layer_input_size(layers[k]) == layer_output_size(layers[k - 1]),
                        "layer " + std::to_string(k) + " input size does not match previous output size");
        }
    }

    template <typename F>
    void for_each_param(F&& f) {
        for (auto& l : layers) std::visit([&](auto& x) { x.for_each_param(f); }, l);
    }

    template <typename F>
    void for_each_param(F&& f) const {
        const_cast<Network*>(this)->for_each_param([&](std::span<double> s) { f(std::span<const double>(s)); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_param([&](std::span<const double> s) { n += s.size(); });
        return n;
    }

    /// Same architecture, every parameter zero.
    Network zeros_like() const {
        Network z = *this;
        z.for_each_param([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
        return z;
    }

    std::vector<RecurrentState> zero_state() const {
        std::vector<RecurrentState> s(layers.size());
        for (std::size_t k = 0; k < layers.size(); ++k) {
            if (const auto* c = std::get_if<LstmCell>(&layers[k])) s[k] = RecurrentState::zeros(c->hidden_size(), true);
            else if (const auto* g = std::get_if<GruCell>(&layers[k])) s[k] = RecurrentState::zeros(g->hidden_size(), false);
        }
        return s;
    }

    bool all_finite() const {
        bool ok = true;
        for_each_param([&](std::span<const double> s) {
            for (double x : s) ok = ok && std::isfinite(x);
        });
        return ok;
    }
};

/// Builds input -> hidden layout -> dense output, Glorot-initialized.
inline Network build_network(std::size_t inputs, const std::vector<LayerSpec>& hidden, std::size_t outputs,
                             Activation output_activation, Rng& rng, Activation hidden_activation = Activation::Tanh,
                             Activation gate_activation = Activation::Logistic) {
    Network net;
    std::size_t width = inputs;
    for (const auto& spec : hidden) {
        switch (spec.unit) {
        case UnitKind::Perceptron: {
            DenseLayer d(width, spec.width, hidden_activation);
            glorot_uniform(d.weights, rng);
            net.layers.emplace_back(std::move(d));
            break;
        }
        case UnitKind::Lstm: {
            LstmCell c(width, spec.width, gate_activation);
            for (auto* g : {&c.forget, &c.input, &c.output, &c.candidate}) {
                glorot_uniform(g->input_weights, rng);
                glorot_uniform(g->recurrent_weights, rng);
            }
            net.layers.emplace_back(std::move(c));
            break;
        }
        case UnitKind::Gru: {
            GruCell c(width, spec.width, gate_activation);
            for (auto* g : {&c.update, &c.reset, &c.candidate}) {
                glorot_uniform(g->input_weights, rng);
                glorot_uniform(g->recurrent_weights, rng);
            }
            net.layers.emplace_back(std::move(c));
            break;
        }
        }
        width = spec.width;
    }
    DenseLayer out(width, outputs, output_activation);
    glorot_uniform(out.weights, rng);
    net.layers.emplace_back(std::move(out));
    return net;
}

// ---------------------------------------------------------------------------

using StepCache = std::variant<DenseCache, LstmCache, GruCache>;

struct SequenceTrace {
    std::vector<std::vector<StepCache>> caches; // [step][layer]; tail entries only where evaluated
    std::vector<Vector> outputs;                // empty where the output was not requested
    std::vector<RecurrentState> final_state;
};

/// Runs the network over `inputs` from `state`. `want_output[t]` selects the
/// steps at which the stateless tail is evaluated (all steps when empty).
inline SequenceTrace forward_sequence(const Network& net, std::span<const Vector> inputs,
                                      std::vector<RecurrentState> state, std::span<const char> want_output = {},
                                      bool keep_cache = true) {
    require(want_output.empty() || want_output.size() == inputs.size(), "output mask length mismatch");
    require(state.size() == net.layers.size(), "state count != layer count");
    const std::size_t tail = net.tail_begin();
    SequenceTrace trace;
    trace.outputs.resize(inputs.size());
    if (keep_cache) trace.caches.resize(inputs.size());

    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const bool emit = want_output.empty() || want_output[t];
        if (!emit && tail == 0) continue;
        if (keep_cache) trace.caches[t].resize(net.layers.size());
        Vector x = inputs[t];
        const std::size_t stop = emit ? net.layers.size() : tail;
        for (std::size_t k = 0; k < stop; ++k) {
            const Layer& layer = net.layers[k];
            if (const auto* d = std::get_if<DenseLayer>(&layer)) {
                DenseCache* c = keep_cache ? &trace.caches[t][k].emplace<DenseCache>() : nullptr;
                x = dense_forward(*d, x, c);
            } else if (const auto* l = std::get_if<LstmCell>(&layer)) {
                LstmCache* c = keep_cache ? &trace.caches[t][k].emplace<LstmCache>() : nullptr;
                state[k] = lstm_step(*l, x, state[k], c);
                x = state[k].h;
            } else {
                const auto& g = std::get<GruCell>(layer);
                GruCache* c = keep_cache ? &trace.caches[t][k].emplace<GruCache>() : nullptr;
                state[k] = gru_step(g, x, state[k], c);
                x = state[k].h;
            }
        }
        if (emit) trace.outputs[t] = std::move(x);
    }
    trace.final_state = std::move(state);
    return trace;
}

/// Single-step convenience for stateless networks.
inline Vector predict(const Network& net, std::span<const double> x) {
    Vector in(x.begin(), x.end());
    auto trace = forward_sequence(net, std::span<const Vector>(&in, 1), net.zero_state(), {}, false);
    return std::move(trace.outputs.front());
}

/// Backpropagation through time. `output_grads[t]` is dL/dy_t (empty where
/// the step carries no loss). Gradients are accumulated into `grad`, which
/// must have the architecture of `net`. The initial state is treated as a
/// constant.
inline void backward_sequence(const Network& net, const SequenceTrace& trace, std::span<const Vector> output_grads,
                              Network& grad) {
    require(output_grads.size() == trace.outputs.size(), "gradient sequence length mismatch");
    require(trace.caches.size() == trace.outputs.size(), "trace was recorded without caches");
    const std::size_t n_layers = net.layers.size();
    const std::size_t tail = net.tail_begin();

    std::vector<Vector> carry_h(n_layers), carry_c(n_layers);
    for (std::size_t k = 0; k < tail; ++k) {
        if (!is_recurrent(net.layers[k])) continue;
        const auto hid = layer_output_size(net.layers[k]);
        carry_h[k].assign(hid, 0.0);
        if (std::holds_alternative<LstmCell>(net.layers[k])) carry_c[k].assign(hid, 0.0);
    }

    for (std::size_t step = trace.outputs.size(); step-- > 0;) {
        const auto& caches = trace.caches[step];
        const bool has_loss = !output_grads[step].empty();
        if (has_loss) require(!trace.outputs[step].empty(), "loss at a step whose output was not evaluated");
        if (caches.empty()) continue;

        Vector d;
        if (has_loss) {
            d = output_grads[step];
            for (std::size_t k = n_layers; k-- > tail;)
                d = dense_backward(std::get<DenseLayer>(net.layers[k]), std::get<DenseCache>(caches[k]), std::move(d),
                                   std::get<DenseLayer>(grad.layers[k]));
        }
        for (std::size_t k = tail; k-- > 0;) {
            const Layer& layer = net.layers[k];
            if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
                if (d.empty()) d.assign(dl->output_size(), 0.0);
                d = dense_backward(*dl, std::get<DenseCache>(caches[k]), std::move(d),
                                   std::get<DenseLayer>(grad.layers[k]));
                continue;
            }
            Vector& dh = carry_h[k];
            if (!d.empty())
                for (std::size_t j = 0; j < dh.size(); ++j) dh[j] += d[j];
            if (const auto* lc = std::get_if<LstmCell>(&layer))
                d = lstm_backward(*lc, std::get<LstmCache>(caches[k]), dh, carry_c[k], std::get<LstmCell>(grad.layers[k]));
            else
                d = gru_backward(std::get<GruCell>(layer), std::get<GruCache>(caches[k]), dh,
                                 std::get<GruCell>(grad.layers[k]));
        }
    }
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { MeanSquaredError, CrossEntropy };

inline constexpr double kProbabilityFloor = 1e-12;

struct LossValue {
    double value = 0.0;
    std::size_t clamped = 0; // true-class probabilities floored at kProbabilityFloor
};

/// MSE is the mean over every element of every targeted step; cross-entropy
/// is -mean log p(true class) over targeted steps with one-hot targets.
/// Steps whose target is empty are skipped. When `grads` is non-null it
/// receives dL/dprediction per step.
inline LossValue sequence_loss(LossKind kind, std::span<const Vector> predictions, std::span<const Vector> targets,
                               std::vector<Vector>* grads = nullptr) {
    require(predictions.size() == targets.size(), "loss: sequence length mismatch");
    std::size_t count = 0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (targets[t].empty()) continue;
        require(predictions[t].size() == targets[t].size(), "loss: prediction/target width mismatch");
        count += kind == LossKind::MeanSquaredError ? targets[t].size() : 1;
    }
    if (grads) {
        grads->assign(targets.size(), Vector{});
    }
    LossValue out;
    if (count == 0) return out;
    const double scale = 1.0 / static_cast<double>(count);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (targets[t].empty()) continue;
        const auto& y = predictions[t];
        const auto& target = targets[t];
        Vector g;
        if (grads) g.assign(y.size(), 0.0);
        if (kind == LossKind::MeanSquaredError) {
            for (std::size_t j = 0; j < y.size(); ++j) {
                const double e = y[j] - target[j];
                out.value += e * e * scale;
                if (grads) g[j] = 2.0 * e * scale;
            }
        } else {
            for (std::size_t j = 0; j < y.size(); ++j) {
                if (target[j] == 0.0) continue;
                double p = y[j];
                if (p < kProbabilityFloor) {
                    p = kProbabilityFloor;
                    ++out.clamped;
                }
                out.value -= target[j] * std::log(p) * scale;
                if (grads) g[j] = -target[j] / p * scale;
            }
        }
        if (grads) (*grads)[t] = std::move(g);
    }
    return out;
}

/// Row-wise loss over a batch of predictions.
inline LossValue loss(LossKind kind, const Matrix& predictions, const Matrix& targets) {
    require(predictions.same_shape(targets), "loss: prediction/target shape mismatch");
    std::vector<Vector> p(predictions.rows), y(targets.rows);
    for (std::size_t r = 0; r < predictions.rows; ++r) {
        p[r].assign(predictions.row(r).begin(), predictions.row(r).end());
        y[r].assign(targets.row(r).begin(), targets.row(r).end());
    }
    return sequence_loss(kind, p, y);
}

inline Vector one_hot(std::size_t index, std::size_t n) {
    Vector v(n, 0.0);
    v.at(index) = 1.0;
    return v;
}

} // namespace tfdd
