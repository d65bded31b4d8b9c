#pragma once

// Minibatch training loop with early stopping.

#include "optimizer.hpp"

#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace tfdd {

/// A training unit: a short input sequence with optional targets per step.
/// Feed-forward samples are windows of length one.
struct Window {
    std::vector<Vector> inputs;
    std::vector<Vector> targets; // same length as inputs; empty entries carry no loss
    std::vector<char> mask;      // steps whose output is needed

    static Window single(Vector x, Vector y) {
        Window w;
        w.inputs.push_back(std::move(x));
        w.targets.push_back(std::move(y));
        w.mask.push_back(1);
        return w;
    }

    void finalize_mask() {
        mask.resize(targets.size());
        for (std::size_t k = 0; k < targets.size(); ++k) mask[k] = targets[k].empty() ? 0 : 1;
    }
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 1;
    std::size_t patience = 20; // epochs without validation improvement before stopping
    double clip_norm = 0.0;    // 0 disables clipping
    AdamConfig adam;
    LossKind loss = LossKind::MeanSquaredError;
    /// Windows are consecutive slices of one stream: kept in order and the
    /// recurrent state is carried (not differentiated) from one to the next.
    bool stateful = false;
};

struct History {
    std::vector<double> train_loss;
    std::vector<double> val_loss; // empty without validation data
    std::size_t best_epoch = 0;   // 1-based count of epochs of the kept parameters
};

/// Mean loss over windows without touching parameters.
inline double evaluate_loss(const Network& net, const std::vector<Window>& windows, const TrainConfig& cfg) {
    if (windows.empty()) return 0.0;
    auto state = net.zero_state();
    double total = 0.0;
    for (const auto& w : windows) {
        auto trace = forward_sequence(net, w.inputs, cfg.stateful ? state : net.zero_state(), w.mask, false);
        total += sequence_loss(cfg.loss, trace.outputs, w.targets).value;
        if (cfg.stateful) state = std::move(trace.final_state);
    }
    return total / static_cast<double>(windows.size());
}

/// Loss and gradient of one window, gradient accumulated into `grad` with
/// weight `scale`.
inline double accumulate_gradient(const Network& net, const Window& w, std::vector<RecurrentState>& state,
                                  LossKind kind, double scale, Network& grad) {
    auto trace = forward_sequence(net, w.inputs, state, w.mask, true);
    std::vector<Vector> dy;
    const double value = sequence_loss(kind, trace.outputs, w.targets, &dy).value;
    if (!std::isfinite(value)) throw NumericError("non-finite loss");
    for (auto& g : dy)
        for (auto& x : g) x *= scale;
    backward_sequence(net, trace, dy, grad);
    state = std::move(trace.final_state);
    return value;
}

/// Trains `net` in place. With validation windows the parameters of the best
/// validation epoch are restored and training stops after `patience` epochs
/// without improvement. Throws TrainingError naming the epoch on a non-finite
/// loss.
inline History fit(Network& net, const std::vector<Window>& train, const std::vector<Window>& val,
                   const TrainConfig& cfg, Rng& rng) {
    if (train.empty()) throw DataError("fit: no training windows");
    if (cfg.batch_size == 0) throw ConfigError("fit: batch size must be >= 1");
    net.check();

    History history;
    OptimizerState opt(net, cfg.adam);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    if (cfg.epochs == 0) {
        history.train_loss.push_back(evaluate_loss(net, train, cfg));
        if (!val.empty()) history.val_loss.push_back(evaluate_loss(net, val, cfg));
        return history;
    }

    Network best = net;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    Network grad = net.zeros_like();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (!cfg.stateful) rng.shuffle(order.begin(), order.end());
        auto state = net.zero_state();
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const double scale = 1.0 / static_cast<double>(stop - start);
            grad.for_each_param([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
            for (std::size_t k = start; k < stop; ++k) {
                if (!cfg.stateful) state = net.zero_state();
                double value;
                try {
                    value = accumulate_gradient(net, train[order[k]], state, cfg.loss, scale, grad);
                } catch (const NumericError& e) {
                    throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
                }
                epoch_loss += value;
            }
            if (cfg.clip_norm > 0.0) clip_gradients(grad, cfg.clip_norm);
            try {
                adam_update(net, grad, opt);
            } catch (const NumericError& e) {
                throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
            }
        }
        epoch_loss /= static_cast<double>(train.size());
        if (!std::isfinite(epoch_loss)) throw TrainingError("epoch " + std::to_string(epoch) + ": non-finite loss");
        history.train_loss.push_back(epoch_loss);

        if (val.empty()) {
            history.best_epoch = epoch;
            continue;
        }
        const double vl = evaluate_loss(net, val, cfg);
        if (!std::isfinite(vl))
            throw TrainingError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
        history.val_loss.push_back(vl);
        if (vl < best_val) {
            best_val = vl;
            best = net;
            history.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    if (!val.empty() && history.best_epoch > 0) net = std::move(best);
    return history;
}

} // namespace tfdd
