#pragma once

// Nominal-model regressors (static MLP, NARX, LSTM, GRU) and condition
// classifiers assembled from the network engine and the preprocessing steps.

#include "frame.hpp"
#include "metrics.hpp"
#include "network.hpp"
#include "parallel.hpp"
#include "preprocess.hpp"
#include "training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tfdd {

// ===========================================================================
// Regressors

enum class RegressorKind { Mlp, MlpDeadtimeDeadband, Narx, NarxDeadband, Lstm, Gru };

inline constexpr std::array<RegressorKind, 6> kAllRegressorKinds = {
    RegressorKind::Mlp,          RegressorKind::MlpDeadtimeDeadband, RegressorKind::Narx,
    RegressorKind::NarxDeadband, RegressorKind::Lstm,                RegressorKind::Gru,
};

/// CLI preset name.
inline std::string_view preset_name(RegressorKind k) {
    switch (k) {
    case RegressorKind::Mlp: return "mlp";
    case RegressorKind::MlpDeadtimeDeadband: return "mlp-d-db";
    case RegressorKind::Narx: return "narx";
    case RegressorKind::NarxDeadband: return "narx-db";
    case RegressorKind::Lstm: return "lstm";
    case RegressorKind::Gru: return "gru";
    }
    return "?";
}

/// Row label used in score tables.
inline std::string_view display_name(RegressorKind k) {
    switch (k) {
    case RegressorKind::Mlp: return "MLP";
    case RegressorKind::MlpDeadtimeDeadband: return "MLP+D+DB";
    case RegressorKind::Narx: return "NARXNN";
    case RegressorKind::NarxDeadband: return "NARXNN+DB";
    case RegressorKind::Lstm: return "LSTM";
    case RegressorKind::Gru: return "GRU";
    }
    return "?";
}

inline RegressorKind parse_regressor_kind(std::string_view name) {
    for (auto k : kAllRegressorKinds)
        if (preset_name(k) == name) return k;
    throw ConfigError("unknown regressor preset '" + std::string(name) + "'");
}

/// Inputs are (u, v), outputs (rpm, i).
struct RegressorSpec {
    RegressorKind kind = RegressorKind::Narx;
    std::vector<LayerSpec> hidden;
    DelaySpec delays;          // taps on (u, v) and, for NARX, on (rpm, i)
    std::size_t lookback = 1;  // BPTT window of the recurrent kinds
    TrainConfig training;
    double deadband_u = 0.05;
    std::size_t deadtime_samples = 6;
    Activation gate_activation = Activation::Logistic;

    bool output_feedback() const { return kind == RegressorKind::Narx || kind == RegressorKind::NarxDeadband; }
    bool recurrent() const { return kind == RegressorKind::Lstm || kind == RegressorKind::Gru; }
    bool uses_deadband() const {
        return kind == RegressorKind::MlpDeadtimeDeadband || kind == RegressorKind::NarxDeadband;
    }
    bool uses_deadtime() const { return kind == RegressorKind::MlpDeadtimeDeadband; }
    std::size_t max_delay() const { return delays.max_delay(output_feedback()); }

    void validate() const {
        if (delays.inputs.size() != 2) throw ConfigError("regressor: need taps for the 2 inputs (u, v)");
        if (output_feedback() && delays.outputs.size() != 2)
            throw ConfigError("regressor: NARX needs taps for the 2 outputs (rpm, i)");
        if (delays.feature_width(output_feedback()) == 0) throw ConfigError("regressor: no input features");
        if (training.batch_size == 0) throw ConfigError("regressor: batch size must be >= 1");
        if (recurrent() && lookback == 0) throw ConfigError("regressor: lookback must be >= 1");
        if (!(deadband_u >= 0.0 && deadband_u < 1.0)) throw ConfigError("regressor: deadband must be in [0, 1)");
        for (const auto& l : hidden) {
            if (l.width == 0) throw ConfigError("regressor: zero-width layer");
            if (!recurrent() && l.unit != UnitKind::Perceptron)
                throw ConfigError("regressor: only the lstm/gru presets take recurrent layers");
        }
    }
};

/// Layouts and batch sizes of the best configurations found by grid search;
/// all hidden units are tanh.
inline RegressorSpec regressor_preset(RegressorKind kind) {
    RegressorSpec s;
    s.kind = kind;
    s.training.epochs = 200;
    s.training.patience = 20;
    switch (kind) {
    case RegressorKind::Mlp:
    case RegressorKind::MlpDeadtimeDeadband:
        s.hidden = parse_layout("8P,4P");
        s.training.batch_size = 10;
        s.delays.inputs = {{1, 0}, {1, 0}};
        break;
    case RegressorKind::Narx:
    case RegressorKind::NarxDeadband:
        s.hidden = parse_layout("32P,4P");
        s.training.batch_size = 5;
        s.delays.inputs = {{20, 0}, {20, 0}};
        s.delays.outputs = {{2, 0}, {2, 0}};
        break;
    case RegressorKind::Lstm:
        s.hidden = parse_layout("24L,16P,16P");
        s.training.batch_size = 5;
        s.delays.inputs = {{1, 0}, {1, 0}};
        break;
    case RegressorKind::Gru:
        s.hidden = parse_layout("24G,16P,16P");
        s.training.batch_size = 5;
        s.delays.inputs = {{1, 0}, {1, 0}};
        break;
    }
    s.training.stateful = s.recurrent();
    return s;
}

inline RegressorSpec regressor_preset(std::string_view name) { return regressor_preset(parse_regressor_kind(name)); }

struct TrainedRegressor {
    RegressorSpec spec;
    Network network;
    ScalerParams input_scaler;  // (u after augmentation, v)
    ScalerParams output_scaler; // (rpm, i)
    History history;
    std::vector<double> cv_scores; // mean r2 per fold, free-running on the validation block
    std::size_t scaler_samples = 0; // scalers were fitted on samples [0, scaler_samples) of the training frame
    std::uint64_t seed = 0;
};

/// Per-channel r2 of the two outputs and their mean.
struct RegressionScore {
    double rpm = 0.0;
    double current = 0.0;
    double mean() const { return 0.5 * (rpm + current); }
};

namespace detail {

/// Input channels after static augmentation (dead time, deadband).
inline std::array<std::vector<double>, 2> augmented_inputs(const RegressorSpec& spec, std::span<const double> u,
                                                           std::span<const double> v) {
    std::vector<double> uu(u.begin(), u.end());
    if (spec.uses_deadtime()) uu = apply_deadtime(uu, spec.deadtime_samples);
    if (spec.uses_deadband()) uu = apply_deadband(uu, spec.deadband_u);
    return {std::move(uu), std::vector<double>(v.begin(), v.end())};
}

inline std::array<std::vector<double>, 2> scaled(const ScalerParams& s, const std::array<std::vector<double>, 2>& x) {
    return {s.transform(0, x[0]), s.transform(1, x[1])};
}

/// Scaled (features, targets) of one frame, rows for target times
/// max_delay .. n-1.
inline Embedding regressor_embedding(const TrainedRegressor& m, const TimeSeriesFrame& f) {
    const auto in = scaled(m.input_scaler, augmented_inputs(m.spec, f.u, f.v));
    const std::array<std::vector<double>, 2> out{m.output_scaler.transform(0, f.rpm),
                                                 m.output_scaler.transform(1, f.i)};
    return tapped_delay_embed(in, out, m.spec.delays, m.spec.output_feedback());
}

inline std::vector<Vector> rows_of(const Matrix& m, std::size_t first = 0) {
    std::vector<Vector> out;
    out.reserve(m.rows - first);
    for (std::size_t r = first; r < m.rows; ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
    return out;
}

/// Training windows from embedded rows [first, last).
inline std::vector<Window> regressor_windows(const RegressorSpec& spec, const Embedding& e, std::size_t first,
                                             std::size_t last) {
    std::vector<Window> out;
    if (!spec.recurrent()) {
        out.reserve(last - first);
        for (std::size_t r = first; r < last; ++r)
            out.push_back(Window::single(Vector(e.features.row(r).begin(), e.features.row(r).end()),
                                         Vector(e.targets.row(r).begin(), e.targets.row(r).end())));
        return out;
    }
    for (std::size_t r = first; r < last; r += spec.lookback) {
        Window w;
        for (std::size_t k = r; k < std::min(last, r + spec.lookback); ++k) {
            w.inputs.emplace_back(e.features.row(k).begin(), e.features.row(k).end());
            w.targets.emplace_back(e.targets.row(k).begin(), e.targets.row(k).end());
        }
        w.finalize_mask();
        out.push_back(std::move(w));
    }
    return out;
}

inline void require_channels(const TimeSeriesFrame& f) {
    f.validate();
    auto finite = [](const std::vector<double>& c) {
        return std::all_of(c.begin(), c.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(f.u) || !finite(f.v) || !finite(f.rpm) || !finite(f.i))
        throw DataError("frame contains non-finite samples");
}

inline constexpr double kDivergenceLimit = 1e3;

} // namespace detail

/// One-step-ahead predictions from measured history, physical units; row r
/// is the prediction for sample r + max_delay. Recurrent kinds run their
/// state from the first sample.
inline Matrix predict_series_parallel(const TrainedRegressor& m, const TimeSeriesFrame& f) {
    detail::require_channels(f);
    const auto e = detail::regressor_embedding(m, f);
    const auto xs = detail::rows_of(e.features);
    auto trace = forward_sequence(m.network, xs, m.network.zero_state(), {}, false);
    Matrix out(xs.size(), 2);
    for (std::size_t r = 0; r < xs.size(); ++r)
        for (std::size_t c = 0; c < 2; ++c) out(r, c) = m.output_scaler.inverse(c, trace.outputs[r][c]);
    return out;
}

/// Free-running prediction: fed-back outputs are the model's own past
/// predictions, seeded with `initial_history` (max_delay x 2, physical,
/// oldest first). Row r is the prediction for sample r + max_delay. Throws
/// InstabilityError once a scaled prediction exceeds 1e3 in magnitude.
inline Matrix predict_parallel(const TrainedRegressor& m, std::span<const double> u, std::span<const double> v,
                               const Matrix& initial_history) {
    if (u.size() != v.size()) throw DataError("predict_parallel: u and v differ in length");
    const std::size_t lag = m.spec.max_delay();
    if (initial_history.rows < lag || (lag > 0 && initial_history.cols != 2))
        throw DataError("predict_parallel: initial history needs " + std::to_string(lag) + " rows of (rpm, i)");
    if (u.size() <= lag) throw DataError("predict_parallel: input shorter than the max delay");

    const auto in = detail::scaled(m.input_scaler, detail::augmented_inputs(m.spec, u, v));
    const std::size_t n = u.size();
    Matrix out(n - lag, 2);

    if (!m.spec.output_feedback()) {
        const std::array<std::vector<double>, 2> none{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
        const auto e = tapped_delay_embed(in, none, m.spec.delays, false);
        auto trace = forward_sequence(m.network, detail::rows_of(e.features), m.network.zero_state(), {}, false);
        for (std::size_t r = 0; r < out.rows; ++r) {
            for (std::size_t c = 0; c < 2; ++c) {
                const double z = trace.outputs[r][c];
                if (!(std::abs(z) <= detail::kDivergenceLimit))
                    throw InstabilityError("prediction diverged at sample " + std::to_string(r + lag));
                out(r, c) = m.output_scaler.inverse(c, z);
            }
        }
        return out;
    }

    std::array<std::vector<double>, 2> fed{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    const std::size_t skip = initial_history.rows - lag;
    for (std::size_t k = 0; k < lag; ++k)
        for (std::size_t c = 0; c < 2; ++c) fed[c][k] = m.output_scaler.transform(c, initial_history(skip + k, c));

    Vector row(m.spec.delays.feature_width(true));
    for (std::size_t t = lag; t < n; ++t) {
        fill_feature_row(m.spec.delays, in, fed, true, t, row);
        const Vector y = predict(m.network, row);
        for (std::size_t c = 0; c < 2; ++c) {
            if (!(std::abs(y[c]) <= detail::kDivergenceLimit))
                throw InstabilityError("free-running prediction diverged at sample " + std::to_string(t));
            fed[c][t] = y[c];
            out(t - lag, c) = m.output_scaler.inverse(c, y[c]);
        }
    }
    return out;
}

/// Free-running prediction over a frame, seeded with its first measured samples.
inline Matrix predict_parallel(const TrainedRegressor& m, const TimeSeriesFrame& f) {
    detail::require_channels(f);
    const std::size_t lag = m.spec.max_delay();
    if (f.size() <= lag) throw DataError("predict_parallel: frame shorter than the max delay");
    Matrix history(lag, 2);
    for (std::size_t k = 0; k < lag; ++k) {
        history(k, 0) = f.rpm[k];
        history(k, 1) = f.i[k];
    }
    return predict_parallel(m, f.u, f.v, history);
}

enum class PredictionMode { SeriesParallel, Parallel };

inline std::string_view name_of(PredictionMode m) {
    return m == PredictionMode::Parallel ? "parallel" : "series-parallel";
}

inline PredictionMode parse_prediction_mode(std::string_view s) {
    if (s == "parallel") return PredictionMode::Parallel;
    if (s == "series-parallel") return PredictionMode::SeriesParallel;
    throw ConfigError("unknown prediction mode '" + std::string(s) + "'");
}

/// r2 of both outputs on the samples [first, n) of `f`, where first defaults
/// to the model's max delay.
inline RegressionScore score_regressor(const TrainedRegressor& m, const TimeSeriesFrame& f, PredictionMode mode,
                                       std::size_t first = 0) {
    const std::size_t lag = m.spec.max_delay();
    const Matrix pred = mode == PredictionMode::Parallel ? predict_parallel(m, f) : predict_series_parallel(m, f);
    first = std::max(first, lag);
    if (first >= f.size()) throw DataError("score: nothing to score");
    std::vector<double> p_rpm, p_i;
    for (std::size_t t = first; t < f.size(); ++t) {
        p_rpm.push_back(pred(t - lag, 0));
        p_i.push_back(pred(t - lag, 1));
    }
    const std::span<const double> rpm(f.rpm.data() + first, f.size() - first);
    const std::span<const double> cur(f.i.data() + first, f.size() - first);
    return {r2_score(rpm, p_rpm), r2_score(cur, p_i)};
}

namespace detail {

/// Fits scalers on samples [0, train_end), trains with early stopping on
/// rows whose target falls in [val_begin, val_end) (none when val_end == 0).
inline TrainedRegressor fit_regressor_once(const RegressorSpec& spec, const TimeSeriesFrame& frame,
                                           std::size_t train_end, std::size_t val_begin, std::size_t val_end,
                                           std::uint64_t seed) {
    TrainedRegressor m;
    m.spec = spec;
    m.seed = seed;
    const auto aug = augmented_inputs(spec, std::span(frame.u.data(), train_end), std::span(frame.v.data(), train_end));
    m.input_scaler = fit_scaler(aug);
    const std::array<std::vector<double>, 2> targets{std::vector<double>(frame.rpm.begin(), frame.rpm.begin() + static_cast<std::ptrdiff_t>(train_end)),
                                                     std::vector<double>(frame.i.begin(), frame.i.begin() + static_cast<std::ptrdiff_t>(train_end))};
    m.output_scaler = fit_scaler(targets);
    m.scaler_samples = train_end;

    const std::size_t lag = spec.max_delay();
    if (train_end <= lag + 1) throw DataError("regressor: training portion shorter than the max delay");
    const std::size_t end = std::max(train_end, val_end);
    const auto e = regressor_embedding(m, frame.slice(0, end));
    const auto train = regressor_windows(spec, e, 0, train_end - lag);
    std::vector<Window> val;
    if (val_end > val_begin) val = regressor_windows(spec, e, std::max(val_begin, lag) - lag, val_end - lag);

    Rng rng(seed);
    const std::size_t width = spec.delays.feature_width(spec.output_feedback());
    m.network = build_network(width, spec.hidden, 2, Activation::Linear, rng, Activation::Tanh, spec.gate_activation);
    m.history = fit(m.network, train, val, spec.training, rng);
    return m;
}

} // namespace detail

/// Cross-validates `spec` on forward-chaining folds of `frame` (scalers
/// fitted on each fold's training block only), then refits on the whole
/// frame for the configured epochs. NARX kinds train series-parallel.
inline TrainedRegressor train_regressor(const RegressorSpec& spec, const TimeSeriesFrame& frame, const SplitSpec& split,
                                        std::uint64_t seed) {
    spec.validate();
    detail::require_channels(frame);
    const std::size_t lag = spec.max_delay();
    const auto folds = ts_kfold(frame.size(), split);
    if (folds.front().train_end <= lag + 4)
        throw DataError("regressor: " + std::to_string(frame.size()) + " samples are too few for the first fold");

    std::vector<double> scores;
    for (std::size_t j = 0; j < folds.size(); ++j) {
        const auto& fold = folds[j];
        auto m = detail::fit_regressor_once(spec, frame, fold.train_end, fold.val_begin, fold.val_end,
                                            derive_seed(seed, 100 + j));
        // Free-run across the validation block, seeded with the measured
        // samples right before it; recurrent kinds warm up from the start.
        const std::size_t start = spec.recurrent() ? 0 : fold.val_begin - lag;
        const auto segment = frame.slice(start, fold.val_end);
        double score;
        try {
            score = score_regressor(m, segment, PredictionMode::Parallel, fold.val_begin - start).mean();
        } catch (const InstabilityError&) {
            score = -std::numeric_limits<double>::infinity();
        }
        scores.push_back(score);
    }

    auto model = detail::fit_regressor_once(spec, frame, frame.size(), 0, 0, derive_seed(seed, 1));
    model.spec = spec;
    model.cv_scores = std::move(scores);
    model.seed = seed;
    return model;
}

// ===========================================================================
// Classifiers

enum class ClassifierKind { Mlp, Lstm };
enum class FeatureMode { AllSignals, Residuals };

inline std::string_view name_of(FeatureMode m) { return m == FeatureMode::Residuals ? "residuals" : "all"; }

inline FeatureMode parse_feature_mode(std::string_view s) {
    if (s == "residuals" || s == "res") return FeatureMode::Residuals;
    if (s == "all") return FeatureMode::AllSignals;
    throw ConfigError("unknown feature mode '" + std::string(s) + "'");
}

inline std::size_t feature_width(FeatureMode m) { return m == FeatureMode::Residuals ? 2 : 4; }

struct ClassifierSpec {
    ClassifierKind kind = ClassifierKind::Mlp;
    FeatureMode features = FeatureMode::Residuals;
    std::vector<LayerSpec> hidden;
    std::size_t window = 8; // LSTM input sequence length
    TrainConfig training;
    Activation gate_activation = Activation::HardSigmoid;

    std::string name() const {
        return std::string(kind == ClassifierKind::Mlp ? "MLP" : "LSTM") + "_" +
               (features == FeatureMode::Residuals ? "res" : "all");
    }

    void validate() const {
        if (training.batch_size == 0) throw ConfigError("classifier: batch size must be >= 1");
        if (kind == ClassifierKind::Lstm && window == 0) throw ConfigError("classifier: window must be >= 1");
        for (const auto& l : hidden) {
            if (l.width == 0) throw ConfigError("classifier: zero-width layer");
            if (kind == ClassifierKind::Mlp && l.unit != UnitKind::Perceptron)
                throw ConfigError("classifier: MLP takes perceptron layers only");
        }
    }
};

inline ClassifierSpec classifier_preset(std::string_view name) {
    ClassifierSpec s;
    s.training.loss = LossKind::CrossEntropy;
    s.training.batch_size = 1;
    s.training.epochs = 30;
    s.training.patience = 5;
    if (name == "clf-mlp-all" || name == "clf-mlp-res") {
        s.kind = ClassifierKind::Mlp;
        s.hidden = parse_layout("48P,48P");
    } else if (name == "clf-lstm-all") {
        s.kind = ClassifierKind::Lstm;
        s.hidden = parse_layout("8L,48P,48P");
    } else if (name == "clf-lstm-res") {
        s.kind = ClassifierKind::Lstm;
        s.hidden = parse_layout("16L,48P,48P");
    } else {
        throw ConfigError("unknown classifier preset '" + std::string(name) + "'");
    }
    s.features = name.ends_with("-res") ? FeatureMode::Residuals : FeatureMode::AllSignals;
    return s;
}

/// Labeled feature rows made of contiguous segments (one continuous record
/// each); sequences never cross a segment boundary.
struct ClassifierDataset {
    Matrix features;
    std::vector<FaultCondition> labels;
    std::vector<std::size_t> segment_starts{0};

    std::size_t size() const { return labels.size(); }

    std::pair<std::size_t, std::size_t> segment(std::size_t s) const {
        return {segment_starts[s], s + 1 < segment_starts.size() ? segment_starts[s + 1] : size()};
    }

    void validate() const {
        if (features.rows != labels.size()) throw DataError("dataset: feature rows != label count");
        if (segment_starts.empty() || segment_starts.front() != 0) throw DataError("dataset: first segment must start at 0");
        for (std::size_t k = 1; k < segment_starts.size(); ++k)
            if (segment_starts[k] <= segment_starts[k - 1] || segment_starts[k] >= size())
                throw DataError("dataset: segment starts must be increasing and in range");
        for (double x : features.data)
            if (!std::isfinite(x)) throw DataError("dataset: non-finite feature");
    }

    /// Appends `other` as new segments.
    void append(const ClassifierDataset& other) {
        if (size() == 0) {
            *this = other;
            return;
        }
        if (other.features.cols != features.cols) throw ShapeError("dataset: feature width mismatch");
        const std::size_t base = size();
        features.data.insert(features.data.end(), other.features.data.begin(), other.features.data.end());
        features.rows += other.features.rows;
        labels.insert(labels.end(), other.labels.begin(), other.labels.end());
        for (auto s : other.segment_starts) segment_starts.push_back(base + s);
    }

    ClassifierDataset subset(const std::vector<std::pair<std::size_t, std::size_t>>& ranges) const {
        ClassifierDataset out;
        out.features = Matrix(0, features.cols);
        out.segment_starts.clear();
        for (auto [a, b] : ranges) {
            if (a >= b) continue;
            out.segment_starts.push_back(out.size());
            out.features.data.insert(out.features.data.end(), features.data.begin() + static_cast<std::ptrdiff_t>(a * features.cols),
                                     features.data.begin() + static_cast<std::ptrdiff_t>(b * features.cols));
            out.features.rows += b - a;
            out.labels.insert(out.labels.end(), labels.begin() + static_cast<std::ptrdiff_t>(a),
                              labels.begin() + static_cast<std::ptrdiff_t>(b));
        }
        if (out.segment_starts.empty()) out.segment_starts.push_back(0);
        return out;
    }
};

struct TrainedClassifier {
    ClassifierSpec spec;
    Network network;
    ScalerParams scaler;
    History history;
    std::vector<double> cv_scores; // validation accuracy per fold
    std::uint64_t seed = 0;
};

struct ClassifierOutput {
    Matrix probabilities; // rows x 6
    std::vector<FaultCondition> labels;
};

namespace detail {

inline std::vector<Window> classifier_windows(const ClassifierSpec& spec, const ClassifierDataset& d,
                                              const ScalerParams& scaler, bool with_targets) {
    const Matrix x = scaler.transform(d.features);
    std::vector<Window> out;
    out.reserve(d.size());
    for (std::size_t s = 0; s < d.segment_starts.size(); ++s) {
        const auto [a, b] = d.segment(s);
        for (std::size_t t = a; t < b; ++t) {
            Window w;
            const std::size_t first = spec.kind == ClassifierKind::Lstm ? (t + 1 - std::min(spec.window, t + 1 - a)) : t;
            for (std::size_t k = first; k <= t; ++k) {
                w.inputs.emplace_back(x.row(k).begin(), x.row(k).end());
                w.targets.emplace_back();
            }
            w.targets.back() = with_targets ? one_hot(index_of(d.labels[t]), kNumConditions) : Vector{};
            w.mask.assign(w.inputs.size(), 0);
            w.mask.back() = 1;
            out.push_back(std::move(w));
        }
    }
    return out;
}

inline ScalerParams fit_feature_scaler(const ClassifierDataset& d) {
    std::vector<std::vector<double>> cols(d.features.cols);
    for (std::size_t c = 0; c < d.features.cols; ++c) {
        cols[c].resize(d.size());
        for (std::size_t r = 0; r < d.size(); ++r) cols[c][r] = d.features(r, c);
    }
    return fit_scaler(cols);
}

inline TrainedClassifier fit_classifier_once(const ClassifierSpec& spec, const ClassifierDataset& train,
                                             const ClassifierDataset* val, std::uint64_t seed) {
    TrainedClassifier m;
    m.spec = spec;
    m.seed = seed;
    m.scaler = fit_feature_scaler(train);
    const auto tw = classifier_windows(spec, train, m.scaler, true);
    std::vector<Window> vw;
    if (val) vw = classifier_windows(spec, *val, m.scaler, true);
    Rng rng(seed);
    m.network = build_network(train.features.cols, spec.hidden, kNumConditions, Activation::Softmax, rng,
                              Activation::Tanh, spec.gate_activation);
    m.history = fit(m.network, tw, vw, spec.training, rng);
    return m;
}

} // namespace detail

inline ClassifierOutput predict_classifier(const TrainedClassifier& m, const ClassifierDataset& d) {
    d.validate();
    if (d.features.cols != m.scaler.channels()) throw ShapeError("classifier: feature width does not match the model");
    const auto windows = detail::classifier_windows(m.spec, d, m.scaler, false);
    ClassifierOutput out;
    out.probabilities = Matrix(d.size(), kNumConditions);
    out.labels.resize(d.size());
    for (std::size_t r = 0; r < windows.size(); ++r) {
        const auto& w = windows[r];
        auto trace = forward_sequence(m.network, w.inputs, m.network.zero_state(), w.mask, false);
        const auto& p = trace.outputs.back();
        std::copy(p.begin(), p.end(), out.probabilities.row(r).begin());
        out.labels[r] = kAllConditions[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
    }
    return out;
}

inline double classifier_accuracy(const TrainedClassifier& m, const ClassifierDataset& d) {
    const auto out = predict_classifier(m, d);
    return confusion_matrix(d.labels, out.labels).accuracy();
}

/// Softmax/cross-entropy training with forward-chaining folds applied inside
/// every segment, then a refit on all data for the mean best epoch count.
inline TrainedClassifier train_classifier(const ClassifierSpec& spec, const ClassifierDataset& data,
                                          const SplitSpec& split, std::uint64_t seed) {
    spec.validate();
    data.validate();
    if (data.features.cols != feature_width(spec.features))
        throw ShapeError("classifier: " + std::string(name_of(spec.features)) + " features need " +
                         std::to_string(feature_width(spec.features)) + " columns, got " +
                         std::to_string(data.features.cols));
    std::array<bool, kNumConditions> present{};
    for (auto l : data.labels) present[index_of(l)] = true;
    for (std::size_t c = 0; c < kNumConditions; ++c)
        if (!present[c]) throw DataError("classifier: class " + std::string(name_of(kAllConditions[c])) + " has no samples");

    std::vector<std::vector<Fold>> seg_folds;
    for (std::size_t s = 0; s < data.segment_starts.size(); ++s) {
        const auto [a, b] = data.segment(s);
        seg_folds.push_back(ts_kfold(b - a, split));
    }

    std::vector<double> scores;
    double best_epochs = 0.0;
    for (std::size_t j = 0; j < split.k; ++j) {
        std::vector<std::pair<std::size_t, std::size_t>> tr, va;
        for (std::size_t s = 0; s < seg_folds.size(); ++s) {
            const auto a = data.segment(s).first;
            const auto& f = seg_folds[s][j];
            tr.emplace_back(a + f.train_begin, a + f.train_end);
            va.emplace_back(a + f.val_begin, a + f.val_end);
        }
        const auto train = data.subset(tr), val = data.subset(va);
        std::array<bool, kNumConditions> seen{};
        for (auto l : train.labels) seen[index_of(l)] = true;
        for (std::size_t c = 0; c < kNumConditions; ++c)
            if (!seen[c])
                throw DataError("classifier: class " + std::string(name_of(kAllConditions[c])) +
                                " absent from the training block of fold " + std::to_string(j + 1));
        auto m = detail::fit_classifier_once(spec, train, &val, derive_seed(seed, 200 + j));
        best_epochs += static_cast<double>(m.history.best_epoch);
        scores.push_back(classifier_accuracy(m, val));
    }

    ClassifierSpec final_spec = spec;
    final_spec.training.epochs =
        spec.training.epochs == 0 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(best_epochs / static_cast<double>(split.k))));
    auto model = detail::fit_classifier_once(final_spec, data, nullptr, derive_seed(seed, 2));
    model.spec = spec;
    model.cv_scores = std::move(scores);
    model.seed = seed;
    return model;
}

// ===========================================================================
// Grid search

template <typename Spec>
struct GridResult {
    Spec spec;
    std::size_t index = 0; // position in the grid
    double score = 0.0;    // mean cross-validation score, higher is better
    std::vector<double> fold_scores;
    bool failed = false;
    std::string error;
};

/// Evaluates every grid point with `train(spec, seed)`, which returns the
/// per-fold validation scores. Points run as independent jobs; failures are
/// recorded and ranked last. Ranking: score descending, ties by grid order.
template <typename Spec, typename TrainFn>
std::vector<GridResult<Spec>> grid_search(const std::vector<Spec>& grid, TrainFn&& train, std::uint64_t seed,
                                          std::size_t threads = job_threads()) {
    if (grid.empty()) throw ConfigError("grid_search: empty grid");
    std::vector<GridResult<Spec>> results(grid.size());
    parallel_for(
        grid.size(),
        [&](std::size_t k) {
            auto& r = results[k];
            r.spec = grid[k];
            r.index = k;
            try {
                r.fold_scores = train(grid[k], derive_seed(seed, 1000 + k));
                double s = 0.0;
                for (double x : r.fold_scores) s += x;
                r.score = r.fold_scores.empty() ? -std::numeric_limits<double>::infinity()
                                                : s / static_cast<double>(r.fold_scores.size());
                if (std::isnan(r.score)) r.score = -std::numeric_limits<double>::infinity();
            } catch (const std::exception& e) {
                r.failed = true;
                r.error = e.what();
                r.score = -std::numeric_limits<double>::infinity();
            }
        },
        threads);
    std::stable_sort(results.begin(), results.end(), [](const auto& a, const auto& b) {
        if (a.failed != b.failed) return !a.failed;
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });
    return results;
}

/// Grid over a base regressor: every combination of layouts, batch sizes and
/// (input, output) delay counts.
struct RegressorGrid {
    std::vector<std::vector<LayerSpec>> layouts;
    std::vector<std::size_t> batch_sizes;
    std::vector<std::size_t> input_delays;
    std::vector<std::size_t> output_delays;
    std::vector<std::size_t> epochs;

    std::vector<RegressorSpec> expand(const RegressorSpec& base) const {
        auto or_base = [](const auto& v, auto fallback) {
            using T = std::decay_t<decltype(fallback)>;
            return v.empty() ? std::vector<T>{fallback} : v;
        };
        const auto ls = or_base(layouts, base.hidden);
        const auto bs = or_base(batch_sizes, base.training.batch_size);
        const auto ids = or_base(input_delays, base.delays.inputs.empty() ? std::size_t{0} : base.delays.inputs[0].delays);
        const auto ods = or_base(output_delays, base.delays.outputs.empty() ? std::size_t{0} : base.delays.outputs[0].delays);
        const auto eps = or_base(epochs, base.training.epochs);
        std::vector<RegressorSpec> out;
        for (const auto& l : ls)
            for (auto b : bs)
                for (auto id : ids)
                    for (auto od : ods)
                        for (auto ep : eps) {
                            RegressorSpec s = base;
                            s.hidden = l;
                            s.training.batch_size = b;
                            for (auto& t : s.delays.inputs) t.delays = id;
                            for (auto& t : s.delays.outputs) t.delays = od;
                            s.training.epochs = ep;
                            out.push_back(s);
                        }
        return out;
    }
};

} // namespace tfdd
