#pragma once

// Robust scaling, tapped delay lines, static input nonlinearities and
// forward-chaining cross-validation splits.

#include "deadband.hpp"
#include "errors.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace tfdd {

/// Quantile by linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample).
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

/// Per-channel (x - median) / iqr.
struct ScalerParams {
    std::vector<double> median;
    std::vector<double> iqr;
    std::vector<char> fallback; // channel had zero IQR; scale forced to 1

    std::size_t channels() const { return median.size(); }

    bool any_fallback() const { return std::any_of(fallback.begin(), fallback.end(), [](char c) { return c != 0; }); }

    double transform(std::size_t ch, double x) const { return (x - median[ch]) / iqr[ch]; }
    double inverse(std::size_t ch, double z) const { return z * iqr[ch] + median[ch]; }

    void check() const {
        require(iqr.size() == median.size(), "scaler: median/iqr length mismatch");
        if (fallback.size() != median.size()) throw ShapeError("scaler: fallback flags length mismatch");
        for (double s : iqr)
            if (!(s > 0.0) || !std::isfinite(s)) throw DataError("scaler: iqr must be positive and finite");
    }

    std::vector<double> transform(std::size_t ch, std::span<const double> xs) const {
        std::vector<double> out(xs.size());
        for (std::size_t k = 0; k < xs.size(); ++k) out[k] = transform(ch, xs[k]);
        return out;
    }
    std::vector<double> inverse(std::size_t ch, std::span<const double> zs) const {
        std::vector<double> out(zs.size());
        for (std::size_t k = 0; k < zs.size(); ++k) out[k] = inverse(ch, zs[k]);
        return out;
    }

    /// Row-wise transform of a matrix whose columns are the channels.
    Matrix transform(const Matrix& m) const {
        require(m.cols == channels(), "scaler: column count mismatch");
        Matrix out = m;
        for (std::size_t r = 0; r < m.rows; ++r)
            for (std::size_t c = 0; c < m.cols; ++c) out(r, c) = transform(c, m(r, c));
        return out;
    }
};

/// Fits one channel per column; needs at least 4 samples per channel.
inline ScalerParams fit_scaler(std::span<const std::vector<double>> columns) {
    ScalerParams p;
    for (const auto& col : columns) {
        if (col.empty()) throw DataError("fit_scaler: empty channel");
        if (col.size() < 4) throw DataError("fit_scaler: need at least 4 samples per channel");
        const double q1 = quantile(col, 0.25), q3 = quantile(col, 0.75);
        const double med = quantile(col, 0.5);
        double iqr = q3 - q1;
        const bool degenerate = !(iqr > 0.0);
        if (degenerate) iqr = 1.0;
        p.median.push_back(med);
        p.iqr.push_back(iqr);
        p.fallback.push_back(degenerate ? 1 : 0);
    }
    return p;
}

/// Delay taps of one signal: lags start_offset + 1 .. start_offset + delays.
struct DelayTap {
    std::size_t delays = 0;
    std::size_t start_offset = 0;

    std::size_t max_lag() const { return delays == 0 ? 0 : start_offset + delays; }

    friend bool operator==(const DelayTap&, const DelayTap&) = default;
};

/// Taps for each exogenous input and each (fed back) output.
struct DelaySpec {
    std::vector<DelayTap> inputs;
    std::vector<DelayTap> outputs;

    std::size_t max_delay(bool with_outputs) const {
        std::size_t m = 0;
        for (const auto& t : inputs) m = std::max(m, t.max_lag());
        if (with_outputs)
            for (const auto& t : outputs) m = std::max(m, t.max_lag());
        return m;
    }

    std::size_t feature_width(bool with_outputs) const {
        std::size_t w = 0;
        for (const auto& t : inputs) w += t.delays;
        if (with_outputs)
            for (const auto& t : outputs) w += t.delays;
        return w;
    }

    friend bool operator==(const DelaySpec&, const DelaySpec&) = default;
};

struct Embedding {
    Matrix features; // one row per target time, most recent lag first per signal
    Matrix targets;
    std::size_t first_time = 0; // sample index of row 0
};

/// Fills a feature row for target time `t`. `outputs` may be any series
/// indexable at t - lag (measured or fed-back values).
template <typename InputSeries, typename OutputSeries>
void fill_feature_row(const DelaySpec& spec, const InputSeries& inputs, const OutputSeries& outputs,
                      bool with_outputs, std::size_t t, std::span<double> row) {
    std::size_t col = 0;
    for (std::size_t s = 0; s < spec.inputs.size(); ++s)
        for (std::size_t d = 1; d <= spec.inputs[s].delays; ++d)
            row[col++] = inputs[s][t - spec.inputs[s].start_offset - d];
    if (with_outputs)
        for (std::size_t s = 0; s < spec.outputs.size(); ++s)
            for (std::size_t d = 1; d <= spec.outputs[s].delays; ++d)
                row[col++] = outputs[s][t - spec.outputs[s].start_offset - d];
}

/// Row r holds the delayed inputs (and, in series-parallel mode, delayed
/// outputs) preceding time r + max_delay, and the outputs at that time.
inline Embedding tapped_delay_embed(std::span<const std::vector<double>> inputs,
                                    std::span<const std::vector<double>> outputs, const DelaySpec& spec,
                                    bool targets_as_features) {
    require(inputs.size() == spec.inputs.size(), "embed: input signal count != input tap count");
    if (targets_as_features) require(outputs.size() == spec.outputs.size(), "embed: output signal count != output tap count");
    const std::size_t n = inputs.empty() ? (outputs.empty() ? 0 : outputs.front().size()) : inputs.front().size();
    for (const auto& s : inputs) require(s.size() == n, "embed: signals differ in length");
    for (const auto& s : outputs) require(s.size() == n, "embed: signals differ in length");
    const std::size_t lag = spec.max_delay(targets_as_features);
    if (n <= lag)
        throw DataError("embed: frame of " + std::to_string(n) + " samples is not longer than the max delay " +
                        std::to_string(lag));

    Embedding e;
    e.first_time = lag;
    const std::size_t rows = n - lag;
    e.features = Matrix(rows, spec.feature_width(targets_as_features));
    e.targets = Matrix(rows, outputs.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t t = r + lag;
        fill_feature_row(spec, inputs, outputs, targets_as_features, t, e.features.row(r));
        for (std::size_t s = 0; s < outputs.size(); ++s) e.targets(r, s) = outputs[s][t];
    }
    return e;
}

/// Shifted dead zone rescaled so that +-1 maps to +-1.
inline std::vector<double> apply_deadband(std::span<const double> u, double width) {
    if (!(width >= 0.0)) throw ConfigError("deadband width must be >= 0");
    if (width >= 1.0) throw ConfigError("deadband width must be < 1");
    std::vector<double> out(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) out[k] = deadband(u[k], width);
    return out;
}

/// Right shift by `delay` samples, front-padded with the first value.
inline std::vector<double> apply_deadtime(std::span<const double> x, std::size_t delay) {
    std::vector<double> out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = k >= delay ? x[k - delay] : x.front();
    return out;
}

struct SplitSpec {
    std::size_t k = 2;
};

/// Half-open index ranges of one fold.
struct Fold {
    std::size_t train_begin = 0, train_end = 0;
    std::size_t val_begin = 0, val_end = 0;

    std::vector<std::size_t> train_indices() const { return iota(train_begin, train_end); }
    std::vector<std::size_t> val_indices() const { return iota(val_begin, val_end); }

private:
    static std::vector<std::size_t> iota(std::size_t a, std::size_t b) {
        std::vector<std::size_t> v;
        for (std::size_t x = a; x < b; ++x) v.push_back(x);
        return v;
    }
};

/// Expanding-window forward chaining: validation blocks of floor(n/(k+1))
/// samples at the end of the series, each fold training on everything
/// before its block. Requires blocks of at least two samples.
inline std::vector<Fold> ts_kfold(std::size_t n, const SplitSpec& spec) {
    if (spec.k < 2) throw ConfigError("ts_kfold: k must be >= 2");
    const std::size_t block = n / (spec.k + 1);
    if (block < 2)
        throw ConfigError("ts_kfold: " + std::to_string(n) + " samples are too few for " + std::to_string(spec.k) +
                          " folds");
    std::vector<Fold> folds;
    for (std::size_t j = 0; j < spec.k; ++j) {
        Fold f;
        f.val_begin = n - (spec.k - j) * block;
        f.val_end = f.val_begin + block;
        f.train_end = f.val_begin;
        folds.push_back(f);
    }
    return folds;
}

} // namespace tfdd
