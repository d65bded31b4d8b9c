#pragma once

#include "errors.hpp"
#include "frame.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace tfdd {

/// Coefficient of determination 1 - SS_res / SS_tot.
inline double r2_score(std::span<const double> y_true, std::span<const double> y_pred) {
    if (y_true.size() != y_pred.size()) throw DataError("r2_score: length mismatch");
    if (y_true.size() < 2) throw DataError("r2_score: need at least 2 samples");
    double mean = 0.0;
    for (double y : y_true) mean += y;
    mean /= static_cast<double>(y_true.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t k = 0; k < y_true.size(); ++k) {
        const double e = y_true[k] - y_pred[k];
        const double d = y_true[k] - mean;
        ss_res += e * e;
        ss_tot += d * d;
    }
    if (ss_tot == 0.0) throw UndefinedScoreError("r2_score: y_true is constant");
    return 1.0 - ss_res / ss_tot;
}

/// Counts and row-normalized rates over the six conditions; rows are the
/// true class, columns the prediction.
struct ConfusionMatrix {
    std::array<std::array<std::size_t, kNumConditions>, kNumConditions> counts{};
    std::array<std::array<double, kNumConditions>, kNumConditions> normalized{};
    std::array<bool, kNumConditions> supported{};
    std::size_t total = 0;

    /// Correct predictions over all samples.
    double accuracy() const {
        if (total == 0) return 0.0;
        std::size_t hit = 0;
        for (std::size_t k = 0; k < kNumConditions; ++k) hit += counts[k][k];
        return static_cast<double>(hit) / static_cast<double>(total);
    }

    double recall(FaultCondition c) const { return normalized[index_of(c)][index_of(c)]; }

    std::size_t support(std::size_t row) const {
        std::size_t s = 0;
        for (auto x : counts[row]) s += x;
        return s;
    }
};

inline ConfusionMatrix confusion_matrix(std::span<const FaultCondition> truth, std::span<const FaultCondition> pred) {
    if (truth.size() != pred.size()) throw DataError("confusion_matrix: length mismatch");
    ConfusionMatrix cm;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        const auto r = index_of(truth[k]), c = index_of(pred[k]);
        if (r >= kNumConditions || c >= kNumConditions)
            throw DataError("confusion_matrix: unknown label at index " + std::to_string(k));
        ++cm.counts[r][c];
    }
    cm.total = truth.size();
    for (std::size_t r = 0; r < kNumConditions; ++r) {
        const auto s = cm.support(r);
        cm.supported[r] = s > 0;
        for (std::size_t c = 0; c < kNumConditions; ++c)
            cm.normalized[r][c] = s > 0 ? static_cast<double>(cm.counts[r][c]) / static_cast<double>(s) : 0.0;
    }
    return cm;
}

} // namespace tfdd
