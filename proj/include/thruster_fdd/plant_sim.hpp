#pragma once

// Controller-thruster simulator: static deadband + saturating speed map and
// quadratic current map, followed per channel by two cascaded first-order lags
// and an integer-sample transport delay.

#include "deadband.hpp"
#include "errors.hpp"
#include "frame.hpp"
#include "rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <utility>

namespace tfdd {

struct PlantParams {
    double dead_time_s = 0.59;
    double tau1_s = 0.65;
    double tau2_s = 0.20;
    double deadband_u = 0.05;           // +-25 us of a 1.0-2.0 ms pulse mapped to [-1, 1]
    double rpm_max = 4200.0;
    double rpm_sat_gain = 1.6;
    double current_quad_coeff = 11.5;   // A at full command
    double nominal_voltage_v = 15.0;
    double noise_sigma_rpm = 42.0;      // 1 % of rpm_max
    double noise_sigma_current = 0.23;  // 2 % of the full-command current
    double noise_sigma_voltage = 0.0;
    double sample_rate_hz = 10.0;

    void validate() const {
        if (!(tau1_s > tau2_s && tau2_s > 0.0)) throw ConfigError("plant: need tau1 > tau2 > 0");
        if (!(dead_time_s >= 0.0)) throw ConfigError("plant: dead time must be >= 0");
        if (!(deadband_u >= 0.0 && deadband_u < 1.0)) throw ConfigError("plant: deadband must be in [0, 1)");
        if (!(rpm_max > 0.0)) throw ConfigError("plant: rpm_max must be > 0");
        if (!(sample_rate_hz > 0.0)) throw ConfigError("plant: sample rate must be > 0");
        if (!(rpm_sat_gain > 0.0 && current_quad_coeff > 0.0 && nominal_voltage_v > 0.0))
            throw ConfigError("plant: gains and nominal voltage must be > 0");
        if (noise_sigma_rpm < 0.0 || noise_sigma_current < 0.0 || noise_sigma_voltage < 0.0)
            throw ConfigError("plant: noise sigmas must be >= 0");
    }

    std::size_t dead_time_samples() const {
        return static_cast<std::size_t>(std::lround(dead_time_s * sample_rate_hz));
    }

    PlantParams noiseless() const {
        PlantParams p = *this;
        p.noise_sigma_rpm = p.noise_sigma_current = p.noise_sigma_voltage = 0.0;
        return p;
    }
};

/// How a condition distorts the plant. `load_factor` scales the speed map,
/// `drag_factor` the current map.
struct FaultEffects {
    double voltage_v = 15.0;
    double load_factor = 1.0;
    double drag_factor = 1.0;

    friend bool operator==(const FaultEffects&, const FaultEffects&) = default;
};

using FaultTable = std::array<FaultEffects, kNumConditions>;

inline FaultTable default_fault_table() {
    return {{
        {15.0, 1.00, 1.00}, // Nominal15V
        {13.0, 1.00, 1.00}, // Voltage13V
        {11.8, 1.00, 1.00}, // Voltage11_8V
        {15.0, 1.08, 0.85}, // OneBrokenBlade: less load, faster and cheaper
        {15.0, 1.15, 0.70}, // TwoBrokenBlades
        {15.0, 0.92, 1.25}, // Biofouling: extra drag
    }};
}

inline FaultEffects fault_effects(FaultCondition c, const FaultTable& table = default_fault_table()) {
    return table[index_of(c)];
}

struct SteadyState {
    double rpm = 0.0;
    double current = 0.0;
};

inline SteadyState steady_state_maps(double u, const FaultEffects& effects, const PlantParams& params) {
    if (!(u >= -1.0 && u <= 1.0)) throw InputDomainError("steady_state_maps: u outside [-1, 1]");
    const double udb = deadband(u, params.deadband_u);
    if (udb == 0.0) return {};
    const double speed = effects.load_factor * (effects.voltage_v / params.nominal_voltage_v) *
                         params.rpm_max * std::tanh(params.rpm_sat_gain * std::abs(udb));
    return {std::copysign(speed, udb), effects.drag_factor * params.current_quad_coeff * udb * udb};
}

/// Excitation: a staircase of equal steps sweeping 0 -> 1 -> -1 -> 0, or a
/// unit-amplitude sinusoid.
struct InputSignal {
    enum class Kind { StepStaircase, Sinusoid };

    Kind kind = Kind::Sinusoid;
    double amplitude_step = 0.25;
    double hold_s = 10.0;
    double frequency_hz = 0.01;
    double amplitude = 1.0;
    double polarity = 1.0; // -1 mirrors the excitation
    double duration_s = 200.0;

    static InputSignal staircase(double step, double duration_s, double hold_s = 10.0) {
        InputSignal s;
        s.kind = Kind::StepStaircase;
        s.amplitude_step = step;
        s.hold_s = hold_s;
        s.duration_s = duration_s;
        return s;
    }

    static InputSignal sinusoid(double frequency_hz, double duration_s, double amplitude = 1.0) {
        InputSignal s;
        s.kind = Kind::Sinusoid;
        s.frequency_hz = frequency_hz;
        s.duration_s = duration_s;
        s.amplitude = amplitude;
        return s;
    }

    void validate() const {
        if (!(duration_s > 0.0)) throw ConfigError("signal: duration must be > 0");
        if (polarity != 1.0 && polarity != -1.0) throw ConfigError("signal: polarity must be +1 or -1");
        if (kind == Kind::Sinusoid) {
            if (!(frequency_hz > 0.0)) throw ConfigError("signal: frequency must be > 0");
            if (!(amplitude >= 0.0 && amplitude <= 1.0)) throw ConfigError("signal: amplitude must be in [0, 1]");
        } else {
            if (!(amplitude_step > 0.0 && amplitude_step <= 1.0)) throw ConfigError("signal: step must be in (0, 1]");
            if (!(hold_s > 0.0)) throw ConfigError("signal: hold time must be > 0");
        }
    }

    double value(double t) const {
        if (kind == Kind::Sinusoid) return polarity * amplitude * std::sin(2.0 * std::numbers::pi * frequency_hz * t);
        // Levels 0, s, .., 1, .., 0, -s, .., -1, .., 0 and repeat.
        const auto steps_per_quarter = static_cast<long>(std::ceil(1.0 / amplitude_step - 1e-9));
        const long cycle = 4 * steps_per_quarter;
        const long k = static_cast<long>(std::floor(t / hold_s + 1e-9)) % cycle;
        long level;
        if (k <= steps_per_quarter) level = k;
        else if (k <= 3 * steps_per_quarter) level = 2 * steps_per_quarter - k;
        else level = k - 4 * steps_per_quarter;
        return polarity * std::clamp(static_cast<double>(level) * amplitude_step, -1.0, 1.0);
    }
};

/// Runs the plant. Identical arguments give bit-identical frames.
inline TimeSeriesFrame simulate(const InputSignal& signal, FaultCondition condition,
                                const PlantParams& params, std::uint64_t seed,
                                const FaultTable& table = default_fault_table()) {
    params.validate();
    signal.validate();
    if (signal.duration_s < params.dead_time_s)
        throw ConfigError("simulate: duration shorter than the plant dead time");

    const FaultEffects effects = fault_effects(condition, table);
    const double dt = 1.0 / params.sample_rate_hz;
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(signal.duration_s * params.sample_rate_hz)));
    const std::size_t delay = params.dead_time_samples();
    const double a1 = std::exp(-dt / params.tau1_s);
    const double a2 = std::exp(-dt / params.tau2_s);

    // Plant is at rest with zero command before t = 0.
    std::deque<double> pipeline(delay, 0.0);
    std::array<double, 2> lag1{}, lag2{}; // [rpm, current]

    Rng rng(seed);
    TimeSeriesFrame frame;
    frame.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * dt;
        const double u = signal.value(t);

        const double v = effects.voltage_v + params.noise_sigma_voltage * rng.normal();
        const double rpm = lag2[0] + params.noise_sigma_rpm * rng.normal();
        const double cur = lag2[1] + params.noise_sigma_current * rng.normal();
        frame.push_back(t, u, v, rpm, cur, condition);

        pipeline.push_back(u);
        const double delayed = pipeline.front();
        pipeline.pop_front();
        const SteadyState target = steady_state_maps(delayed, effects, params);
        const std::array<double, 2> drive{target.rpm, target.current};
        for (std::size_t c = 0; c < 2; ++c) {
            lag1[c] = a1 * lag1[c] + (1.0 - a1) * drive[c];
            lag2[c] = a2 * lag2[c] + (1.0 - a2) * lag1[c];
        }
    }
    return frame;
}

/// Dead time and 2 % settling time averaged over the steps of a noiseless
/// staircase record. Dead time is the span from the command step to the last
/// sample still at the pre-step value; settling is measured from that onset
/// to the first sample after which the output stays within 2 % of the step.
struct StepMetrics {
    double dead_time_s = 0.0;
    double settling_time_s = 0.0;
    std::size_t steps = 0;
};

inline StepMetrics measure_step_metrics(const std::vector<double>& u, const std::vector<double>& y,
                                        double sample_rate_hz) {
    if (u.size() != y.size() || u.size() < 2) throw DataError("step metrics: bad series");
    std::vector<std::size_t> edges;
    for (std::size_t k = 1; k < u.size(); ++k)
        if (u[k] != u[k - 1]) edges.push_back(k);
    edges.push_back(u.size());

    StepMetrics m;
    double dead_sum = 0.0, settle_sum = 0.0;
    for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
        const std::size_t start = edges[e], stop = edges[e + 1];
        const double before = y[start];
        const double after = y[stop - 1];
        const double delta = after - before;
        if (std::abs(delta) < 1e-9 * std::max(1.0, std::abs(before))) continue;

        std::size_t onset = start;
        while (onset + 1 < stop && std::abs(y[onset + 1] - before) <= 1e-4 * std::abs(delta)) ++onset;
        std::size_t settled = stop - 1;
        while (settled > onset && std::abs(y[settled - 1] - after) <= 0.02 * std::abs(delta)) --settled;

        dead_sum += static_cast<double>(onset - start) / sample_rate_hz;
        settle_sum += static_cast<double>(settled - onset) / sample_rate_hz;
        ++m.steps;
    }
    if (m.steps == 0) throw DataError("step metrics: no steps with a response");
    m.dead_time_s = dead_sum / static_cast<double>(m.steps);
    m.settling_time_s = settle_sum / static_cast<double>(m.steps);
    return m;
}

/// Signed area enclosed by the closed curve (x, y) (shoelace formula).
inline double loop_area(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3) throw DataError("loop area: bad series");
    double a = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const std::size_t j = (k + 1) % x.size();
        a += x[k] * y[j] - x[j] * y[k];
    }
    return 0.5 * a;
}

} // namespace tfdd
