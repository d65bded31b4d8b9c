#pragma once

#include "errors.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tfdd {

/// Six health conditions. The enumerator order is the row/column order of
/// every confusion matrix.
enum class FaultCondition : int {
    Nominal15V = 0,
    Voltage13V,
    Voltage11_8V,
    OneBrokenBlade,
    TwoBrokenBlades,
    Biofouling,
};

inline constexpr std::size_t kNumConditions = 6;

inline constexpr std::array<FaultCondition, kNumConditions> kAllConditions = {
    FaultCondition::Nominal15V,     FaultCondition::Voltage13V,
    FaultCondition::Voltage11_8V,   FaultCondition::OneBrokenBlade,
    FaultCondition::TwoBrokenBlades, FaultCondition::Biofouling,
};

inline constexpr std::size_t index_of(FaultCondition c) { return static_cast<std::size_t>(c); }

inline constexpr std::string_view name_of(FaultCondition c) {
    switch (c) {
    case FaultCondition::Nominal15V: return "Nominal15V";
    case FaultCondition::Voltage13V: return "Voltage13V";
    case FaultCondition::Voltage11_8V: return "Voltage11_8V";
    case FaultCondition::OneBrokenBlade: return "OneBrokenBlade";
    case FaultCondition::TwoBrokenBlades: return "TwoBrokenBlades";
    case FaultCondition::Biofouling: return "Biofouling";
    }
    return "?";
}

/// Case-insensitive lookup by name; throws DataError on unknown names.
inline FaultCondition parse_condition(std::string_view name) {
    auto lower = [](std::string_view s) {
        std::string out(s);
        for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        return out;
    };
    const std::string key = lower(name);
    for (auto c : kAllConditions)
        if (lower(name_of(c)) == key) return c;
    throw DataError("unknown fault condition '" + std::string(name) + "'");
}

/// Uniformly sampled record of the controller-thruster assembly.
struct TimeSeriesFrame {
    std::vector<double> t;   // s
    std::vector<double> u;   // normalized command in [-1, 1]
    std::vector<double> v;   // V
    std::vector<double> rpm; // rpm
    std::vector<double> i;   // A
    std::vector<std::optional<FaultCondition>> label;

    std::size_t size() const { return t.size(); }

    void reserve(std::size_t n) {
        t.reserve(n);
        u.reserve(n);
        v.reserve(n);
        rpm.reserve(n);
        i.reserve(n);
        label.reserve(n);
    }

    void push_back(double t_, double u_, double v_, double rpm_, double i_,
                   std::optional<FaultCondition> label_) {
        t.push_back(t_);
        u.push_back(u_);
        v.push_back(v_);
        rpm.push_back(rpm_);
        i.push_back(i_);
        label.push_back(label_);
    }

    /// Samples [first, last).
    TimeSeriesFrame slice(std::size_t first, std::size_t last) const {
        if (first > last || last > size()) throw DataError("frame slice out of range");
        TimeSeriesFrame out;
        auto cut = [&](const auto& src, auto& dst) {
            dst.assign(src.begin() + static_cast<std::ptrdiff_t>(first),
                       src.begin() + static_cast<std::ptrdiff_t>(last));
        };
        cut(t, out.t);
        cut(u, out.u);
        cut(v, out.v);
        cut(rpm, out.rpm);
        cut(i, out.i);
        cut(label, out.label);
        return out;
    }

    /// Throws DataError unless all channels have equal non-zero length and
    /// time is strictly increasing on a uniform grid.
    void validate() const {
        const auto n = t.size();
        if (n == 0) throw DataError("frame is empty");
        if (u.size() != n || v.size() != n || rpm.size() != n || i.size() != n || label.size() != n)
            throw DataError("frame channels have unequal lengths");
        if (n < 2) return;
        const double dt = t[1] - t[0];
        if (!(dt > 0.0)) throw DataError("frame time is not strictly increasing");
        for (std::size_t k = 1; k < n; ++k) {
            const double step = t[k] - t[k - 1];
            if (!(step > 0.0) || std::abs(step - dt) > 1e-6 * std::max(1.0, std::abs(dt)))
                throw DataError("frame time grid is not uniform at row " + std::to_string(k));
        }
    }
};

/// Appends `b` to `a`, continuing the time grid of `a`.
inline TimeSeriesFrame concatenate(const TimeSeriesFrame& a, const TimeSeriesFrame& b) {
    if (a.size() == 0) return b;
    if (a.size() < 2) throw DataError("cannot infer sample period from a 1-sample frame");
    const double dt = a.t[1] - a.t[0];
    TimeSeriesFrame out = a;
    out.reserve(a.size() + b.size());
    const double t0 = a.t.back() + dt;
    for (std::size_t k = 0; k < b.size(); ++k)
        out.push_back(t0 + static_cast<double>(k) * dt, b.u[k], b.v[k], b.rpm[k], b.i[k], b.label[k]);
    return out;
}

/// Formats with 17 significant digits so values round-trip exactly.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline constexpr std::string_view kFrameCsvHeader = "t,u,v,rpm,i,label";

inline void write_frame_csv(std::ostream& os, const TimeSeriesFrame& frame) {
    os << kFrameCsvHeader << '\n';
    for (std::size_t k = 0; k < frame.size(); ++k) {
        os << format_double(frame.t[k]) << ',' << format_double(frame.u[k]) << ','
           << format_double(frame.v[k]) << ',' << format_double(frame.rpm[k]) << ','
           << format_double(frame.i[k]) << ',';
        if (frame.label[k]) os << name_of(*frame.label[k]);
        os << '\n';
    }
}

inline void write_frame_csv(const std::string& path, const TimeSeriesFrame& frame) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_frame_csv(os, frame);
    if (!os) throw DataError("failed writing '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline double parse_double(const std::string& s, std::size_t row) {
    try {
        std::size_t used = 0;
        const double x = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw DataError("row " + std::to_string(row) + ": cannot parse number '" + s + "'");
    }
}

} // namespace detail

inline TimeSeriesFrame read_frame_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kFrameCsvHeader)
        throw DataError("unexpected CSV header '" + line + "', expected '" + std::string(kFrameCsvHeader) + "'");
    TimeSeriesFrame frame;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 6) throw DataError("row " + std::to_string(row) + ": expected 6 fields");
        std::optional<FaultCondition> label;
        if (!f[5].empty()) label = parse_condition(f[5]);
        frame.push_back(detail::parse_double(f[0], row), detail::parse_double(f[1], row),
                        detail::parse_double(f[2], row), detail::parse_double(f[3], row),
                        detail::parse_double(f[4], row), label);
    }
    frame.validate();
    return frame;
}

inline TimeSeriesFrame read_frame_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read_frame_csv(is);
}

} // namespace tfdd
