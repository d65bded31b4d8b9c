#pragma once

// Residual generation, dataset assembly over the six conditions, the full
// benchmark protocol and its report files.

#include "models.hpp"
#include "plant_sim.hpp"
#include "serialize.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

namespace tfdd {

// ===========================================================================
// Residuals

struct ResidualSeries {
    std::vector<double> t;
    std::vector<double> r_rpm; // measured - predicted, rpm
    std::vector<double> r_i;   // measured - predicted, A
    std::vector<std::optional<FaultCondition>> label;

    std::size_t size() const { return t.size(); }
};

/// Residuals against the free-running nominal model for samples
/// max_delay .. n-1 of `frame`.
inline ResidualSeries compute_residuals(const TrainedRegressor& nominal, const TimeSeriesFrame& frame) {
    const Matrix pred = predict_parallel(nominal, frame);
    const std::size_t lag = nominal.spec.max_delay();
    ResidualSeries r;
    for (std::size_t t = lag; t < frame.size(); ++t) {
        r.t.push_back(frame.t[t]);
        r.label.push_back(frame.label[t]);
        r.r_rpm.push_back(frame.rpm[t] - pred(t - lag, 0));
        r.r_i.push_back(frame.i[t] - pred(t - lag, 1));
    }
    return r;
}

inline void write_residuals_csv(std::ostream& out, const std::vector<ResidualSeries>& series) {
    out << "t,r_rpm,r_i,label\n";
    for (const auto& s : series)
        for (std::size_t k = 0; k < s.size(); ++k)
            out << format_double(s.t[k]) << ',' << format_double(s.r_rpm[k]) << ',' << format_double(s.r_i[k]) << ','
                << (s.label[k] ? name_of(*s.label[k]) : "") << '\n';
}

/// Feature rows [first, last) of a frame: (u, v, rpm, i).
inline ClassifierDataset signal_features(const TimeSeriesFrame& f, std::size_t first, std::size_t last) {
    if (first >= last || last > f.size()) throw DataError("features: bad sample range");
    ClassifierDataset d;
    d.features = Matrix(last - first, 4);
    for (std::size_t t = first; t < last; ++t) {
        const std::size_t r = t - first;
        d.features(r, 0) = f.u[t];
        d.features(r, 1) = f.v[t];
        d.features(r, 2) = f.rpm[t];
        d.features(r, 3) = f.i[t];
        if (!f.label[t]) throw DataError("features: unlabeled sample " + std::to_string(t));
        d.labels.push_back(*f.label[t]);
    }
    return d;
}

/// Residual rows [first, last) in residual-series indexing: (r_rpm, r_i).
inline ClassifierDataset residual_features(const ResidualSeries& s, std::size_t first, std::size_t last) {
    if (first >= last || last > s.size()) throw DataError("features: bad sample range");
    ClassifierDataset d;
    d.features = Matrix(last - first, 2);
    for (std::size_t k = first; k < last; ++k) {
        d.features(k - first, 0) = s.r_rpm[k];
        d.features(k - first, 1) = s.r_i[k];
        if (!s.label[k]) throw DataError("features: unlabeled residual " + std::to_string(k));
        d.labels.push_back(*s.label[k]);
    }
    return d;
}

// ===========================================================================
// Configuration

struct ClassifierRun {
    std::string preset; // clf-mlp-all, ...
    std::size_t batch_size = 1;

    std::string label() const { return classifier_preset(preset).name() + "/" + std::to_string(batch_size); }
};

struct BenchmarkConfig {
    std::uint64_t seed = 7;
    PlantParams plant;
    FaultTable faults = default_fault_table();

    double train_frequency_hz = 0.01;
    std::size_t train_samples = 2000;
    std::vector<double> test_frequencies_hz{0.01, 0.02, 0.03, 0.04};
    std::size_t test_samples = 1000;
    std::vector<std::string> regressors{"mlp", "mlp-d-db", "narx", "narx-db", "lstm", "gru"};
    std::size_t regressor_folds = 2;
    std::size_t regressor_epochs = 200;
    std::size_t regressor_patience = 20;
    std::string nominal_model = "narx";

    double condition_frequency_hz = 0.01;
    std::size_t class_train_samples = 2000;
    std::size_t class_test_samples = 11200;
    std::size_t classifier_folds = 3;
    std::size_t classifier_epochs = 30;
    std::size_t classifier_patience = 5;
    std::size_t classifier_window = 8;
    std::vector<ClassifierRun> classifiers{{"clf-mlp-all", 5}, {"clf-mlp-res", 5}, {"clf-mlp-all", 1},
                                           {"clf-mlp-res", 1}, {"clf-lstm-all", 1}, {"clf-lstm-res", 1}};
    std::string confusion_classifier = "MLP_res/1";

    std::size_t threads = 0; // 0: THRUSTER_FDD_THREADS or the hardware

    /// Test samples per condition: an even split with the remainder on the
    /// nominal class.
    std::size_t class_test_count(FaultCondition c) const {
        const std::size_t base = class_test_samples / kNumConditions;
        return c == FaultCondition::Nominal15V ? class_test_samples - base * (kNumConditions - 1) : base;
    }

    void set(const std::string& key, const std::string& value);
    std::vector<std::pair<std::string, std::string>> entries() const;

    void validate() const {
        plant.validate();
        for (const auto& e : faults)
            if (!(e.voltage_v > 0 && e.load_factor > 0 && e.drag_factor > 0))
                throw ConfigError("config: fault effects must be positive");
        if (train_frequency_hz <= 0 || condition_frequency_hz <= 0) throw ConfigError("config: frequencies must be > 0");
        for (double f : test_frequencies_hz)
            if (!(f > 0)) throw ConfigError("config: test frequencies must be > 0");
        if (test_frequencies_hz.empty()) throw ConfigError("config: no test frequencies");
        if (regressors.empty()) throw ConfigError("config: no regressors");
        for (const auto& r : regressors) parse_regressor_kind(r);
        parse_regressor_kind(nominal_model);
        if (train_samples == 0 || test_samples < 2 || class_train_samples == 0 || class_test_samples < kNumConditions)
            throw ConfigError("config: sample counts too small");
        if (regressor_folds < 2 || classifier_folds < 2) throw ConfigError("config: folds must be >= 2");
        for (const auto& c : classifiers) {
            classifier_preset(c.preset);
            if (c.batch_size == 0) throw ConfigError("config: classifier batch size must be >= 1");
        }
    }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
        if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

inline double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    }
    if (pos != v.size() || !std::isfinite(x)) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    return x;
}

inline std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " is out of range");
    }
}

inline std::string join(const std::vector<std::string>& xs) {
    std::string s;
    for (const auto& x : xs) s += (s.empty() ? "" : ",") + x;
    return s;
}

inline std::string join(const std::vector<double>& xs) {
    std::string s;
    for (double x : xs) s += (s.empty() ? "" : ",") + format_double(x);
    return s;
}

inline std::string condition_key(FaultCondition c) {
    std::string s(name_of(c));
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

} // namespace detail

inline void BenchmarkConfig::set(const std::string& key, const std::string& value) {
    using namespace detail;
    auto count = [&] { return static_cast<std::size_t>(to_unsigned(key, value)); };
    if (key == "seed") seed = to_unsigned(key, value);
    else if (key == "threads") threads = count();
    else if (key == "train_frequency_hz") train_frequency_hz = to_double(key, value);
    else if (key == "train_samples") train_samples = count();
    else if (key == "test_frequencies_hz") {
        test_frequencies_hz.clear();
        for (const auto& x : split_list(value)) test_frequencies_hz.push_back(to_double(key, x));
    } else if (key == "test_samples") test_samples = count();
    else if (key == "regressors") regressors = split_list(value);
    else if (key == "regressor_folds") regressor_folds = count();
    else if (key == "regressor_epochs") regressor_epochs = count();
    else if (key == "regressor_patience") regressor_patience = count();
    else if (key == "nominal_model") nominal_model = value;
    else if (key == "condition_frequency_hz") condition_frequency_hz = to_double(key, value);
    else if (key == "class_train_samples") class_train_samples = count();
    else if (key == "class_test_samples") class_test_samples = count();
    else if (key == "classifier_folds") classifier_folds = count();
    else if (key == "classifier_epochs") classifier_epochs = count();
    else if (key == "classifier_patience") classifier_patience = count();
    else if (key == "classifier_window") classifier_window = count();
    else if (key == "classifiers") {
        classifiers.clear();
        for (const auto& item : split_list(value)) {
            const auto slash = item.find('/');
            if (slash == std::string::npos) throw ConfigError("config: classifiers entries look like clf-mlp-res/1");
            classifiers.push_back({item.substr(0, slash), static_cast<std::size_t>(to_unsigned(key, item.substr(slash + 1)))});
        }
    } else if (key == "confusion_classifier") confusion_classifier = value;
    else if (key == "plant.dead_time_s") plant.dead_time_s = to_double(key, value);
    else if (key == "plant.tau1_s") plant.tau1_s = to_double(key, value);
    else if (key == "plant.tau2_s") plant.tau2_s = to_double(key, value);
    else if (key == "plant.deadband_u") plant.deadband_u = to_double(key, value);
    else if (key == "plant.rpm_max") plant.rpm_max = to_double(key, value);
    else if (key == "plant.rpm_sat_gain") plant.rpm_sat_gain = to_double(key, value);
    else if (key == "plant.current_quad_coeff") plant.current_quad_coeff = to_double(key, value);
    else if (key == "plant.nominal_voltage_v") plant.nominal_voltage_v = to_double(key, value);
    else if (key == "plant.noise_sigma_rpm") plant.noise_sigma_rpm = to_double(key, value);
    else if (key == "plant.noise_sigma_current") plant.noise_sigma_current = to_double(key, value);
    else if (key == "plant.noise_sigma_voltage") plant.noise_sigma_voltage = to_double(key, value);
    else if (key == "plant.sample_rate_hz") plant.sample_rate_hz = to_double(key, value);
    else if (key.starts_with("fault.")) {
        const auto rest = key.substr(6);
        const auto dot = rest.find('.');
        if (dot == std::string::npos) throw ConfigError("config: unknown key '" + key + "'");
        auto& e = faults[index_of(parse_condition(rest.substr(0, dot)))];
        const auto field = rest.substr(dot + 1);
        if (field == "voltage_v") e.voltage_v = to_double(key, value);
        else if (field == "load_factor") e.load_factor = to_double(key, value);
        else if (field == "drag_factor") e.drag_factor = to_double(key, value);
        else throw ConfigError("config: unknown key '" + key + "'");
    } else
        throw ConfigError("config: unknown key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> BenchmarkConfig::entries() const {
    using detail::join;
    auto num = [](auto x) { return std::to_string(x); };
    std::vector<std::string> clf;
    for (const auto& c : classifiers) clf.push_back(c.preset + "/" + std::to_string(c.batch_size));
    std::vector<std::pair<std::string, std::string>> e{
        {"seed", num(seed)},
        {"train_frequency_hz", format_double(train_frequency_hz)},
        {"train_samples", num(train_samples)},
        {"test_frequencies_hz", join(test_frequencies_hz)},
        {"test_samples", num(test_samples)},
        {"regressors", join(regressors)},
        {"regressor_folds", num(regressor_folds)},
        {"regressor_epochs", num(regressor_epochs)},
        {"regressor_patience", num(regressor_patience)},
        {"nominal_model", nominal_model},
        {"condition_frequency_hz", format_double(condition_frequency_hz)},
        {"class_train_samples", num(class_train_samples)},
        {"class_test_samples", num(class_test_samples)},
        {"classifier_folds", num(classifier_folds)},
        {"classifier_epochs", num(classifier_epochs)},
        {"classifier_patience", num(classifier_patience)},
        {"classifier_window", num(classifier_window)},
        {"classifiers", join(clf)},
        {"confusion_classifier", confusion_classifier},
        {"plant.dead_time_s", format_double(plant.dead_time_s)},
        {"plant.tau1_s", format_double(plant.tau1_s)},
        {"plant.tau2_s", format_double(plant.tau2_s)},
        {"plant.deadband_u", format_double(plant.deadband_u)},
        {"plant.rpm_max", format_double(plant.rpm_max)},
        {"plant.rpm_sat_gain", format_double(plant.rpm_sat_gain)},
        {"plant.current_quad_coeff", format_double(plant.current_quad_coeff)},
        {"plant.nominal_voltage_v", format_double(plant.nominal_voltage_v)},
        {"plant.noise_sigma_rpm", format_double(plant.noise_sigma_rpm)},
        {"plant.noise_sigma_current", format_double(plant.noise_sigma_current)},
        {"plant.noise_sigma_voltage", format_double(plant.noise_sigma_voltage)},
        {"plant.sample_rate_hz", format_double(plant.sample_rate_hz)},
    };
    for (auto c : kAllConditions) {
        const auto& f = faults[index_of(c)];
        const auto k = "fault." + detail::condition_key(c) + ".";
        e.emplace_back(k + "voltage_v", format_double(f.voltage_v));
        e.emplace_back(k + "load_factor", format_double(f.load_factor));
        e.emplace_back(k + "drag_factor", format_double(f.drag_factor));
    }
    return e;
}

/// Flat `key = value` lines; `#` starts a comment. Later keys override
/// earlier ones.
inline void apply_config_text(BenchmarkConfig& cfg, std::istream& in, const std::string& source = "config") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            const auto x = s.find_first_not_of(" \t\r"), y = s.find_last_not_of(" \t\r");
            return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
        };
        try {
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline BenchmarkConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    BenchmarkConfig cfg;
    apply_config_text(cfg, in, path);
    return cfg;
}

// ===========================================================================
// Report

struct RegressorRow {
    std::string preset;
    std::string name;
    std::vector<double> parallel;        // per test frequency, NaN when the free run diverged
    std::vector<double> series_parallel; // per test frequency
    std::vector<double> cv_scores;
};

struct ClassifierRow {
    std::string label; // e.g. MLP_res/1
    std::string preset;
    std::size_t batch_size = 1;
    std::string hidden;
    FeatureMode features = FeatureMode::Residuals;
    double accuracy = 0.0;
    std::vector<double> cv_scores;
    ConfusionMatrix confusion;
};

/// Sample range [begin, end) of one record touched by one stage.
struct ProvenanceEntry {
    std::string record;
    std::string stage;
    std::size_t begin = 0, end = 0;
};

struct ResidualSummary {
    FaultCondition condition = FaultCondition::Nominal15V;
    double mean_rpm = 0.0, mean_i = 0.0;
    double rms_rpm = 0.0, rms_i = 0.0;
};

struct DiagnosisReport {
    BenchmarkConfig config;
    std::vector<RegressorRow> regressors;
    std::vector<ClassifierRow> classifiers;
    std::vector<ResidualSummary> residual_summary; // on the test portion of each condition record
    std::vector<ProvenanceEntry> provenance;

    // plot data
    std::vector<TimeSeriesFrame> condition_records;
    std::vector<ResidualSeries> residuals;
    struct Trace {
        double frequency_hz;
        TimeSeriesFrame measured;
        Matrix predicted; // free-running nominal model, rows aligned with measured from max_delay
        std::size_t first = 0;
    };
    std::vector<Trace> nominal_traces;

    const ClassifierRow* classifier(std::string_view label) const {
        for (const auto& c : classifiers)
            if (c.label == label) return &c;
        return nullptr;
    }
    const RegressorRow* regressor(std::string_view preset) const {
        for (const auto& r : regressors)
            if (r.preset == preset) return &r;
        return nullptr;
    }
};

inline bool is_fit_stage(std::string_view stage) {
    return stage == "regressor_fit" || stage == "regressor_scaler" || stage == "classifier_fit" ||
           stage == "classifier_scaler";
}

/// Throws DataError if a test range of a record overlaps any fitting or
/// scaler range of the same record.
inline void verify_provenance(const std::vector<ProvenanceEntry>& entries) {
    for (const auto& test : entries) {
        if (test.stage.find("test") == std::string::npos) continue;
        for (const auto& fit : entries) {
            if (fit.record != test.record || !is_fit_stage(fit.stage)) continue;
            if (fit.begin < test.end && test.begin < fit.end)
                throw DataError("provenance: " + test.record + " samples [" + std::to_string(std::max(fit.begin, test.begin)) +
                                ", " + std::to_string(std::min(fit.end, test.end)) + ") used by both " + fit.stage +
                                " and " + test.stage);
        }
    }
}

namespace detail {

inline double r2_or_nan(const std::function<double()>& f) {
    try {
        return f();
    } catch (const InstabilityError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

} // namespace detail

/// Failure of one benchmark stage; what() names the stage and the cause.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& cause) : Error("stage " + stage + ": " + cause) {}
};

/// Full protocol: nominal regressors at the test frequencies, residuals of
/// every condition against the nominal model, then raw-signal and residual
/// classifiers scored on held-out tails of the condition records.
inline DiagnosisReport run_benchmark(const BenchmarkConfig& cfg) {
    cfg.validate();
    const std::size_t threads = cfg.threads ? cfg.threads : job_threads();
    const double fs = cfg.plant.sample_rate_hz;
    DiagnosisReport report;
    report.config = cfg;

    auto run_stage = [](const std::string& name, auto&& f) {
        try {
            return f();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
    };

    // --- simulate -------------------------------------------------------
    const auto nominal_spec = regressor_preset(cfg.nominal_model);
    const std::size_t warmup = nominal_spec.max_delay();
    TimeSeriesFrame train;
    std::vector<TimeSeriesFrame> tests(cfg.test_frequencies_hz.size());
    std::vector<TimeSeriesFrame> records(kNumConditions);
    run_stage("simulate", [&] {
        auto duration = [&](std::size_t n) { return static_cast<double>(n) / fs; };
        train = simulate(InputSignal::sinusoid(cfg.train_frequency_hz, duration(cfg.train_samples)),
                         FaultCondition::Nominal15V, cfg.plant, derive_seed(cfg.seed, 1), cfg.faults);
        for (std::size_t k = 0; k < tests.size(); ++k)
            tests[k] = simulate(InputSignal::sinusoid(cfg.test_frequencies_hz[k], duration(cfg.test_samples)),
                                FaultCondition::Nominal15V, cfg.plant, derive_seed(cfg.seed, 10 + k), cfg.faults);
        for (auto c : kAllConditions) {
            const std::size_t n = warmup + cfg.class_train_samples + cfg.class_test_count(c);
            records[index_of(c)] = simulate(InputSignal::sinusoid(cfg.condition_frequency_hz, duration(n)), c,
                                            cfg.plant, derive_seed(cfg.seed, 100 + index_of(c)), cfg.faults);
        }
        return 0;
    });
    report.provenance.push_back({"nominal_train", "regressor_fit", 0, train.size()});
    report.provenance.push_back({"nominal_train", "regressor_scaler", 0, train.size()});
    for (std::size_t k = 0; k < tests.size(); ++k)
        report.provenance.push_back({"nominal_test@" + format_double(cfg.test_frequencies_hz[k]), "regressor_test", 0,
                                     tests[k].size()});

    // --- regressors -----------------------------------------------------
    auto regressor_seed = [&](const RegressorSpec& spec) {
        return derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(spec.kind));
    };
    std::vector<TrainedRegressor> models(cfg.regressors.size());
    run_stage("regressors", [&] {
        parallel_for(
            cfg.regressors.size(),
            [&](std::size_t k) {
                auto spec = regressor_preset(cfg.regressors[k]);
                spec.training.epochs = cfg.regressor_epochs;
                spec.training.patience = cfg.regressor_patience;
                models[k] = train_regressor(spec, train, SplitSpec{cfg.regressor_folds}, regressor_seed(spec));
            },
            threads);
        return 0;
    });
    run_stage("regressor_eval", [&] {
        for (std::size_t k = 0; k < models.size(); ++k) {
            RegressorRow row;
            row.preset = cfg.regressors[k];
            row.name = display_name(models[k].spec.kind);
            row.cv_scores = models[k].cv_scores;
            for (const auto& te : tests) {
                row.parallel.push_back(
                    detail::r2_or_nan([&] { return score_regressor(models[k], te, PredictionMode::Parallel).mean(); }));
                row.series_parallel.push_back(score_regressor(models[k], te, PredictionMode::SeriesParallel).mean());
            }
            report.regressors.push_back(std::move(row));
        }
        return 0;
    });

    // --- residuals ------------------------------------------------------
    const auto nominal_it = std::find(cfg.regressors.begin(), cfg.regressors.end(), cfg.nominal_model);
    TrainedRegressor nominal;
    if (nominal_it != cfg.regressors.end()) {
        nominal = models[static_cast<std::size_t>(nominal_it - cfg.regressors.begin())];
    } else {
        nominal = run_stage("nominal_model", [&] {
            auto spec = nominal_spec;
            spec.training.epochs = cfg.regressor_epochs;
            spec.training.patience = cfg.regressor_patience;
            return train_regressor(spec, train, SplitSpec{cfg.regressor_folds}, regressor_seed(spec));
        });
    }
    run_stage("residuals", [&] {
        for (std::size_t k = 0; k < tests.size(); ++k) {
            DiagnosisReport::Trace tr{cfg.test_frequencies_hz[k], tests[k], Matrix(), warmup};
            tr.predicted = predict_parallel(nominal, tests[k]);
            report.nominal_traces.push_back(std::move(tr));
        }
        for (const auto& rec : records) report.residuals.push_back(compute_residuals(nominal, rec));
        return 0;
    });

    // --- datasets -------------------------------------------------------
    ClassifierDataset raw_train, raw_test, res_train, res_test;
    run_stage("datasets", [&] {
        for (auto c : kAllConditions) {
            const auto& rec = records[index_of(c)];
            const auto& res = report.residuals[index_of(c)];
            const std::size_t a = warmup, b = warmup + cfg.class_train_samples, e = rec.size();
            raw_train.append(signal_features(rec, a, b));
            raw_test.append(signal_features(rec, b, e));
            // residual index k is sample k + warmup
            res_train.append(residual_features(res, a - warmup, b - warmup));
            res_test.append(residual_features(res, b - warmup, e - warmup));
            const std::string name = "condition/" + detail::condition_key(c);
            report.provenance.push_back({name, "residual_warmup", 0, a});
            report.provenance.push_back({name, "classifier_fit", a, b});
            report.provenance.push_back({name, "classifier_scaler", a, b});
            report.provenance.push_back({name, "classifier_test", b, e});

            ResidualSummary s;
            s.condition = c;
            const std::size_t n = e - b;
            for (std::size_t k = b - warmup; k < e - warmup; ++k) {
                s.mean_rpm += res.r_rpm[k];
                s.mean_i += res.r_i[k];
                s.rms_rpm += res.r_rpm[k] * res.r_rpm[k];
                s.rms_i += res.r_i[k] * res.r_i[k];
            }
            s.mean_rpm /= static_cast<double>(n);
            s.mean_i /= static_cast<double>(n);
            s.rms_rpm = std::sqrt(s.rms_rpm / static_cast<double>(n));
            s.rms_i = std::sqrt(s.rms_i / static_cast<double>(n));
            report.residual_summary.push_back(s);
        }
        return 0;
    });

    // --- classifiers ----------------------------------------------------
    report.classifiers.resize(cfg.classifiers.size());
    run_stage("classifiers", [&] {
        parallel_for(
            cfg.classifiers.size(),
            [&](std::size_t k) {
                const auto& run = cfg.classifiers[k];
                auto spec = classifier_preset(run.preset);
                spec.training.batch_size = run.batch_size;
                spec.training.epochs = cfg.classifier_epochs;
                spec.training.patience = cfg.classifier_patience;
                spec.window = cfg.classifier_window;
                const bool res = spec.features == FeatureMode::Residuals;
                // matched seed for the all/res pair of one configuration
                const std::uint64_t seed = derive_seed(cfg.seed, 2000 + 16 * run.batch_size +
                                                                     (spec.kind == ClassifierKind::Lstm ? 1 : 0));
                const auto model = train_classifier(spec, res ? res_train : raw_train,
                                                    SplitSpec{cfg.classifier_folds}, seed);
                const auto& test = res ? res_test : raw_test;
                const auto out = predict_classifier(model, test);
                auto& row = report.classifiers[k];
                row.label = run.label();
                row.preset = run.preset;
                row.batch_size = run.batch_size;
                row.hidden = format_layout(spec.hidden);
                row.features = spec.features;
                row.confusion = confusion_matrix(test.labels, out.labels);
                row.accuracy = row.confusion.accuracy();
                row.cv_scores = model.cv_scores;
            },
            threads);
        return 0;
    });
    report.condition_records = std::move(records);
    verify_provenance(report.provenance);
    return report;
}

// ===========================================================================
// Report files

namespace detail {

inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline std::string csv_number(double x) { return std::isfinite(x) ? format_double(x) : "nan"; }

inline json confusion_json(const ConfusionMatrix& m) {
    json rows = json::array(), counts = json::array();
    for (std::size_t r = 0; r < kNumConditions; ++r) {
        json row = json::array(), crow = json::array();
        for (std::size_t c = 0; c < kNumConditions; ++c) {
            row.push_back(m.normalized[r][c]);
            crow.push_back(m.counts[r][c]);
        }
        rows.push_back(row);
        counts.push_back(crow);
    }
    return {{"normalized", rows}, {"counts", counts}};
}

} // namespace detail

inline json report_to_json(const DiagnosisReport& r) {
    json config = json::object();
    for (const auto& [k, v] : r.config.entries()) config[k] = v;
    json classes = json::array();
    for (auto c : kAllConditions) classes.push_back(name_of(c));

    json regs = json::array();
    for (const auto& row : r.regressors) {
        json par = json::array(), sp = json::array();
        for (double x : row.parallel) par.push_back(detail::number_or_null(x));
        for (double x : row.series_parallel) sp.push_back(detail::number_or_null(x));
        regs.push_back({{"preset", row.preset}, {"name", row.name}, {"parallel", par}, {"series_parallel", sp},
                        {"cv_scores", row.cv_scores}});
    }
    json clfs = json::array();
    for (const auto& c : r.classifiers)
        clfs.push_back({{"label", c.label},
                        {"preset", c.preset},
                        {"batch_size", c.batch_size},
                        {"hidden", c.hidden},
                        {"features", name_of(c.features)},
                        {"accuracy", c.accuracy},
                        {"cv_scores", c.cv_scores},
                        {"confusion", detail::confusion_json(c.confusion)}});
    json summary = json::array();
    for (const auto& s : r.residual_summary)
        summary.push_back({{"condition", name_of(s.condition)},
                           {"mean_rpm", s.mean_rpm},
                           {"mean_i", s.mean_i},
                           {"rms_rpm", s.rms_rpm},
                           {"rms_i", s.rms_i}});
    json prov = json::array();
    for (const auto& p : r.provenance)
        prov.push_back({{"record", p.record}, {"stage", p.stage}, {"begin", p.begin}, {"end", p.end}});

    return {{"seed", r.config.seed},
            {"config", config},
            {"classes", classes},
            {"test_frequencies_hz", r.config.test_frequencies_hz},
            {"r2", regs},
            {"classifiers", clfs},
            {"confusion_classifier", r.config.confusion_classifier},
            {"residual_summary", summary},
            {"provenance", prov}};
}

/// Writes report.json, the CSV tables and the plot-data CSVs into `dir`.
inline void write_report(const DiagnosisReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto file = [&](const std::string& name, const auto& fill) {
        std::ostringstream out;
        fill(out);
        write_text_file((dir / name).string(), out.str());
    };
    file("report.json", [&](std::ostream& o) { o << dump(report_to_json(r)); });

    auto r2_table = [&](bool parallel) {
        return [&r, parallel](std::ostream& o) {
            o << "regressor";
            for (double f : r.config.test_frequencies_hz) o << ',' << format_double(f);
            o << '\n';
            for (const auto& row : r.regressors) {
                o << row.name;
                for (double x : parallel ? row.parallel : row.series_parallel) o << ',' << detail::csv_number(x);
                o << '\n';
            }
        };
    };
    file("r2_scores.csv", r2_table(true));
    file("r2_scores_series_parallel.csv", r2_table(false));

    file("accuracy.csv", [&](std::ostream& o) {
        o << "classifier,features,batch_size,hidden,accuracy\n";
        for (const auto& c : r.classifiers)
            o << c.label << ',' << name_of(c.features) << ',' << c.batch_size << ',' << '"' << c.hidden << '"' << ','
              << format_double(c.accuracy) << '\n';
    });

    auto confusion_rows = [](std::ostream& o, const ConfusionMatrix& m) {
        o << "true";
        for (auto c : kAllConditions) o << ',' << name_of(c);
        o << '\n';
        for (std::size_t row = 0; row < kNumConditions; ++row) {
            o << name_of(kAllConditions[row]);
            for (std::size_t col = 0; col < kNumConditions; ++col) o << ',' << format_double(m.normalized[row][col]);
            o << '\n';
        }
    };
    if (const auto* c = r.classifier(r.config.confusion_classifier))
        file("confusion.csv", [&](std::ostream& o) { confusion_rows(o, c->confusion); });
    file("confusion_all.csv", [&](std::ostream& o) {
        o << "classifier,true,predicted,fraction,count\n";
        for (const auto& c : r.classifiers)
            for (std::size_t row = 0; row < kNumConditions; ++row)
                for (std::size_t col = 0; col < kNumConditions; ++col)
                    o << c.label << ',' << name_of(kAllConditions[row]) << ',' << name_of(kAllConditions[col]) << ','
                      << format_double(c.confusion.normalized[row][col]) << ',' << c.confusion.counts[row][col] << '\n';
    });

    file("scatter.csv", [&](std::ostream& o) {
        o << "t,u,rpm,i,label\n";
        for (const auto& f : r.condition_records)
            for (std::size_t k = 0; k < f.size(); ++k)
                o << format_double(f.t[k]) << ',' << format_double(f.u[k]) << ',' << format_double(f.rpm[k]) << ','
                  << format_double(f.i[k]) << ',' << (f.label[k] ? name_of(*f.label[k]) : "") << '\n';
    });
    file("residuals.csv", [&](std::ostream& o) { write_residuals_csv(o, r.residuals); });
    file("nominal_predictions.csv", [&](std::ostream& o) {
        o << "frequency_hz,t,u,rpm,i,rpm_pred,i_pred\n";
        for (const auto& tr : r.nominal_traces)
            for (std::size_t k = tr.first; k < tr.measured.size(); ++k)
                o << format_double(tr.frequency_hz) << ',' << format_double(tr.measured.t[k]) << ','
                  << format_double(tr.measured.u[k]) << ',' << format_double(tr.measured.rpm[k]) << ','
                  << format_double(tr.measured.i[k]) << ',' << format_double(tr.predicted(k - tr.first, 0)) << ','
                  << format_double(tr.predicted(k - tr.first, 1)) << '\n';
    });
}

} // namespace tfdd
