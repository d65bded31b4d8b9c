#include <thruster_fdd/pipeline.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tfdd;
namespace fs = std::filesystem;

namespace {

const TrainedRegressor& nominal_model(bool noisy) {
    static const auto make = [](bool with_noise) {
        PlantParams p;
        if (!with_noise) p.noise_sigma_rpm = p.noise_sigma_current = 0.0;
        const auto f = simulate(InputSignal::sinusoid(0.01, 200), FaultCondition::Nominal15V, p, 41);
        return train_regressor(regressor_preset("narx"), f, {}, 42);
    };
    static const TrainedRegressor quiet = make(false), loud = make(true);
    return noisy ? loud : quiet;
}

TimeSeriesFrame record(FaultCondition c, const PlantParams& p, std::uint64_t seed) {
    return simulate(InputSignal::sinusoid(0.01, 102), c, p, seed);
}

double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

double rms(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

BenchmarkConfig tiny() {
    BenchmarkConfig c;
    c.seed = 3;
    c.train_samples = 600;
    c.test_samples = 300;
    c.test_frequencies_hz = {0.02, 0.04};
    c.regressors = {"mlp"};
    c.nominal_model = "mlp";
    c.regressor_epochs = 5;
    c.class_train_samples = 120;
    c.class_test_samples = 300;
    c.classifier_epochs = 3;
    c.classifiers = {{"clf-mlp-all", 5}, {"clf-mlp-res", 5}};
    c.confusion_classifier = "MLP_res/5";
    return c;
}

} // namespace

// --- residuals ----------------------------------------------------------

TEST(Residuals, AlignedWithTheNominalModelLag) {
    const auto& m = nominal_model(false);
    const auto f = record(FaultCondition::OneBrokenBlade, PlantParams{}, 5);
    const auto r = compute_residuals(m, f);
    ASSERT_EQ(r.size(), f.size() - m.spec.max_delay());
    const Matrix p = predict_parallel(m, f);
    EXPECT_EQ(r.t.front(), f.t[m.spec.max_delay()]);
    EXPECT_EQ(r.r_i[7], f.i[7 + m.spec.max_delay()] - p(7, 1));
    EXPECT_EQ(r.label.back(), FaultCondition::OneBrokenBlade);
}

TEST(Residuals, SmallOnTheNoiselessPlant) {
    PlantParams p;
    p.noise_sigma_rpm = p.noise_sigma_current = 0.0;
    const auto f = record(FaultCondition::Nominal15V, p, 6);
    const auto r = compute_residuals(nominal_model(false), f);
    const std::vector<double> rpm(f.rpm.begin() + 20, f.rpm.end()), cur(f.i.begin() + 20, f.i.end());
    EXPECT_LT(rms(r.r_rpm), 0.05 * rms(rpm));
    EXPECT_LT(rms(r.r_i), 0.05 * rms(cur));
}

TEST(Residuals, NominalResidualsAreNearlyZeroMean) {
    const auto& m = nominal_model(true);
    const auto f = record(FaultCondition::Nominal15V, PlantParams{}, 7);
    const auto r = compute_residuals(m, f);
    const auto bio = compute_residuals(m, record(FaultCondition::Biofouling, PlantParams{}, 7));
    EXPECT_LT(std::abs(mean(r.r_rpm)), 0.1 * rms(f.rpm));
    EXPECT_LT(std::abs(mean(r.r_i)), 0.1 * rms(f.i));
    EXPECT_LT(std::abs(mean(r.r_i)), 0.5 * mean(bio.r_i));
}

TEST(Residuals, ExactModelLeavesOnlyNoise) {
    // measured minus the noiseless plant: the 2 sigma / sqrt(N) bound on the mean
    PlantParams quiet;
    quiet.noise_sigma_rpm = quiet.noise_sigma_current = 0.0;
    const PlantParams p;
    const auto clean = record(FaultCondition::Nominal15V, quiet, 7), noisy = record(FaultCondition::Nominal15V, p, 7);
    std::vector<double> e_rpm, e_i;
    for (std::size_t k = 0; k < clean.size(); ++k) {
        e_rpm.push_back(noisy.rpm[k] - clean.rpm[k]);
        e_i.push_back(noisy.i[k] - clean.i[k]);
    }
    const double n = static_cast<double>(clean.size());
    EXPECT_LT(std::abs(mean(e_rpm)), 2.0 * p.noise_sigma_rpm / std::sqrt(n));
    EXPECT_LT(std::abs(mean(e_i)), 2.0 * p.noise_sigma_current / std::sqrt(n));
    EXPECT_NEAR(rms(e_rpm), p.noise_sigma_rpm, 0.1 * p.noise_sigma_rpm);
}

TEST(Residuals, BiofoulingShiftsBothChannels) {
    const auto& m = nominal_model(true);
    const auto f = record(FaultCondition::Biofouling, PlantParams{}, 8);
    const auto r = compute_residuals(m, f);
    const Matrix p = predict_parallel(m, f);
    // rpm is odd in u: the slowdown shows as a negative residual along the
    // direction of rotation
    double along = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) along += r.r_rpm[k] * (p(k, 0) > 0 ? 1.0 : p(k, 0) < 0 ? -1.0 : 0.0);
    EXPECT_LT(along / static_cast<double>(r.size()), 0.0);
    EXPECT_GT(mean(r.r_i), 0.0);
}

TEST(Residuals, NominalIsQuietestCondition) {
    const auto& m = nominal_model(true);
    const auto nom = compute_residuals(m, record(FaultCondition::Nominal15V, PlantParams{}, 9));
    for (auto c : kAllConditions) {
        if (c == FaultCondition::Nominal15V) continue;
        const auto r = compute_residuals(m, record(c, PlantParams{}, 9));
        EXPECT_LT(rms(nom.r_rpm) + rms(nom.r_i) / 0.23 * 42.0, rms(r.r_rpm) + rms(r.r_i) / 0.23 * 42.0) << name_of(c);
        EXPECT_TRUE(rms(nom.r_rpm) < rms(r.r_rpm) || rms(nom.r_i) < rms(r.r_i)) << name_of(c);
    }
}

TEST(Residuals, CsvLayout) {
    ResidualSeries s{{0.0, 0.1}, {1.5, -2.0}, {0.25, 0.0}, {FaultCondition::Biofouling, std::nullopt}};
    std::ostringstream o;
    write_residuals_csv(o, {s});
    EXPECT_EQ(o.str(), "t,r_rpm,r_i,label\n0,1.5,0.25,Biofouling\n0.10000000000000001,-2,0,\n");
}

// --- features -----------------------------------------------------------

TEST(Features, RangesAndLabels) {
    const auto f = record(FaultCondition::Voltage13V, PlantParams{}, 10);
    const auto d = signal_features(f, 5, 9);
    ASSERT_EQ(d.size(), 4u);
    EXPECT_EQ(d.features(0, 1), f.v[5]);
    EXPECT_EQ(d.features(3, 3), f.i[8]);
    EXPECT_THROW(signal_features(f, 9, 9), DataError);
    EXPECT_THROW(signal_features(f, 0, f.size() + 1), DataError);
    auto g = f;
    g.label[6] = std::nullopt;
    EXPECT_THROW(signal_features(g, 5, 9), DataError);
}

// --- configuration ------------------------------------------------------

TEST(Config, ParsesKeyValueText) {
    BenchmarkConfig c;
    std::istringstream in("# comment\nseed = 11\n\n  classifier_epochs=4 # trailing\n"
                          "classifiers = clf-mlp-res/1, clf-lstm-all/5\nfault.biofouling.drag_factor = 1.5\n"
                          "plant.tau1_s = 0.7\ntest_frequencies_hz = 0.01,0.05\n");
    apply_config_text(c, in);
    EXPECT_EQ(c.seed, 11u);
    EXPECT_EQ(c.classifier_epochs, 4u);
    ASSERT_EQ(c.classifiers.size(), 2u);
    EXPECT_EQ(c.classifiers[1].label(), "LSTM_all/5");
    EXPECT_EQ(c.faults[index_of(FaultCondition::Biofouling)].drag_factor, 1.5);
    EXPECT_EQ(c.plant.tau1_s, 0.7);
    EXPECT_EQ(c.test_frequencies_hz, (std::vector<double>{0.01, 0.05}));
}

TEST(Config, ErrorsNameTheLine) {
    auto fails_on = [](const std::string& text) {
        BenchmarkConfig c;
        std::istringstream in(text);
        try {
            apply_config_text(c, in, "cfg");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(fails_on("seed = 1\nbogus = 2\n").find("cfg:2"), std::string::npos);
    EXPECT_NE(fails_on("seed = x\n").find("cfg:1"), std::string::npos);
    EXPECT_NE(fails_on("\n\nno equals sign\n").find("cfg:3"), std::string::npos);
    EXPECT_NE(fails_on("fault.biofouling.colour = 1\n"), "");
    EXPECT_NE(fails_on("classifiers = clf-mlp-res\n"), "");
}

TEST(Config, EntriesRoundTrip) {
    BenchmarkConfig a;
    a.seed = 99;
    a.plant.noise_sigma_rpm = 12.5;
    a.faults[index_of(FaultCondition::TwoBrokenBlades)].load_factor = 1.3;
    a.classifiers = {{"clf-lstm-res", 2}};
    BenchmarkConfig b;
    for (const auto& [k, v] : a.entries()) b.set(k, v);
    EXPECT_EQ(a.entries(), b.entries());
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
    const auto cfg = load_config(TFDD_SOURCE_DIR "/configs/default.cfg");
    EXPECT_EQ(cfg.entries(), BenchmarkConfig{}.entries());
    EXPECT_THROW(load_config(TFDD_SOURCE_DIR "/configs/missing.cfg"), ConfigError);
}

TEST(Config, TestSplitAcrossClasses) {
    const BenchmarkConfig c;
    std::size_t total = 0;
    for (auto k : kAllConditions) total += c.class_test_count(k);
    EXPECT_EQ(total, 11200u);
    EXPECT_EQ(c.class_test_count(FaultCondition::Nominal15V), 1870u);
    EXPECT_EQ(c.class_test_count(FaultCondition::Biofouling), 1866u);
}

TEST(Config, ValidateRejects) {
    auto bad = [](auto edit) {
        BenchmarkConfig c;
        edit(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    bad([](BenchmarkConfig& c) { c.regressors = {"svm"}; });
    bad([](BenchmarkConfig& c) { c.test_frequencies_hz = {0.01, -1.0}; });
    bad([](BenchmarkConfig& c) { c.faults[1].voltage_v = 0.0; });
    bad([](BenchmarkConfig& c) { c.classifiers = {{"clf-mlp-res", 0}}; });
}

// --- provenance ---------------------------------------------------------

TEST(Provenance, OverlapIsRejected) {
    std::vector<ProvenanceEntry> ok{{"a", "classifier_fit", 20, 120}, {"a", "classifier_test", 120, 400},
                                    {"b", "classifier_fit", 120, 400}};
    EXPECT_NO_THROW(verify_provenance(ok));
    auto leak = ok;
    leak.push_back({"a", "classifier_scaler", 0, 121});
    try {
        verify_provenance(leak);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("[120, 121)"), std::string::npos);
    }
}

// --- end to end ---------------------------------------------------------

TEST(Benchmark, TinyRunIsCompleteAndDeterministic) {
    const auto cfg = tiny();
    const auto a = run_benchmark(cfg);
    ASSERT_EQ(a.regressors.size(), 1u);
    EXPECT_EQ(a.regressors[0].parallel.size(), 2u);
    ASSERT_EQ(a.classifiers.size(), 2u);
    EXPECT_EQ(a.residual_summary.size(), kNumConditions);
    for (const auto& c : a.classifiers) {
        EXPECT_EQ(c.confusion.total, cfg.class_test_samples);
        for (std::size_t r = 0; r < kNumConditions; ++r) {
            double s = 0.0;
            for (double x : c.confusion.normalized[r]) s += x;
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
    EXPECT_NO_THROW(verify_provenance(a.provenance));
    bool saw_test = false;
    for (const auto& p : a.provenance) saw_test |= p.stage == "classifier_test";
    EXPECT_TRUE(saw_test);

    const auto dir = fs::temp_directory_path() / "tfdd_tiny";
    fs::remove_all(dir);
    write_report(a, dir / "a");
    write_report(run_benchmark(cfg), dir / "b");
    for (const char* name : {"report.json", "r2_scores.csv", "accuracy.csv", "confusion.csv", "confusion_all.csv",
                             "scatter.csv", "residuals.csv", "nominal_predictions.csv"}) {
        const auto x = slurp(dir / "a" / name);
        EXPECT_FALSE(x.empty()) << name;
        EXPECT_EQ(x, slurp(dir / "b" / name)) << name;
    }
    const auto j = json::parse(slurp(dir / "a" / "report.json"));
    EXPECT_EQ(j["config"]["seed"], "3");
    fs::remove_all(dir);
}

TEST(Benchmark, ThreadCountDoesNotChangeResults) {
    auto cfg = tiny();
    cfg.threads = 1;
    const auto a = report_to_json(run_benchmark(cfg));
    cfg.threads = 3;
    EXPECT_EQ(dump(report_to_json(run_benchmark(cfg))), dump(a));
}

TEST(Benchmark, StageFailureIsNamed) {
    auto cfg = tiny();
    cfg.class_train_samples = 1; // too few for three folds
    try {
        run_benchmark(cfg);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_NE(std::string(e.what()).find("classifiers"), std::string::npos) << e.what();
    }
}
