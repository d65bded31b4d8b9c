#include <thruster_fdd/pipeline.hpp>

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace tfdd;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

Run cli(const std::string& args) {
    const std::string cmd = std::string(TFDD_CLI) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return {-1, ""};
    std::string out;
    char buf[4096];
    while (const auto n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    fs::path dir;
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("tfdd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string at(const std::string& name) const { return (dir / name).string(); }
};

} // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
    EXPECT_EQ(cli("simulate -o " + at("x.csv")).code, 2);                            // no seed
    EXPECT_EQ(cli("simulate --seed 1 --bogus -o " + at("x.csv")).code, 2);           // unknown flag
    EXPECT_EQ(cli("simulate --seed 1 --condition Rusty -o " + at("x.csv")).code, 2); // bad condition
    EXPECT_EQ(cli("simulate --seed 1 --signal square -o " + at("x.csv")).code, 2);
    EXPECT_EQ(cli("simulate --seed 1 --freq -3 -o " + at("x.csv")).code, 2);
    EXPECT_EQ(cli("benchmark --set nonsense=1 -o " + at("r")).code, 2);
    EXPECT_FALSE(fs::exists(at("x.csv")));
    EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, IoErrorsExitOne) {
    EXPECT_EQ(cli("eval --model " + at("none.json") + " --data " + at("none.csv")).code, 1);
    EXPECT_EQ(cli("simulate --seed 1 -o " + at("missing/dir/x.csv")).code, 1);
    EXPECT_EQ(cli("benchmark --config " + at("none.cfg") + " -o " + at("r")).code, 1);
    EXPECT_FALSE(fs::exists(at("r")));
}

TEST_F(Cli, SimulateIsDeterministicAndSummarises) {
    const auto r = cli("simulate --signal staircase --duration 60 --seed 4 --condition Biofouling -o " + at("a.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("600 samples"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("rpm"), std::string::npos);
    ASSERT_EQ(cli("simulate --signal staircase --duration 60 --seed 4 --condition Biofouling -o " + at("b.csv")).code, 0);
    EXPECT_EQ(slurp(at("a.csv")), slurp(at("b.csv")));
    const auto f = read_frame_csv(at("a.csv"));
    EXPECT_EQ(f.size(), 600u);
    EXPECT_EQ(f.label.front(), FaultCondition::Biofouling);
    ASSERT_EQ(cli("simulate --duration 60 --seed 4 --set plant.noise_sigma_rpm=0 -o " + at("c.csv")).code, 0);
    EXPECT_NE(slurp(at("a.csv")), slurp(at("c.csv")));
}

TEST_F(Cli, SimulateAllConditions) {
    ASSERT_EQ(cli("simulate --duration 20 --seed 2 --condition all -o " + at("rec")).code, 0);
    for (auto c : kAllConditions) {
        const auto f = read_frame_csv(at("rec/" + std::string(name_of(c)) + ".csv"));
        EXPECT_EQ(f.label.back(), c);
        EXPECT_DOUBLE_EQ(f.v[0], fault_effects(c).voltage_v);
    }
}

TEST_F(Cli, TrainEvalResiduals) {
    ASSERT_EQ(cli("simulate --duration 150 --seed 5 -o " + at("train.csv")).code, 0);
    ASSERT_EQ(cli("simulate --duration 80 --freq 0.02 --seed 6 -o " + at("test.csv")).code, 0);
    auto r = cli("train --preset narx --epochs 4 --data " + at("train.csv") + " --seed 1 -o " + at("m.json") +
                 " --history " + at("h.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(regressor_from_json(read_json_file(at("m.json"))).spec.kind, RegressorKind::Narx);
    EXPECT_EQ(slurp(at("h.csv")).rfind("epoch,train_loss,val_loss\n", 0), 0u);

    r = cli("eval --model " + at("m.json") + " --data " + at("test.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto m = regressor_from_json(read_json_file(at("m.json")));
    const auto expect = score_regressor(m, read_frame_csv(at("test.csv")), PredictionMode::Parallel);
    char line[128];
    std::snprintf(line, sizeof line, "r2_mean %.17g\n", expect.mean());
    EXPECT_NE(r.out.find(line), std::string::npos) << r.out;
    EXPECT_EQ(cli("eval --mode sideways --model " + at("m.json") + " --data " + at("test.csv")).code, 2);

    r = cli("residuals --model " + at("m.json") + " --data " + at("test.csv") + " -o " + at("r.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::ostringstream want;
    write_residuals_csv(want, {compute_residuals(m, read_frame_csv(at("test.csv")))});
    EXPECT_EQ(slurp(at("r.csv")), want.str());
}

TEST_F(Cli, TrainGridWritesRanking) {
    ASSERT_EQ(cli("simulate --duration 100 --seed 5 -o " + at("train.csv")).code, 0);
    std::ofstream(at("grid.json")) << R"({"preset": "mlp", "layouts": ["4P", "8P,4P"], "batch_sizes": [10], "epochs": [0, 5]})";
    const auto r = cli("train --grid " + at("grid.json") + " --data " + at("train.csv") + " --seed 3 -o " + at("rank.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::istringstream rank(slurp(at("rank.csv")));
    std::string header, first;
    std::getline(rank, header);
    std::getline(rank, first);
    EXPECT_EQ(header.rfind("rank,index,", 0), 0u);
    EXPECT_EQ(first.rfind("1,", 0), 0u);
    std::size_t rows = 0;
    for (std::string l; std::getline(rank, l);) ++rows;
    EXPECT_EQ(rows, 3u);
    EXPECT_EQ(cli("train --preset mlp --grid " + at("grid.json") + " --data " + at("train.csv") + " --seed 3 -o " +
                  at("x")).code,
              2);
}

TEST_F(Cli, ClassifyBothFeatureModes) {
    ASSERT_EQ(cli("simulate --duration 120 --seed 9 --condition all -o " + at("rec")).code, 0);
    ASSERT_EQ(cli("simulate --duration 120 --seed 8 -o " + at("nom.csv")).code, 0);
    ASSERT_EQ(cli("train --preset narx --epochs 3 --data " + at("nom.csv") + " --seed 1 -o " + at("narx.json")).code, 0);
    for (const std::string mode : {"all", "residuals"}) {
        const auto r = cli("classify --data " + at("rec") + " --features " + mode + " --nominal " + at("narx.json") +
                           " --train-samples 600 --epochs 2 --seed 4 -o " + at("out_" + mode));
        ASSERT_EQ(r.code, 0) << r.out;
        const auto acc = slurp(at("out_" + mode + "/accuracy.csv"));
        EXPECT_NE(acc.find(mode == "all" ? "MLP_all" : "MLP_res"), std::string::npos) << acc;
        EXPECT_EQ(slurp(at("out_" + mode + "/confusion.csv")).rfind("true,Nominal15V", 0), 0u);
        EXPECT_EQ(classifier_from_json(read_json_file(at("out_" + mode + "/model.json"))).spec.name(),
                  mode == "all" ? "MLP_all" : "MLP_res");
    }
    EXPECT_EQ(cli("classify --data " + at("rec") + " --features residuals --seed 1 -o " + at("o")).code, 2);
    EXPECT_EQ(cli("classify --data " + at("nowhere") + " --features all --seed 1 -o " + at("o")).code, 1);
}

TEST_F(Cli, BenchmarkWritesReport) {
    const std::string sets = " --set regressors=mlp --set nominal_model=mlp --set regressor_epochs=3"
                             " --set train_samples=500 --set test_samples=200 --set class_train_samples=90"
                             " --set class_test_samples=240 --set classifier_epochs=2"
                             " --set classifiers=clf-mlp-all/5,clf-mlp-res/5 --set confusion_classifier=MLP_res/5";
    const auto r = cli("benchmark --seed 5" + sets + " -o " + at("a"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("MLP_res/5"), std::string::npos);
    ASSERT_EQ(cli("benchmark --seed 5" + sets + " -o " + at("b")).code, 0);
    for (const auto& e : fs::directory_iterator(dir / "a"))
        EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
    const auto j = json::parse(slurp(dir / "a" / "report.json"));
    EXPECT_EQ(j["config"]["seed"], "5");
}
