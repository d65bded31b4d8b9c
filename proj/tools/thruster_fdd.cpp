#include <thruster_fdd/pipeline.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tfdd;

namespace {

void require_file(const std::string& path) {
    if (!fs::is_regular_file(path)) throw DataError("no such file: " + path);
}

void require_output_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty() && !fs::is_directory(parent)) throw DataError("output directory does not exist: " + parent.string());
}

BenchmarkConfig overrides(const std::vector<std::string>& sets) {
    BenchmarkConfig cfg;
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void print_summary(const TimeSeriesFrame& f, const std::string& name) {
    auto range = [](const std::vector<double>& c) { return std::minmax_element(c.begin(), c.end()); };
    std::printf("%s: %zu samples, %.6g s\n", name.c_str(), f.size(), f.size() > 1 ? f.t.back() - f.t.front() : 0.0);
    const std::pair<const char*, const std::vector<double>*> ch[] = {{"u", &f.u}, {"v", &f.v}, {"rpm", &f.rpm}, {"i", &f.i}};
    for (const auto& [n, c] : ch) {
        const auto [lo, hi] = range(*c);
        std::printf("  %-4s [%.6g, %.6g]\n", n, *lo, *hi);
    }
}

// ---------------------------------------------------------------- simulate
struct SimulateArgs {
    std::string signal = "sine";
    double freq = 0.01, step = 0.25, hold = 10.0, duration = 200.0, amplitude = 1.0;
    std::string condition = "nominal15v";
    std::uint64_t seed = 0;
    std::string out;
    std::vector<std::string> sets;
};

int cmd_simulate(const SimulateArgs& a) {
    const auto cfg = overrides(a.sets);
    InputSignal sig;
    if (a.signal == "sine") sig = InputSignal::sinusoid(a.freq, a.duration, a.amplitude);
    else if (a.signal == "staircase") sig = InputSignal::staircase(a.step, a.duration, a.hold);
    else throw ConfigError("--signal must be sine or staircase");
    sig.validate();

    std::vector<FaultCondition> conds;
    if (a.condition == "all") conds.assign(kAllConditions.begin(), kAllConditions.end());
    else {
        try {
            conds.push_back(parse_condition(a.condition));
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
    }
    if (conds.size() > 1) {
        if (fs::exists(a.out) && !fs::is_directory(a.out)) throw DataError(a.out + " exists and is not a directory");
        fs::create_directories(a.out);
    } else {
        require_output_parent(a.out);
    }
    for (auto c : conds) {
        const auto seed = conds.size() > 1 ? derive_seed(a.seed, index_of(c)) : a.seed;
        const auto frame = simulate(sig, c, cfg.plant, seed, cfg.faults);
        const std::string path =
            conds.size() > 1 ? (fs::path(a.out) / (std::string(name_of(c)) + ".csv")).string() : a.out;
        write_frame_csv(path, frame);
        print_summary(frame, path);
    }
    return 0;
}

// ---------------------------------------------------------------- train
struct TrainArgs {
    std::string preset, grid, data, out, history;
    std::uint64_t seed = 0;
    std::size_t folds = 2;
    std::optional<std::size_t> epochs, patience, batch;
    std::optional<std::string> hidden;
};

RegressorSpec spec_from(const TrainArgs& a, const std::string& preset) {
    auto s = regressor_preset(preset);
    if (a.epochs) s.training.epochs = *a.epochs;
    if (a.patience) s.training.patience = *a.patience;
    if (a.batch) s.training.batch_size = *a.batch;
    if (a.hidden) s.hidden = parse_layout(*a.hidden);
    s.validate();
    return s;
}

void write_history(const std::string& path, const History& h) {
    std::ostringstream o;
    o << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < h.train_loss.size(); ++e)
        o << e + 1 << ',' << format_double(h.train_loss[e]) << ','
          << (e < h.val_loss.size() ? format_double(h.val_loss[e]) : "") << '\n';
    write_text_file(path, o.str());
}

int cmd_train(const TrainArgs& a) {
    if (a.preset.empty() == a.grid.empty()) throw ConfigError("train: give exactly one of --preset or --grid");
    require_file(a.data);
    if (!a.grid.empty()) require_file(a.grid);
    require_output_parent(a.out);
    if (!a.history.empty()) require_output_parent(a.history);
    const auto frame = read_frame_csv(a.data);
    const SplitSpec split{a.folds};

    if (!a.preset.empty()) {
        const auto spec = spec_from(a, a.preset);
        const auto model = train_regressor(spec, frame, split, a.seed);
        write_text_file(a.out, dump(model_to_json(model)));
        if (!a.history.empty()) write_history(a.history, model.history);
        double cv = 0.0;
        for (double s : model.cv_scores) cv += s;
        std::printf("%s: %zu epochs, mean cv r2 %.6f\n", std::string(preset_name(spec.kind)).c_str(),
                    model.history.train_loss.size(), cv / static_cast<double>(model.cv_scores.size()));
        return 0;
    }

    const auto g = read_json_file(a.grid);
    RegressorGrid grid;
    const auto base = spec_from(a, g.value("preset", std::string("narx")));
    try {
        for (const auto& l : g.value("layouts", std::vector<std::string>{})) grid.layouts.push_back(parse_layout(l));
        grid.batch_sizes = g.value("batch_sizes", std::vector<std::size_t>{});
        grid.input_delays = g.value("input_delays", std::vector<std::size_t>{});
        grid.output_delays = g.value("output_delays", std::vector<std::size_t>{});
        grid.epochs = g.value("epochs", std::vector<std::size_t>{});
    } catch (const json::exception& e) {
        throw DataError(a.grid + ": " + e.what());
    }
    const auto results = grid_search(
        grid.expand(base),
        [&](const RegressorSpec& s, std::uint64_t seed) {
            s.validate();
            return train_regressor(s, frame, split, seed).cv_scores;
        },
        a.seed);
    std::ostringstream o;
    o << "rank,index,hidden,batch_size,input_delays,output_delays,epochs,score,failed,error\n";
    for (std::size_t k = 0; k < results.size(); ++k) {
        const auto& r = results[k];
        o << k + 1 << ',' << r.index << ",\"" << format_layout(r.spec.hidden) << "\"," << r.spec.training.batch_size
          << ',' << r.spec.delays.inputs[0].delays << ','
          << (r.spec.delays.outputs.empty() ? 0 : r.spec.delays.outputs[0].delays) << ',' << r.spec.training.epochs
          << ',' << (r.failed ? "nan" : format_double(r.score)) << ',' << (r.failed ? 1 : 0) << ",\"" << r.error
          << "\"\n";
    }
    write_text_file(a.out, o.str());
    std::printf("%zu grid points, best %s batch %zu: %.6f\n", results.size(),
                format_layout(results.front().spec.hidden).c_str(), results.front().spec.training.batch_size,
                results.front().score);
    return 0;
}

// ---------------------------------------------------------------- eval / residuals
int cmd_eval(const std::string& model_path, const std::string& data, const std::string& mode) {
    require_file(model_path);
    require_file(data);
    const auto m = regressor_from_json(read_json_file(model_path));
    const auto frame = read_frame_csv(data);
    const auto s = score_regressor(m, frame, parse_prediction_mode(mode));
    std::printf("r2_rpm %.17g\nr2_i %.17g\nr2_mean %.17g\n", s.rpm, s.current, s.mean());
    return 0;
}

int cmd_residuals(const std::string& model_path, const std::string& data, const std::string& out) {
    require_file(model_path);
    require_file(data);
    require_output_parent(out);
    const auto m = regressor_from_json(read_json_file(model_path));
    const auto r = compute_residuals(m, read_frame_csv(data));
    std::ostringstream o;
    write_residuals_csv(o, {r});
    write_text_file(out, o.str());
    std::printf("%zu residual samples written to %s\n", r.size(), out.c_str());
    return 0;
}

// ---------------------------------------------------------------- classify
struct ClassifyArgs {
    std::string data, nominal, out, features = "residuals", preset;
    std::uint64_t seed = 0;
    std::size_t train_samples = 2000, skip = 20, folds = 3, epochs = 30, patience = 5, batch = 1, window = 8;
};

int cmd_classify(const ClassifyArgs& a) {
    const auto mode = parse_feature_mode(a.features);
    if (!fs::is_directory(a.data)) throw DataError("no such directory: " + a.data);
    if (mode == FeatureMode::Residuals) {
        if (a.nominal.empty()) throw ConfigError("classify: --features residuals needs --nominal");
        require_file(a.nominal);
    }
    fs::create_directories(a.out);

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.data))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no CSV records in " + a.data);

    std::optional<TrainedRegressor> nominal;
    if (mode == FeatureMode::Residuals) nominal = regressor_from_json(read_json_file(a.nominal));

    ClassifierDataset train, test;
    for (const auto& f : files) {
        const auto frame = read_frame_csv(f.string());
        const std::size_t a0 = a.skip, b = a.skip + a.train_samples;
        if (b >= frame.size()) throw DataError(f.string() + ": too short for " + std::to_string(a.train_samples) + " training samples");
        if (mode == FeatureMode::AllSignals) {
            train.append(signal_features(frame, a0, b));
            test.append(signal_features(frame, b, frame.size()));
        } else {
            const std::size_t lag = nominal->spec.max_delay();
            if (a0 < lag) throw ConfigError("classify: --skip must be at least the nominal model delay " + std::to_string(lag));
            const auto r = compute_residuals(*nominal, frame);
            train.append(residual_features(r, a0 - lag, b - lag));
            test.append(residual_features(r, b - lag, frame.size() - lag));
        }
    }

    auto spec = classifier_preset(a.preset.empty() ? (mode == FeatureMode::Residuals ? "clf-mlp-res" : "clf-mlp-all")
                                                   : a.preset);
    if (spec.features != mode) throw ConfigError("classify: preset and --features disagree");
    spec.training.epochs = a.epochs;
    spec.training.patience = a.patience;
    spec.training.batch_size = a.batch;
    spec.window = a.window;
    const auto model = train_classifier(spec, train, SplitSpec{a.folds}, a.seed);
    const auto out = predict_classifier(model, test);
    const auto cm = confusion_matrix(test.labels, out.labels);

    write_text_file((fs::path(a.out) / "model.json").string(), dump(model_to_json(model)));
    std::ostringstream acc, conf;
    acc << "classifier,features,batch_size,hidden,accuracy\n"
        << spec.name() << ',' << name_of(mode) << ',' << a.batch << ",\"" << format_layout(spec.hidden) << "\","
        << format_double(cm.accuracy()) << '\n';
    conf << "true";
    for (auto c : kAllConditions) conf << ',' << name_of(c);
    conf << '\n';
    for (std::size_t r = 0; r < kNumConditions; ++r) {
        conf << name_of(kAllConditions[r]);
        for (std::size_t c = 0; c < kNumConditions; ++c) conf << ',' << format_double(cm.normalized[r][c]);
        conf << '\n';
    }
    write_text_file((fs::path(a.out) / "accuracy.csv").string(), acc.str());
    write_text_file((fs::path(a.out) / "confusion.csv").string(), conf.str());
    std::printf("%s accuracy %.6f on %zu test samples\n", spec.name().c_str(), cm.accuracy(), test.size());
    return 0;
}

// ---------------------------------------------------------------- benchmark
int cmd_benchmark(const std::string& config, std::optional<std::uint64_t> seed, const std::vector<std::string>& sets,
                  const std::string& out) {
    BenchmarkConfig cfg;
    if (!config.empty()) {
        if (!fs::is_regular_file(config)) throw DataError("no such file: " + config);
        cfg = load_config(config);
    }
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    cfg.validate();
    if (fs::exists(out) && !fs::is_directory(out)) throw DataError(out + " exists and is not a directory");

    const auto report = run_benchmark(cfg);
    write_report(report, out);

    std::printf("r2 (parallel)");
    for (double f : cfg.test_frequencies_hz) std::printf("  %6.2f Hz", f);
    std::printf("\n");
    for (const auto& r : report.regressors) {
        std::printf("%-13s", r.name.c_str());
        for (double x : r.parallel) std::printf("  %9.4f", x);
        std::printf("\n");
    }
    for (const auto& c : report.classifiers) std::printf("%-13s accuracy %.4f\n", c.label.c_str(), c.accuracy);
    std::printf("report written to %s\n", out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Thruster nominal modelling and soft-fault diagnosis"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Simulate the thruster under one or all conditions");
    s->add_option("--signal", sim.signal, "sine or staircase")->capture_default_str();
    s->add_option("--freq", sim.freq, "Sinusoid frequency (Hz)")->capture_default_str();
    s->add_option("--amplitude", sim.amplitude, "Sinusoid amplitude")->capture_default_str();
    s->add_option("--step", sim.step, "Staircase step")->capture_default_str();
    s->add_option("--hold", sim.hold, "Staircase hold time (s)")->capture_default_str();
    s->add_option("--duration", sim.duration, "Duration (s)")->capture_default_str();
    s->add_option("--condition", sim.condition, "Condition name or 'all'")->capture_default_str();
    s->add_option("--seed", sim.seed, "Noise seed")->required();
    s->add_option("--set", sim.sets, "plant.* / fault.* override, key=value");
    s->add_option("-o,--output", sim.out, "CSV file (directory with --condition all)")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a nominal regressor or run a grid search");
    t->add_option("--preset", tr.preset, "mlp, mlp-d-db, narx, narx-db, lstm, gru");
    t->add_option("--grid", tr.grid, "Grid JSON");
    t->add_option("--data", tr.data, "Training CSV")->required();
    t->add_option("--seed", tr.seed, "Seed")->required();
    t->add_option("--folds", tr.folds, "Cross-validation folds")->capture_default_str();
    t->add_option("--epochs", tr.epochs, "Override epochs");
    t->add_option("--patience", tr.patience, "Override early-stopping patience");
    t->add_option("--batch", tr.batch, "Override batch size");
    t->add_option("--hidden", tr.hidden, "Override hidden layout, e.g. 32P,4P");
    t->add_option("--history", tr.history, "Training-history CSV");
    t->add_option("-o,--output", tr.out, "Model JSON (grid: ranked CSV)")->required();

    std::string model, data, mode = "parallel", res_out;
    auto* e = app.add_subcommand("eval", "Score a regressor on a dataset");
    e->add_option("--model", model, "Model JSON")->required();
    e->add_option("--data", data, "Dataset CSV")->required();
    e->add_option("--mode", mode, "parallel or series-parallel")->capture_default_str();

    auto* r = app.add_subcommand("residuals", "Residuals of a dataset against a nominal model");
    r->add_option("--model", model, "Nominal model JSON")->required();
    r->add_option("--data", data, "Dataset CSV")->required();
    r->add_option("-o,--output", res_out, "Residual CSV")->required();

    ClassifyArgs cl;
    auto* c = app.add_subcommand("classify", "Train and test a condition classifier");
    c->add_option("--data", cl.data, "Directory of labeled condition records")->required();
    c->add_option("--features", cl.features, "residuals or all")->capture_default_str();
    c->add_option("--nominal", cl.nominal, "Nominal model JSON (residual features)");
    c->add_option("--preset", cl.preset, "clf-mlp-all, clf-mlp-res, clf-lstm-all, clf-lstm-res");
    c->add_option("--seed", cl.seed, "Seed")->required();
    c->add_option("--train-samples", cl.train_samples, "Training samples per record")->capture_default_str();
    c->add_option("--skip", cl.skip, "Leading samples skipped per record")->capture_default_str();
    c->add_option("--folds", cl.folds, "Cross-validation folds")->capture_default_str();
    c->add_option("--epochs", cl.epochs, "Epochs")->capture_default_str();
    c->add_option("--patience", cl.patience, "Early-stopping patience")->capture_default_str();
    c->add_option("--batch", cl.batch, "Batch size")->capture_default_str();
    c->add_option("--window", cl.window, "LSTM input window")->capture_default_str();
    c->add_option("-o,--output", cl.out, "Output directory")->required();

    std::string config, bench_out = "report";
    std::optional<std::uint64_t> bench_seed;
    std::vector<std::string> bench_sets;
    auto* b = app.add_subcommand("benchmark", "Run the full modelling and diagnosis benchmark");
    b->add_option("--config", config, "key = value config file");
    b->add_option("--seed", bench_seed, "Seed (overrides the config)");
    b->add_option("--set", bench_sets, "Config override, key=value");
    b->add_option("-o,--output", bench_out, "Report directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (s->parsed()) return cmd_simulate(sim);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_eval(model, data, mode);
        if (r->parsed()) return cmd_residuals(model, data, res_out);
        if (c->parsed()) return cmd_classify(cl);
        if (b->parsed()) return cmd_benchmark(config, bench_seed, bench_sets, bench_out);
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 2;
}
