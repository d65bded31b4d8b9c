#pragma once

// JSON documents for networks and trained models. Loading re-checks every
// shape and rejects non-finite parameters.

#include "models.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace tfdd {

using json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline json matrix_json(const Matrix& m) { return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}}; }

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(where + ": field '" + key + "' has the wrong type");
    }
}

inline void all_finite(std::span<const double> xs, const std::string& where) {
    for (double x : xs)
        if (!std::isfinite(x)) throw DataError(where + ": non-finite value");
}

inline Matrix matrix_from(const json& j, std::size_t rows, std::size_t cols, const std::string& where) {
    const auto r = field<std::size_t>(j, "rows", where), c = field<std::size_t>(j, "cols", where);
    if (r != rows || c != cols)
        throw ShapeError(where + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", found " +
                         std::to_string(r) + "x" + std::to_string(c));
    Matrix m(rows, cols);
    m.data = field<std::vector<double>>(j, "data", where);
    if (m.data.size() != rows * cols)
        throw ShapeError(where + ": " + std::to_string(m.data.size()) + " values for a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " matrix");
    all_finite(m.data, where);
    return m;
}

inline Vector vector_from(const json& j, const char* key, std::size_t n, const std::string& where) {
    auto v = field<std::vector<double>>(j, key, where);
    if (v.size() != n)
        throw ShapeError(where + ": " + key + " has " + std::to_string(v.size()) + " values, expected " + std::to_string(n));
    all_finite(v, where);
    return v;
}

inline json gate_json(const GateParams& g) {
    return {{"input_weights", matrix_json(g.input_weights)},
            {"recurrent_weights", matrix_json(g.recurrent_weights)},
            {"bias", g.bias}};
}

inline GateParams gate_from(const json& j, std::size_t in, std::size_t hid, const std::string& where) {
    GateParams g;
    g.input_weights = matrix_from(field<json>(j, "input_weights", where), hid, in, where + ".input_weights");
    g.recurrent_weights = matrix_from(field<json>(j, "recurrent_weights", where), hid, hid, where + ".recurrent_weights");
    g.bias = vector_from(j, "bias", hid, where);
    return g;
}

inline Activation activation_from(const json& j, const char* key, const std::string& where) {
    try {
        return parse_activation(field<std::string>(j, key, where));
    } catch (const ConfigError& e) {
        throw DataError(where + ": " + e.what());
    }
}

} // namespace detail

inline json network_to_json(const Network& net) {
    json layers = json::array();
    for (const auto& layer : net.layers) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            layers.push_back({{"type", "dense"},
                              {"inputs", d->input_size()},
                              {"units", d->output_size()},
                              {"activation", name_of(d->activation)},
                              {"weights", detail::matrix_json(d->weights)},
                              {"bias", d->bias}});
        } else if (const auto* l = std::get_if<LstmCell>(&layer)) {
            layers.push_back({{"type", "lstm"},
                              {"inputs", l->input_size()},
                              {"units", l->hidden_size()},
                              {"gate_activation", name_of(l->gate_activation)},
                              {"forget", detail::gate_json(l->forget)},
                              {"input", detail::gate_json(l->input)},
                              {"output", detail::gate_json(l->output)},
                              {"candidate", detail::gate_json(l->candidate)}});
        } else {
            const auto& g = std::get<GruCell>(layer);
            layers.push_back({{"type", "gru"},
                              {"inputs", g.input_size()},
                              {"units", g.hidden_size()},
                              {"gate_activation", name_of(g.gate_activation)},
                              {"update", detail::gate_json(g.update)},
                              {"reset", detail::gate_json(g.reset)},
                              {"candidate", detail::gate_json(g.candidate)}});
        }
    }
    return {{"layers", layers}};
}

inline Network network_from_json(const json& j) {
    const auto layers = detail::field<json>(j, "layers", "network");
    if (!layers.is_array() || layers.empty()) throw DataError("network: 'layers' must be a non-empty array");
    Network net;
    std::size_t width = 0;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const std::string where = "network.layers[" + std::to_string(k) + "]";
        const auto& lj = layers[k];
        const auto type = detail::field<std::string>(lj, "type", where);
        const auto in = detail::field<std::size_t>(lj, "inputs", where);
        const auto units = detail::field<std::size_t>(lj, "units", where);
        if (in == 0 || units == 0) throw ShapeError(where + ": zero-sized layer");
        if (k > 0 && in != width)
            throw ShapeError(where + ": takes " + std::to_string(in) + " inputs but the previous layer emits " +
                             std::to_string(width));
        if (type == "dense") {
            DenseLayer d;
            d.activation = detail::activation_from(lj, "activation", where);
            d.weights = detail::matrix_from(detail::field<json>(lj, "weights", where), units, in, where + ".weights");
            d.bias = detail::vector_from(lj, "bias", units, where);
            net.layers.emplace_back(std::move(d));
        } else if (type == "lstm") {
            LstmCell c;
            c.gate_activation = detail::activation_from(lj, "gate_activation", where);
            c.forget = detail::gate_from(detail::field<json>(lj, "forget", where), in, units, where + ".forget");
            c.input = detail::gate_from(detail::field<json>(lj, "input", where), in, units, where + ".input");
            c.output = detail::gate_from(detail::field<json>(lj, "output", where), in, units, where + ".output");
            c.candidate = detail::gate_from(detail::field<json>(lj, "candidate", where), in, units, where + ".candidate");
            net.layers.emplace_back(std::move(c));
        } else if (type == "gru") {
            GruCell c;
            c.gate_activation = detail::activation_from(lj, "gate_activation", where);
            c.update = detail::gate_from(detail::field<json>(lj, "update", where), in, units, where + ".update");
            c.reset = detail::gate_from(detail::field<json>(lj, "reset", where), in, units, where + ".reset");
            c.candidate = detail::gate_from(detail::field<json>(lj, "candidate", where), in, units, where + ".candidate");
            net.layers.emplace_back(std::move(c));
        } else {
            throw DataError(where + ": unknown layer type '" + type + "'");
        }
        width = units;
    }
    net.check();
    return net;
}

inline json scaler_to_json(const ScalerParams& s) {
    std::vector<bool> fb(s.fallback.begin(), s.fallback.end());
    return {{"median", s.median}, {"iqr", s.iqr}, {"fallback", fb}};
}

inline ScalerParams scaler_from_json(const json& j, std::size_t channels, const std::string& where) {
    ScalerParams s;
    s.median = detail::vector_from(j, "median", channels, where);
    s.iqr = detail::vector_from(j, "iqr", channels, where);
    const auto fb = detail::field<std::vector<bool>>(j, "fallback", where);
    if (fb.size() != channels) throw ShapeError(where + ": fallback flags length mismatch");
    s.fallback.assign(fb.begin(), fb.end());
    s.check();
    return s;
}

inline json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"patience", c.patience},
            {"clip_norm", c.clip_norm},
            {"learning_rate", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon},
            {"loss", c.loss == LossKind::CrossEntropy ? "cross_entropy" : "mse"},
            {"stateful", c.stateful}};
}

inline TrainConfig train_config_from_json(const json& j) {
    const std::string w = "training";
    TrainConfig c;
    c.epochs = detail::field<std::size_t>(j, "epochs", w);
    c.batch_size = detail::field<std::size_t>(j, "batch_size", w);
    c.patience = detail::field<std::size_t>(j, "patience", w);
    c.clip_norm = detail::field<double>(j, "clip_norm", w);
    c.adam.lr = detail::field<double>(j, "learning_rate", w);
    c.adam.beta1 = detail::field<double>(j, "beta1", w);
    c.adam.beta2 = detail::field<double>(j, "beta2", w);
    c.adam.epsilon = detail::field<double>(j, "epsilon", w);
    const auto loss = detail::field<std::string>(j, "loss", w);
    if (loss == "cross_entropy") c.loss = LossKind::CrossEntropy;
    else if (loss == "mse") c.loss = LossKind::MeanSquaredError;
    else throw DataError("training: unknown loss '" + loss + "'");
    c.stateful = detail::field<bool>(j, "stateful", w);
    return c;
}

inline json history_to_json(const History& h) {
    return {{"train_loss", h.train_loss}, {"val_loss", h.val_loss}, {"best_epoch", h.best_epoch}};
}

inline History history_from_json(const json& j) {
    History h;
    h.train_loss = detail::field<std::vector<double>>(j, "train_loss", "history");
    h.val_loss = detail::field<std::vector<double>>(j, "val_loss", "history");
    h.best_epoch = detail::field<std::size_t>(j, "best_epoch", "history");
    if (h.train_loss.empty()) throw DataError("history: no recorded epochs");
    return h;
}

namespace detail {

inline json taps_json(const std::vector<DelayTap>& taps) {
    json a = json::array();
    for (const auto& t : taps) a.push_back({{"delays", t.delays}, {"start_offset", t.start_offset}});
    return a;
}

inline std::vector<DelayTap> taps_from(const json& j, const char* key) {
    std::vector<DelayTap> out;
    for (const auto& t : field<json>(j, key, "delays"))
        out.push_back({field<std::size_t>(t, "delays", "delays"), field<std::size_t>(t, "start_offset", "delays")});
    return out;
}

inline void check_network_io(const Network& net, std::size_t in, std::size_t out, const std::string& what) {
    if (net.input_size() != in || net.output_size() != out)
        throw ShapeError(what + ": network maps " + std::to_string(net.input_size()) + " -> " +
                         std::to_string(net.output_size()) + " but the model needs " + std::to_string(in) + " -> " +
                         std::to_string(out));
}

} // namespace detail

inline json model_to_json(const TrainedRegressor& m) {
    const auto& s = m.spec;
    return {{"format", "thruster_fdd.model"},
            {"version", kModelFormatVersion},
            {"kind", "regressor"},
            {"preset", preset_name(s.kind)},
            {"hidden", format_layout(s.hidden)},
            {"delays", {{"inputs", detail::taps_json(s.delays.inputs)}, {"outputs", detail::taps_json(s.delays.outputs)}}},
            {"lookback", s.lookback},
            {"deadband_u", s.deadband_u},
            {"deadtime_samples", s.deadtime_samples},
            {"gate_activation", name_of(s.gate_activation)},
            {"training", train_config_to_json(s.training)},
            {"input_channels", {"u", "v"}},
            {"output_channels", {"rpm", "i"}},
            {"input_scaler", scaler_to_json(m.input_scaler)},
            {"output_scaler", scaler_to_json(m.output_scaler)},
            {"scaler_samples", m.scaler_samples},
            {"history", history_to_json(m.history)},
            {"cv_scores", m.cv_scores},
            {"seed", m.seed},
            {"network", network_to_json(m.network)}};
}

inline json model_to_json(const TrainedClassifier& m) {
    const auto& s = m.spec;
    return {{"format", "thruster_fdd.model"},
            {"version", kModelFormatVersion},
            {"kind", "classifier"},
            {"classifier", s.kind == ClassifierKind::Lstm ? "lstm" : "mlp"},
            {"features", name_of(s.features)},
            {"hidden", format_layout(s.hidden)},
            {"window", s.window},
            {"gate_activation", name_of(s.gate_activation)},
            {"training", train_config_to_json(s.training)},
            {"scaler", scaler_to_json(m.scaler)},
            {"history", history_to_json(m.history)},
            {"cv_scores", m.cv_scores},
            {"seed", m.seed},
            {"network", network_to_json(m.network)}};
}

inline std::string model_kind(const json& j) {
    if (detail::field<std::string>(j, "format", "model") != "thruster_fdd.model")
        throw DataError("model: not a thruster_fdd model document");
    if (detail::field<int>(j, "version", "model") != kModelFormatVersion)
        throw DataError("model: unsupported format version");
    return detail::field<std::string>(j, "kind", "model");
}

inline TrainedRegressor regressor_from_json(const json& j) {
    if (model_kind(j) != "regressor") throw DataError("model: expected a regressor");
    TrainedRegressor m;
    auto& s = m.spec;
    try {
        s.kind = parse_regressor_kind(detail::field<std::string>(j, "preset", "model"));
        s.hidden = parse_layout(detail::field<std::string>(j, "hidden", "model"));
    } catch (const ConfigError& e) {
        throw DataError(std::string("model: ") + e.what());
    }
    const auto dj = detail::field<json>(j, "delays", "model");
    s.delays.inputs = detail::taps_from(dj, "inputs");
    s.delays.outputs = detail::taps_from(dj, "outputs");
    s.lookback = detail::field<std::size_t>(j, "lookback", "model");
    s.deadband_u = detail::field<double>(j, "deadband_u", "model");
    s.deadtime_samples = detail::field<std::size_t>(j, "deadtime_samples", "model");
    s.gate_activation = detail::activation_from(j, "gate_activation", "model");
    s.training = train_config_from_json(detail::field<json>(j, "training", "model"));
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("model: ") + e.what());
    }
    m.input_scaler = scaler_from_json(detail::field<json>(j, "input_scaler", "model"), 2, "input_scaler");
    m.output_scaler = scaler_from_json(detail::field<json>(j, "output_scaler", "model"), 2, "output_scaler");
    m.scaler_samples = detail::field<std::size_t>(j, "scaler_samples", "model");
    m.history = history_from_json(detail::field<json>(j, "history", "model"));
    m.cv_scores = detail::field<std::vector<double>>(j, "cv_scores", "model");
    m.seed = detail::field<std::uint64_t>(j, "seed", "model");
    m.network = network_from_json(detail::field<json>(j, "network", "model"));
    detail::check_network_io(m.network, s.delays.feature_width(s.output_feedback()), 2, "model");
    if (format_layout(s.hidden) != format_layout([&] {
            std::vector<LayerSpec> l;
            for (std::size_t k = 0; k + 1 < m.network.layers.size(); ++k) {
                const auto& layer = m.network.layers[k];
                l.push_back({layer_output_size(layer), std::holds_alternative<LstmCell>(layer)  ? UnitKind::Lstm
                                                       : std::holds_alternative<GruCell>(layer) ? UnitKind::Gru
                                                                                                : UnitKind::Perceptron});
            }
            return l;
        }()))
        throw ShapeError("model: network layers do not match the hidden layout " + format_layout(s.hidden));
    return m;
}

inline TrainedClassifier classifier_from_json(const json& j) {
    if (model_kind(j) != "classifier") throw DataError("model: expected a classifier");
    TrainedClassifier m;
    auto& s = m.spec;
    const auto kind = detail::field<std::string>(j, "classifier", "model");
    if (kind == "mlp") s.kind = ClassifierKind::Mlp;
    else if (kind == "lstm") s.kind = ClassifierKind::Lstm;
    else throw DataError("model: unknown classifier kind '" + kind + "'");
    try {
        s.features = parse_feature_mode(detail::field<std::string>(j, "features", "model"));
        s.hidden = parse_layout(detail::field<std::string>(j, "hidden", "model"));
    } catch (const ConfigError& e) {
        throw DataError(std::string("model: ") + e.what());
    }
    s.window = detail::field<std::size_t>(j, "window", "model");
    s.gate_activation = detail::activation_from(j, "gate_activation", "model");
    s.training = train_config_from_json(detail::field<json>(j, "training", "model"));
    m.scaler = scaler_from_json(detail::field<json>(j, "scaler", "model"), feature_width(s.features), "scaler");
    m.history = history_from_json(detail::field<json>(j, "history", "model"));
    m.cv_scores = detail::field<std::vector<double>>(j, "cv_scores", "model");
    m.seed = detail::field<std::uint64_t>(j, "seed", "model");
    m.network = network_from_json(detail::field<json>(j, "network", "model"));
    detail::check_network_io(m.network, feature_width(s.features), kNumConditions, "model");
    const auto& last = m.network.layers.back();
    if (!std::holds_alternative<DenseLayer>(last) || std::get<DenseLayer>(last).activation != Activation::Softmax)
        throw ShapeError("model: classifier output layer must be a softmax dense layer");
    return m;
}

inline std::string dump(const json& j) { return j.dump(1) + "\n"; }

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << text;
    if (!out) throw DataError("write failed: " + path);
}

} // namespace tfdd
