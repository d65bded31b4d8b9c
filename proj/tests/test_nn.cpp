#include <thruster_fdd/gradcheck.hpp>
#include <thruster_fdd/training.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace tfdd;

namespace {

void randomize(Network& net, Rng& rng, double scale = 0.5) {
    net.for_each_param([&](std::span<double> s) {
        for (auto& x : s) x = rng.uniform(-scale, scale);
    });
}

Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
    Vector v(n);
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return v;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight transcription of the LSTM equations with raw loops.
RecurrentState lstm_oracle(const LstmCell& p, const Vector& x, const RecurrentState& s) {
    const std::size_t H = p.hidden_size(), I = p.input_size();
    auto affine = [&](const GateParams& g, std::size_t j) {
        double z = g.bias[j];
        for (std::size_t k = 0; k < I; ++k) z += g.input_weights.data[j * I + k] * x[k];
        for (std::size_t k = 0; k < H; ++k) z += g.recurrent_weights.data[j * H + k] * s.h[k];
        return z;
    };
    RecurrentState out{Vector(H), Vector(H)};
    for (std::size_t j = 0; j < H; ++j) {
        const double f = sig(affine(p.forget, j));
        const double i = sig(affine(p.input, j));
        const double o = sig(affine(p.output, j));
        out.c[j] = f * s.c[j] + i * std::tanh(affine(p.candidate, j));
        out.h[j] = o * std::tanh(out.c[j]);
    }
    return out;
}

// Straight transcription of the adopted GRU equations.
RecurrentState gru_oracle(const GruCell& p, const Vector& x, const RecurrentState& s) {
    const std::size_t H = p.hidden_size(), I = p.input_size();
    auto affine = [&](const GateParams& g, std::size_t j, const Vector& h) {
        double z = g.bias[j];
        for (std::size_t k = 0; k < I; ++k) z += g.input_weights.data[j * I + k] * x[k];
        for (std::size_t k = 0; k < H; ++k) z += g.recurrent_weights.data[j * H + k] * h[k];
        return z;
    };
    Vector r(H), rh(H);
    for (std::size_t j = 0; j < H; ++j) r[j] = sig(affine(p.reset, j, s.h));
    for (std::size_t j = 0; j < H; ++j) rh[j] = r[j] * s.h[j];
    RecurrentState out{Vector(H), {}};
    for (std::size_t j = 0; j < H; ++j) {
        const double z = sig(affine(p.update, j, s.h));
        const double cand = std::tanh(affine(p.candidate, j, rh));
        out.h[j] = (1.0 - z) * s.h[j] + z * cand;
    }
    return out;
}

template <typename Cell>
Cell random_cell(std::size_t in, std::size_t hid, Rng& rng) {
    Cell c(in, hid);
    c.for_each_param([&](std::span<double> s) {
        for (auto& x : s) x = rng.uniform(-1, 1);
    });
    return c;
}

} // namespace

TEST(Dense, ZeroWeightsTanhGivesZero) {
    DenseLayer d(3, 4, Activation::Tanh);
    const auto y = dense_forward(d, Vector{1, -2, 3});
    for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(Dense, IdentityLinearPassesThrough) {
    DenseLayer d(3, 3, Activation::Linear);
    d.weights = Matrix::identity(3);
    const Vector x{0.5, -1.5, 2.0};
    EXPECT_EQ(dense_forward(d, x), x);
}

TEST(Dense, MatchesHandRolledDotProduct) {
    Rng rng(1);
    DenseLayer d(2, 3, Activation::Linear);
    for (auto& w : d.weights.data) w = rng.uniform(-1, 1);
    for (auto& b : d.bias) b = rng.uniform(-1, 1);
    const Vector x{0.3, -0.7};
    const auto y = dense_forward(d, x);
    for (std::size_t r = 0; r < 3; ++r) {
        const double expect = d.weights.data[r * 2] * x[0] + d.weights.data[r * 2 + 1] * x[1] + d.bias[r];
        EXPECT_NEAR(y[r], expect, 1e-12);
    }
}

TEST(Dense, ShapeMismatchThrows) {
    DenseLayer d(3, 2, Activation::Tanh);
    EXPECT_THROW(dense_forward(d, Vector{1.0, 2.0}), ShapeError);
}

TEST(Dense, SoftmaxRowsAreSimplex) {
    Rng rng(2);
    for (int k = 0; k < 200; ++k) {
        DenseLayer d(4, 6, Activation::Softmax);
        for (auto& w : d.weights.data) w = rng.uniform(-20, 20);
        const auto p = dense_forward(d, random_vector(4, rng, 3.0));
        double s = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Activations, HardSigmoid) {
    EXPECT_DOUBLE_EQ(hard_sigmoid(0.0), 0.5);
    EXPECT_DOUBLE_EQ(hard_sigmoid(1.0), 0.7);
    EXPECT_DOUBLE_EQ(hard_sigmoid(3.0), 1.0);
    EXPECT_DOUBLE_EQ(hard_sigmoid(-3.0), 0.0);
    EXPECT_EQ(parse_activation("hard_sigmoid"), Activation::HardSigmoid);
    EXPECT_THROW(parse_activation("relu"), ConfigError);
}

TEST(Lstm, ZeroParamsZeroState) {
    LstmCell c(2, 3);
    const auto s = lstm_step(c, Vector{0.4, -0.9}, RecurrentState::zeros(3, true));
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_EQ(s.c[j], 0.0);
        EXPECT_EQ(s.h[j], 0.0);
    }
}

TEST(Lstm, SaturatedForgetGateKeepsMemory) {
    LstmCell c(2, 3);
    std::fill(c.forget.bias.begin(), c.forget.bias.end(), 100.0);
    RecurrentState prev{Vector(3, 0.0), Vector(3, 1.0)};
    const auto s = lstm_step(c, Vector{0.0, 0.0}, prev);
    // f = sigma(100) = 1 to double precision, i = o = 0.5, candidate tanh(0) = 0.
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_DOUBLE_EQ(s.c[j], 1.0);
        EXPECT_DOUBLE_EQ(s.h[j], 0.5 * std::tanh(1.0));
    }
}

TEST(Lstm, MatchesEquationTranscription) {
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
        const auto cell = random_cell<LstmCell>(2, 3, rng);
        RecurrentState s{random_vector(3, rng), random_vector(3, rng, 2.0)};
        const auto x = random_vector(2, rng);
        const auto got = lstm_step(cell, x, s);
        const auto want = lstm_oracle(cell, x, s);
        for (std::size_t j = 0; j < 3; ++j) {
            ASSERT_NEAR(got.h[j], want.h[j], 1e-12);
            ASSERT_NEAR(got.c[j], want.c[j], 1e-12);
        }
    }
}

TEST(Lstm, CellStateGrowthBounded) {
    Rng rng(4);
    for (int k = 0; k < 500; ++k) {
        const auto cell = random_cell<LstmCell>(3, 4, rng);
        RecurrentState s{random_vector(4, rng), random_vector(4, rng, 5.0)};
        const auto next = lstm_step(cell, random_vector(3, rng, 3.0), s);
        for (std::size_t j = 0; j < 4; ++j) ASSERT_LE(std::abs(next.c[j]), std::abs(s.c[j]) + 1.0);
    }
}

TEST(Lstm, ShapeMismatchThrows) {
    LstmCell c(2, 3);
    EXPECT_THROW(lstm_step(c, Vector{1.0}, RecurrentState::zeros(3, true)), ShapeError);
    EXPECT_THROW(lstm_step(c, Vector{1.0, 2.0}, RecurrentState::zeros(2, true)), ShapeError);
}

TEST(Gru, ZeroParamsZeroState) {
    GruCell c(2, 3);
    const auto s = gru_step(c, Vector{0.4, -0.9}, RecurrentState::zeros(3, false));
    for (double h : s.h) EXPECT_EQ(h, 0.0);
}

TEST(Gru, ClosedUpdateGateHoldsState) {
    GruCell c(2, 3);
    Rng rng(5);
    c.for_each_param([&](std::span<double> s) {
        for (auto& x : s) x = rng.uniform(-1, 1);
    });
    std::fill(c.update.bias.begin(), c.update.bias.end(), -100.0);
    const RecurrentState prev{Vector{0.3, -0.2, 0.9}, {}};
    const auto s = gru_step(c, Vector{0.1, 0.2}, prev);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.h[j], prev.h[j], 1e-40);
}

TEST(Gru, MatchesEquationTranscription) {
    Rng rng(6);
    for (int k = 0; k < 100; ++k) {
        const auto cell = random_cell<GruCell>(2, 3, rng);
        RecurrentState s{random_vector(3, rng), {}};
        const auto x = random_vector(2, rng);
        const auto got = gru_step(cell, x, s);
        const auto want = gru_oracle(cell, x, s);
        for (std::size_t j = 0; j < 3; ++j) ASSERT_NEAR(got.h[j], want.h[j], 1e-12);
    }
}

TEST(Loss, Examples) {
    Matrix p(2, 3), y(2, 3);
    for (std::size_t k = 0; k < 6; ++k) p.data[k] = y.data[k] = 0.1 * static_cast<double>(k);
    EXPECT_EQ(loss(LossKind::MeanSquaredError, p, y).value, 0.0);

    Matrix uniform(1, 6, 1.0 / 6.0), target(1, 6);
    target(0, 2) = 1.0;
    EXPECT_NEAR(loss(LossKind::CrossEntropy, uniform, target).value, std::log(6.0), 1e-15);
    EXPECT_NEAR(std::log(6.0), 1.7918, 5e-5);
}

TEST(Loss, MatchesElementwiseRecomputation) {
    Rng rng(8);
    Matrix p(5, 3), y(5, 3);
    for (auto& x : p.data) x = rng.uniform(-2, 2);
    for (auto& x : y.data) x = rng.uniform(-2, 2);
    double mse = 0.0;
    for (std::size_t k = 0; k < 15; ++k) mse += (p.data[k] - y.data[k]) * (p.data[k] - y.data[k]);
    EXPECT_NEAR(loss(LossKind::MeanSquaredError, p, y).value, mse / 15.0, 1e-12);

    Matrix probs(5, 3), onehot(5, 3);
    double ce = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += (probs(r, c) = rng.uniform(0.05, 1.0));
        for (std::size_t c = 0; c < 3; ++c) probs(r, c) /= s;
        const auto cls = rng.below(3);
        onehot(r, cls) = 1.0;
        ce -= std::log(probs(r, cls));
    }
    EXPECT_NEAR(loss(LossKind::CrossEntropy, probs, onehot).value, ce / 5.0, 1e-12);
}

TEST(Loss, ZeroProbabilityIsClampedAndFlagged) {
    Matrix p(1, 2), y(1, 2);
    p(0, 1) = 1.0;
    y(0, 0) = 1.0;
    const auto l = loss(LossKind::CrossEntropy, p, y);
    EXPECT_EQ(l.clamped, 1u);
    EXPECT_NEAR(l.value, -std::log(kProbabilityFloor), 1e-9);
}

TEST(Backward, SingleLinearNeuronClosedForm) {
    Network net;
    DenseLayer d(2, 1, Activation::Linear);
    d.weights.data = {0.3, -0.4};
    d.bias = {0.1};
    net.layers.emplace_back(d);
    const Vector x{1.5, 2.0};
    const Vector y{0.7};
    const double yhat = 0.3 * 1.5 - 0.4 * 2.0 + 0.1;
    auto tr = forward_sequence(net, std::span<const Vector>(&x, 1), net.zero_state());
    std::vector<Vector> dy;
    sequence_loss(LossKind::MeanSquaredError, tr.outputs, std::span<const Vector>(&y, 1), &dy);
    Network g = net.zeros_like();
    backward_sequence(net, tr, dy, g);
    const auto& gd = std::get<DenseLayer>(g.layers[0]);
    EXPECT_NEAR(gd.weights.data[0], 2.0 * (yhat - 0.7) * 1.5, 1e-15);
    EXPECT_NEAR(gd.weights.data[1], 2.0 * (yhat - 0.7) * 2.0, 1e-15);
    EXPECT_NEAR(gd.bias[0], 2.0 * (yhat - 0.7), 1e-15);
}

TEST(Backward, SoftmaxCrossEntropyGivesPMinusOneHot) {
    Rng rng(9);
    Network net;
    DenseLayer d(3, 6, Activation::Softmax);
    for (auto& w : d.weights.data) w = rng.uniform(-1, 1);
    net.layers.emplace_back(d);
    const Vector x{0.2, -0.1, 0.5};
    const Vector y = one_hot(4, 6);
    auto tr = forward_sequence(net, std::span<const Vector>(&x, 1), net.zero_state());
    std::vector<Vector> dy;
    sequence_loss(LossKind::CrossEntropy, tr.outputs, std::span<const Vector>(&y, 1), &dy);
    Network g = net.zeros_like();
    backward_sequence(net, tr, dy, g);
    const auto& p = tr.outputs[0];
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(std::get<DenseLayer>(g.layers[0]).bias[j], p[j] - y[j], 1e-12);
}

namespace {

struct GradCase {
    std::vector<LayerSpec> layout;
    Activation output;
    LossKind loss;
    Activation gate;
};

void run_gradient_case(const GradCase& c, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t in = 3, out = c.output == Activation::Softmax ? 4 : 2, steps = 5;
    Network net = build_network(in, c.layout, out, c.output, rng, Activation::Tanh, c.gate);
    randomize(net, rng, 0.6);
    std::vector<Vector> xs, ys;
    for (std::size_t t = 0; t < steps; ++t) {
        xs.push_back(random_vector(in, rng));
        if (c.loss == LossKind::CrossEntropy) ys.push_back(one_hot(rng.below(out), out));
        else ys.push_back(random_vector(out, rng));
    }
    if (net.recurrent()) ys[1].clear(); // a step without loss
    const auto r = gradient_check(net, xs, ys, c.loss);
    EXPECT_LT(r.max_relative_error, 1e-5) << format_layout(c.layout) << " seed " << seed;
}

} // namespace

TEST(GradientCheck, DenseStacks) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        run_gradient_case({parse_layout("5P,4P"), Activation::Linear, LossKind::MeanSquaredError, Activation::Logistic}, seed);
        run_gradient_case({parse_layout("6P"), Activation::Softmax, LossKind::CrossEntropy, Activation::Logistic}, seed);
    }
}

TEST(GradientCheck, LstmStacks) {
    for (std::uint64_t seed = 11; seed <= 15; ++seed) {
        run_gradient_case({parse_layout("4L,3P"), Activation::Linear, LossKind::MeanSquaredError, Activation::Logistic}, seed);
        run_gradient_case({parse_layout("3L,4L,3P"), Activation::Softmax, LossKind::CrossEntropy, Activation::Logistic}, seed);
        run_gradient_case({parse_layout("3P,4L"), Activation::Linear, LossKind::MeanSquaredError, Activation::HardSigmoid}, seed);
    }
}

TEST(GradientCheck, GruStacks) {
    for (std::uint64_t seed = 21; seed <= 25; ++seed) {
        run_gradient_case({parse_layout("4G,3P"), Activation::Linear, LossKind::MeanSquaredError, Activation::Logistic}, seed);
        run_gradient_case({parse_layout("3G,3L"), Activation::Softmax, LossKind::CrossEntropy, Activation::Logistic}, seed);
    }
}

TEST(Adam, ZeroGradientLeavesParameters) {
    Rng rng(1);
    Network net = build_network(2, parse_layout("3P"), 1, Activation::Linear, rng);
    const Network before = net;
    OptimizerState st(net);
    Network g = net.zeros_like();
    // seed nonzero moments first
    st.m.for_each_param([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.5); });
    st.v.for_each_param([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.25); });
    Network net2 = net;
    adam_update(net2, g, st);
    // m decays by beta1, v by beta2; the update is nonzero only through old moments.
    st.m.for_each_param([](std::span<const double> s) {
        for (double x : s) EXPECT_DOUBLE_EQ(x, 0.45);
    });
    st.v.for_each_param([](std::span<const double> s) {
        for (double x : s) EXPECT_DOUBLE_EQ(x, 0.25 * 0.999);
    });

    OptimizerState fresh(net);
    adam_update(net, g, fresh);
    EXPECT_EQ(net.layers.size(), before.layers.size());
    std::vector<double> a, b;
    net.for_each_param([&](std::span<const double> s) { a.insert(a.end(), s.begin(), s.end()); });
    before.for_each_param([&](std::span<const double> s) { b.insert(b.end(), s.begin(), s.end()); });
    EXPECT_EQ(a, b);
}

TEST(Adam, FirstStepIsLrTimesSign) {
    Network net;
    net.layers.emplace_back(DenseLayer(3, 1, Activation::Linear));
    OptimizerState st(net);
    Network g = net.zeros_like();
    std::get<DenseLayer>(g.layers[0]).weights.data = {1e-6, -3.0, 250.0};
    adam_update(net, g, st);
    const auto& w = std::get<DenseLayer>(net.layers[0]).weights.data;
    EXPECT_NEAR(w[0], -1e-3, 1e-5);
    EXPECT_NEAR(w[1], 1e-3, 1e-9);
    EXPECT_NEAR(w[2], -1e-3, 1e-9);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ConstantGradientStepApproachesLr) {
    Network net;
    net.layers.emplace_back(DenseLayer(2, 1, Activation::Linear));
    OptimizerState st(net);
    Network g = net.zeros_like();
    std::get<DenseLayer>(g.layers[0]).weights.data = {0.02, -7.0};
    double prev0 = 0.0, prev1 = 0.0, step0 = 0.0, step1 = 0.0;
    for (int k = 0; k < 5000; ++k) {
        adam_update(net, g, st);
        const auto& w = std::get<DenseLayer>(net.layers[0]).weights.data;
        step0 = w[0] - prev0;
        step1 = w[1] - prev1;
        prev0 = w[0];
        prev1 = w[1];
    }
    EXPECT_NEAR(step0, -1e-3, 1e-8);
    EXPECT_NEAR(step1, 1e-3, 1e-8);
}

TEST(Adam, NonFiniteGradientThrows) {
    Network net;
    net.layers.emplace_back(DenseLayer(1, 1, Activation::Linear));
    OptimizerState st(net);
    Network g = net.zeros_like();
    std::get<DenseLayer>(g.layers[0]).bias[0] = std::nan("");
    EXPECT_THROW(adam_update(net, g, st), NumericError);
}

TEST(Fit, DeterministicGivenSeed) {
    auto run = [] {
        Rng rng(77);
        Network net = build_network(2, parse_layout("4L,3P"), 1, Activation::Linear, rng);
        std::vector<Window> train;
        for (int k = 0; k < 20; ++k) {
            Window w;
            for (int t = 0; t < 4; ++t) {
                w.inputs.push_back({std::sin(0.3 * (k + t)), std::cos(0.2 * (k + t))});
                w.targets.push_back({std::sin(0.3 * (k + t - 1))});
            }
            w.finalize_mask();
            train.push_back(w);
        }
        TrainConfig cfg;
        cfg.epochs = 5;
        cfg.batch_size = 3;
        fit(net, train, {}, cfg, rng);
        std::vector<double> p;
        net.for_each_param([&](std::span<const double> s) { p.insert(p.end(), s.begin(), s.end()); });
        return p;
    };
    EXPECT_EQ(run(), run());
}

TEST(Fit, LearnsLinearMapToLeastSquaresOptimum) {
    // Noiseless linear target: the attainable MSE is exactly 0.
    Rng rng(4);
    std::vector<Window> train;
    for (int k = 0; k < 64; ++k) {
        const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
        train.push_back(Window::single({a, b}, {0.8 * a - 0.3 * b + 0.1}));
    }
    Network net = build_network(2, {}, 1, Activation::Linear, rng);
    TrainConfig cfg;
    cfg.epochs = 2000;
    cfg.batch_size = 8;
    cfg.adam.lr = 1e-2;
    const auto h = fit(net, train, {}, cfg, rng);
    EXPECT_LT(h.train_loss.back(), 1e-6);
}

TEST(Fit, NaNLossNamesEpoch) {
    Rng rng(1);
    Network net = build_network(1, {}, 1, Activation::Linear, rng);
    std::vector<Window> train{Window::single({1.0}, {std::nan("")})};
    TrainConfig cfg;
    cfg.epochs = 3;
    try {
        fit(net, train, {}, cfg, rng);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
    }
}
