#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mtpnet/optim.hpp"

using namespace mtpnet;
using Td = Tensor<double>;

namespace {

// Shared linear map over time: the smallest trainable model.
struct LinearModel {
    ParamStore<double> store;
    Td w, b;
    LinearModel(std::size_t in, std::size_t out, std::uint64_t seed = 1) : store(seed) {
        w = store.fan_in_uniform("w", {in, out}, in);
        b = store.fan_in_uniform("b", {out}, in);
    }
    const ParamStore<double>& params() const { return store; }
    Td forward(const std::vector<Matrix>& xs, const RunContext& = {}) const { return trend_linear(stack<double>(xs), w, b); }
};

// Scalar pairs (x, factor * x).
struct Pairs {
    std::vector<double> xs;
    double factor = 2.0;
    std::size_t size() const { return xs.size(); }
    Matrix input(std::size_t k) const { return Matrix(1, 1, {xs[k]}); }
    Matrix target(std::size_t k) const { return Matrix(1, 1, {factor * xs[k]}); }
    std::size_t origin(std::size_t k) const { return k; }
};

Pairs doubling(std::size_t n, std::uint64_t seed, double factor = 2.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1, 1);
    Pairs out;
    out.factor = factor;
    for (std::size_t i = 0; i < n; ++i) out.xs.push_back(d(rng));
    return out;
}

std::string history_text(const TrainResult& r) {
    std::ostringstream os;
    write_history(os, r.history);
    return os.str();
}

}  // namespace

TEST(L1Loss, Examples) {
    EXPECT_EQ(l1_loss(Td({2}, {1, 2}), Td({2}, {1, 2})).item(), 0.0);
    EXPECT_EQ(l1_loss(Td({2}, {1, -1}), Td::zeros({2})).item(), 1.0);
    EXPECT_EQ(l1_loss(Td({2}, {1, 2}), Td::zeros({2})).item(), 1.5);
    EXPECT_THROW(l1_loss(Td::zeros({2}), Td::zeros({3})), ShapeError);
}

TEST(CosineLr, Endpoints) {
    EXPECT_EQ(cosine_lr(0, 100, 1e-3, 1e-6), 1e-3);
    EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-6), 1e-6, 1e-18);
    EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-6), (1e-3 + 1e-6) / 2, 1e-18);
    EXPECT_EQ(cosine_lr(150, 100, 1e-3, 1e-6), 1e-6);
    double prev = 1.0;
    for (std::size_t t = 0; t <= 100; ++t) {
        double lr = cosine_lr(t, 100, 1e-3, 1e-6);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
}

TEST(Adam, ZeroGradientLeavesParameters) {
    std::vector<double> theta{1.5, -2}, g{0, 0}, m(2, 0), v(2, 0);
    adam_update<double>(theta, g, m, v, 1, 0.1);
    EXPECT_EQ(theta, (std::vector<double>{1.5, -2}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<double> theta{0}, g{1}, m{0}, v{0};
    adam_update<double>(theta, g, m, v, 1, 0.1);
    EXPECT_NEAR(theta[0], -0.1, 1e-8);
}

TEST(Adam, MatchesScriptedOracle) {
    // Two identical steps, written out by hand.
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.01;
    std::vector<double> theta{0.3, -1.2, 2.0}, g{0.5, -0.25, 3.0};
    std::vector<double> want = theta;
    double m[3] = {}, v[3] = {};
    for (int t = 1; t <= 2; ++t)
        for (int i = 0; i < 3; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
            want[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    std::vector<double> mm(3, 0), vv(3, 0);
    adam_update<double>(theta, g, mm, vv, 1, lr);
    adam_update<double>(theta, g, mm, vv, 2, lr);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(theta[i], want[i], 1e-12);
}

TEST(Adam, StoreStepUsesGradients) {
    LinearModel model(2, 1);
    auto before = model.store.snapshot();
    AdamState<double> state;
    model.store.zero_grad();
    backward(sum(model.forward({Matrix(2, 1, {1, 1})})));
    adam_step(model.store, state, 0.1);
    EXPECT_EQ(state.t, 1u);
    for (const auto& [path, v] : before)
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(model.store.at(path)[i], v[i] - 0.1, 1e-7) << path;
}

TEST(ClipGradNorm, ScalesToMaximum) {
    LinearModel model(2, 1);
    model.store.zero_grad();
    backward(scale(sum(model.forward({Matrix(2, 1, {3, 4})})), 10.0));
    double norm = clip_grad_norm(model.store, 1.0);
    EXPECT_GT(norm, 1.0);
    double sq = 0;
    for (const auto& [_, p] : model.store)
        for (double g : p.grad()) sq += g * g;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-12);
}

TEST(Train, ZeroEpochsIsNoOp) {
    LinearModel model(1, 1);
    auto before = model.store.snapshot();
    TrainConfig cfg;
    cfg.epochs = 0;
    auto r = train(model, doubling(20, 1), doubling(5, 2), cfg);
    EXPECT_TRUE(r.history.empty());
    EXPECT_EQ(model.store.snapshot(), before);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
    LinearModel model(1, 1);
    auto before = model.store.snapshot();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr_max = cfg.lr_min = 0;
    auto r = train(model, doubling(40, 1), doubling(5, 2), cfg);
    EXPECT_EQ(r.history.size(), 3u);
    EXPECT_EQ(model.store.snapshot(), before);
}

TEST(Train, LearnsDoubling) {
    LinearModel model(1, 1);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.lr_max = 1e-2;
    cfg.batch_size = 8;
    cfg.patience = 0;
    auto r = train(model, doubling(64, 1), doubling(16, 2), cfg);
    EXPECT_LT(r.history.back().train_l1, 0.05);
    EXPECT_LT(mean_l1(model, doubling(16, 3)), 0.05);
    EXPECT_NEAR(model.w[0], 2.0, 0.05);
}

TEST(Train, ScheduleEndpointsAndHistoryFormat) {
    LinearModel model(1, 1);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 10;
    cfg.lr_max = 1e-3;
    cfg.lr_min = 1e-6;
    cfg.patience = 0;
    auto r = train(model, doubling(30, 1), doubling(10, 2), cfg);
    ASSERT_EQ(r.lr_trace.size(), 12u);
    EXPECT_EQ(r.lr_trace.front(), 1e-3);
    EXPECT_NEAR(r.lr_trace.back(), 1e-6, 1e-18);
    EXPECT_EQ(r.history.front().lr, 1e-3);
    auto text = history_text(r);
    EXPECT_EQ(text.rfind("epoch,train_l1,val_l1,lr\n1,", 0), 0u);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}

TEST(Train, DeterministicForSeed) {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.lr_max = 1e-2;
    LinearModel a(1, 1), b(1, 1);
    auto ra = train(a, doubling(30, 1), doubling(10, 2), cfg);
    auto rb = train(b, doubling(30, 1), doubling(10, 2), cfg);
    EXPECT_EQ(history_text(ra), history_text(rb));
    cfg.seed = 2;
    LinearModel c(1, 1);
    EXPECT_NE(history_text(train(c, doubling(30, 1), doubling(10, 2), cfg)), history_text(ra));
}

TEST(Train, SingleBatchLossNonIncreasing) {
    LinearModel model(1, 1);
    auto data = doubling(8, 5);
    AdamState<double> state;
    std::vector<Matrix> xs, ts;
    for (std::size_t k = 0; k < data.size(); ++k) {
        xs.push_back(data.input(k));
        ts.push_back(data.target(k));
    }
    auto target = stack<double>(ts);
    double prev = 1e300;
    for (int step = 0; step < 10; ++step) {
        model.store.zero_grad();
        auto loss = l1_loss(model.forward(xs), target);
        EXPECT_LE(loss.item(), prev);
        prev = loss.item();
        backward(loss);
        adam_step(model.store, state, 1e-3);
    }
}

TEST(Train, EarlyStoppingRestoresBest) {
    // Training pulls toward doubling while validation wants halving, so the
    // first epoch is the best one and later epochs only get worse.
    LinearModel model(1, 1);
    model.w.mutable_values()[0] = 0.5;
    model.b.mutable_values()[0] = 0.0;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.lr_max = 5e-2;
    cfg.batch_size = 4;
    cfg.patience = 3;
    auto val = doubling(10, 2, 0.5);
    auto r = train(model, doubling(20, 1), val, cfg);
    EXPECT_TRUE(r.stopped_early);
    EXPECT_EQ(r.best_epoch, 1u);
    EXPECT_EQ(r.history.size(), 1u + cfg.patience);
    EXPECT_NEAR(mean_l1(model, val), r.best_val_l1, 1e-12);
}

TEST(Train, NonFiniteLossNamesBatch) {
    LinearModel model(1, 1);
    auto bad = doubling(8, 1);
    bad.xs[5] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.epochs = 1;
    try {
        train(model, bad, doubling(4, 2), cfg);
        FAIL() << "expected a training error";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("batch index"), std::string::npos);
    }
}
