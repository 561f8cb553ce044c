#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mtpnet/checkpoint.hpp"
#include "mtpnet/eval.hpp"

using namespace mtpnet;

namespace {

ModelConfig tiny_model() {
    ModelConfig mc;
    auto& p = mc.pyramid;
    p.lookback = 16;
    p.horizon = 8;
    p.decoder_history = 8;
    p.patch_sizes = {2, 4};
    p.channels = 2;
    p.heads = 2;
    p.enc_layers = 1;
    p.dec_layers = 1;
    p.dropout = 0.0;
    mc.decomposition.kernel_sizes = {5};
    return mc;
}

PreparedData tiny_data(std::size_t length = 300) {
    auto raw = synth_multiseasonal({.length = length, .variables = 2, .periods = {8, 24}, .noise_std = 0.1, .seed = 3});
    return prepare("synth", raw.values, {0.6, 0.2, 0.2});
}

ExperimentConfig tiny_experiment() {
    ExperimentConfig e;
    e.model = tiny_model();
    e.train.epochs = 1;
    e.train.batch_size = 16;
    e.train_stride = 4;
    return e;
}

// Every window of the wrapped set appears twice in a row.
struct Doubled {
    WindowSet inner;
    std::size_t size() const { return 2 * inner.size(); }
    Matrix input(std::size_t k) const { return inner.input(k / 2); }
    Matrix target(std::size_t k) const { return inner.target(k / 2); }
    std::size_t origin(std::size_t k) const { return inner.origin(k / 2); }
};

Matrix ramp(std::size_t rows, std::size_t cols, double slope) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = slope * static_cast<double>(i) + static_cast<double>(j);
    return m;
}

}  // namespace

TEST(Metrics, Examples) {
    Matrix a(1, 2, {3, 4});
    EXPECT_EQ(mse(a, a), 0.0);
    EXPECT_EQ(mae(a, a), 0.0);
    Matrix zero(1, 2);
    EXPECT_EQ(mse(Matrix(1, 2, {1, -1}), zero), 1.0);
    EXPECT_EQ(mae(Matrix(1, 2, {1, -1}), zero), 1.0);
    EXPECT_EQ(mse(Matrix(1, 2, {1, 2}), zero), 2.5);
    EXPECT_EQ(mae(Matrix(1, 2, {1, 2}), zero), 1.5);
    EXPECT_THROW(mse(Matrix(2, 1), zero), ShapeError);
    EXPECT_THROW(mae(Matrix(1, 3), zero), ShapeError);
}

TEST(Metrics, PermutationInvariantAndBoundedByWorstError) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> e(1 + trial);
        for (auto& x : e) x = d(rng);
        std::vector<double> zero(e.size(), 0.0);
        double m2 = mse(e, zero), m1 = mae(e, zero);
        double worst = 0;
        for (double x : e) worst = std::max(worst, std::abs(x));
        EXPECT_LE(m1, worst);
        EXPECT_LE(m2, worst * worst);
        auto shuffled = e;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        EXPECT_NEAR(mse(shuffled, zero), m2, 1e-12);
        EXPECT_NEAR(mae(shuffled, zero), m1, 1e-12);
    }
}

TEST(NaiveRepeatLast, ConstantSeriesHasZeroError) {
    Matrix c(20, 3, 1.5);
    SeriesWindow w{c.block(0, 12), c.block(12, 8), 0};
    EXPECT_EQ(mae(naive_repeat_last(w), w.target), 0.0);
}

TEST(NaiveRepeatLast, LinearSeriesErrorIsArithmeticMean) {
    for (double s : {0.5, -2.0, 3.0}) {
        for (std::size_t h : {1, 4, 7}) {
            Matrix r = ramp(10 + h, 2, s);
            SeriesWindow w{r.block(0, 10), r.block(10, h), 0};
            EXPECT_NEAR(mae(naive_repeat_last(w), w.target), std::abs(s) * (h + 1) / 2.0, 1e-12);
        }
    }
}

TEST(NaiveRepeatLast, SingleStepEqualsFinalRow) {
    Matrix r = ramp(6, 3, 1.25);
    SeriesWindow w{r.block(0, 5), r.block(5, 1), 0};
    auto f = naive_repeat_last(w);
    ASSERT_EQ(f.rows, 1u);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(f(0, j), w.input(4, j));
}

TEST(Evaluate, BaselineOnConstantDataIsExact) {
    auto series = std::make_shared<const Matrix>(Matrix(50, 2, -0.75));
    auto w = windows(series, {0, 50}, 10, 5);
    auto r = evaluate(RepeatLast{5}, w, {"const"});
    EXPECT_EQ(r.mse, 0.0);
    EXPECT_EQ(r.mae, 0.0);
    EXPECT_EQ(r.horizon, 5u);
    EXPECT_EQ(r.lookback, 10u);
    EXPECT_EQ(r.dataset, "const");
}

TEST(Evaluate, BaselineOnRampMatchesClosedForm) {
    auto series = std::make_shared<const Matrix>(ramp(200, 3, 0.1));
    auto r = evaluate(RepeatLast{6}, windows(series, {0, 200}, 12, 6));
    EXPECT_NEAR(r.mae, 0.1 * 7 / 2.0, 1e-12);
    // mean of (0.1 k)^2 for k = 1..6
    EXPECT_NEAR(r.mse, 0.01 * 91.0 / 6.0, 1e-12);
}

TEST(Evaluate, DuplicatingWindowsKeepsMetrics) {
    auto d = tiny_data();
    auto w = windows(d.series, d.split.test, 16, 8);
    auto mc = tiny_model();
    mc.pyramid.variables = 2;
    ForecastModel<double> model(mc, 1);
    auto once = evaluate(model, w);
    auto twice = evaluate(model, Doubled{w});
    EXPECT_NEAR(once.mse, twice.mse, 1e-12);
    EXPECT_NEAR(once.mae, twice.mae, 1e-12);
}

TEST(Evaluate, DeterministicAndEqualToValidationL1) {
    auto d = tiny_data();
    auto mc = tiny_model();
    mc.pyramid.variables = 2;
    ForecastModel<float> model(mc, 1);
    auto w = windows(d.series, d.split.val, 16, 8);
    auto a = evaluate(model, w), b = evaluate(model, w);
    EXPECT_EQ(a.mse, b.mse);
    EXPECT_EQ(a.mae, b.mae);
    EXPECT_EQ(a.mae, mean_l1(model, w));
}

TEST(Evaluate, PinnedTinyModel) {
    auto d = tiny_data();
    auto mc = tiny_model();
    mc.pyramid.variables = 2;
    ForecastModel<double> model(mc, 1);
    auto w = windows(d.series, d.split.test, 16, 8);
    auto r = evaluate(model, w);
    EXPECT_NEAR(r.mse, 4.0321514389384587, 1e-12);
    EXPECT_NEAR(r.mae, 1.657944823917451, 1e-12);
    // Window-at-a-time recomputation through the plain metric functions.
    double sq = 0, ab = 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        auto f = model.forecast(w.input(k));
        sq += mse(f, w.target(k));
        ab += mae(f, w.target(k));
    }
    EXPECT_NEAR(r.mse, sq / w.size(), 1e-12);
    EXPECT_NEAR(r.mae, ab / w.size(), 1e-12);
}

TEST(Evaluate, DenormalizedScaleFollowsColumnStd) {
    Matrix raw(120, 1);
    for (std::size_t i = 0; i < raw.rows; ++i) raw(i, 0) = 10.0 + 3.0 * static_cast<double>(i % 7);
    auto d = prepare("saw", raw, {0.6, 0.2, 0.2});
    auto w = windows(d.series, d.split.test, 10, 4);
    auto norm = evaluate(RepeatLast{4}, w);
    auto orig = evaluate(RepeatLast{4}, w, {}, &d.split);
    double s = d.split.std[0] + kNormEps;
    EXPECT_NEAR(orig.mae, norm.mae * s, 1e-9);
    EXPECT_NEAR(orig.mse, norm.mse * s * s, 1e-9);
}

TEST(Evaluate, RejectsEmptyWindows) {
    Doubled none;
    EXPECT_THROW(evaluate(RepeatLast{1}, none), std::invalid_argument);
}

TEST(Variants, TagMapping) {
    auto base = tiny_model();
    EXPECT_EQ(apply_variant(base, "fine").pyramid.single_scale_index, 0u);
    EXPECT_EQ(apply_variant(base, "coarse").pyramid.single_scale_index, 1u);
    EXPECT_EQ(apply_variant(base, "fine").pyramid.level_patch_sizes(), std::vector<std::size_t>{2});
    EXPECT_EQ(apply_variant(base, "coarse").pyramid.level_patch_sizes(), std::vector<std::size_t>{4});
    EXPECT_TRUE(apply_variant(base, "no_inter_scale").pyramid.no_inter_scale);
    EXPECT_TRUE(apply_variant(base, "no_all_scale").pyramid.no_all_scale);
    EXPECT_TRUE(apply_variant(base, "bottom_up").pyramid.bottom_up_decoder);
    EXPECT_EQ(apply_variant(base, "spatial").pyramid.embedding, EmbeddingMode::spatial);
    EXPECT_EQ(apply_variant(base, "temporal").pyramid.embedding, EmbeddingMode::temporal);
    EXPECT_EQ(apply_variant(base, "DI").pyramid.embedding, EmbeddingMode::DI);
    EXPECT_EQ(model_config_to_kv(apply_variant(base, "full")), model_config_to_kv(base));
    try {
        apply_variant(base, "fines");
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("coarse"), std::string::npos);
    }
}

TEST(AblationSuite, OneVariantOneSeedGivesOneReport) {
    auto d = tiny_data();
    auto res = ablation_suite<double>(d, tiny_experiment(), {8}, {"full"}, {1});
    ASSERT_EQ(res.reports.size(), 1u);
    ASSERT_EQ(res.table.size(), 1u);
    const auto& r = res.reports[0];
    EXPECT_EQ(r.variant, "full");
    EXPECT_EQ(r.seed, 1u);
    EXPECT_EQ(r.dataset, "synth");
    EXPECT_TRUE(std::isfinite(r.mse) && r.mse >= 0);
    EXPECT_TRUE(std::isfinite(r.mae) && r.mae >= 0);
    EXPECT_EQ(res.table[0].mse, r.mse);
}

TEST(AblationSuite, TableAveragesSeeds) {
    auto d = tiny_data();
    auto res = ablation_suite<float>(d, tiny_experiment(), {4, 8}, {"fine", "coarse"}, {1, 2});
    ASSERT_EQ(res.reports.size(), 8u);
    ASSERT_EQ(res.table.size(), 4u);
    EXPECT_EQ(res.table[0].variant, "fine");
    EXPECT_EQ(res.table[0].horizon, 4u);
    EXPECT_EQ(res.table[0].runs, 2u);
    EXPECT_NEAR(res.table[0].mse, (res.reports[0].mse + res.reports[1].mse) / 2, 1e-15);
    EXPECT_EQ(res.table[3].variant, "coarse");
    EXPECT_EQ(res.table[3].horizon, 8u);
}

TEST(AblationSuite, UnknownVariantFailsBeforeTraining) {
    auto d = tiny_data();
    EXPECT_THROW(ablation_suite<double>(d, tiny_experiment(), {8}, {"full", "nope"}, {1}), std::invalid_argument);
}

TEST(LookbackSweep, RowsSortedByHorizonThenLookback) {
    auto d = tiny_data();
    auto res = lookback_sweep<float>(d, tiny_experiment(), {8, 4}, {16, 8}, 1);
    ASSERT_EQ(res.reports.size(), 4u);
    std::vector<std::pair<std::size_t, std::size_t>> keys;
    for (const auto& r : res.reports) keys.emplace_back(r.horizon, r.lookback);
    EXPECT_EQ(keys, (std::vector<std::pair<std::size_t, std::size_t>>{{4, 8}, {4, 16}, {8, 8}, {8, 16}}));
}

TEST(LookbackSweep, SinglePairGivesOneRow) {
    auto d = tiny_data();
    EXPECT_EQ(lookback_sweep<float>(d, tiny_experiment(), {8}, {16}, 1).reports.size(), 1u);
}

TEST(LookbackSweep, LookbackLongerThanSplitFails) {
    auto d = tiny_data();
    EXPECT_THROW(lookback_sweep<float>(d, tiny_experiment(), {8}, {200}, 1), std::invalid_argument);
}

TEST(Reports, DelimitedAndAligned) {
    std::vector<RunReport> rs{{"ETTh1", 96, 336, 1, "full", 0.364, 0.394, 12.5},
                              {"ETTh1", 96, 336, 2022, "no_inter_scale", 0.25, 0.125, 3}};
    std::ostringstream csv;
    write_reports_csv(csv, rs);
    EXPECT_EQ(csv.str(),
              "dataset,horizon_H,lookback_I,seed,variant,mse,mae,seconds\n"
              "ETTh1,96,336,1,full,0.36399999999999999,0.39400000000000002,12.500\n"
              "ETTh1,96,336,2022,no_inter_scale,0.25,0.125,3.000\n");
    std::ostringstream text;
    write_reports_text(text, rs);
    std::istringstream lines(text.str());
    std::string header, first;
    std::getline(lines, header);
    std::getline(lines, first);
    EXPECT_EQ(header.find("MSE"), first.find("0.3640"));
    std::ostringstream sum;
    write_summary_csv(sum, summarize(rs));
    EXPECT_EQ(sum.str(),
              "variant,horizon_H,lookback_I,runs,mse_mean,mae_mean\n"
              "full,96,336,1,0.36399999999999999,0.39400000000000002\n"
              "no_inter_scale,96,336,1,0.25,0.125\n");
}
