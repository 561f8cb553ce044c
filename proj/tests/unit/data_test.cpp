#include <cmath>
#include <complex>
#include <filesystem>
#include <memory>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "mtpnet/data.hpp"

using namespace mtpnet;

namespace {

RawSeries parse(const std::string& text) {
    std::istringstream is(text);
    return parse_csv(is, "test.csv");
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const std::runtime_error& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(LoadCsv, ShapeAndColumns) {
    auto raw = parse("date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4.5\n2020-01-01 02:00:00,-1e3,0\n");
    EXPECT_EQ(raw.values.rows, 3u);
    EXPECT_EQ(raw.values.cols, 2u);
    EXPECT_EQ(raw.columns, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(raw.values(1, 1), 4.5);
    EXPECT_EQ(raw.values(2, 0), -1000.0);
}

TEST(LoadCsv, EttStyleHeader) {
    auto raw = parse("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.340,30.531\n");
    EXPECT_EQ(raw.values.cols, 7u);
    EXPECT_EQ(raw.columns.back(), "OT");
}

TEST(LoadCsv, ErrorsNameRowAndColumn) {
    auto msg = error_of("t,a,b\n0,1,2\n1,3,oops\n");
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 3"), std::string::npos) << msg;
    EXPECT_NE(error_of("t,a\n0,1\n1,\n").find("row 3"), std::string::npos);
    EXPECT_NE(error_of("t,a\n0,1\n1,2,3\n").find("columns"), std::string::npos);
    EXPECT_NE(error_of("t,a\n5,1\n3,2\n").find("does not increase"), std::string::npos);
    EXPECT_NE(error_of("t,a\n5,1\n5,2\n").find("does not increase"), std::string::npos);
    EXPECT_EQ(error_of("t,a\n9,1\n10,2\n"), "");
    EXPECT_THROW(load_csv("/nonexistent/file.csv"), std::runtime_error);
}

TEST(LoadCsv, WriteReadRoundTrip) {
    auto raw = synth_multiseasonal({.length = 200, .variables = 2, .noise_std = 0.1, .seed = 4});
    auto path = (std::filesystem::temp_directory_path() / "mtpnet_data_test.csv").string();
    save_csv(path, raw);
    auto back = load_csv(path);
    EXPECT_EQ(back.values, raw.values);
    EXPECT_EQ(back.timestamps, raw.timestamps);
    std::filesystem::remove(path);
}

TEST(Split, SizesFollowFlooredRatios) {
    auto sizes = [](std::size_t t, std::array<double, 3> r) {
        auto b = split(Matrix(t, 1, 1.0), r);
        return std::vector<std::size_t>{b.train.size(), b.val.size(), b.test.size()};
    };
    EXPECT_EQ(sizes(10, {0.6, 0.2, 0.2}), (std::vector<std::size_t>{6, 2, 2}));
    EXPECT_EQ(sizes(10, {0.7, 0.1, 0.2}), (std::vector<std::size_t>{7, 1, 2}));
    EXPECT_EQ(sizes(17420, {0.6, 0.2, 0.2}), (std::vector<std::size_t>{10452, 3484, 3484}));
    EXPECT_EQ(sizes(4000, {0.6, 0.2, 0.2}), (std::vector<std::size_t>{2400, 800, 800}));
}

TEST(Split, ChronologicalAndValidated) {
    auto b = split(Matrix(100, 1, 1.0), {0.6, 0.2, 0.2});
    EXPECT_EQ(b.train.begin, 0u);
    EXPECT_EQ(b.train.end, b.val.begin);
    EXPECT_EQ(b.val.end, b.test.begin);
    EXPECT_EQ(b.test.end, 100u);
    EXPECT_THROW(split(Matrix(100, 1), {0.5, 0.2, 0.2}), std::invalid_argument);
    EXPECT_THROW(split(Matrix(100, 1), {0.8, 0.2, 0.0}), std::invalid_argument);
    EXPECT_THROW(split(Matrix(100, 1), {0.6, 0.2, 0.2}, 25), std::invalid_argument);
    EXPECT_NO_THROW(split(Matrix(100, 1), {0.6, 0.2, 0.2}, 20));
}

TEST(Normalize, ZScoreWithTrainStatistics) {
    // Train column {3, 7}: mean 5, std 2.
    Matrix x(5, 2, {3, 1, 7, 1, 9, 5, 0, 0, 1, 1});
    auto b = split(x, {0.4, 0.2, 0.4});
    EXPECT_EQ(b.mean[0], 5.0);
    EXPECT_EQ(b.std[0], 2.0);
    auto z = normalize(x, b);
    EXPECT_NEAR(z(2, 0), 2.0, 1e-8);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(z(i, 1), (x(i, 1) - 1.0) / 1e-8, 1e-6);  // constant train column
    EXPECT_EQ(z(0, 1), 0.0);
}

TEST(Normalize, RoundTrip) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> d(10, 50);
    Matrix x(50, 3);
    for (auto& v : x.data) v = d(rng);
    auto b = split(x, {0.6, 0.2, 0.2});
    auto back = denormalize(normalize(x, b), b);
    for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(back.data[i], x.data[i], 1e-9);
}

TEST(Normalize, NoLeakageFromLaterSplits) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> d(0, 1);
    Matrix x(40, 2);
    for (auto& v : x.data) v = d(rng);
    auto b1 = split(x, {0.6, 0.2, 0.2});
    for (std::size_t i = b1.val.begin; i < 40; ++i) x(i, 0) = 1e6 * d(rng);
    auto b2 = split(x, {0.6, 0.2, 0.2});
    EXPECT_EQ(b1.mean, b2.mean);
    EXPECT_EQ(b1.std, b2.std);
}

TEST(Windows, CountsAndOrigins) {
    auto series = std::make_shared<const Matrix>(Matrix(30, 1, 0.0));
    EXPECT_EQ(windows(series, {0, 10}, 4, 2).size(), 5u);
    EXPECT_EQ(windows(series, {3, 9}, 4, 2).size(), 1u);
    EXPECT_THROW(windows(series, {0, 5}, 4, 2), std::invalid_argument);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t i = rng() % 6 + 1, h = rng() % 6 + 1, stride = rng() % 4 + 1, len = i + h + rng() % 15;
        auto w = windows(series, {2, 2 + len}, i, h, stride);
        EXPECT_EQ(w.size(), (len - i - h) / stride + 1);
        EXPECT_EQ(w.origin(w.size() - 1) + i + h <= 2 + len, true);
    }
}

TEST(Windows, ReassembleSourceSlice) {
    Matrix m(20, 2);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<double>(i);
    auto series = std::make_shared<const Matrix>(m);
    auto w = windows(series, {4, 16}, 3, 2);
    for (std::size_t k = 0; k < w.size(); ++k) {
        auto win = w[k];
        EXPECT_EQ(win.origin, 4 + k);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(win.input(r, c), m(win.origin + r, c));
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(win.target(r, c), m(win.origin + 3 + r, c));
    }
    EXPECT_THROW(w[w.size()], std::out_of_range);
}

TEST(Synth, ConstructionCases) {
    auto periodic = synth_multiseasonal({.length = 96, .variables = 2, .periods = {12}, .amplitudes = {2.0}, .seed = 3});
    for (std::size_t t = 0; t + 12 < 96; ++t)
        for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(periodic.values(t, d), periodic.values(t + 12, d), 1e-12);
    auto line = synth_multiseasonal({.length = 50, .variables = 1, .periods = {10}, .amplitudes = {0.0}, .trend_slope = 0.25});
    for (std::size_t t = 0; t < 50; ++t) EXPECT_NEAR(line.values(t, 0), 0.25 * t, 1e-12);
    EXPECT_THROW(synth_multiseasonal({.length = 100, .periods = {96}, .amplitudes = {1}}), std::invalid_argument);
    EXPECT_THROW(synth_multiseasonal({.periods = {24, 96}, .amplitudes = {1}}), std::invalid_argument);
    auto a = synth_multiseasonal({.noise_std = 0.3, .seed = 7}), b = synth_multiseasonal({.noise_std = 0.3, .seed = 7});
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values.rows, 2048u);
    EXPECT_EQ(a.columns.size(), 3u);
}

TEST(Synth, SpectrumPeaksAtBothPeriods) {
    const std::size_t n = 960;
    auto raw = synth_multiseasonal({.length = n, .variables = 1, .periods = {24, 96}, .amplitudes = {1.0, 0.7}, .seed = 11});
    std::vector<std::pair<double, std::size_t>> mags;
    for (std::size_t k = 1; k <= n / 2; ++k) {
        std::complex<double> acc = 0;
        for (std::size_t t = 0; t < n; ++t)
            acc += raw.values(t, 0) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / n);
        mags.emplace_back(std::abs(acc), k);
    }
    std::sort(mags.rbegin(), mags.rend());
    std::set<std::size_t> top{mags[0].second, mags[1].second};
    EXPECT_EQ(top, (std::set<std::size_t>{n / 24, n / 96}));
}
