#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/data.hpp"
#include "mtpnet/framework.hpp"
#include "mtpnet/optim.hpp"

namespace mtpnet {

struct RunReport {
    std::string dataset;
    std::size_t horizon = 0;
    std::size_t lookback = 0;
    std::uint64_t seed = 0;
    std::string variant = "full";
    double mse = 0;
    double mae = 0;
    double seconds = 0;
};

inline void check_same_size(std::size_t a, std::size_t b) {
    if (a != b) throw ShapeError("metrics: prediction has " + std::to_string(a) + " values, target " + std::to_string(b));
}

inline double mse(std::span<const double> pred, std::span<const double> target) {
    check_same_size(pred.size(), target.size());
    if (pred.empty()) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

inline double mae(std::span<const double> pred, std::span<const double> target) {
    check_same_size(pred.size(), target.size());
    if (pred.empty()) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

inline void check_same_shape(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError("metrics: prediction is " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + ", target " +
                         std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
}

inline double mse(const Matrix& pred, const Matrix& target) {
    check_same_shape(pred, target);
    return mse(std::span<const double>(pred.data), std::span<const double>(target.data));
}

inline double mae(const Matrix& pred, const Matrix& target) {
    check_same_shape(pred, target);
    return mae(std::span<const double>(pred.data), std::span<const double>(target.data));
}

/// H copies of the window's last input row.
inline Matrix naive_repeat_last(const Matrix& input, std::size_t horizon) {
    if (input.rows == 0) throw std::invalid_argument("naive_repeat_last: empty look-back block");
    Matrix out(horizon, input.cols);
    for (std::size_t i = 0; i < horizon; ++i)
        for (std::size_t j = 0; j < input.cols; ++j) out(i, j) = input(input.rows - 1, j);
    return out;
}

inline Matrix naive_repeat_last(const SeriesWindow& w) { return naive_repeat_last(w.input, w.target.rows); }

/// The repeat-last baseline behind the model forward interface.
struct RepeatLast {
    std::size_t horizon = 1;

    Tensor<double> forward(const std::vector<Matrix>& xs, const RunContext& = {}) const {
        std::vector<Matrix> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(naive_repeat_last(x, horizon));
        return stack<double>(out);
    }
};

template <typename M>
concept Forecaster = requires(const M& m, const std::vector<Matrix>& xs, const RunContext& ctx) {
    { m.forward(xs, ctx) };
};

/// Mean squared and absolute error over every element of every window, in
/// window order with batches of kEvalBatch (the same pass mean_l1 makes).
/// With `denorm` set, both sides are mapped back to the original scale first.
template <Forecaster M, WindowSource W>
RunReport evaluate(const M& model, const W& w, RunReport base = {}, const SplitBundle* denorm = nullptr) {
    if (w.size() == 0) throw std::invalid_argument("evaluate: no test windows");
    auto t0 = std::chrono::steady_clock::now();
    double sq = 0, ab = 0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < w.size(); start += kEvalBatch) {
        std::vector<Matrix> xs, ts;
        for (std::size_t k = start; k < std::min(w.size(), start + kEvalBatch); ++k) {
            xs.push_back(w.input(k));
            ts.push_back(w.target(k));
        }
        auto pred = model.forward(xs, RunContext{});
        std::size_t at = 0;
        for (const auto& t : ts) {
            for (std::size_t i = 0; i < t.data.size(); ++i, ++at) {
                double p = static_cast<double>(pred[at]), y = t.data[i];
                if (denorm) {
                    std::size_t j = i % t.cols;
                    double s = denorm->std.at(j) + kNormEps, m = denorm->mean.at(j);
                    p = p * s + m;
                    y = y * s + m;
                }
                sq += (p - y) * (p - y);
                ab += std::abs(p - y);
            }
        }
        check_same_size(pred.size(), at);
        count += at;
    }
    base.mse = sq / static_cast<double>(count);
    base.mae = ab / static_cast<double>(count);
    if (base.horizon == 0) base.horizon = w.target(0).rows;
    if (base.lookback == 0) base.lookback = w.input(0).rows;
    base.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return base;
}

// ---------------------------------------------------------------------------
// Variants

inline const std::vector<std::string>& variant_tags() {
    static const std::vector<std::string> tags{"full",   "no_inter_scale", "no_all_scale", "bottom_up", "fine",
                                               "coarse", "DI",             "spatial",      "temporal"};
    return tags;
}

/// Switches the ablation flags for one variant tag on top of a base config.
inline ModelConfig apply_variant(ModelConfig cfg, const std::string& tag) {
    auto& p = cfg.pyramid;
    if (tag == "full") return cfg;
    if (tag == "DI") p.embedding = EmbeddingMode::DI;
    else if (tag == "no_inter_scale") p.no_inter_scale = true;
    else if (tag == "no_all_scale") p.no_all_scale = true;
    else if (tag == "bottom_up") p.bottom_up_decoder = true;
    else if (tag == "fine") p.single_scale_index = 0;
    else if (tag == "coarse") p.single_scale_index = p.patch_sizes.empty() ? 0 : p.patch_sizes.size() - 1;
    else if (tag == "spatial") p.embedding = EmbeddingMode::spatial;
    else if (tag == "temporal") p.embedding = EmbeddingMode::temporal;
    else {
        std::string all;
        for (const auto& t : variant_tags()) all += (all.empty() ? "" : ", ") + t;
        throw std::invalid_argument("unknown variant '" + tag + "' (expected one of: " + all + ")");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Experiments

/// A normalized series with its split.
struct PreparedData {
    std::string id;
    std::shared_ptr<const Matrix> series;
    SplitBundle split;
};

inline PreparedData prepare(std::string id, const Matrix& raw, const std::array<double, 3>& ratios) {
    PreparedData d;
    d.id = std::move(id);
    d.split = split(raw, ratios);
    d.series = std::make_shared<const Matrix>(normalize(raw, d.split));
    return d;
}

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    std::size_t train_stride = 1;  // test windows always use stride 1
    std::size_t val_stride = 1;
    bool denormalized_metrics = false;
};

template <typename T>
struct CellResult {
    ForecastModel<T> model;
    TrainResult training;
    RunReport report;  // test-split metrics
};

/// Trains one (variant, seed) cell and evaluates it on the test split.
template <typename T>
CellResult<T> run_cell(const PreparedData& data, const ExperimentConfig& exp, const std::string& variant,
                       std::uint64_t seed, const std::function<void(const HistoryRow&)>& on_epoch = {}) {
    auto t0 = std::chrono::steady_clock::now();
    ModelConfig mc = apply_variant(exp.model, variant);
    mc.pyramid.variables = data.series->cols;
    mc.pyramid.validate();
    const auto& p = mc.pyramid;
    auto tr = windows(data.series, data.split.train, p.lookback, p.horizon, exp.train_stride);
    auto va = windows(data.series, data.split.val, p.lookback, p.horizon, exp.val_stride);
    auto te = windows(data.series, data.split.test, p.lookback, p.horizon);
    ForecastModel<T> model(mc, seed);
    TrainConfig tc = exp.train;
    tc.seed = seed;
    auto result = train(model, tr, va, tc, on_epoch);
    RunReport base{data.id, p.horizon, p.lookback, seed, variant};
    auto report = evaluate(model, te, base, exp.denormalized_metrics ? &data.split : nullptr);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(model), std::move(result), report};
}

struct SummaryRow {
    std::string variant;
    std::size_t horizon = 0;
    std::size_t lookback = 0;
    double mse = 0;  // mean over seeds
    double mae = 0;
    std::size_t runs = 0;
};

struct SuiteResult {
    std::vector<RunReport> reports;
    std::vector<SummaryRow> table;
};

/// Per-(variant, horizon, lookback) means, in first-appearance order.
inline std::vector<SummaryRow> summarize(const std::vector<RunReport>& reports) {
    std::vector<SummaryRow> rows;
    for (const auto& r : reports) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& s) {
            return s.variant == r.variant && s.horizon == r.horizon && s.lookback == r.lookback;
        });
        if (it == rows.end()) {
            rows.push_back({r.variant, r.horizon, r.lookback, 0, 0, 0});
            it = rows.end() - 1;
        }
        it->mse += r.mse;
        it->mae += r.mae;
        ++it->runs;
    }
    for (auto& s : rows) {
        s.mse /= static_cast<double>(s.runs);
        s.mae /= static_cast<double>(s.runs);
    }
    return rows;
}

using ReportCallback = std::function<void(const RunReport&)>;

/// Every (variant, horizon, seed) cell, looping variants outermost.
template <typename T>
SuiteResult ablation_suite(const PreparedData& data, const ExperimentConfig& exp, const std::vector<std::size_t>& horizons,
                           const std::vector<std::string>& variants, const std::vector<std::uint64_t>& seeds,
                           const ReportCallback& on_report = {}) {
    for (const auto& v : variants) apply_variant(exp.model, v);
    SuiteResult out;
    for (const auto& v : variants)
        for (auto h : horizons)
            for (auto seed : seeds) {
                ExperimentConfig e = exp;
                e.model.pyramid.horizon = h;
                out.reports.push_back(run_cell<T>(data, e, v, seed).report);
                if (on_report) on_report(out.reports.back());
            }
    out.table = summarize(out.reports);
    return out;
}

/// One model per (I, H), reports sorted by (H, I). The decoder history is
/// capped at the look-back length.
template <typename T>
SuiteResult lookback_sweep(const PreparedData& data, const ExperimentConfig& exp, const std::vector<std::size_t>& horizons,
                           const std::vector<std::size_t>& lookbacks, std::uint64_t seed, const ReportCallback& on_report = {}) {
    std::vector<std::size_t> hs = horizons, is = lookbacks;
    std::sort(hs.begin(), hs.end());
    std::sort(is.begin(), is.end());
    SuiteResult out;
    for (auto h : hs)
        for (auto i : is) {
            ExperimentConfig e = exp;
            e.model.pyramid.horizon = h;
            e.model.pyramid.lookback = i;
            e.model.pyramid.decoder_history = std::min(e.model.pyramid.decoder_history, i);
            out.reports.push_back(run_cell<T>(data, e, "full", seed).report);
            if (on_report) on_report(out.reports.back());
        }
    out.table = summarize(out.reports);
    return out;
}

// ---------------------------------------------------------------------------
// Report files
//
// Delimited report columns: dataset,horizon_H,lookback_I,seed,variant,mse,mae,seconds
// Summary columns: variant,horizon_H,lookback_I,runs,mse_mean,mae_mean

namespace detail {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fixed(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline void write_aligned(std::ostream& os, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
        width.resize(std::max(width.size(), r.size()));
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    for (const auto& r : rows) {
        std::string line;
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c) line += "  ";
            line += r[c] + std::string(width[c] - r[c].size(), ' ');
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        os << line << '\n';
    }
}

}  // namespace detail

inline void write_reports_csv(std::ostream& os, const std::vector<RunReport>& reports) {
    os << "dataset,horizon_H,lookback_I,seed,variant,mse,mae,seconds\n";
    for (const auto& r : reports) {
        os << r.dataset << ',' << r.horizon << ',' << r.lookback << ',' << r.seed << ',' << r.variant << ','
           << detail::num(r.mse) << ',' << detail::num(r.mae) << ',' << detail::fixed(r.seconds, 3) << '\n';
    }
}

inline void write_reports_text(std::ostream& os, const std::vector<RunReport>& reports) {
    std::vector<std::vector<std::string>> rows{{"dataset", "H", "I", "seed", "variant", "MSE", "MAE", "seconds"}};
    for (const auto& r : reports) {
        rows.push_back({r.dataset, std::to_string(r.horizon), std::to_string(r.lookback), std::to_string(r.seed),
                        r.variant, detail::fixed(r.mse, 4), detail::fixed(r.mae, 4), detail::fixed(r.seconds, 1)});
    }
    detail::write_aligned(os, rows);
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& table) {
    os << "variant,horizon_H,lookback_I,runs,mse_mean,mae_mean\n";
    for (const auto& s : table) {
        os << s.variant << ',' << s.horizon << ',' << s.lookback << ',' << s.runs << ',' << detail::num(s.mse) << ','
           << detail::num(s.mae) << '\n';
    }
}

inline void write_summary_text(std::ostream& os, const std::vector<SummaryRow>& table) {
    std::vector<std::vector<std::string>> rows{{"variant", "H", "I", "runs", "MSE", "MAE"}};
    for (const auto& s : table) {
        rows.push_back({s.variant, std::to_string(s.horizon), std::to_string(s.lookback), std::to_string(s.runs),
                        detail::fixed(s.mse, 4), detail::fixed(s.mae, 4)});
    }
    detail::write_aligned(os, rows);
}

}  // namespace mtpnet
