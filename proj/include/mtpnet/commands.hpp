#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>

#include "mtpnet/checkpoint.hpp"
#include "mtpnet/config.hpp"
#include "mtpnet/eval.hpp"

// Command workflows behind the mtpnet_cli binary. Each writes its files into
// `out` and echoes the resolved configuration to `<command>.config` there.
//
//   train   train.config checkpoint.ckpt history.csv report.csv report.txt
//   eval    eval.config eval_metrics.csv eval_report.csv eval_report.txt
//   ablate  ablate.config reports.csv reports.txt summary.csv summary.txt
//   sweep   sweep.config reports.csv reports.txt sweep.csv
//   synth   synth.config synth.csv

namespace mtpnet {

namespace fs = std::filesystem;

namespace detail {

inline void write_text_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("output", "cannot write '" + path.string() + "'");
    body(os);
    if (!os) throw ConfigError("output", "write failed for '" + path.string() + "'");
}

inline void prepare_output(const RunConfig& c, const fs::path& out, const std::string& command) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ConfigError("output", "cannot create output directory '" + out.string() + "': " + ec.message());
    write_text_file(out / (command + ".config"), [&](std::ostream& os) { c.write(os); });
}

/// Variant label for a hand-built config: the active ablation switches, or "full".
inline std::string variant_label(const ModelConfig& m) {
    const auto& p = m.pyramid;
    std::string s;
    auto add = [&](const std::string& t) { s += (s.empty() ? "" : "+") + t; };
    if (p.no_inter_scale) add("no_inter_scale");
    if (p.no_all_scale) add("no_all_scale");
    if (p.bottom_up_decoder) add("bottom_up");
    if (p.single_scale_index) add("p" + std::to_string(p.patch_sizes.at(*p.single_scale_index)) + "_only");
    if (p.embedding != EmbeddingMode::DI) add(to_string(p.embedding));
    return s.empty() ? "full" : s;
}

inline void print_epoch(std::ostream& log, const HistoryRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  train_l1 %.6f  val_l1 %.6f  lr %.3g\n", r.epoch, r.train_l1, r.val_l1, r.lr);
    log << buf << std::flush;
}

inline void print_report(std::ostream& log, const RunReport& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s H=%zu I=%zu seed=%llu %s: mse %.6f mae %.6f (%.1f s)\n", r.dataset.c_str(),
                  r.horizon, r.lookback, static_cast<unsigned long long>(r.seed), r.variant.c_str(), r.mse, r.mae,
                  r.seconds);
    log << buf << std::flush;
}

// Shape and range problems found while windowing become configuration errors.
template <typename F>
auto as_config_errors(F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const TrainingError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config_value", e.what());
    }
}

template <typename T>
void train_command(const RunConfig& c, const fs::path& out, std::ostream& log) {
    auto exp = experiment_config(c);
    auto data = load_data(c);
    prepare_output(c, out, "train");
    auto cell = as_config_errors([&] {
        return run_cell<T>(data, exp, "full", exp.train.seed, [&](const HistoryRow& r) { print_epoch(log, r); });
    });
    cell.report.variant = variant_label(cell.model.config());
    save_checkpoint((out / "checkpoint.ckpt").string(), cell.model);
    write_text_file(out / "history.csv", [&](std::ostream& os) { write_history(os, cell.training.history); });
    write_text_file(out / "report.csv", [&](std::ostream& os) { write_reports_csv(os, {cell.report}); });
    write_text_file(out / "report.txt", [&](std::ostream& os) { write_reports_text(os, {cell.report}); });
    char buf[96];
    std::snprintf(buf, sizeof buf, "best epoch %zu  val_l1 %.17g\n", cell.training.best_epoch, cell.training.best_val_l1);
    log << buf;
    print_report(log, cell.report);
}

template <typename T>
void eval_command(const RunConfig& c, const fs::path& out, std::ostream& log) {
    auto exp = experiment_config(c);
    auto data = load_data(c);
    Checkpoint ck;
    try {
        ck = load_checkpoint((out / "checkpoint.ckpt").string());
    } catch (const std::exception& e) {
        throw ConfigError("checkpoint", e.what());
    }
    auto model = model_from_checkpoint<T>(ck);
    prepare_output(c, out, "eval");
    const auto& p = model.config().pyramid;
    if (p.variables != data.series->cols) {
        throw ConfigError("checkpoint", "checkpoint expects " + std::to_string(p.variables) + " variables, data has " +
                                            std::to_string(data.series->cols));
    }
    const SplitBundle* denorm = exp.denormalized_metrics ? &data.split : nullptr;
    RunReport base{data.id, p.horizon, p.lookback, exp.train.seed, variant_label(model.config())};
    auto [val, test] = as_config_errors([&] {
        auto va = windows(data.series, data.split.val, p.lookback, p.horizon, exp.val_stride);
        auto te = windows(data.series, data.split.test, p.lookback, p.horizon);
        return std::pair{evaluate(model, va, base, denorm), evaluate(model, te, base, denorm)};
    });
    write_text_file(out / "eval_metrics.csv", [&](std::ostream& os) {
        os << "split,mse,mae\n";
        os << "val," << detail::num(val.mse) << ',' << detail::num(val.mae) << '\n';
        os << "test," << detail::num(test.mse) << ',' << detail::num(test.mae) << '\n';
    });
    write_text_file(out / "eval_report.csv", [&](std::ostream& os) { write_reports_csv(os, {test}); });
    write_text_file(out / "eval_report.txt", [&](std::ostream& os) { write_reports_text(os, {test}); });
    log << "val_mae " << detail::num(val.mae) << "\nval_mse " << detail::num(val.mse) << '\n';
    print_report(log, test);
}

template <typename T>
void ablate_command(const RunConfig& c, const fs::path& out, std::ostream& log) {
    auto exp = experiment_config(c);
    auto variants = c.words("variants");
    for (const auto& v : variants) as_config_errors([&] { return apply_variant(exp.model, v); });
    auto horizons = c.sizes("horizons");
    std::vector<std::uint64_t> seeds;
    for (auto s : c.sizes("seeds")) seeds.push_back(s);
    auto data = load_data(c);
    prepare_output(c, out, "ablate");
    auto res = as_config_errors(
        [&] { return ablation_suite<T>(data, exp, horizons, variants, seeds, [&](const RunReport& r) { print_report(log, r); }); });
    write_text_file(out / "reports.csv", [&](std::ostream& os) { write_reports_csv(os, res.reports); });
    write_text_file(out / "reports.txt", [&](std::ostream& os) { write_reports_text(os, res.reports); });
    write_text_file(out / "summary.csv", [&](std::ostream& os) { write_summary_csv(os, res.table); });
    write_text_file(out / "summary.txt", [&](std::ostream& os) { write_summary_text(os, res.table); });
    write_summary_text(log, res.table);
}

template <typename T>
void sweep_command(const RunConfig& c, const fs::path& out, std::ostream& log) {
    auto exp = experiment_config(c);
    auto horizons = c.sizes("horizons");
    auto lookbacks = c.sizes("lookbacks");
    auto data = load_data(c);
    prepare_output(c, out, "sweep");
    auto res = as_config_errors([&] {
        return lookback_sweep<T>(data, exp, horizons, lookbacks, exp.train.seed, [&](const RunReport& r) { print_report(log, r); });
    });
    write_text_file(out / "reports.csv", [&](std::ostream& os) { write_reports_csv(os, res.reports); });
    write_text_file(out / "reports.txt", [&](std::ostream& os) { write_reports_text(os, res.reports); });
    write_text_file(out / "sweep.csv", [&](std::ostream& os) {
        os << "horizon_H,lookback_I,mse,mae\n";
        for (const auto& r : res.reports)
            os << r.horizon << ',' << r.lookback << ',' << detail::num(r.mse) << ',' << detail::num(r.mae) << '\n';
    });
}

inline void synth_command(const RunConfig& c, const fs::path& out, std::ostream& log) {
    RawSeries raw;
    try {
        raw = synth_multiseasonal(synth_config(c));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config_value", e.what());
    }
    prepare_output(c, out, "synth");
    save_csv((out / "synth.csv").string(), raw);
    log << "wrote " << (out / "synth.csv").string() << " (" << raw.values.rows << " rows, " << raw.values.cols
        << " variables)\n";
}

template <typename T>
void dispatch(const std::string& command, const RunConfig& c, const fs::path& out, std::ostream& log) {
    if (command == "train") train_command<T>(c, out, log);
    else if (command == "eval") eval_command<T>(c, out, log);
    else if (command == "ablate") ablate_command<T>(c, out, log);
    else if (command == "sweep") sweep_command<T>(c, out, log);
    else if (command == "synth") synth_command(c, out, log);
    else throw ConfigError("usage", "unknown command '" + command + "' (expected train, eval, ablate, sweep or synth)");
}

}  // namespace detail

/// Runs one command with a resolved configuration.
inline void run_command(const std::string& command, const RunConfig& c, const fs::path& out, std::ostream& log = std::cout) {
    const auto& precision = c.get("precision");
    if (precision == "float") detail::dispatch<float>(command, c, out, log);
    else if (precision == "double") detail::dispatch<double>(command, c, out, log);
    else throw ConfigError("config_value", "precision: expected float or double, got '" + precision + "'");
}

}  // namespace mtpnet
