// mtpnet_cli COMMAND --out DIR [--config FILE] [--set key=value]... [--seed N]
//
// Exit status: 0 ok, 2 usage or configuration, 3 data, 4 training, 1 anything else.
// Failures print one line to stderr: "error: <category>: <detail>".

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtpnet/commands.hpp"

namespace {

int fail(const std::string& category, std::string detail, int code) {
    for (auto& ch : detail)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::cerr << "error: " << category << ": " << detail << '\n';
    return code;
}

int exit_code(const std::string& category) {
    if (category == "data_path" || category == "data_format") return 3;
    if (category == "output" || category == "checkpoint") return 1;
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-scale transformer pyramid forecasting"};
    std::string command, config_path, out_dir;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    app.add_option("command", command, "train, eval, ablate, sweep or synth")
        ->required()
        ->check(CLI::IsMember({"train", "eval", "ablate", "sweep", "synth"}));
    app.add_option("--config", config_path, "flat key = value configuration file");
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--set", overrides, "key=value override, applied after the config file")->allow_extra_args(false);
    auto* seed_opt = app.add_option("--seed", seed, "shorthand for --set seed=N");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        namespace fs = std::filesystem;
        mtpnet::RunConfig cfg;
        if (!config_path.empty()) {
            cfg.read_file(config_path);
        } else if (command == "eval" && fs::exists(fs::path(out_dir) / "train.config")) {
            cfg.read_file((fs::path(out_dir) / "train.config").string());
        }
        for (const auto& o : overrides) cfg.assign(o, "--set");
        if (*seed_opt) cfg.set("seed", std::to_string(seed));
        mtpnet::run_command(command, cfg, out_dir, std::cout);
    } catch (const mtpnet::ConfigError& e) {
        return fail(e.category(), e.what(), exit_code(e.category()));
    } catch (const mtpnet::TrainingError& e) {
        return fail("training", e.what(), 4);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
