#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/checkpoint.hpp"
#include "mtpnet/data.hpp"
#include "mtpnet/eval.hpp"

// Flat run configuration: one `key = value` per line, `#` starts a comment,
// lists are comma-separated. Every key has a default; see config_keys().

namespace mtpnet {

/// A configuration problem; `category` is a stable machine-readable tag.
class ConfigError : public std::invalid_argument {
   public:
    ConfigError(std::string category, const std::string& detail)
        : std::invalid_argument(detail), category_(std::move(category)) {}
    const std::string& category() const { return category_; }

   private:
    std::string category_;
};

struct KeySpec {
    const char* name;
    const char* fallback;
    const char* doc;
};

inline const std::vector<KeySpec>& config_keys() {
    static const std::vector<KeySpec> keys{
        // data
        {"data_path", "", "CSV file (timestamp column first); empty means generate synthetic data from synth_*"},
        {"dataset_id", "", "name used in reports; empty means the file stem, or 'synthetic'"},
        {"max_rows", "0", "use only the first N rows of the file (0 = all)"},
        {"split_ratios", "0.6,0.2,0.2", "train,val,test fractions"},
        {"train_stride", "1", "step between consecutive training windows"},
        {"val_stride", "1", "step between consecutive validation windows"},
        {"denormalized_metrics", "false", "report test metrics on the original scale"},
        // model
        {"lookback_I", "96", "look-back length"},
        {"horizon_H", "96", "forecast horizon"},
        {"decoder_history_L", "48", "history rows fed to the decoder"},
        {"patch_sizes", "4,24", "strictly increasing patch sizes, one pyramid level each"},
        {"channels_c", "8", "embedding channels"},
        {"heads", "4", "attention heads; must divide channels_c * patch size"},
        {"enc_layers", "2", "encoder blocks per level"},
        {"dec_layers", "1", "decoder blocks per level"},
        {"ff_multiplier", "4", "feed-forward width over the token width"},
        {"dropout", "0.1", "dropout rate during training"},
        {"embedding", "DI", "DI, spatial or temporal"},
        {"no_inter_scale", "false", "drop the fusion between adjacent levels"},
        {"no_all_scale", "false", "feed the embedded series to the first level only"},
        {"bottom_up_decoder", "false", "run decoder levels fine to coarse"},
        {"single_scale_index", "none", "build only this level of patch_sizes (none = all)"},
        {"decomp_kernels", "25", "odd moving-average kernel sizes"},
        {"framework_mode", "decomposed", "decomposed, trend_as_mtpnet or no_decomposition"},
        {"precision", "float", "float or double"},
        // training
        {"batch_size", "32", "windows per step"},
        {"lr_max", "0.001", "peak learning rate"},
        {"lr_min", "1e-06", "final learning rate of the cosine schedule"},
        {"epochs", "10", "maximum epochs"},
        {"seed", "1", "initialization, shuffling and dropout seed"},
        {"patience", "5", "epochs without validation improvement before stopping (0 = never)"},
        {"grad_clip", "0", "global gradient-norm clip (0 = off)"},
        // suites
        {"variants", "full", "ablate: variant tags"},
        {"seeds", "1", "ablate: seeds"},
        {"horizons", "96", "ablate and sweep: horizons"},
        {"lookbacks", "96,192,336,720", "sweep: look-back lengths"},
        // synthetic data
        {"synth_length", "2048", "rows"},
        {"synth_variables", "3", "columns"},
        {"synth_periods", "24,96", "seasonal periods"},
        {"synth_amplitudes", "1,1", "one amplitude per period"},
        {"synth_trend_slope", "0", "linear trend per step"},
        {"synth_noise_std", "0", "Gaussian noise level"},
        {"synth_seed", "1", "phase and noise seed"},
    };
    return keys;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Resolved key/value configuration.
class RunConfig {
   public:
    RunConfig() {
        for (const auto& k : config_keys()) values_[k.name] = k.fallback;
    }

    static bool known(const std::string& key) {
        const auto& ks = config_keys();
        return std::any_of(ks.begin(), ks.end(), [&](const KeySpec& k) { return key == k.name; });
    }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw unknown_key(key);
        values_[key] = value;
    }

    /// Applies one `key=value` (or `key = value`) assignment.
    void assign(const std::string& text, const std::string& where = "override") {
        auto eq = text.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config_syntax", where + ": expected key=value, got '" + text + "'");
        }
        auto key = detail::trim(text.substr(0, eq));
        if (key.empty()) throw ConfigError("config_syntax", where + ": missing key in '" + text + "'");
        set(key, detail::trim(text.substr(eq + 1)));
    }

    void read(std::istream& is, const std::string& source) {
        std::string line;
        std::size_t n = 0;
        while (std::getline(is, line)) {
            ++n;
            if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
            if (detail::trim(line).empty()) continue;
            assign(line, source + ":" + std::to_string(n));
        }
    }

    void read_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("config_path", "cannot read config file '" + path + "'");
        read(is, path);
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw unknown_key(key);
        return it->second;
    }

    std::size_t size_value(const std::string& key) const {
        auto v = sizes(key);
        if (v.size() != 1) throw ConfigError("config_value", key + ": expected one integer, got '" + get(key) + "'");
        return v[0];
    }

    std::vector<std::size_t> sizes(const std::string& key) const {
        try {
            return detail::parse_size_list(get(key), key);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(key == "patch_sizes" ? "patch_sizes" : "config_value", e.what());
        }
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(get(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            double v = 0;
            if (!detail::parse_double(detail::trim(item), v)) {
                throw ConfigError("config_value", key + ": '" + detail::trim(item) + "' is not a number");
            }
            out.push_back(v);
        }
        if (out.empty()) throw ConfigError("config_value", key + ": empty list");
        return out;
    }

    double real(const std::string& key) const {
        auto v = reals(key);
        if (v.size() != 1) throw ConfigError("config_value", key + ": expected one number, got '" + get(key) + "'");
        return v[0];
    }

    bool flag(const std::string& key) const {
        const auto& v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config_value", key + ": expected true or false, got '" + v + "'");
    }

    std::vector<std::string> words(const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(get(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = detail::trim(item);
            if (item.empty()) throw ConfigError("config_value", key + ": empty list entry");
            out.push_back(item);
        }
        if (out.empty()) throw ConfigError("config_value", key + ": empty list");
        return out;
    }

    /// Every key with its resolved value, documented, in registry order.
    void write(std::ostream& os) const {
        for (const auto& k : config_keys()) os << "# " << k.doc << '\n' << k.name << " = " << get(k.name) << '\n';
    }

    bool operator==(const RunConfig&) const = default;

   private:
    static ConfigError unknown_key(const std::string& key) {
        std::string best, all;
        std::size_t best_d = SIZE_MAX;
        for (const auto& k : config_keys()) {
            all += (all.empty() ? "" : ", ") + std::string(k.name);
            auto d = edit_distance(key, k.name);
            if (d < best_d) best_d = d, best = k.name;
        }
        std::string hint = best_d <= std::max<std::size_t>(2, key.size() / 3) ? "; did you mean '" + best + "'?" : "";
        return ConfigError("config_key", "unknown key '" + key + "'" + hint + " valid keys: " + all);
    }

    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Typed views

inline ModelConfig model_config(const RunConfig& c) {
    ModelConfig m;
    auto& p = m.pyramid;
    try {
        p.patch_sizes = c.sizes("patch_sizes");
        p.channels = c.size_value("channels_c");
        p.heads = c.size_value("heads");
        p.enc_layers = c.size_value("enc_layers");
        p.dec_layers = c.size_value("dec_layers");
        p.lookback = c.size_value("lookback_I");
        p.horizon = c.size_value("horizon_H");
        p.decoder_history = c.size_value("decoder_history_L");
        p.ff_multiplier = c.size_value("ff_multiplier");
        p.dropout = c.real("dropout");
        p.embedding = parse_embedding_mode(c.get("embedding"));
        p.no_inter_scale = c.flag("no_inter_scale");
        p.no_all_scale = c.flag("no_all_scale");
        p.bottom_up_decoder = c.flag("bottom_up_decoder");
        if (c.get("single_scale_index") != "none") p.single_scale_index = c.size_value("single_scale_index");
        m.decomposition.kernel_sizes = c.sizes("decomp_kernels");
        m.mode = parse_framework_mode(c.get("framework_mode"));
        m.decomposition.validate();
        p.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        std::string what = e.what();
        throw ConfigError(what.rfind("patch_sizes", 0) == 0 ? "patch_sizes" : "config_value", what);
    }
    return m;
}

inline TrainConfig train_config(const RunConfig& c) {
    TrainConfig t;
    t.batch_size = c.size_value("batch_size");
    t.lr_max = c.real("lr_max");
    t.lr_min = c.real("lr_min");
    t.epochs = c.size_value("epochs");
    t.seed = c.size_value("seed");
    t.patience = c.size_value("patience");
    t.grad_clip = c.real("grad_clip");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config_value", e.what());
    }
    return t;
}

inline ExperimentConfig experiment_config(const RunConfig& c) {
    ExperimentConfig e;
    e.model = model_config(c);
    e.train = train_config(c);
    e.train_stride = c.size_value("train_stride");
    e.val_stride = c.size_value("val_stride");
    if (e.train_stride == 0 || e.val_stride == 0) throw ConfigError("config_value", "window strides must be >= 1");
    e.denormalized_metrics = c.flag("denormalized_metrics");
    return e;
}

inline SynthConfig synth_config(const RunConfig& c) {
    SynthConfig s;
    s.length = c.size_value("synth_length");
    s.variables = c.size_value("synth_variables");
    s.periods = c.reals("synth_periods");
    s.amplitudes = c.reals("synth_amplitudes");
    s.trend_slope = c.real("synth_trend_slope");
    s.noise_std = c.real("synth_noise_std");
    s.seed = c.size_value("synth_seed");
    return s;
}

inline std::array<double, 3> split_ratios(const RunConfig& c) {
    auto r = c.reals("split_ratios");
    if (r.size() != 3) throw ConfigError("config_value", "split_ratios: expected three fractions");
    return {r[0], r[1], r[2]};
}

/// Loads (or synthesizes) the series named by the config, normalized and split.
inline PreparedData load_data(const RunConfig& c) {
    Matrix values;
    std::string id = c.get("dataset_id");
    const auto& path = c.get("data_path");
    if (path.empty()) {
        try {
            values = synth_multiseasonal(synth_config(c)).values;
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config_value", e.what());
        }
        if (id.empty()) id = "synthetic";
    } else {
        {
            std::ifstream probe(path);
            if (!probe) throw ConfigError("data_path", "cannot read data file '" + path + "'");
        }
        try {
            values = load_csv(path).values;
        } catch (const std::exception& e) {
            throw ConfigError("data_format", e.what());
        }
        if (id.empty()) {
            auto slash = path.find_last_of("/\\");
            id = path.substr(slash == std::string::npos ? 0 : slash + 1);
            if (auto dot = id.rfind('.'); dot != std::string::npos && dot > 0) id.resize(dot);
        }
    }
    if (auto rows = c.size_value("max_rows"); rows > 0 && rows < values.rows) values = values.block(0, rows);
    try {
        return prepare(id, values, split_ratios(c));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config_value", e.what());
    }
}

}  // namespace mtpnet
