#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/framework.hpp"

// Checkpoint container
// --------------------
//   MTPNET-CHECKPOINT 1\n
//   config <n>\n
//   <n lines of "key = value">
//   params <m>\n
//   then m records, in path order:
//     <path> <rank> <dim_0> ... <dim_{rank-1}>\n
//     <product(dims) IEEE-754 float64 values, little-endian>\n
// Values are stored as float64 whatever the training precision, so a
// float or double model round-trips bit-exactly.

namespace mtpnet {

namespace detail {
template <typename Seq>
std::string join(const Seq& seq) {
    std::ostringstream os;
    bool first = true;
    for (const auto& v : seq) {
        if (!first) os << ',';
        os << v;
        first = false;
    }
    return os.str();
}

inline std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto b = item.find_first_not_of(" \t");
        auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw std::invalid_argument(key + ": empty list entry in '" + s + "'");
        item = item.substr(b, e - b + 1);
        std::size_t pos = 0;
        long long v = 0;
        try {
            v = std::stoll(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size() || v < 0) throw std::invalid_argument(key + ": '" + item + "' is not a non-negative integer");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw std::invalid_argument(key + ": empty list");
    return out;
}

inline void write_le_double(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
    os.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_le_double(std::istream& is) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint: truncated value block");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}
}  // namespace detail

/// Model architecture as ordered key/value pairs.
inline std::map<std::string, std::string> model_config_to_kv(const ModelConfig& m) {
    const auto& p = m.pyramid;
    std::map<std::string, std::string> kv;
    kv["patch_sizes"] = detail::join(p.patch_sizes);
    kv["channels_c"] = std::to_string(p.channels);
    kv["heads"] = std::to_string(p.heads);
    kv["enc_layers"] = std::to_string(p.enc_layers);
    kv["dec_layers"] = std::to_string(p.dec_layers);
    kv["lookback_I"] = std::to_string(p.lookback);
    kv["horizon_H"] = std::to_string(p.horizon);
    kv["decoder_history_L"] = std::to_string(p.decoder_history);
    kv["variables_D"] = std::to_string(p.variables);
    kv["ff_multiplier"] = std::to_string(p.ff_multiplier);
    std::ostringstream dr;
    dr.precision(17);
    dr << p.dropout;
    kv["dropout"] = dr.str();
    kv["embedding"] = to_string(p.embedding);
    kv["no_inter_scale"] = p.no_inter_scale ? "true" : "false";
    kv["no_all_scale"] = p.no_all_scale ? "true" : "false";
    kv["bottom_up_decoder"] = p.bottom_up_decoder ? "true" : "false";
    kv["single_scale_index"] = p.single_scale_index ? std::to_string(*p.single_scale_index) : "none";
    kv["decomp_kernels"] = detail::join(m.decomposition.kernel_sizes);
    kv["framework_mode"] = to_string(m.mode);
    return kv;
}

inline ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::invalid_argument("model config: missing key '" + k + "'");
        return it->second;
    };
    auto size = [&](const std::string& k) { return detail::parse_size_list(get(k), k).at(0); };
    auto flag = [&](const std::string& k) {
        const auto& v = get(k);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw std::invalid_argument(k + ": expected true/false, got '" + v + "'");
    };
    ModelConfig m;
    auto& p = m.pyramid;
    p.patch_sizes = detail::parse_size_list(get("patch_sizes"), "patch_sizes");
    p.channels = size("channels_c");
    p.heads = size("heads");
    p.enc_layers = size("enc_layers");
    p.dec_layers = size("dec_layers");
    p.lookback = size("lookback_I");
    p.horizon = size("horizon_H");
    p.decoder_history = size("decoder_history_L");
    p.variables = size("variables_D");
    p.ff_multiplier = size("ff_multiplier");
    p.dropout = std::stod(get("dropout"));
    p.embedding = parse_embedding_mode(get("embedding"));
    p.no_inter_scale = flag("no_inter_scale");
    p.no_all_scale = flag("no_all_scale");
    p.bottom_up_decoder = flag("bottom_up_decoder");
    if (get("single_scale_index") != "none") p.single_scale_index = size("single_scale_index");
    m.decomposition.kernel_sizes = detail::parse_size_list(get("decomp_kernels"), "decomp_kernels");
    m.mode = parse_framework_mode(get("framework_mode"));
    return m;
}

struct Checkpoint {
    ModelConfig config;
    std::map<std::string, std::vector<double>> values;
    std::map<std::string, Shape> shapes;
};

template <typename T>
void write_checkpoint(std::ostream& os, const ForecastModel<T>& model) {
    auto kv = model_config_to_kv(model.config());
    os << "MTPNET-CHECKPOINT 1\n";
    os << "config " << kv.size() << '\n';
    for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    os << "params " << model.params().size() << '\n';
    for (const auto& [path, t] : model.params()) {
        os << path << ' ' << t.rank();
        for (auto d : t.shape()) os << ' ' << d;
        os << '\n';
        for (T v : t.values()) detail::write_le_double(os, static_cast<double>(v));
        os << '\n';
    }
    if (!os) throw std::runtime_error("checkpoint: write failed");
}

template <typename T>
void save_checkpoint(const std::string& path, const ForecastModel<T>& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    write_checkpoint(os, model);
}

inline Checkpoint read_checkpoint(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "MTPNET-CHECKPOINT 1") throw std::runtime_error("checkpoint: bad magic line");
    auto count_line = [&](const std::string& tag) {
        if (!std::getline(is, line)) throw std::runtime_error("checkpoint: missing '" + tag + "' section");
        std::istringstream ls(line);
        std::string word;
        std::size_t n = 0;
        if (!(ls >> word >> n) || word != tag) throw std::runtime_error("checkpoint: malformed '" + tag + "' header");
        return n;
    };
    Checkpoint ck;
    std::map<std::string, std::string> kv;
    std::size_t n_cfg = count_line("config");
    for (std::size_t i = 0; i < n_cfg; ++i) {
        if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated config");
        auto eq = line.find(" = ");
        if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed config line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    ck.config = model_config_from_kv(kv);
    std::size_t n_params = count_line("params");
    for (std::size_t i = 0; i < n_params; ++i) {
        if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated parameter list");
        std::istringstream ls(line);
        std::string path;
        std::size_t rank = 0;
        if (!(ls >> path >> rank)) throw std::runtime_error("checkpoint: malformed record header '" + line + "'");
        Shape shape(rank);
        for (auto& d : shape)
            if (!(ls >> d)) throw std::runtime_error("checkpoint: malformed shape for '" + path + "'");
        std::vector<double> v(numel(shape));
        for (auto& x : v) x = detail::read_le_double(is);
        if (is.get() != '\n') throw std::runtime_error("checkpoint: missing record terminator after '" + path + "'");
        ck.values[path] = std::move(v);
        ck.shapes[path] = std::move(shape);
    }
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    return read_checkpoint(is);
}

/// Rebuilds a model from a checkpoint and installs its values.
template <typename T>
ForecastModel<T> model_from_checkpoint(const Checkpoint& ck) {
    ForecastModel<T> model(ck.config);
    for (const auto& [path, t] : model.params()) {
        auto it = ck.shapes.find(path);
        if (it == ck.shapes.end() || it->second != t.shape()) {
            throw std::runtime_error("checkpoint: parameter '" + path + "' missing or mis-shaped");
        }
    }
    if (ck.values.size() != model.params().size()) throw std::runtime_error("checkpoint: unexpected extra parameters");
    model.params().restore(ck.values);
    return model;
}

}  // namespace mtpnet
