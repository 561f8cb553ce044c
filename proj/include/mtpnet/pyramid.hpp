#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/embedding.hpp"
#include "mtpnet/matrix.hpp"
#include "mtpnet/params.hpp"
#include "mtpnet/tensor.hpp"
#include "mtpnet/transformer.hpp"

namespace mtpnet {

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct PyramidConfig {
    std::vector<std::size_t> patch_sizes{4, 24};
    std::size_t channels = 8;
    std::size_t heads = 4;
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 1;
    std::size_t lookback = 96;
    std::size_t horizon = 96;
    std::size_t decoder_history = 48;
    std::size_t variables = 1;
    std::size_t ff_multiplier = 4;
    double dropout = 0.1;
    EmbeddingMode embedding = EmbeddingMode::DI;

    // Ablation switches.
    bool no_inter_scale = false;
    bool no_all_scale = false;
    bool bottom_up_decoder = false;
    std::optional<std::size_t> single_scale_index;

    /// Patch sizes of the levels actually built (one entry under single-scale).
    std::vector<std::size_t> level_patch_sizes() const {
        if (single_scale_index) return {patch_sizes.at(*single_scale_index)};
        return patch_sizes;
    }

    void validate() const {
        if (patch_sizes.empty()) throw std::invalid_argument("patch_sizes: at least one patch size required");
        for (std::size_t i = 0; i < patch_sizes.size(); ++i) {
            if (patch_sizes[i] == 0) throw std::invalid_argument("patch_sizes: entries must be >= 1");
            if (i && patch_sizes[i] <= patch_sizes[i - 1]) {
                throw std::invalid_argument("patch_sizes: must be strictly increasing");
            }
        }
        if (single_scale_index && *single_scale_index >= patch_sizes.size()) {
            throw std::invalid_argument("single_scale_index " + std::to_string(*single_scale_index) +
                                        " out of range for " + std::to_string(patch_sizes.size()) + " patch sizes");
        }
        if (channels == 0 || variables == 0) throw std::invalid_argument("channels and variables must be >= 1");
        if (lookback == 0 || horizon == 0 || decoder_history == 0) {
            throw std::invalid_argument("lookback, horizon and decoder_history must be >= 1");
        }
        if (decoder_history > lookback) {
            throw std::invalid_argument("decoder_history " + std::to_string(decoder_history) + " exceeds lookback " +
                                        std::to_string(lookback));
        }
        if (enc_layers == 0 || dec_layers == 0) throw std::invalid_argument("enc_layers and dec_layers must be >= 1");
        if (no_inter_scale && no_all_scale) {
            throw std::invalid_argument("no_inter_scale and no_all_scale cannot both be set: upper levels would have no input");
        }
        if (ff_multiplier == 0) throw std::invalid_argument("ff_multiplier must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must lie in [0, 1)");
        for (auto p : level_patch_sizes()) {
            if (heads == 0 || (channels * p) % heads != 0) {
                throw std::invalid_argument("heads " + std::to_string(heads) + " must divide channels*patch = " +
                                            std::to_string(channels * p));
            }
        }
    }
};

/// Last `L` history rows followed by `H` zero rows.
inline Matrix build_decoder_input(const Matrix& history, std::size_t L, std::size_t H) {
    if (L > history.rows) {
        throw std::invalid_argument("build_decoder_input: L=" + std::to_string(L) + " exceeds history length " +
                                    std::to_string(history.rows));
    }
    Matrix out(L + H, history.cols);
    std::copy(history.data.end() - static_cast<long>(L * history.cols), history.data.end(), out.data.begin());
    return out;
}

template <typename T>
Tensor<T> build_decoder_input(const Tensor<T>& history, std::size_t L, std::size_t H) {
    std::size_t i = history.dim(1);
    if (L > i) {
        throw std::invalid_argument("build_decoder_input: L=" + std::to_string(L) + " exceeds history length " +
                                    std::to_string(i));
    }
    return concat<T>({slice(history, 1, i - L, L), Tensor<T>::zeros({history.dim(0), H, history.dim(2)})}, 1);
}

/// Re-grids a patched block [B, c, N', p', D] onto n_patches x patch: the
/// sequence is inverse-patched, right-aligned to the new padded length
/// (cropping the oldest steps or prepending zeros), then patched again.
template <typename T>
Tensor<T> regrid(const Tensor<T>& h, std::size_t n_patches, std::size_t patch_size) {
    std::size_t b = h.dim(0), c = h.dim(1), d = h.dim(4);
    std::size_t have = h.dim(2) * h.dim(3), want = n_patches * patch_size;
    auto seq = reshape(h, {b, c, have, d});
    if (have > want) seq = slice(seq, 2, have - want, want);
    if (have < want) seq = pad_front(seq, 2, want - have);
    return reshape(seq, {b, c, n_patches, patch_size, d});
}

/// Inter-scale fusion: channel concat of the level's own embedding with the
/// neighbouring level's (re-gridded) latent, then a 1x1 convolution 2c -> c.
/// Returns `x_di` unchanged when there is no neighbour.
template <typename T>
Tensor<T> inter_scale_fuse(const Tensor<T>& x_di, const std::optional<Tensor<T>>& h_prev, const Tensor<T>& kernel,
                           const Tensor<T>& bias = {}) {
    if (!h_prev) return x_di;
    const auto& s = x_di.shape();
    if (s.size() != 5) throw ShapeError("inter_scale_fuse: expected [B,c,N,p,D], got " + to_string(s));
    auto other = regrid(*h_prev, s[2], s[3]);
    if (other.shape() != s) {
        throw ShapeError("inter_scale_fuse: neighbour " + to_string(other.shape()) + " does not match " + to_string(s));
    }
    if (kernel.rank() != 4 || kernel.dim(0) != s[1] || kernel.dim(1) != 2 * s[1] || kernel.dim(2) != 1 ||
        kernel.dim(3) != 1) {
        throw ShapeError("inter_scale_fuse: kernel must be [c,2c,1,1], got " + to_string(kernel.shape()));
    }
    auto cat = reshape(concat<T>({x_di, other}, 1), {s[0], 2 * s[1], s[2] * s[3], s[4]});
    return reshape(conv2d(cat, kernel, bias, 0, 0), s);
}

namespace detail {
// [B, c, N, p, D] -> [B*D, N, c*p]
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
    const auto& s = x.shape();
    return reshape(permute(x, {0, 4, 2, 1, 3}), {s[0] * s[4], s[2], s[1] * s[3]});
}
// [B*D, N, c*p] -> [B, c, N, p, D]
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::size_t batch, std::size_t c, std::size_t p, std::size_t d) {
    std::size_t n = tokens.dim(1);
    return permute(reshape(tokens, {batch, d, n, c, p}), {0, 3, 2, 4, 1});
}
}  // namespace detail

template <typename T>
struct LevelParams {
    std::size_t patch_size = 0;
    std::optional<EmbeddingParams<T>> enc_embed, dec_embed;
    Tensor<T> enc_fuse, enc_fuse_bias, dec_fuse, dec_fuse_bias;
    Tensor<T> enc_pos, dec_pos;
    std::vector<BlockParams<T>> enc_blocks, dec_blocks;
};

/// Intermediate results of one forward pass, per level.
template <typename T>
struct PyramidTrace {
    std::vector<Tensor<T>> encoder;        // [B, c, N_enc, p, D]
    std::vector<Tensor<T>> decoder;        // [B, c, N_dec, p, D]
    std::vector<Tensor<T>> decoder_pred;   // last N_pred patches
    std::vector<Tensor<T>> horizon_latent; // [B, c, H, D]
    Tensor<T> prediction;                  // [B, H, D]
};

/// Multi-scale transformer pyramid: one encoder/decoder pair per patch size,
/// bottom-up encoder fusion, top-down decoder fusion, and a 1x1 convolution
/// head over the concatenated per-level horizon latents.
template <typename T>
class MTPNet {
   public:
    MTPNet(PyramidConfig cfg, ParamStore<T>& store, const std::string& prefix = "mtpnet") : cfg_(std::move(cfg)) {
        cfg_.validate();
        auto patches = cfg_.level_patch_sizes();
        const std::size_t c = cfg_.channels, k_levels = patches.size();
        for (std::size_t k = 0; k < k_levels; ++k) {
            LevelParams<T> lv;
            std::size_t p = patches[k];
            lv.patch_size = p;
            std::size_t dm = c * p;
            std::string lp = prefix + ".level." + std::to_string(k);
            bool enc_has_input = k == 0 || !cfg_.no_all_scale;
            bool enc_fuses = k > 0 && !cfg_.no_inter_scale && !cfg_.no_all_scale;
            if (enc_has_input) {
                lv.enc_embed = make_embedding_params(store, lp + ".encoder.embed", cfg_.embedding, c, cfg_.variables, p);
            }
            if (enc_fuses) {
                lv.enc_fuse = store.fan_in_uniform(lp + ".encoder.fuse.kernel", {c, 2 * c, 1, 1}, 2 * c);
                lv.enc_fuse_bias = store.fan_in_uniform(lp + ".encoder.fuse.bias", {c}, 2 * c);
            }
            lv.enc_pos = store.uniform(lp + ".encoder.pos", {c, ceil_div(cfg_.lookback, p), p}, 0.02);
            for (std::size_t i = 0; i < cfg_.enc_layers; ++i) {
                lv.enc_blocks.push_back(make_block_params(store, lp + ".encoder.block." + std::to_string(i), dm,
                                                          cfg_.heads, cfg_.ff_multiplier * dm, false));
            }
            bool dec_first = is_first_decoder(k, k_levels);
            bool dec_has_input = dec_first || !cfg_.no_all_scale;
            bool dec_fuses = !dec_first && !cfg_.no_inter_scale && !cfg_.no_all_scale;
            if (dec_has_input) {
                lv.dec_embed = make_embedding_params(store, lp + ".decoder.embed", cfg_.embedding, c, cfg_.variables, p);
            }
            if (dec_fuses) {
                lv.dec_fuse = store.fan_in_uniform(lp + ".decoder.fuse.kernel", {c, 2 * c, 1, 1}, 2 * c);
                lv.dec_fuse_bias = store.fan_in_uniform(lp + ".decoder.fuse.bias", {c}, 2 * c);
            }
            lv.dec_pos = store.uniform(lp + ".decoder.pos", {c, ceil_div(decoder_length(), p), p}, 0.02);
            for (std::size_t i = 0; i < cfg_.dec_layers; ++i) {
                lv.dec_blocks.push_back(make_block_params(store, lp + ".decoder.block." + std::to_string(i), dm,
                                                          cfg_.heads, cfg_.ff_multiplier * dm, true));
            }
            levels_.push_back(std::move(lv));
        }
        head_kernel_ = store.fan_in_uniform(prefix + ".head.kernel", {1, k_levels * c, 1, 1}, k_levels * c);
        head_bias_ = store.fan_in_uniform(prefix + ".head.bias", {1}, k_levels * c);
    }

    const PyramidConfig& config() const { return cfg_; }
    std::size_t levels() const { return levels_.size(); }
    const LevelParams<T>& level(std::size_t k) const { return levels_.at(k); }
    std::size_t decoder_length() const { return cfg_.decoder_history + cfg_.horizon; }

    /// Encoder of level k over x_enc [B, I, D]; h_prev is level k-1's output.
    Tensor<T> level_encode(std::size_t k, const Tensor<T>& x_enc, const std::optional<Tensor<T>>& h_prev,
                           const RunContext& ctx = {}) const {
        const auto& lv = levels_.at(k);
        std::size_t n = ceil_div(x_enc.dim(1), lv.patch_size);
        return run_level(lv, x_enc, n, lv.enc_embed, cfg_.no_inter_scale ? std::nullopt : h_prev, lv.enc_fuse,
                         lv.enc_fuse_bias, lv.enc_pos, [&](Tensor<T> tokens) {
                             for (const auto& b : lv.enc_blocks) tokens = encoder_block(tokens, b, ctx);
                             return tokens;
                         });
    }

    /// Decoder of level k over x_dec [B, L+H, D] attending to that level's
    /// encoder output. Returns the full decoder latent [B, c, N_dec, p, D].
    Tensor<T> level_decode(std::size_t k, const Tensor<T>& x_dec, const std::optional<Tensor<T>>& h_neighbor,
                           const Tensor<T>& memory, const RunContext& ctx = {}) const {
        const auto& lv = levels_.at(k);
        std::size_t n = ceil_div(x_dec.dim(1), lv.patch_size);
        auto mem_tokens = detail::to_tokens(memory);
        return run_level(lv, x_dec, n, lv.dec_embed, cfg_.no_inter_scale ? std::nullopt : h_neighbor, lv.dec_fuse,
                         lv.dec_fuse_bias, lv.dec_pos, [&](Tensor<T> tokens) {
                             for (const auto& b : lv.dec_blocks) tokens = decoder_block(tokens, mem_tokens, b, ctx);
                             return tokens;
                         });
    }

    /// Final ceil(H/p) patches of a decoder latent.
    Tensor<T> crop_prediction(std::size_t k, const Tensor<T>& h_dec) const {
        std::size_t n_pred = ceil_div(cfg_.horizon, levels_.at(k).patch_size);
        return slice(h_dec, 2, h_dec.dim(2) - n_pred, n_pred);
    }

    PyramidTrace<T> trace(const Tensor<T>& x_enc, const RunContext& ctx = {}) const {
        if (x_enc.rank() != 3 || x_enc.dim(1) != cfg_.lookback || x_enc.dim(2) != cfg_.variables) {
            throw ShapeError("MTPNet: expected input [B," + std::to_string(cfg_.lookback) + "," +
                             std::to_string(cfg_.variables) + "], got " + to_string(x_enc.shape()));
        }
        const std::size_t k_levels = levels_.size(), b = x_enc.dim(0), c = cfg_.channels, h = cfg_.horizon;
        PyramidTrace<T> tr;
        std::optional<Tensor<T>> prev;
        for (std::size_t k = 0; k < k_levels; ++k) {
            tr.encoder.push_back(level_encode(k, x_enc, prev, ctx));
            prev = tr.encoder.back();
        }
        auto x_dec = build_decoder_input(x_enc, cfg_.decoder_history, h);
        tr.decoder.resize(k_levels);
        std::optional<Tensor<T>> neighbor;
        for (std::size_t step = 0; step < k_levels; ++step) {
            std::size_t k = cfg_.bottom_up_decoder ? step : k_levels - 1 - step;
            tr.decoder[k] = level_decode(k, x_dec, neighbor, tr.encoder[k], ctx);
            neighbor = tr.decoder[k];
        }
        std::vector<Tensor<T>> latents;
        for (std::size_t k = 0; k < k_levels; ++k) {
            auto pred = crop_prediction(k, tr.decoder[k]);
            tr.decoder_pred.push_back(pred);
            std::size_t steps = pred.dim(2) * pred.dim(3);
            auto seq = reshape(pred, {b, c, steps, cfg_.variables});
            tr.horizon_latent.push_back(slice(seq, 2, steps - h, h));
        }
        auto stacked = concat(tr.horizon_latent, 1);
        tr.prediction = reshape(conv2d(stacked, head_kernel_, head_bias_, 0, 0), {b, h, cfg_.variables});
        return tr;
    }

    /// [B, I, D] -> [B, H, D].
    Tensor<T> forward(const Tensor<T>& x_enc, const RunContext& ctx = {}) const { return trace(x_enc, ctx).prediction; }

    Matrix predict(const Matrix& x) const {
        Tensor<T> in({1, x.rows, x.cols}, std::vector<T>(x.data.begin(), x.data.end()));
        auto out = forward(in);
        return Matrix(cfg_.horizon, cfg_.variables, std::vector<double>(out.values().begin(), out.values().end()));
    }

   private:
    bool is_first_decoder(std::size_t k, std::size_t k_levels) const {
        return cfg_.bottom_up_decoder ? k == 0 : k + 1 == k_levels;
    }

    template <typename Blocks>
    Tensor<T> run_level(const LevelParams<T>& lv, const Tensor<T>& x, std::size_t n,
                        const std::optional<EmbeddingParams<T>>& embed, const std::optional<Tensor<T>>& neighbor,
                        const Tensor<T>& fuse, const Tensor<T>& fuse_bias, const Tensor<T>& pos,
                        Blocks&& blocks) const {
        const std::size_t b = x.dim(0), d = x.dim(2), c = cfg_.channels, p = lv.patch_size;
        Tensor<T> input;  // what the skip connection adds back
        Tensor<T> fused;
        if (embed) {
            input = embed_and_patch(x, p, c, *embed).values;
            fused = fuse.defined() ? inter_scale_fuse(input, neighbor, fuse, fuse_bias) : input;
        } else {
            if (!neighbor) throw std::logic_error("pyramid: level without direct input needs a neighbour latent");
            input = regrid(*neighbor, n, p);
            fused = input;
        }
        auto tokens = blocks(detail::to_tokens(add_position(fused, pos)));
        return add(detail::from_tokens(tokens, b, c, p, d), input);
    }

    PyramidConfig cfg_;
    std::vector<LevelParams<T>> levels_;
    Tensor<T> head_kernel_, head_bias_;
};

}  // namespace mtpnet
