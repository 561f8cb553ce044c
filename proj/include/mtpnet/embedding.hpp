#pragma once

#include <stdexcept>
#include <string>

#include "mtpnet/params.hpp"
#include "mtpnet/tensor.hpp"

namespace mtpnet {

enum class EmbeddingMode { DI, spatial, temporal };

inline const char* to_string(EmbeddingMode m) {
    switch (m) {
        case EmbeddingMode::DI: return "DI";
        case EmbeddingMode::spatial: return "spatial";
        case EmbeddingMode::temporal: return "temporal";
    }
    return "?";
}

inline EmbeddingMode parse_embedding_mode(const std::string& s) {
    if (s == "DI" || s == "di") return EmbeddingMode::DI;
    if (s == "spatial") return EmbeddingMode::spatial;
    if (s == "temporal") return EmbeddingMode::temporal;
    throw std::invalid_argument("unknown embedding mode '" + s + "' (expected DI, spatial or temporal)");
}

/// Patched latent block. `values` is [c, N, p, D], optionally with a leading
/// batch dimension; the first `pad_len` time steps are left zero padding.
template <typename T>
struct PatchedEmbedding {
    Tensor<T> values;
    std::size_t patch_size = 0;
    std::size_t n_patches = 0;
    std::size_t pad_len = 0;
};

/// Weights of one embedding stage. Only the tensors of the active mode are set.
template <typename T>
struct EmbeddingParams {
    EmbeddingMode mode = EmbeddingMode::DI;
    Tensor<T> di_kernel;  // [c, 1, 3, 1]
    Tensor<T> di_bias;    // [c]
    Tensor<T> weight;     // spatial: [D, width]; temporal: [p, width]
    Tensor<T> bias;       // [width]
};

/// Registers the parameters for one embedding stage producing `channels`
/// feature maps for `variables` series at patch size `patch`.
template <typename T>
EmbeddingParams<T> make_embedding_params(ParamStore<T>& store, const std::string& prefix, EmbeddingMode mode,
                                         std::size_t channels, std::size_t variables, std::size_t patch) {
    EmbeddingParams<T> p;
    p.mode = mode;
    switch (mode) {
        case EmbeddingMode::DI:
            p.di_kernel = store.fan_in_uniform(prefix + ".di.kernel", {channels, 1, 3, 1}, 3);
            p.di_bias = store.fan_in_uniform(prefix + ".di.bias", {channels}, 3);
            break;
        case EmbeddingMode::spatial:
            p.weight = store.fan_in_uniform(prefix + ".spatial.weight", {variables, channels * variables}, variables);
            p.bias = store.fan_in_uniform(prefix + ".spatial.bias", {channels * variables}, variables);
            break;
        case EmbeddingMode::temporal:
            p.weight = store.fan_in_uniform(prefix + ".temporal.weight", {patch, channels * patch}, patch);
            p.bias = store.fan_in_uniform(prefix + ".temporal.bias", {channels * patch}, patch);
            break;
    }
    return p;
}

namespace detail {
inline void require_mode(EmbeddingMode have, EmbeddingMode want, const char* op) {
    if (have != want) {
        throw std::invalid_argument(std::string(op) + ": embedding parameters are in " + to_string(have) +
                                    " mode, expected " + to_string(want));
    }
}
}  // namespace detail

/// Dimension-invariant embedding: a 3x1 convolution (zero padding 1 on time,
/// none across variables) lifting [1, T, D] to [c, T, D]. Accepts a leading
/// batch dimension.
template <typename T>
Tensor<T> di_embed(const Tensor<T>& x, const EmbeddingParams<T>& params) {
    detail::require_mode(params.mode, EmbeddingMode::DI, "di_embed");
    if (params.di_kernel.dim(2) != 3 || params.di_kernel.dim(3) != 1) {
        throw ShapeError("di_embed: kernel must be [c,1,3,1], got " + to_string(params.di_kernel.shape()));
    }
    return conv2d(x, params.di_kernel, params.di_bias, 1, 0);
}

/// Splits the time axis (second to last) into non-overlapping patches of
/// size `p`, left-padding with zeros so the length divides evenly.
template <typename T>
PatchedEmbedding<T> patch(const Tensor<T>& x, std::size_t p) {
    if (p == 0) throw std::invalid_argument("patch: patch size must be >= 1");
    if (x.rank() < 2) throw ShapeError("patch: need [..., T, D], got " + to_string(x.shape()));
    std::size_t time_axis = x.rank() - 2;
    std::size_t t = x.dim(time_axis);
    std::size_t n = (t + p - 1) / p;
    std::size_t pad = n * p - t;
    Tensor<T> padded = pad_front(x, static_cast<long>(time_axis), pad);
    Shape shape(x.shape().begin(), x.shape().begin() + static_cast<long>(time_axis));
    shape.insert(shape.end(), {n, p, x.dim(x.rank() - 1)});
    return {reshape(padded, shape), p, n, pad};
}

/// Concatenates patches back along time: [..., N, p, D] -> [..., N*p, D].
template <typename T>
Tensor<T> inverse_patch(const PatchedEmbedding<T>& e) {
    const auto& s = e.values.shape();
    if (s.size() < 3) throw ShapeError("inverse_patch: need [..., N, p, D], got " + to_string(s));
    Shape shape(s.begin(), s.end() - 3);
    shape.push_back(s[s.size() - 3] * s[s.size() - 2]);
    shape.push_back(s.back());
    return reshape(e.values, shape);
}

/// Per-time-step linear projection across variables: [..., T, D] -> [..., T, width].
template <typename T>
Tensor<T> spatial_embed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
    Tensor<T> y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

template <typename T>
Tensor<T> spatial_embed(const Tensor<T>& x, const EmbeddingParams<T>& params) {
    detail::require_mode(params.mode, EmbeddingMode::spatial, "spatial_embed");
    return spatial_embed(x, params.weight, params.bias);
}

/// Per-variable linear projection of each length-p patch:
/// [..., T, D] -> [..., N, width, D] with N = ceil(T/p), left zero padding.
template <typename T>
Tensor<T> temporal_embed(const Tensor<T>& x, std::size_t p, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
    if (weight.rank() != 2 || weight.dim(0) != p) {
        throw ShapeError("temporal_embed: weight must be [p, width] with p=" + std::to_string(p) + ", got " +
                         to_string(weight.shape()));
    }
    auto patches = patch(x, p).values;  // [..., N, p, D]
    std::size_t r = patches.rank();
    std::vector<std::size_t> swap_last(r);
    std::iota(swap_last.begin(), swap_last.end(), 0);
    std::swap(swap_last[r - 1], swap_last[r - 2]);
    Tensor<T> y = matmul(permute(patches, swap_last), weight);  // [..., N, D, width]
    if (bias.defined()) y = add(y, bias);
    return permute(y, swap_last);
}

template <typename T>
Tensor<T> temporal_embed(const Tensor<T>& x, std::size_t p, const EmbeddingParams<T>& params) {
    detail::require_mode(params.mode, EmbeddingMode::temporal, "temporal_embed");
    return temporal_embed(x, p, params.weight, params.bias);
}

/// Embeds a batch of series [B, T, D] into the patched geometry
/// [B, c, ceil(T/p), p, D] used by every pyramid level, whatever the mode.
template <typename T>
PatchedEmbedding<T> embed_and_patch(const Tensor<T>& x, std::size_t p, std::size_t channels,
                                    const EmbeddingParams<T>& params) {
    if (x.rank() != 3) throw ShapeError("embed_and_patch: need [B, T, D], got " + to_string(x.shape()));
    std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    switch (params.mode) {
        case EmbeddingMode::DI:
            return patch(di_embed(reshape(x, {b, 1, t, d}), params), p);
        case EmbeddingMode::spatial: {
            auto y = reshape(spatial_embed(x, params), {b, t, channels, d});
            return patch(permute(y, {0, 2, 1, 3}), p);
        }
        case EmbeddingMode::temporal: {
            std::size_t n = (t + p - 1) / p;
            auto y = reshape(temporal_embed(x, p, params), {b, n, channels, p, d});
            return {permute(y, {0, 2, 1, 3, 4}), p, n, n * p - t};
        }
    }
    throw std::logic_error("embed_and_patch: unreachable");
}

}  // namespace mtpnet
