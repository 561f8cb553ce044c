#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/params.hpp"
#include "mtpnet/tensor.hpp"

namespace mtpnet {

/// Per-call dropout settings; a null rng means evaluation mode.
struct RunContext {
    double dropout = 0.0;
    std::mt19937_64* rng = nullptr;

    bool training() const { return rng != nullptr && dropout > 0.0; }
};

/// Projections for multi-head attention. The per-head Q/K/V weights are
/// stored side by side as the column blocks of one [d_model, d_model] matrix.
template <typename T>
struct AttentionParams {
    std::size_t heads = 1;
    std::size_t d_model = 0;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;

    std::size_t d_head() const { return d_model / heads; }
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gain, bias;
};

template <typename T>
struct BlockParams {
    AttentionParams<T> self_attn;
    AttentionParams<T> cross_attn;  // decoder blocks only
    Tensor<T> ff_w1, ff_b1, ff_w2, ff_b2;
    std::vector<LayerNormParams<T>> norms;  // 2 for encoder blocks, 3 for decoder blocks

    bool is_decoder() const { return cross_attn.wq.defined(); }
};

template <typename T>
AttentionParams<T> make_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_model,
                                         std::size_t heads) {
    if (heads == 0 || d_model % heads != 0) {
        throw std::invalid_argument("attention: " + std::to_string(heads) + " heads do not divide d_model " +
                                    std::to_string(d_model));
    }
    AttentionParams<T> a;
    a.heads = heads;
    a.d_model = d_model;
    a.wq = store.fan_in_uniform(prefix + ".q", {d_model, d_model}, d_model);
    a.bq = store.fan_in_uniform(prefix + ".q_bias", {d_model}, d_model);
    a.wk = store.fan_in_uniform(prefix + ".k", {d_model, d_model}, d_model);
    a.bk = store.fan_in_uniform(prefix + ".k_bias", {d_model}, d_model);
    a.wv = store.fan_in_uniform(prefix + ".v", {d_model, d_model}, d_model);
    a.bv = store.fan_in_uniform(prefix + ".v_bias", {d_model}, d_model);
    a.wo = store.fan_in_uniform(prefix + ".out", {d_model, d_model}, d_model);
    a.bo = store.fan_in_uniform(prefix + ".out_bias", {d_model}, d_model);
    return a;
}

template <typename T>
BlockParams<T> make_block_params(ParamStore<T>& store, const std::string& prefix, std::size_t d_model,
                                 std::size_t heads, std::size_t d_ff, bool decoder) {
    if (d_ff == 0) throw std::invalid_argument("block: d_ff must be >= 1");
    BlockParams<T> b;
    b.self_attn = make_attention_params(store, prefix + ".attn", d_model, heads);
    if (decoder) b.cross_attn = make_attention_params(store, prefix + ".cross", d_model, heads);
    b.ff_w1 = store.fan_in_uniform(prefix + ".ff.w1", {d_model, d_ff}, d_model);
    b.ff_b1 = store.fan_in_uniform(prefix + ".ff.b1", {d_ff}, d_model);
    b.ff_w2 = store.fan_in_uniform(prefix + ".ff.w2", {d_ff, d_model}, d_ff);
    b.ff_b2 = store.fan_in_uniform(prefix + ".ff.b2", {d_model}, d_ff);
    for (int i = 0; i < (decoder ? 3 : 2); ++i) {
        auto p = prefix + ".norm" + std::to_string(i);
        b.norms.push_back({store.constant(p + ".gain", {d_model}, T{1}), store.constant(p + ".bias", {d_model}, T{0})});
    }
    return b;
}

/// softmax(Q K^T / sqrt(d)) row-wise, without masking. Q: [..., nq, d], K: [..., nk, d].
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k) {
    std::size_t d = q.dim(q.rank() - 1);
    if (k.dim(k.rank() - 1) != d) {
        throw ShapeError("attention: query width differs from key width, " + to_string(q.shape()) + " vs " +
                         to_string(k.shape()));
    }
    auto logits = scale(matmul_transposed(q, k), T{1} / std::sqrt(static_cast<T>(d)));
    return softmax(logits, -1);
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const RunContext& ctx = {}) {
    if (k.dim(k.rank() - 2) != v.dim(v.rank() - 2)) {
        throw ShapeError("attention: key length differs from value length, " + to_string(k.shape()) + " vs " +
                         to_string(v.shape()));
    }
    auto w = attention_weights(q, k);
    return matmul(dropout(w, ctx.dropout, ctx.rng), v);
}

namespace detail {
// [S, n, d_model] -> [S, h, n, d_head]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    std::size_t s = x.dim(0), n = x.dim(1), dm = x.dim(2);
    return permute(reshape(x, {s, n, heads, dm / heads}), {0, 2, 1, 3});
}
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    std::size_t s = x.dim(0), h = x.dim(1), n = x.dim(2), dh = x.dim(3);
    return reshape(permute(x, {0, 2, 1, 3}), {s, n, h * dh});
}
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return affine(x, w, b);
}
}  // namespace detail

/// Queries from `x_q`, keys and values from `x_kv`; both are token
/// sequences [S, n, d_model] processed independently per sequence S.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x_q, const Tensor<T>& x_kv, const AttentionParams<T>& p,
                               const RunContext& ctx = {}) {
    if (p.heads == 0 || p.d_model % p.heads != 0) {
        throw std::invalid_argument("multi_head_attention: " + std::to_string(p.heads) + " heads do not divide d_model " +
                                    std::to_string(p.d_model));
    }
    if (x_q.rank() != 3 || x_kv.rank() != 3 || x_q.dim(2) != p.d_model || x_kv.dim(2) != p.d_model ||
        x_q.dim(0) != x_kv.dim(0)) {
        throw ShapeError("multi_head_attention: expected [S,n," + std::to_string(p.d_model) + "] inputs, got " +
                         to_string(x_q.shape()) + " and " + to_string(x_kv.shape()));
    }
    auto q = detail::split_heads(detail::linear(x_q, p.wq, p.bq), p.heads);
    auto k = detail::split_heads(detail::linear(x_kv, p.wk, p.bk), p.heads);
    auto v = detail::split_heads(detail::linear(x_kv, p.wv, p.bv), p.heads);
    auto heads = scaled_dot_attention(q, k, v, ctx);
    return detail::linear(detail::merge_heads(heads), p.wo, p.bo);
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const BlockParams<T>& p, const RunContext& ctx = {}) {
    auto hidden = gelu(detail::linear(x, p.ff_w1, p.ff_b1));
    return dropout(detail::linear(hidden, p.ff_w2, p.ff_b2), ctx.dropout, ctx.rng);
}

/// Post-norm encoder layer: LN(x + SelfAttn(x)) followed by LN(x' + FFN(x')).
template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const BlockParams<T>& p, const RunContext& ctx = {}) {
    if (x.rank() != 3 || x.dim(2) != p.self_attn.d_model) {
        throw ShapeError("encoder_block: expected [S,N," + std::to_string(p.self_attn.d_model) + "], got " +
                         to_string(x.shape()));
    }
    auto h = layer_norm(add(x, multi_head_attention(x, x, p.self_attn, ctx)), p.norms[0].gain, p.norms[0].bias);
    return layer_norm(add(h, feed_forward(h, p, ctx)), p.norms[1].gain, p.norms[1].bias);
}

/// Decoder layer: unmasked self-attention, cross-attention onto `memory`,
/// feed-forward; each sublayer with a residual and layer norm.
template <typename T>
Tensor<T> decoder_block(const Tensor<T>& x, const Tensor<T>& memory, const BlockParams<T>& p,
                        const RunContext& ctx = {}) {
    if (!p.is_decoder()) throw std::invalid_argument("decoder_block: parameters have no cross-attention");
    std::size_t dm = p.self_attn.d_model;
    if (x.rank() != 3 || x.dim(2) != dm) {
        throw ShapeError("decoder_block: expected [S,N," + std::to_string(dm) + "], got " + to_string(x.shape()));
    }
    if (memory.rank() != 3 || memory.dim(2) != dm || memory.dim(0) != x.dim(0)) {
        throw ShapeError("decoder_block: memory " + to_string(memory.shape()) + " does not match decoder width " +
                         std::to_string(dm) + " for input " + to_string(x.shape()));
    }
    auto h = layer_norm(add(x, multi_head_attention(x, x, p.self_attn, ctx)), p.norms[0].gain, p.norms[0].bias);
    h = layer_norm(add(h, multi_head_attention(h, memory, p.cross_attn, ctx)), p.norms[1].gain, p.norms[1].bias);
    return layer_norm(add(h, feed_forward(h, p, ctx)), p.norms[2].gain, p.norms[2].bias);
}

/// Adds a learnable [c, N, p] position table to every variable slice of
/// x = [..., c, N, p, D].
template <typename T>
Tensor<T> add_position(const Tensor<T>& x, const Tensor<T>& pos) {
    std::size_t r = x.rank();
    if (r < 4 || pos.rank() != 3 || !std::equal(pos.shape().begin(), pos.shape().end(), x.shape().end() - 4)) {
        throw ShapeError("add_position: table " + to_string(pos.shape()) + " does not match embedding " +
                         to_string(x.shape()));
    }
    std::size_t d = x.dim(r - 1);
    auto ones = Tensor<T>::full({1, d}, T{1});
    auto expanded = matmul(reshape(pos, {pos.size(), 1}), ones);
    Shape shape = pos.shape();
    shape.push_back(d);
    return add(x, reshape(expanded, shape));
}

}  // namespace mtpnet
