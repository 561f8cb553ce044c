#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/decomposition.hpp"
#include "mtpnet/matrix.hpp"
#include "mtpnet/params.hpp"
#include "mtpnet/pyramid.hpp"

namespace mtpnet {

/// Which branch the pyramid serves.
enum class FrameworkMode { decomposed, trend_as_mtpnet, no_decomposition };

inline const char* to_string(FrameworkMode m) {
    switch (m) {
        case FrameworkMode::decomposed: return "decomposed";
        case FrameworkMode::trend_as_mtpnet: return "trend_as_mtpnet";
        case FrameworkMode::no_decomposition: return "no_decomposition";
    }
    return "?";
}

inline FrameworkMode parse_framework_mode(const std::string& s) {
    if (s == "decomposed") return FrameworkMode::decomposed;
    if (s == "trend_as_mtpnet") return FrameworkMode::trend_as_mtpnet;
    if (s == "no_decomposition") return FrameworkMode::no_decomposition;
    throw std::invalid_argument("unknown framework mode '" + s +
                                "' (expected decomposed, trend_as_mtpnet or no_decomposition)");
}

struct ModelConfig {
    PyramidConfig pyramid;
    DecompositionConfig decomposition;
    FrameworkMode mode = FrameworkMode::decomposed;
};

/// Stacks equally shaped matrices into a [B, rows, cols] tensor.
template <typename T>
Tensor<T> stack(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) throw std::invalid_argument("stack: no matrices");
    std::size_t r = blocks.front().rows, c = blocks.front().cols;
    std::vector<T> v;
    v.reserve(blocks.size() * r * c);
    for (const auto& m : blocks) {
        if (m.rows != r || m.cols != c) throw ShapeError("stack: matrices differ in shape");
        for (double x : m.data) v.push_back(static_cast<T>(x));
    }
    return Tensor<T>({blocks.size(), r, c}, std::move(v));
}

/// Linear map over time shared by every variable: [B, I, D] x [I, H] + [H] -> [B, H, D].
template <typename T>
Tensor<T> trend_linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() != 3 || weight.rank() != 2 || weight.dim(0) != x.dim(1) || bias.size() != weight.dim(1)) {
        throw ShapeError("trend_linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()) + " and bias " + to_string(bias.shape()));
    }
    auto y = add(matmul(permute(x, {0, 2, 1}), weight), bias);
    return permute(y, {0, 2, 1});
}

inline Matrix trend_linear(const Matrix& x, const Matrix& weight, const std::vector<double>& bias) {
    auto out = trend_linear(stack<double>({x}), Tensor<double>({weight.rows, weight.cols}, weight.data),
                            Tensor<double>({bias.size()}, bias));
    return Matrix(weight.cols, x.cols, std::vector<double>(out.values().begin(), out.values().end()));
}

/// Seasonal/trend composition: the input is decomposed, one branch goes
/// through the pyramid, the other through a linear map over time, and the
/// two predictions are summed.
template <typename T>
class ForecastModel {
   public:
    struct Branches {
        Tensor<T> seasonal;  // prediction from the seasonal branch
        Tensor<T> trend;     // prediction from the trend branch
        Tensor<T> forecast;
    };

    explicit ForecastModel(ModelConfig cfg, std::uint64_t seed = 1)
        : cfg_(std::move(cfg)), store_(seed), net_(cfg_.pyramid, store_) {
        cfg_.decomposition.validate();
        const auto& p = cfg_.pyramid;
        if (cfg_.mode != FrameworkMode::no_decomposition) {
            trend_w_ = store_.fan_in_uniform("linear.weight", {p.lookback, p.horizon}, p.lookback);
            trend_b_ = store_.fan_in_uniform("linear.bias", {p.horizon}, p.lookback);
        }
    }

    ForecastModel(const ForecastModel&) = delete;
    ForecastModel& operator=(const ForecastModel&) = delete;
    ForecastModel(ForecastModel&&) = default;

    const ModelConfig& config() const { return cfg_; }
    const ParamStore<T>& params() const { return store_; }
    const MTPNet<T>& net() const { return net_; }
    bool has_linear() const { return trend_w_.defined(); }
    const Tensor<T>& linear_weight() const { return trend_w_; }
    const Tensor<T>& linear_bias() const { return trend_b_; }

    Branches forward_branches(const std::vector<Matrix>& inputs, const RunContext& ctx = {}) const {
        const auto& p = cfg_.pyramid;
        for (const auto& m : inputs) {
            if (m.rows != p.lookback || m.cols != p.variables) {
                throw ShapeError("forecast: expected " + std::to_string(p.lookback) + "x" + std::to_string(p.variables) +
                                 " input, got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
            }
        }
        if (cfg_.mode == FrameworkMode::no_decomposition) {
            auto out = net_.forward(stack<T>(inputs), ctx);
            return {out, Tensor<T>(), out};
        }
        std::vector<Matrix> seasonal, trend;
        for (const auto& m : inputs) {
            auto parts = decompose(m, cfg_.decomposition);
            seasonal.push_back(std::move(parts.seasonal));
            trend.push_back(std::move(parts.trend));
        }
        Branches b;
        if (cfg_.mode == FrameworkMode::decomposed) {
            b.seasonal = net_.forward(stack<T>(seasonal), ctx);
            b.trend = trend_linear(stack<T>(trend), trend_w_, trend_b_);
        } else {
            b.seasonal = trend_linear(stack<T>(seasonal), trend_w_, trend_b_);
            b.trend = net_.forward(stack<T>(trend), ctx);
        }
        b.forecast = add(b.seasonal, b.trend);
        return b;
    }

    /// [B, H, D] predictions for a batch of look-back blocks.
    Tensor<T> forward(const std::vector<Matrix>& inputs, const RunContext& ctx = {}) const {
        return forward_branches(inputs, ctx).forecast;
    }

    Matrix forecast(const Matrix& x) const {
        auto out = forward({x});
        return Matrix(cfg_.pyramid.horizon, cfg_.pyramid.variables,
                      std::vector<double>(out.values().begin(), out.values().end()));
    }

   private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    MTPNet<T> net_;
    Tensor<T> trend_w_, trend_b_;
};

}  // namespace mtpnet
