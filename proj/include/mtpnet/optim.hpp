#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/data.hpp"
#include "mtpnet/framework.hpp"
#include "mtpnet/params.hpp"
#include "mtpnet/tensor.hpp"

namespace mtpnet {

/// lr_min + (lr_max - lr_min) * (1 + cos(pi t / T)) / 2, clamped to lr_min past T.
inline double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min) {
    if (total == 0 || t >= total) return total == 0 && t == 0 ? lr_max : lr_min;
    double frac = static_cast<double>(t) / static_cast<double>(total);
    return lr_min + (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update of a flat parameter array; `t` is the 1-based step.
template <typename T>
void adam_update(std::span<T> theta, std::span<const T> grad, std::vector<T>& m, std::vector<T>& v, std::size_t t,
                 double lr, const AdamConfig& a = {}) {
    if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
        throw std::invalid_argument("adam: parameter, gradient and moment sizes differ");
    }
    const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = static_cast<double>(grad[i]);
        double mi = a.beta1 * static_cast<double>(m[i]) + (1.0 - a.beta1) * g;
        double vi = a.beta2 * static_cast<double>(v[i]) + (1.0 - a.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + a.eps));
    }
}

template <typename T>
struct AdamState {
    AdamConfig config;
    std::map<std::string, std::vector<T>> m, v;
    std::size_t t = 0;
};

/// Applies one Adam step to every parameter in the store using its current gradient
/// (a parameter that received no gradient is treated as having gradient zero).
template <typename T>
void adam_step(const ParamStore<T>& store, AdamState<T>& state, double lr) {
    ++state.t;
    for (const auto& [path, p] : store) {
        auto& m = state.m[path];
        auto& v = state.v[path];
        if (m.empty()) {
            m.assign(p.size(), T{0});
            v.assign(p.size(), T{0});
        }
        std::vector<T> zeros;
        std::span<const T> g = p.grad();
        if (g.size() != p.size()) {
            zeros.assign(p.size(), T{0});
            g = zeros;
        }
        adam_update<T>(p.mutable_values(), g, m, v, state.t, lr, state.config);
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamStore<T>& store, double max_norm) {
    double sq = 0;
    for (const auto& [_, p] : store)
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        double s = max_norm / norm;
        for (const auto& [_, p] : store) {
            auto* grad = &p.node()->grad;
            for (auto& g : *grad) g = static_cast<T>(static_cast<double>(g) * s);
        }
    }
    return norm;
}

struct TrainConfig {
    std::size_t batch_size = 32;
    double lr_max = 1e-3;
    double lr_min = 1e-6;
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    std::size_t patience = 5;  // 0 disables early stopping
    double grad_clip = 0.0;    // 0 disables clipping

    void validate() const {
        if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
        if (lr_max < 0 || lr_min < 0) throw std::invalid_argument("learning rates must be non-negative");
        if (lr_min > lr_max) throw std::invalid_argument("lr_min exceeds lr_max");
        if (grad_clip < 0) throw std::invalid_argument("grad_clip must be >= 0");
    }
};

struct HistoryRow {
    std::size_t epoch = 0;
    double train_l1 = 0;
    double val_l1 = 0;
    double lr = 0;  // rate of the epoch's first step
};

struct TrainResult {
    std::vector<HistoryRow> history;
    std::vector<double> lr_trace;  // one entry per optimizer step
    std::size_t best_epoch = 0;    // 1-based; 0 when no epoch ran
    double best_val_l1 = std::numeric_limits<double>::infinity();
    bool stopped_early = false;
};

class TrainingError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

inline void write_history(std::ostream& os, const std::vector<HistoryRow>& rows) {
    os << "epoch,train_l1,val_l1,lr\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_l1, r.val_l1, r.lr);
        os << buf;
    }
}

/// Indexed (input, target) pairs; WindowSet is the usual one.
template <typename W>
concept WindowSource = requires(const W& w, std::size_t k) {
    { w.size() } -> std::convertible_to<std::size_t>;
    { w.input(k) } -> std::convertible_to<Matrix>;
    { w.target(k) } -> std::convertible_to<Matrix>;
    { w.origin(k) } -> std::convertible_to<std::size_t>;
};

/// Anything with a parameter store and a batched forward over look-back blocks.
template <typename M>
concept Trainable = requires(const M& m, const std::vector<Matrix>& xs, const RunContext& ctx) {
    { m.params() };
    { m.forward(xs, ctx) };
};

namespace detail {

template <typename M>
RunContext training_context(const M& model, std::mt19937_64* rng) {
    if constexpr (requires { model.config().pyramid.dropout; }) return {model.config().pyramid.dropout, rng};
    else return {0.0, rng};
}

template <typename T, typename W>
Tensor<T> stack_targets(const W& w, std::span<const std::size_t> idx) {
    std::vector<Matrix> ts;
    ts.reserve(idx.size());
    for (auto k : idx) ts.push_back(w.target(k));
    return stack<T>(ts);
}

}  // namespace detail

/// Windows per forward pass during evaluation.
constexpr std::size_t kEvalBatch = 64;

/// Mean L1 error over every element of every window, evaluated without dropout.
template <Trainable M, WindowSource W>
double mean_l1(const M& model, const W& w, std::size_t batch_size = kEvalBatch) {
    double total = 0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < w.size(); start += batch_size) {
        std::vector<Matrix> xs;
        for (std::size_t k = start; k < std::min(w.size(), start + batch_size); ++k) xs.push_back(w.input(k));
        auto pred = model.forward(xs, RunContext{});
        std::size_t at = 0;
        for (std::size_t k = start; k < start + xs.size(); ++k)
            for (double y : w.target(k).data) total += std::abs(static_cast<double>(pred[at++]) - y);
        count += at;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

/// Mini-batch Adam with a per-step cosine schedule, validation L1 after every
/// epoch, early stopping, and restoration of the best-validation parameters.
template <Trainable M, WindowSource W>
TrainResult train(M& model, const W& train_w, const W& val_w, const TrainConfig& cfg,
                  const std::function<void(const HistoryRow&)>& on_epoch = {}) {
    using T = typename std::decay_t<decltype(model.params())>::value_type;
    cfg.validate();
    if (train_w.size() == 0 || val_w.size() == 0) throw std::invalid_argument("train: empty training or validation windows");
    const auto& store = model.params();
    TrainResult result;
    if (cfg.epochs == 0) return result;

    const std::size_t n = train_w.size();
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches;
    const std::size_t last_step = total_steps > 1 ? total_steps - 1 : 1;

    std::mt19937_64 shuffle_rng(cfg.seed);
    std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const RunContext ctx = detail::training_context(model, &dropout_rng);
    AdamState<T> adam;
    auto best = store.snapshot();
    std::size_t since_best = 0, step = 0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0;
        HistoryRow row;
        row.epoch = epoch;
        row.lr = cosine_lr(step, last_step, cfg.lr_max, cfg.lr_min);
        for (std::size_t b = 0; b < batches; ++b) {
            std::span<const std::size_t> idx(order.data() + b * cfg.batch_size,
                                             std::min(cfg.batch_size, n - b * cfg.batch_size));
            std::vector<Matrix> xs;
            xs.reserve(idx.size());
            for (auto k : idx) xs.push_back(train_w.input(k));
            store.zero_grad();
            auto loss = l1_loss(model.forward(xs, ctx), detail::stack_targets<T>(train_w, idx));
            double value = static_cast<double>(loss.item());
            if (!std::isfinite(value)) {
                throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch index " +
                                    std::to_string(b) + " (first window origin " +
                                    std::to_string(train_w.origin(idx.front())) + ")");
            }
            backward(loss);
            if (cfg.grad_clip > 0) clip_grad_norm(store, cfg.grad_clip);
            double lr = cosine_lr(step, last_step, cfg.lr_max, cfg.lr_min);
            result.lr_trace.push_back(lr);
            adam_step(store, adam, lr);
            loss_sum += value * static_cast<double>(idx.size());
            ++step;
        }
        row.train_l1 = loss_sum / static_cast<double>(n);
        row.val_l1 = mean_l1(model, val_w);
        if (!std::isfinite(row.val_l1)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
        result.history.push_back(row);
        if (on_epoch) on_epoch(row);
        if (row.val_l1 < result.best_val_l1) {
            result.best_val_l1 = row.val_l1;
            result.best_epoch = epoch;
            best = store.snapshot();
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            result.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    store.restore(best);
    return result;
}

}  // namespace mtpnet
