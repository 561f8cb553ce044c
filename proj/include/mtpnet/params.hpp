#pragma once

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/tensor.hpp"

namespace mtpnet {

/// Named learnable leaves, keyed by dotted path ("level.0.encoder.block.1.attn.q").
/// Iteration order is the lexicographic path order, which fixes every
/// reduction and serialization order.
template <typename T>
class ParamStore {
   public:
    using value_type = T;

    explicit ParamStore(std::uint64_t seed = 1) : rng_(seed) {}

    const Tensor<T>& add(const std::string& path, Shape shape, std::vector<T> values) {
        if (params_.count(path)) throw std::logic_error("ParamStore: duplicate parameter '" + path + "'");
        return params_.emplace(path, Tensor<T>::parameter(std::move(shape), std::move(values), path)).first->second;
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    const Tensor<T>& fan_in_uniform(const std::string& path, Shape shape, std::size_t fan_in) {
        return uniform(path, std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
    }

    const Tensor<T>& uniform(const std::string& path, Shape shape, double half_width) {
        std::uniform_real_distribution<double> dist(-half_width, half_width);
        std::vector<T> v(numel(shape));
        for (auto& x : v) x = static_cast<T>(dist(rng_));
        return add(path, std::move(shape), std::move(v));
    }

    const Tensor<T>& constant(const std::string& path, Shape shape, T value) {
        auto n = numel(shape);
        return add(path, std::move(shape), std::vector<T>(n, value));
    }

    const Tensor<T>& at(const std::string& path) const {
        auto it = params_.find(path);
        if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter '" + path + "'");
        return it->second;
    }
    bool contains(const std::string& path) const { return params_.count(path) != 0; }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) n += t.size();
        return n;
    }

    void zero_grad() const {
        for (const auto& [_, t] : params_) t.zero_grad();
    }

    /// Plain copy of every value, keyed by path.
    std::map<std::string, std::vector<double>> snapshot() const {
        std::map<std::string, std::vector<double>> out;
        for (const auto& [k, t] : params_) out[k] = std::vector<double>(t.values().begin(), t.values().end());
        return out;
    }

    void restore(const std::map<std::string, std::vector<double>>& values) const {
        for (const auto& [k, t] : params_) {
            auto it = values.find(k);
            if (it == values.end()) throw std::invalid_argument("restore: missing parameter '" + k + "'");
            auto dst = t.mutable_values();
            if (it->second.size() != dst.size()) {
                throw std::invalid_argument("restore: parameter '" + k + "' has " + std::to_string(dst.size()) +
                                            " values, got " + std::to_string(it->second.size()));
            }
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second[i]);
        }
    }

   private:
    std::map<std::string, Tensor<T>> params_;
    std::mt19937_64 rng_;
};

}  // namespace mtpnet
