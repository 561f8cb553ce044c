#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mtpnet/tensor.hpp"

namespace mtpnet {

/// Largest |analytic - numeric| / max(1, |analytic|, |numeric|) over every
/// element of `inputs`, using central differences of width 2*step.
/// `f` must rebuild its graph from the current leaf values on every call.
template <typename T>
double grad_check(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& inputs, T step = T(1e-5)) {
    for (const auto& x : inputs) x.zero_grad();
    backward(f());
    std::vector<std::vector<T>> analytic;
    for (const auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto vals = inputs[t].mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            T saved = vals[i];
            vals[i] = saved + step;
            T up = f().item();
            vals[i] = saved - step;
            T down = f().item();
            vals[i] = saved;
            double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(step));
            double a = static_cast<double>(analytic[t][i]);
            double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, T step = T(1e-5)) {
    Tensor<T> leaf = x.requires_grad() ? x : Tensor<T>::parameter(x.shape(), {x.values().begin(), x.values().end()}, "x");
    return grad_check<T>([&] { return f(leaf); }, std::vector<Tensor<T>>{leaf}, step);
}

}  // namespace mtpnet
