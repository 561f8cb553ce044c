#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/matrix.hpp"

namespace mtpnet {

struct DecompositionConfig {
    std::vector<std::size_t> kernel_sizes{25};

    void validate() const {
        if (kernel_sizes.empty()) throw std::invalid_argument("decomposition: kernel_sizes must not be empty");
        for (auto k : kernel_sizes) {
            if (k == 0 || k % 2 == 0) {
                throw std::invalid_argument("decomposition: kernel size " + std::to_string(k) + " must be odd and >= 1");
            }
        }
    }
};

struct DecompositionOutput {
    Matrix seasonal;
    Matrix trend;
};

/// Centered per-column moving average. The first and last rows are
/// replicated (kernel-1)/2 times so the output keeps every row.
inline Matrix moving_average(const Matrix& x, std::size_t kernel) {
    if (kernel == 0 || kernel % 2 == 0) {
        throw std::invalid_argument("moving_average: kernel " + std::to_string(kernel) + " must be odd");
    }
    if (x.rows == 0) throw std::invalid_argument("moving_average: empty input");
    if (kernel > 2 * x.rows - 1) {
        throw std::invalid_argument("moving_average: kernel " + std::to_string(kernel) + " exceeds 2*rows-1 = " +
                                    std::to_string(2 * x.rows - 1));
    }
    const long half = static_cast<long>(kernel / 2);
    const long last = static_cast<long>(x.rows) - 1;
    Matrix out(x.rows, x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        for (long t = 0; t <= last; ++t) {
            double window = 0.0;
            for (long j = t - half; j <= t + half; ++j) window += x(static_cast<std::size_t>(std::clamp(j, 0L, last)), c);
            out(static_cast<std::size_t>(t), c) = window / static_cast<double>(kernel);
        }
    }
    return out;
}

/// Trend is the mean of the moving averages over every configured kernel;
/// seasonal is the remainder, so seasonal + trend reproduces the input.
inline DecompositionOutput decompose(const Matrix& x, const DecompositionConfig& cfg) {
    cfg.validate();
    if (x.rows == 0 || x.cols == 0) throw std::invalid_argument("decompose: input must be at least 1x1");
    Matrix trend(x.rows, x.cols);
    for (auto k : cfg.kernel_sizes) {
        Matrix ma = moving_average(x, k);
        for (std::size_t i = 0; i < trend.data.size(); ++i) trend.data[i] += ma.data[i];
    }
    for (auto& v : trend.data) v /= static_cast<double>(cfg.kernel_sizes.size());
    Matrix seasonal(x.rows, x.cols);
    for (std::size_t i = 0; i < x.data.size(); ++i) seasonal.data[i] = x.data[i] - trend.data[i];
    return {std::move(seasonal), std::move(trend)};
}

}  // namespace mtpnet
