#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtpnet {

/// Row-major time-by-variable block of plain values (no gradient tracking).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != r * c) {
            throw std::invalid_argument("Matrix: " + std::to_string(r) + "x" + std::to_string(c) + " needs " +
                                        std::to_string(r * c) + " values, got " + std::to_string(data.size()));
        }
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    /// Rows [start, start+count).
    Matrix block(std::size_t start, std::size_t count) const {
        if (start + count > rows) throw std::out_of_range("Matrix::block: rows out of range");
        return Matrix(count, cols, std::vector<double>(data.begin() + start * cols, data.begin() + (start + count) * cols));
    }

    bool operator==(const Matrix&) const = default;
};

}  // namespace mtpnet
