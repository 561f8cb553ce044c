#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpnet/matrix.hpp"

namespace mtpnet {

struct RawSeries {
    std::vector<std::string> timestamps;
    Matrix values;                     // T_total x D
    std::vector<std::string> columns;  // D names, timestamp column excluded
    std::string index_name = "index";
};

namespace detail {

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* b = s.data();
    if (*b == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool is_integer(const std::string& s) {
    if (s.empty()) return false;
    for (std::size_t i = (s[0] == '-' ? 1 : 0); i < s.size(); ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return s != "-";
}

// Integer indices compare numerically, anything else (ISO-like dates) lexicographically.
inline bool strictly_before(const std::string& a, const std::string& b) {
    if (is_integer(a) && is_integer(b)) return std::stoll(a) < std::stoll(b);
    return a < b;
}

}  // namespace detail

/// Parses comma-separated text: a header row, then a timestamp/index column
/// followed by numeric columns. Rows and columns in errors are 1-based and
/// count the header as row 1.
inline RawSeries parse_csv(std::istream& is, const std::string& source = "<stream>") {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(source + ": empty file");
    auto header = detail::split_fields(line);
    if (header.size() < 2) throw std::runtime_error(source + ": need a timestamp column and at least one value column");
    RawSeries raw;
    raw.index_name = header[0];
    raw.columns.assign(header.begin() + 1, header.end());
    const std::size_t d = raw.columns.size();
    std::vector<double> values;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_fields(line);
        if (fields.size() != d + 1) {
            throw std::runtime_error(source + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                     " columns, expected " + std::to_string(d + 1));
        }
        if (!raw.timestamps.empty() && !detail::strictly_before(raw.timestamps.back(), fields[0])) {
            throw std::runtime_error(source + ": row " + std::to_string(row) + ": timestamp '" + fields[0] +
                                     "' does not increase after '" + raw.timestamps.back() + "'");
        }
        raw.timestamps.push_back(fields[0]);
        for (std::size_t j = 1; j <= d; ++j) {
            double v = 0;
            if (!detail::parse_double(fields[j], v)) {
                throw std::runtime_error(source + ": row " + std::to_string(row) + ", column " + std::to_string(j + 1) +
                                         " (" + raw.columns[j - 1] + "): cannot parse '" + fields[j] + "'");
            }
            values.push_back(v);
        }
    }
    if (raw.timestamps.empty()) throw std::runtime_error(source + ": no data rows");
    raw.values = Matrix(raw.timestamps.size(), d, std::move(values));
    return raw;
}

inline RawSeries load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error(path + ": cannot open for reading");
    return parse_csv(is, path);
}

inline void write_csv(std::ostream& os, const RawSeries& raw) {
    os << raw.index_name;
    for (const auto& c : raw.columns) os << ',' << c;
    os << '\n';
    char buf[32];
    for (std::size_t i = 0; i < raw.values.rows; ++i) {
        os << raw.timestamps.at(i);
        for (std::size_t j = 0; j < raw.values.cols; ++j) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, raw.values(i, j));
            os << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        os << '\n';
    }
}

inline void save_csv(const std::string& path, const RawSeries& raw) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error(path + ": cannot open for writing");
    write_csv(os, raw);
    if (!os) throw std::runtime_error(path + ": write failed");
}

/// Half-open row range.
struct Range {
    std::size_t begin = 0, end = 0;
    std::size_t size() const { return end - begin; }
};

struct SplitBundle {
    Range train, val, test;
    std::vector<double> mean, std;  // train-only column statistics
};

constexpr double kNormEps = 1e-8;

/// Chronological split at floor(cumulative ratio * T). `min_len` (usually
/// I + H) is the shortest split that still yields a window.
inline SplitBundle split(const Matrix& values, const std::array<double, 3>& ratios, std::size_t min_len = 0) {
    double total = 0;
    for (double r : ratios) {
        if (!(r > 0)) throw std::invalid_argument("split: ratios must be positive");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: ratios must sum to 1");
    const std::size_t t = values.rows;
    // The small guard keeps products like 0.6 * 17420 from landing just below an integer.
    auto boundary = [&](double cum) { return std::min(t, static_cast<std::size_t>(std::floor(cum * t + 1e-7))); };
    SplitBundle b;
    std::size_t b1 = boundary(ratios[0]), b2 = boundary(ratios[0] + ratios[1]);
    b.train = {0, b1};
    b.val = {b1, b2};
    b.test = {b2, t};
    const char* names[3] = {"train", "val", "test"};
    const Range* ranges[3] = {&b.train, &b.val, &b.test};
    for (int i = 0; i < 3; ++i) {
        if (ranges[i]->size() < std::max<std::size_t>(min_len, 1)) {
            throw std::invalid_argument(std::string("split: ") + names[i] + " split has " +
                                        std::to_string(ranges[i]->size()) + " rows, need at least " +
                                        std::to_string(std::max<std::size_t>(min_len, 1)) + " (lookback + horizon)");
        }
    }
    b.mean.assign(values.cols, 0.0);
    b.std.assign(values.cols, 0.0);
    const double n = static_cast<double>(b.train.size());
    for (std::size_t j = 0; j < values.cols; ++j) {
        double s = 0;
        for (std::size_t i = b.train.begin; i < b.train.end; ++i) s += values(i, j);
        double mu = s / n, ss = 0;
        for (std::size_t i = b.train.begin; i < b.train.end; ++i) ss += (values(i, j) - mu) * (values(i, j) - mu);
        b.mean[j] = mu;
        b.std[j] = std::sqrt(ss / n);
    }
    return b;
}

inline Matrix normalize(const Matrix& x, const SplitBundle& b) {
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - b.mean.at(j)) / (b.std.at(j) + kNormEps);
    return out;
}

inline Matrix denormalize(const Matrix& z, const SplitBundle& b) {
    Matrix out = z;
    for (std::size_t i = 0; i < z.rows; ++i)
        for (std::size_t j = 0; j < z.cols; ++j) out(i, j) = z(i, j) * (b.std.at(j) + kNormEps) + b.mean.at(j);
    return out;
}

struct SeriesWindow {
    Matrix input;   // I x D
    Matrix target;  // H x D
    std::size_t origin = 0;
};

/// Lazily materialized stride-s windows over one range of a shared series.
class WindowSet {
   public:
    WindowSet() = default;
    WindowSet(std::shared_ptr<const Matrix> series, Range range, std::size_t lookback, std::size_t horizon,
              std::size_t stride = 1)
        : series_(std::move(series)), range_(range), i_(lookback), h_(horizon), stride_(stride) {
        if (!series_) throw std::invalid_argument("windows: no series");
        if (lookback == 0 || horizon == 0 || stride == 0) {
            throw std::invalid_argument("windows: lookback, horizon and stride must be >= 1");
        }
        if (range.end > series_->rows || range.begin > range.end) throw std::invalid_argument("windows: range out of bounds");
        if (range.size() < lookback + horizon) {
            throw std::invalid_argument("windows: range of " + std::to_string(range.size()) + " rows is shorter than lookback " +
                                        std::to_string(lookback) + " + horizon " + std::to_string(horizon));
        }
        count_ = (range.size() - lookback - horizon) / stride + 1;
    }

    std::size_t size() const { return count_; }
    bool empty() const { return count_ == 0; }
    std::size_t lookback() const { return i_; }
    std::size_t horizon() const { return h_; }
    std::size_t variables() const { return series_ ? series_->cols : 0; }

    std::size_t origin(std::size_t k) const { return range_.begin + k * stride_; }

    Matrix input(std::size_t k) const { return series_->block(origin(k), i_); }
    Matrix target(std::size_t k) const { return series_->block(origin(k) + i_, h_); }

    SeriesWindow operator[](std::size_t k) const {
        if (k >= count_) throw std::out_of_range("windows: index " + std::to_string(k) + " of " + std::to_string(count_));
        return {input(k), target(k), origin(k)};
    }

   private:
    std::shared_ptr<const Matrix> series_;
    Range range_;
    std::size_t i_ = 0, h_ = 0, stride_ = 1, count_ = 0;
};

inline WindowSet windows(std::shared_ptr<const Matrix> series, Range range, std::size_t lookback, std::size_t horizon,
                         std::size_t stride = 1) {
    return WindowSet(std::move(series), range, lookback, horizon, stride);
}

struct SynthConfig {
    std::size_t length = 2048;
    std::size_t variables = 3;
    std::vector<double> periods{24, 96};
    std::vector<double> amplitudes{1.0, 1.0};
    double trend_slope = 0.0;
    double noise_std = 0.0;
    std::uint64_t seed = 1;
};

/// Sum of sinusoids with per-variable random phases, a linear trend and
/// Gaussian noise. Phases are drawn first (variable-major), then noise row-major.
inline RawSeries synth_multiseasonal(const SynthConfig& cfg) {
    if (cfg.periods.size() != cfg.amplitudes.size()) {
        throw std::invalid_argument("synth: " + std::to_string(cfg.periods.size()) + " periods but " +
                                    std::to_string(cfg.amplitudes.size()) + " amplitudes");
    }
    double longest = 0;
    for (double p : cfg.periods) {
        if (!(p > 0)) throw std::invalid_argument("synth: periods must be positive");
        longest = std::max(longest, p);
    }
    if (cfg.variables == 0) throw std::invalid_argument("synth: variables must be >= 1");
    if (static_cast<double>(cfg.length) < 2 * longest) {
        throw std::invalid_argument("synth: length " + std::to_string(cfg.length) + " is below twice the longest period");
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::vector<double> phase(cfg.variables * cfg.periods.size());
    for (auto& p : phase) p = phase_dist(rng);
    std::normal_distribution<double> noise(0.0, 1.0);

    RawSeries raw;
    raw.values = Matrix(cfg.length, cfg.variables);
    for (std::size_t d = 0; d < cfg.variables; ++d) raw.columns.push_back("v" + std::to_string(d));
    raw.timestamps.reserve(cfg.length);
    for (std::size_t t = 0; t < cfg.length; ++t) {
        raw.timestamps.push_back(std::to_string(t));
        for (std::size_t d = 0; d < cfg.variables; ++d) {
            double v = cfg.trend_slope * static_cast<double>(t);
            for (std::size_t j = 0; j < cfg.periods.size(); ++j) {
                v += cfg.amplitudes[j] *
                     std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / cfg.periods[j] + phase[d * cfg.periods.size() + j]);
            }
            if (cfg.noise_std > 0) v += cfg.noise_std * noise(rng);
            raw.values(t, d) = v;
        }
    }
    return raw;
}

}  // namespace mtpnet
