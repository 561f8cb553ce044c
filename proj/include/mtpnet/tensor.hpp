#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mtpnet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents that require grad.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
};

/// Handle to a dense row-major array that may take part in reverse-mode
/// differentiation. Copies share the same node.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel(shape) != values.size()) {
            throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                             std::to_string(numel(shape)) + " elements, got " +
                             std::to_string(values.size()));
        }
        for (auto d : shape) {
            if (d == 0) throw ShapeError("tensor: zero-length dimension in " + to_string(shape));
        }
        node_ = std::make_shared<Node<T>>();
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T{0}));
    }
    static Tensor full(Shape shape, T v) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v));
    }
    static Tensor scalar(T v) { return Tensor(Shape{1}, {v}); }

    /// Named leaf that receives gradients.
    static Tensor parameter(Shape shape, std::vector<T> values, std::string name) {
        Tensor t(std::move(shape), std::move(values), true);
        t.node_->name = std::move(name);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::span<const T> values() const { return node_->value; }
    T operator[](std::size_t i) const { return node_->value[i]; }
    T item() const {
        if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
        return node_->value[0];
    }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }

    std::span<const T> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() const { node_->grad.assign(node_->value.size(), T{0}); }

    /// Writable storage; only leaves may be mutated so recorded graphs stay valid.
    std::span<T> mutable_values() const {
        if (!node_->is_leaf()) throw std::logic_error("mutable_values: tensor '" + name() + "' is not a leaf");
        return node_->value;
    }

    /// Copy of the values with no graph attached.
    Tensor detach() const { return Tensor(shape(), node_->value); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

   private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
    Tensor<T> out(std::move(shape), std::move(values));
    bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
    if (needs) {
        auto* n = out.node();
        n->requires_grad = true;
        for (auto& in : inputs) n->parents.push_back(in.node_ptr());
        n->backward_fn = std::move(backward);
    }
    return out;
}

template <typename T>
inline std::vector<T>* grad_of(Node<T>& n, std::size_t i) {
    auto& p = *n.parents[i];
    return p.requires_grad ? &p.grad : nullptr;
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
    long r = static_cast<long>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(axis);
}

// Shape of the elementwise result; the smaller operand must equal a suffix of
// the larger once its leading 1s are dropped.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return a;
    auto na = numel(a), nb = numel(b);
    if (nb == 1) return a;
    if (na == 1) return b;
    const Shape& big = na >= nb ? a : b;
    const Shape& small = na >= nb ? b : a;
    auto first = std::find_if(small.begin(), small.end(), [](std::size_t d) { return d != 1; });
    Shape core(first, small.end());
    if (core.size() <= big.size() && std::equal(core.rbegin(), core.rend(), big.rbegin())) return big;
    throw ShapeError(std::string(op) + ": cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
}

template <typename T, typename F, typename Da, typename Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, Da dfa, Db dfb) {
    Shape shape = broadcast_shape(a.shape(), b.shape(), op);
    std::size_t n = numel(shape), na = a.size(), nb = b.size();
    std::vector<T> out(n);
    const T* av = a.values().data();
    const T* bv = b.values().data();
    // One operand spans the result; the other repeats every `na` or `nb` elements.
    if (na == n) {
        for (std::size_t base = 0; base < n; base += nb)
            for (std::size_t j = 0; j < nb; ++j) out[base + j] = f(av[base + j], bv[j]);
    } else {
        for (std::size_t base = 0; base < n; base += na)
            for (std::size_t j = 0; j < na; ++j) out[base + j] = f(av[j], bv[base + j]);
    }
    return make_result<T>(std::move(shape), std::move(out), {a, b}, [n, na, nb, dfa, dfb](Node<T>& self) {
        const T* av = self.parents[0]->value.data();
        const T* bv = self.parents[1]->value.data();
        auto* ga = grad_of(self, 0);
        auto* gb = grad_of(self, 1);
        const T* g = self.grad.data();
        const std::size_t period = na == n ? nb : na;
        for (std::size_t base = 0; base < n; base += period) {
            for (std::size_t j = 0; j < period; ++j) {
                std::size_t i = base + j, ia = na == n ? i : j, ib = na == n ? j : i;
                if (ga) (*ga)[ia] += g[i] * dfa(av[ia], bv[ib]);
                if (gb) (*gb)[ib] += g[i] * dfb(av[ia], bv[ib]);
            }
        }
    });
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F f, D df) {
    std::vector<T> out(a.size());
    auto av = a.values();
    std::transform(av.begin(), av.end(), out.begin(), f);
    return make_result<T>(a.shape(), std::move(out), {a}, [df](Node<T>& self) {
        const auto& x = self.parents[0]->value;
        auto* ga = grad_of(self, 0);
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * df(x[i], self.value[i]);
    });
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Flat source index for every output position of a permutation.
inline std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& axes, Shape& out_shape) {
    std::size_t r = in.size();
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
    out_shape.resize(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
    std::size_t n = numel(in);
    std::vector<std::size_t> index(n);
    std::vector<std::size_t> counter(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
        index[o] = src;
        for (std::size_t d = r; d-- > 0;) {
            ++counter[d];
            src += in_strides[axes[d]];
            if (counter[d] < out_shape[d]) break;
            src -= in_strides[axes[d]] * out_shape[d];
            counter[d] = 0;
        }
    }
    return index;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
                          [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
                          [](T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                          [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return detail::unary(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

/// |x| with subgradient 0 at 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    return detail::unary(a, [](T x) { return std::abs(x); },
                         [](T x, T) { return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary(a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return detail::unary(
        a, [](T x) { return T(0.5) * x * (T{1} + std::erf(x * inv_sqrt2)); },
        [](T x, T) { return T(0.5) * (T{1} + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s{0};
    for (T v : a.values()) s += v;
    return detail::make_result<T>(Shape{1}, {s}, {a}, [](Node<T>& self) {
        auto* ga = detail::grad_of(self, 0);
        for (auto& g : *ga) g += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product over the last two dimensions. `b` is either a plain matrix
/// shared by every batch slice of `a`, or carries the same leading dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    bool shared = b.rank() == 2;
    if (!shared && !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin(), b.shape().end() - 2)) {
        throw ShapeError("matmul: batch dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    if (!shared && a.rank() != b.rank()) {
        throw ShapeError("matmul: rank mismatch, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    std::size_t batch = a.size() / (m * k);
    Shape shape(a.shape().begin(), a.shape().end() - 1);
    shape.push_back(n);
    std::vector<T> out(batch * m * n);
    using CM = detail::ConstMatMap<T>;
    using MM = detail::MatMap<T>;
    if (shared) {
        MM(out.data(), batch * m, n).noalias() = CM(a.values().data(), batch * m, k) * CM(b.values().data(), k, n);
    } else {
        for (std::size_t s = 0; s < batch; ++s) {
            MM(out.data() + s * m * n, m, n).noalias() =
                CM(a.values().data() + s * m * k, m, k) * CM(b.values().data() + s * k * n, k, n);
        }
    }
    return detail::make_result<T>(std::move(shape), std::move(out), {a, b}, [=](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        auto* ga = detail::grad_of(self, 0);
        auto* gb = detail::grad_of(self, 1);
        if (shared) {
            CM dc(self.grad.data(), batch * m, n);
            if (ga) MM(ga->data(), batch * m, k).noalias() += dc * CM(bv.data(), k, n).transpose();
            if (gb) MM(gb->data(), k, n).noalias() += CM(av.data(), batch * m, k).transpose() * dc;
            return;
        }
        for (std::size_t s = 0; s < batch; ++s) {
            CM dc(self.grad.data() + s * m * n, m, n);
            if (ga) MM(ga->data() + s * m * k, m, k).noalias() += dc * CM(bv.data() + s * k * n, k, n).transpose();
            if (gb) MM(gb->data() + s * k * n, k, n).noalias() += CM(av.data() + s * m * k, m, k).transpose() * dc;
        }
    });
}

/// x W + b over the last dimension of x, with W [k, n] and b [n] shared by all rows.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() < 1 || w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0) || b.size() != w.dim(1)) {
        throw ShapeError("affine: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()) + " and bias " +
                         to_string(b.shape()) + " do not fit");
    }
    const std::size_t k = w.dim(0), n = w.dim(1), rows = x.size() / k;
    Shape shape = x.shape();
    shape.back() = n;
    std::vector<T> out(rows * n);
    using CM = detail::ConstMatMap<T>;
    using MM = detail::MatMap<T>;
    using CV = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
    MM(out.data(), rows, n).noalias() = CM(x.values().data(), rows, k) * CM(w.values().data(), k, n);
    MM(out.data(), rows, n).rowwise() += CV(b.values().data(), n);
    return detail::make_result<T>(std::move(shape), std::move(out), {x, w, b}, [rows, k, n](Node<T>& self) {
        CM g(self.grad.data(), rows, n);
        if (auto* gx = detail::grad_of(self, 0))
            MM(gx->data(), rows, k).noalias() += g * CM(self.parents[1]->value.data(), k, n).transpose();
        if (auto* gw = detail::grad_of(self, 1))
            MM(gw->data(), k, n).noalias() += CM(self.parents[0]->value.data(), rows, k).transpose() * g;
        if (auto* gb = detail::grad_of(self, 2)) {
            // Plain row order: Eigen's column reduction varies with buffer alignment.
            const T* gr = self.grad.data();
            for (std::size_t r = 0; r < rows; ++r, gr += n)
                for (std::size_t j = 0; j < n; ++j) (*gb)[j] += gr[j];
        }
    });
}

/// a b^T over the last two dimensions for operands with equal leading dimensions.
template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || a.rank() != b.rank() || a.dim(a.rank() - 1) != b.dim(b.rank() - 1) ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
        throw ShapeError("matmul_transposed: cannot multiply " + to_string(a.shape()) + " by the transpose of " +
                         to_string(b.shape()));
    }
    const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1), n = b.dim(b.rank() - 2);
    const std::size_t batch = a.size() / (m * k);
    Shape shape(a.shape().begin(), a.shape().end() - 1);
    shape.push_back(n);
    std::vector<T> out(batch * m * n);
    using CM = detail::ConstMatMap<T>;
    using MM = detail::MatMap<T>;
    for (std::size_t s = 0; s < batch; ++s) {
        MM(out.data() + s * m * n, m, n).noalias() =
            CM(a.values().data() + s * m * k, m, k) * CM(b.values().data() + s * n * k, n, k).transpose();
    }
    return detail::make_result<T>(std::move(shape), std::move(out), {a, b}, [=](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        auto* ga = detail::grad_of(self, 0);
        auto* gb = detail::grad_of(self, 1);
        for (std::size_t s = 0; s < batch; ++s) {
            CM dc(self.grad.data() + s * m * n, m, n);
            if (ga) MM(ga->data() + s * m * k, m, k).noalias() += dc * CM(bv.data() + s * n * k, n, k);
            if (gb) MM(gb->data() + s * n * k, n, k).noalias() += dc.transpose() * CM(av.data() + s * m * k, m, k);
        }
    });
}

// ---------------------------------------------------------------------------
// Index remapping

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    std::vector<T> out(a.values().begin(), a.values().end());
    return detail::make_result<T>(std::move(shape), std::move(out), {a}, [](Node<T>& self) {
        auto* ga = detail::grad_of(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
    if (axes.size() != a.rank()) throw ShapeError("permute: axis list length differs from rank of " + to_string(a.shape()));
    std::vector<bool> seen(axes.size(), false);
    for (auto ax : axes) {
        if (ax >= axes.size() || seen[ax]) throw ShapeError("permute: invalid axis permutation");
        seen[ax] = true;
    }
    Shape shape;
    // Copy whole rows when the last axis stays in place.
    const std::size_t r = a.rank();
    const std::size_t run = axes.back() == r - 1 ? a.shape().back() : 1;
    std::shared_ptr<std::vector<std::size_t>> index;
    if (run > 1) {
        Shape outer(a.shape().begin(), a.shape().end() - 1), outer_shape;
        std::vector<std::size_t> outer_axes(axes.begin(), axes.end() - 1);
        index = std::make_shared<std::vector<std::size_t>>(detail::permute_index(outer, outer_axes, outer_shape));
        shape = outer_shape;
        shape.push_back(run);
    } else {
        index = std::make_shared<std::vector<std::size_t>>(detail::permute_index(a.shape(), axes, shape));
    }
    std::vector<T> out(a.size());
    const T* av = a.values().data();
    const std::size_t blocks = index->size();
    for (std::size_t o = 0; o < blocks; ++o) std::copy_n(av + (*index)[o] * run, run, out.data() + o * run);
    return detail::make_result<T>(std::move(shape), std::move(out), {a}, [index, run, blocks](Node<T>& self) {
        auto* ga = detail::grad_of(self, 0);
        for (std::size_t o = 0; o < blocks; ++o) {
            T* dst = ga->data() + (*index)[o] * run;
            const T* src = self.grad.data() + o * run;
            for (std::size_t j = 0; j < run; ++j) dst[j] += src[j];
        }
    });
}

/// Swaps the last two dimensions.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis_in) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    std::size_t axis = detail::normalize_axis(axis_in, ref.size());
    Shape shape = ref;
    shape[axis] = 0;
    for (const auto& p : parts) {
        bool ok = p.rank() == ref.size();
        for (std::size_t d = 0; ok && d < ref.size(); ++d) ok = d == axis || p.dim(d) == ref[d];
        if (!ok) throw ShapeError("concat: " + to_string(p.shape()) + " does not match " + to_string(ref) + " off axis " + std::to_string(axis));
        shape[axis] += p.dim(axis);
    }
    std::size_t outer = numel(Shape(ref.begin(), ref.begin() + axis));
    std::size_t inner = numel(Shape(ref.begin() + axis + 1, ref.end()));
    std::size_t row = shape[axis] * inner;
    std::vector<std::size_t> offsets;
    std::vector<T> out(numel(shape));
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::size_t chunk = p.dim(axis) * inner;
        auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o) std::copy_n(pv.begin() + o * chunk, chunk, out.begin() + o * row + off);
        off += chunk;
    }
    return detail::make_result<T>(std::move(shape), std::move(out), parts, [outer, row, offsets](Node<T>& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            auto* g = detail::grad_of(self, i);
            if (!g) continue;
            std::size_t chunk = g->size() / outer;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < chunk; ++j) (*g)[o * chunk + j] += self.grad[o * row + offsets[i] + j];
        }
    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, long axis_in, std::size_t start, std::size_t length) {
    std::size_t axis = detail::normalize_axis(axis_in, a.rank());
    if (length == 0 || start + length > a.dim(axis)) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis " + std::to_string(axis) + " of " + to_string(a.shape()));
    }
    Shape shape = a.shape();
    shape[axis] = length;
    std::size_t outer = numel(Shape(shape.begin(), shape.begin() + axis));
    std::size_t inner = numel(Shape(shape.begin() + axis + 1, shape.end()));
    std::size_t src_row = a.dim(axis) * inner, chunk = length * inner, skip = start * inner;
    std::vector<T> out(outer * chunk);
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(av.begin() + o * src_row + skip, chunk, out.begin() + o * chunk);
    return detail::make_result<T>(std::move(shape), std::move(out), {a}, [=](Node<T>& self) {
        auto* ga = detail::grad_of(self, 0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < chunk; ++j) (*ga)[o * src_row + skip + j] += self.grad[o * chunk + j];
    });
}

/// Prepends `count` zero entries along `axis`.
template <typename T>
Tensor<T> pad_front(const Tensor<T>& a, long axis_in, std::size_t count) {
    if (count == 0) return a;
    std::size_t axis = detail::normalize_axis(axis_in, a.rank());
    Shape zshape = a.shape();
    zshape[axis] = count;
    return concat<T>({Tensor<T>::zeros(zshape), a}, static_cast<long>(axis));
}

// ---------------------------------------------------------------------------
// Normalization and attention primitives

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, long axis_in = -1) {
    std::size_t axis = detail::normalize_axis(axis_in, a.rank());
    std::size_t len = a.dim(axis);
    std::size_t inner = numel(Shape(a.shape().begin() + axis + 1, a.shape().end()));
    std::size_t outer = a.size() / (len * inner);
    std::vector<T> out(a.size());
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t base = o * len * inner + i;
            T mx = av[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, av[base + j * inner]);
            T total{0};
            for (std::size_t j = 0; j < len; ++j) {
                T e = std::exp(av[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    return detail::make_result<T>(a.shape(), std::move(out), {a}, [=](Node<T>& self) {
        auto* ga = detail::grad_of(self, 0);
        const auto& y = self.value;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                std::size_t base = o * len * inner + i;
                T dot{0};
                for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    std::size_t idx = base + j * inner;
                    (*ga)[idx] += y[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

/// Normalizes over the last dimension with biased variance, then applies
/// the elementwise affine `gain`, `bias` (both of that length).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
    std::size_t len = x.dim(x.rank() - 1);
    if (gain.size() != len || bias.size() != len) {
        throw ShapeError("layer_norm: gain/bias length must be " + std::to_string(len));
    }
    if (!(eps > T{0})) throw std::invalid_argument("layer_norm: eps must be positive");
    std::size_t rows = x.size() / len;
    std::vector<T> out(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * len;
        T mu{0};
        for (std::size_t j = 0; j < len; ++j) mu += row[j];
        mu /= static_cast<T>(len);
        T var{0};
        for (std::size_t j = 0; j < len; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(len);
        T rs = T{1} / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < len; ++j) {
            T h = (row[j] - mu) * rs;
            (*xhat)[r * len + j] = h;
            out[r * len + j] = h * gv[j] + bv[j];
        }
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x, gain, bias}, [=](Node<T>& self) {
        auto* gx = detail::grad_of(self, 0);
        auto* gg = detail::grad_of(self, 1);
        auto* gb = detail::grad_of(self, 2);
        const auto& gain_v = self.parents[1]->value;
        std::vector<T> dyh(len);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* dy = self.grad.data() + r * len;
            const T* h = xhat->data() + r * len;
            if (gg)
                for (std::size_t j = 0; j < len; ++j) (*gg)[j] += dy[j] * h[j];
            if (gb)
                for (std::size_t j = 0; j < len; ++j) (*gb)[j] += dy[j];
            if (!gx) continue;
            T m1{0}, m2{0};
            for (std::size_t j = 0; j < len; ++j) {
                dyh[j] = dy[j] * gain_v[j];
                m1 += dyh[j];
                m2 += dyh[j] * h[j];
            }
            m1 /= static_cast<T>(len);
            m2 /= static_cast<T>(len);
            for (std::size_t j = 0; j < len; ++j) (*gx)[r * len + j] += (*rstd)[r] * (dyh[j] - m1 - h[j] * m2);
        }
    });
}

/// 2-D cross-correlation with zero padding and unit stride.
/// x: [cin, H, W] or [B, cin, H, W]; kernel: [cout, cin, kh, kw]; bias: [cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t pad_h,
                 std::size_t pad_w) {
    if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [cout,cin,kh,kw], got " + to_string(kernel.shape()));
    if (x.rank() != 3 && x.rank() != 4) throw ShapeError("conv2d: input must be [cin,H,W] or [B,cin,H,W], got " + to_string(x.shape()));
    bool batched = x.rank() == 4;
    std::size_t batch = batched ? x.dim(0) : 1;
    std::size_t cin = x.dim(x.rank() - 3), h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != cin) {
        throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input " + to_string(x.shape()) + " has " + std::to_string(cin));
    }
    if (kh > h + 2 * pad_h || kw > w + 2 * pad_w) {
        throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " + to_string(x.shape()));
    }
    bool has_bias = bias.defined();
    if (has_bias && bias.size() != cout) throw ShapeError("conv2d: bias length must equal output channels");
    std::size_t oh = h + 2 * pad_h - kh + 1, ow = w + 2 * pad_w - kw + 1;
    Shape shape = batched ? Shape{batch, cout, oh, ow} : Shape{cout, oh, ow};
    std::vector<T> out(numel(shape), T{0});
    auto xv = x.values();
    auto kv = kernel.values();
    if (kh == 1 && kw == 1 && pad_h == 0 && pad_w == 0) {
        // Pointwise kernel: one [cout, cin] x [cin, H*W] product per batch entry.
        using CM = detail::ConstMatMap<T>;
        using MM = detail::MatMap<T>;
        const std::size_t hw = h * w;
        for (std::size_t b = 0; b < batch; ++b)
            MM(out.data() + b * cout * hw, cout, hw).noalias() = CM(kv.data(), cout, cin) * CM(xv.data() + b * cin * hw, cin, hw);
        if (has_bias) {
            auto bv = bias.values();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t co = 0; co < cout; ++co) {
                    T* row = out.data() + (b * cout + co) * hw;
                    for (std::size_t q = 0; q < hw; ++q) row[q] += bv[co];
                }
        }
        std::vector<Tensor<T>> inputs{x, kernel};
        if (has_bias) inputs.push_back(bias);
        return detail::make_result<T>(std::move(shape), std::move(out), std::move(inputs), [=](Node<T>& self) {
            const auto& xv = self.parents[0]->value;
            const auto& kv = self.parents[1]->value;
            auto* gx = detail::grad_of(self, 0);
            auto* gk = detail::grad_of(self, 1);
            for (std::size_t b = 0; b < batch; ++b) {
                CM g(self.grad.data() + b * cout * hw, cout, hw);
                if (gx) MM(gx->data() + b * cin * hw, cin, hw).noalias() += CM(kv.data(), cout, cin).transpose() * g;
                if (gk) MM(gk->data(), cout, cin).noalias() += g * CM(xv.data() + b * cin * hw, cin, hw).transpose();
            }
            if (has_bias) {
                if (auto* gb = detail::grad_of(self, 2))
                    for (std::size_t b = 0; b < batch; ++b)
                        for (std::size_t co = 0; co < cout; ++co) {
                            const T* row = self.grad.data() + (b * cout + co) * hw;
                            T acc{0};
                            for (std::size_t q = 0; q < hw; ++q) acc += row[q];
                            (*gb)[co] += acc;
                        }
            }
        });
    }
    // Visits every contiguous output row segment for each (input channel, weight) pair:
    // fn(output offset, input offset, length, weight index).
    auto visit = [=](auto&& fn) {
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j) {
                            std::size_t kidx = ((co * cin + ci) * kh + i) * kw + j;
                            std::size_t x_lo = pad_w > j ? pad_w - j : 0;
                            std::size_t x_hi = std::min(ow, w + pad_w - j);
                            if (x_lo >= x_hi) continue;
                            for (std::size_t y = 0; y < oh; ++y) {
                                long sy = static_cast<long>(y + i) - static_cast<long>(pad_h);
                                if (sy < 0 || sy >= static_cast<long>(h)) continue;
                                std::size_t orow = ((b * cout + co) * oh + y) * ow;
                                std::size_t irow = ((b * cin + ci) * h + static_cast<std::size_t>(sy)) * w;
                                fn(orow + x_lo, irow + x_lo + j - pad_w, x_hi - x_lo, kidx);
                            }
                        }
    };
    visit([&](std::size_t o, std::size_t in, std::size_t len, std::size_t k) {
        const T kk = kv[k];
        for (std::size_t q = 0; q < len; ++q) out[o + q] += xv[in + q] * kk;
    });
    if (has_bias) {
        auto bv = bias.values();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t p = 0; p < oh * ow; ++p) out[(b * cout + co) * oh * ow + p] += bv[co];
    }
    std::vector<Tensor<T>> inputs{x, kernel};
    if (has_bias) inputs.push_back(bias);
    return detail::make_result<T>(std::move(shape), std::move(out), std::move(inputs), [=](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& kv = self.parents[1]->value;
        auto* gx = detail::grad_of(self, 0);
        auto* gk = detail::grad_of(self, 1);
        visit([&](std::size_t o, std::size_t in, std::size_t len, std::size_t k) {
            const T* g = self.grad.data() + o;
            if (gx) {
                const T kk = kv[k];
                T* dst = gx->data() + in;
                for (std::size_t q = 0; q < len; ++q) dst[q] += g[q] * kk;
            }
            if (gk) {
                T acc{0};
                const T* src = xv.data() + in;
                for (std::size_t q = 0; q < len; ++q) acc += g[q] * src[q];
                (*gk)[k] += acc;
            }
        });
        if (has_bias) {
            auto* gb = detail::grad_of(self, 2);
            if (!gb) return;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t p = 0; p < oh * ow; ++p) (*gb)[co] += self.grad[(b * cout + co) * oh * ow + p];
        }
    });
}

/// Inverted dropout; identity when `rate` is 0 or `rng` is null.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, std::mt19937_64* rng) {
    if (rate <= 0.0 || rng == nullptr) return a;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    // Each 64-bit draw yields four 16-bit uniforms; keep when one falls below (1 - rate) * 2^16.
    const auto threshold = static_cast<std::uint32_t>(std::lround((1.0 - rate) * 65536.0));
    T s = T(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(a.size());
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < mask->size(); ++i) {
        if (i % 4 == 0) bits = (*rng)();
        (*mask)[i] = static_cast<std::uint32_t>(bits & 0xffffu) < threshold ? s : T{0};
        bits >>= 16;
    }
    std::vector<T> out(a.size());
    const T* av = a.values().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * (*mask)[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a}, [mask](Node<T>& self) {
        auto* ga = detail::grad_of(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * (*mask)[i];
    });
}

/// Mean absolute difference; the subgradient at a tie is 0.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("l1_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
    }
    return mean(abs(sub(pred, target)));
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Nodes reachable from a root that require gradients, in topological order
/// (inputs before the nodes that consume them).
template <typename T>
struct ComputationRecord {
    std::vector<Node<T>*> nodes;
};

template <typename T>
ComputationRecord<T> record(const Tensor<T>& root) {
    ComputationRecord<T> rec;
    if (!root.requires_grad()) return rec;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            rec.nodes.push_back(node);
            stack.pop_back();
        }
    }
    return rec;
}

/// Back-propagates from a scalar loss. Leaf gradients accumulate across calls
/// until zeroed; returns the gradient of every named leaf.
template <typename T>
std::map<std::string, std::vector<T>> backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    auto rec = record(loss);
    std::map<std::string, std::vector<T>> grads;
    if (rec.nodes.empty()) return grads;
    for (auto* n : rec.nodes) {
        if (!n->is_leaf())
            n->grad.assign(n->value.size(), T{0});
        else if (n->grad.size() != n->value.size())
            n->grad.assign(n->value.size(), T{0});
    }
    loss.node()->grad[0] += T{1};
    for (auto it = rec.nodes.rbegin(); it != rec.nodes.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
    for (auto* n : rec.nodes) {
        if (n->is_leaf() && !n->name.empty()) grads[n->name] = n->grad;
    }
    return grads;
}

}  // namespace mtpnet
