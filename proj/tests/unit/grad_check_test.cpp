// Finite-difference checks for every differentiable primitive over many
// small random instances.
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "mtpnet/grad_check.hpp"
#include "mtpnet/tensor.hpp"

using namespace mtpnet;
using Td = Tensor<double>;

namespace {

Td random_param(Shape shape, std::mt19937_64& rng, const std::string& name, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = d(rng);
    return Td::parameter(std::move(shape), std::move(v), name);
}

// Random fixed weights turn any tensor into a scalar with non-trivial gradients.
Td weighted_sum(const Td& y, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> w(y.size());
    for (auto& x : w) x = d(rng);
    return sum(mul(y, Td(y.shape(), std::move(w))));
}

constexpr int kInstances = 100;
constexpr double kTol = 1e-4;

void check_many(const std::function<double(std::mt19937_64&)>& instance) {
    std::mt19937_64 rng(2024);
    double worst = 0;
    for (int i = 0; i < kInstances; ++i) worst = std::max(worst, instance(rng));
    EXPECT_LE(worst, kTol);
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

TEST(GradCheck, SumIsExact) {
    std::mt19937_64 rng(1);
    auto x = random_param({3, 4}, rng, "x");
    EXPECT_LE(grad_check<double>([](const Td& t) { return sum(t); }, x), 1e-10);
}

TEST(GradCheck, SumOfSoftmaxHasZeroGradient) {
    std::mt19937_64 rng(1);
    auto x = random_param({2, 5}, rng, "x");
    EXPECT_LE(grad_check<double>([](const Td& t) { return sum(softmax(t, -1)); }, x), 1e-8);
    for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(GradCheck, ElementwiseOps) {
    check_many([](auto& rng) {
        Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
        auto a = random_param(s, rng, "a");
        auto b = random_param({s.back()}, rng, "b");
        std::mt19937_64 frozen = rng;
        return grad_check<double>([&] { auto r = frozen; return weighted_sum(add(mul(a, b), sub(scale(a, 1.5), b)), r); },
                                  {a, b});
    });
}

TEST(GradCheck, Matmul) {
    check_many([](auto& rng) {
        std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4), bt = pick(rng, 1, 3);
        auto a = random_param({bt, m, k}, rng, "a");
        auto shared = random_param({k, n}, rng, "w");
        auto batched = random_param({bt, k, n}, rng, "b");
        auto frozen = rng;
        return grad_check<double>(
            [&] {
                auto r = frozen;
                return weighted_sum(add(matmul(a, shared), matmul(a, batched)), r);
            },
            {a, shared, batched});
    });
}

TEST(GradCheck, AffineAndTransposedProduct) {
    check_many([](auto& rng) {
        std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4), bt = pick(rng, 1, 3);
        auto x = random_param({bt, m, k}, rng, "x");
        auto w = random_param({k, n}, rng, "w");
        auto b = random_param({n}, rng, "b");
        auto q = random_param({bt, n, k}, rng, "q");
        auto frozen = rng;
        return grad_check<double>(
            [&] {
                auto r = frozen;
                return add(weighted_sum(affine(x, w, b), r), weighted_sum(matmul_transposed(x, q), r));
            },
            {x, w, b, q});
    });
}

TEST(GradCheck, Conv2d) {
    check_many([](auto& rng) {
        std::size_t cin = pick(rng, 1, 2), cout = pick(rng, 1, 3), h = pick(rng, 2, 5), w = pick(rng, 1, 3);
        std::size_t kh = pick(rng, 0, 1) ? 3 : 1, kw = pick(rng, 0, 1) ? 3 : 1;
        std::size_t pw = kw / 2 * pick(rng, 0, 1);
        if (w + 2 * pw < kw) pw = kw / 2;
        auto x = random_param({2, cin, h, w}, rng, "x");
        auto k = random_param({cout, cin, kh, kw}, rng, "k");
        auto b = random_param({cout}, rng, "b");
        auto frozen = rng;
        return grad_check<double>(
            [&] {
                auto r = frozen;
                return weighted_sum(conv2d(x, k, b, kh / 2, pw), r);
            },
            {x, k, b});
    });
}

TEST(GradCheck, SoftmaxAnyAxis) {
    check_many([](auto& rng) {
        Shape s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3)};
        long axis = static_cast<long>(pick(rng, 0, 2));
        auto x = random_param(s, rng, "x", -3, 3);
        auto frozen = rng;
        return grad_check<double>(
            [&] {
                auto r = frozen;
                return weighted_sum(softmax(x, axis), r);
            },
            {x});
    });
}

TEST(GradCheck, LayerNorm) {
    check_many([](auto& rng) {
        std::size_t len = pick(rng, 2, 6);
        auto x = random_param({pick(rng, 1, 3), len}, rng, "x", -2, 2);
        auto g = random_param({len}, rng, "g");
        auto b = random_param({len}, rng, "b");
        auto frozen = rng;
        return grad_check<double>(
            [&] {
                auto r = frozen;
                return weighted_sum(layer_norm(x, g, b), r);
            },
            {x, g, b});
    });
}

TEST(GradCheck, GeluAndIndexOps) {
    check_many([](auto& rng) {
        std::size_t a0 = pick(rng, 1, 3), a1 = pick(rng, 2, 4), a2 = pick(rng, 1, 3);
        auto x = random_param({a0, a1, a2}, rng, "x", -3, 3);
        auto y = random_param({a0, 1, a2}, rng, "y");
        auto frozen = rng;
        return grad_check<double>(
            [&] {
                auto r = frozen;
                auto cat = concat<double>({x, y}, 1);
                auto sl = slice(pad_front(cat, 1, 2), 1, 1, a1 + 1);
                auto pm = permute(reshape(gelu(sl), {a0, (a1 + 1) * a2}), {1, 0});
                return weighted_sum(transpose(pm), r);
            },
            {x, y});
    });
}

TEST(GradCheck, AbsAwayFromKink) {
    check_many([](auto& rng) {
        auto x = random_param({pick(rng, 1, 5)}, rng, "x", 0.1, 1.0);
        auto target = Td::zeros(x.shape());
        return grad_check<double>([&] { return l1_loss(scale(x, -1.0), target); }, {x});
    });
}
