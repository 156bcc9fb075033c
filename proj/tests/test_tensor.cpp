#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "odpg/ops.hpp"
#include "odpg/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace odpg;
using odpg_test::check_gradients;

namespace {

// Independent naive triple-loop matmul oracle.
template <typename T>
TensorT<T> matmul_oracle(const TensorT<T>& a, const TensorT<T>& b) {
    const int m = a.size(0), k = a.size(1), n = b.size(1);
    TensorT<T> out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int kk = 0; kk < k; ++kk)
                s += double(a.at(i, kk)) * double(b.at(kk, j));
            out.at(i, j) = T(s);
        }
    return out;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
    Rng rng(7);
    auto a = Tensor::from_data({2, 2}, {3.f, -1.f, 2.f, 5.f});
    auto eye = Tensor::from_data({2, 2}, {1.f, 0.f, 0.f, 1.f});
    auto out = matmul(eye, a);
    for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == a.data()[i]);

    auto z = Tensor::zeros({2, 3});
    auto b = Tensor::randn({3, 4}, rng);
    auto zb = matmul(z, b);
    CHECK(zb.shape() == Shape{2, 4});
    for (int i = 0; i < zb.numel(); ++i) CHECK(zb.data()[i] == 0.f);
}

TEST_CASE("matmul 2x2 golden value matches triple-loop oracle") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    auto ref = matmul_oracle(a, b);
    CHECK(ref.at(0, 0) == 19.f);
    CHECK(ref.at(0, 1) == 22.f);
    CHECK(ref.at(1, 0) == 43.f);
    CHECK(ref.at(1, 1) == 50.f);
    auto out = matmul(a, b);
    for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(ref.data()[i]));
}

TEST_CASE("matmul batched and broadcast shapes vs oracle") {
    Rng rng(11);
    auto a = Tensor::randn({3, 4, 5}, rng);
    auto b = Tensor::randn({3, 5, 2}, rng);
    auto out = matmul(a, b);
    CHECK(out.shape() == Shape{3, 4, 2});
    for (int i = 0; i < 3; ++i) {
        auto ai = Tensor::from_data({4, 5}, std::vector<float>(a.data() + i * 20, a.data() + (i + 1) * 20));
        auto bi = Tensor::from_data({5, 2}, std::vector<float>(b.data() + i * 10, b.data() + (i + 1) * 10));
        auto ref = matmul_oracle(ai, bi);
        for (int j = 0; j < 8; ++j) CHECK(out.data()[i * 8 + j] == doctest::Approx(ref.data()[j]).epsilon(1e-5));
    }
    auto w = Tensor::randn({5, 2}, rng);
    auto bc = matmul(a, w);
    CHECK(bc.shape() == Shape{3, 4, 2});
    CHECK_THROWS_AS(matmul(a, Tensor::zeros({4, 2})), DimensionError);
}

TEST_CASE("conv2d delta kernel reproduces input") {
    Rng rng(3);
    auto x = Tensor::randn({2, 3, 5, 5}, rng);
    auto w = Tensor::zeros({3, 3, 3, 3});
    for (int o = 0; o < 3; ++o) w.at(o, o, 1, 1) = 1.f;
    auto y = conv2d(x, w, Tensor(), 1, 1);
    REQUIRE(y.shape() == x.shape());
    for (int i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d all-ones kernel sums channels") {
    const int c = 4;
    auto x = Tensor::ones({1, c, 3, 3});
    auto w = Tensor::ones({1, c, 3, 3});
    auto y = conv2d(x, w, Tensor(), 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(9.f * c));
}

TEST_CASE("conv2d output shape formula and errors") {
    Rng rng(5);
    auto x = Tensor::randn({1, 2, 8, 8}, rng);
    auto w = Tensor::randn({4, 2, 3, 3}, rng);
    auto y = conv2d(x, w, Tensor(), 2, 1);
    CHECK(y.shape() == Shape{1, 4, 4, 4});
    // kernel larger than padded input
    auto wbig = Tensor::randn({1, 2, 11, 11}, rng);
    CHECK_THROWS_AS(conv2d(x, wbig, Tensor(), 1, 1), DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor::randn({4, 3, 3, 3}, rng), Tensor(), 1, 1), DimensionError);
}

TEST_CASE("softmax constant slice is uniform") {
    auto x = Tensor::full({2, 5}, 3.25f);
    auto y = softmax(x, 1);
    for (int i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.2f));
}

TEST_CASE("softmax analytic two-element case") {
    auto x = Tensor::from_data({2}, {0.f, std::log(2.f)});
    auto y = softmax(x, 0);
    CHECK(y.at(0) == doctest::Approx(1.0 / 3.0));
    CHECK(y.at(1) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("softmax shift invariance and normalization") {
    Rng rng(17);
    auto x = Tensor::randn({3, 4, 6}, rng);
    for (int axis = 0; axis < 3; ++axis) {
        auto y = softmax(x, axis);
        // slices along axis sum to one
        std::int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= x.size(i);
        for (int i = axis + 1; i < 3; ++i) inner *= x.size(i);
        const int n = x.size(axis);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                double s = 0;
                for (int j = 0; j < n; ++j) s += y.data()[o * n * inner + j * inner + in];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
    auto shifted = add_scalar(x, 11.5);
    auto y0 = softmax(x, 2);
    auto y1 = softmax(shifted, 2);
    for (int i = 0; i < y0.numel(); ++i)
        CHECK(std::abs(y0.data()[i] - y1.data()[i]) < 1e-6f);
}

TEST_CASE("group_norm trivial cases") {
    auto gamma1 = Tensor::ones({4});
    auto beta0 = Tensor::zeros({4});
    auto x = Tensor::full({2, 4, 3, 3}, 7.f);
    auto y = group_norm(x, 2, gamma1, beta0, 1e-5);
    for (int i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.f));

    Rng rng(23);
    auto xr = Tensor::randn({2, 4, 3, 3}, rng);
    auto gamma0 = Tensor::zeros({4});
    auto beta = Tensor::from_data({4}, {1.f, 2.f, 3.f, 4.f});
    auto yb = group_norm(xr, 2, gamma0, beta, 1e-5);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 4; ++c)
            for (int j = 0; j < 9; ++j)
                CHECK(yb.data()[(b * 4 + c) * 9 + j] == doctest::Approx(beta.data()[c]));

    CHECK_THROWS_AS(group_norm(xr, 3, gamma1, beta0, 1e-5), ConfigError);
}

TEST_CASE("group_norm statistics oracle on random input") {
    Rng rng(29);
    auto x = Tensor::randn({3, 8, 5, 5}, rng, 2.0, 3.0);
    auto gamma = Tensor::ones({8});
    auto beta = Tensor::zeros({8});
    const int groups = 4;
    auto y = group_norm(x, groups, gamma, beta, 1e-6);
    const int cg = 8 / groups, hw = 25;
    for (int b = 0; b < 3; ++b)
        for (int g = 0; g < groups; ++g) {
            double mean = 0, var = 0;
            for (int c = 0; c < cg; ++c)
                for (int j = 0; j < hw; ++j) mean += y.data()[((b * 8) + g * cg + c) * hw + j];
            mean /= cg * hw;
            for (int c = 0; c < cg; ++c)
                for (int j = 0; j < hw; ++j) {
                    double d = y.data()[((b * 8) + g * cg + c) * hw + j] - mean;
                    var += d * d;
                }
            var /= cg * hw;
            CHECK(std::abs(mean) < 1e-4);
            CHECK(std::abs(var - 1.0) < 1e-3);
        }
}

TEST_CASE("backward on sum of squares gives 2x exactly") {
    auto x = TensorD::from_data({4}, {1.0, -2.0, 3.0, 0.5});
    x.set_requires_grad(true);
    auto loss = sum_all(mul(x, x));
    backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(x.grad_vec()[i] == doctest::Approx(2.0 * x.data()[i]));
}

TEST_CASE("backward errors on constants and accumulates across calls") {
    auto c = Tensor::ones({1});
    CHECK_THROWS_AS(backward(c), ValidationError);

    auto x = TensorD::from_data({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    auto loss = sum_all(mul(x, x));
    backward(loss);
    backward(loss);
    for (int i = 0; i < 2; ++i) CHECK(x.grad_vec()[i] == doctest::Approx(4.0 * x.data()[i]));
}

TEST_CASE("composite matmul-softmax-mse gradient matches finite differences") {
    Rng rng(31);
    auto a = TensorD::randn({3, 4}, rng);
    auto b = TensorD::randn({4, 5}, rng);
    auto target = TensorD::randn({3, 5}, rng);
    auto res = check_gradients(
        [&](const std::vector<TensorD>& in) {
            return mse(softmax(matmul(in[0], in[1]), 1), target);
        },
        {a, b});
    CHECK_MESSAGE(res.max_rel_error < 1e-5, res.where);
}

TEST_CASE("zero-initialized conv has zero output but nonzero weight gradient") {
    Rng rng(37);
    auto x = TensorD::randn({1, 2, 4, 4}, rng);
    auto w = TensorD::zeros({3, 2, 3, 3});
    w.set_requires_grad(true);
    auto y = conv2d(x, w, TensorD(), 1, 1);
    for (int i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
    backward(sum_all(y));
    double norm = 0;
    for (double g : w.grad_vec()) norm += g * g;
    CHECK(norm > 0.0);

    auto res = check_gradients(
        [&](const std::vector<TensorD>& in) {
            return sum_all(conv2d(x, in[0], TensorD(), 1, 1));
        },
        {w});
    CHECK_MESSAGE(res.max_rel_error < 1e-5, res.where);
}

TEST_CASE("adam leaves parameters unchanged for zero gradients") {
    Rng rng(41);
    auto p = Tensor::randn({5}, rng);
    p.set_requires_grad(true);
    auto before = p.clone();
    p.grad_data();  // allocate zeros
    Adam opt({{"p", p}}, {});
    opt.step();
    for (int i = 0; i < 5; ++i) CHECK(p.data()[i] == before.data()[i]);
}

TEST_CASE("adam first step magnitude is approximately lr") {
    auto p = TensorD::from_data({1}, {1.0});
    p.set_requires_grad(true);
    p.grad_vec_mut()[0] = 1.0;
    AdamT<double>::Hyper hp;
    hp.lr = 1e-3;
    AdamT<double> opt({{"p", p}}, hp);
    opt.step();
    const double update = 1.0 - p.data()[0];
    CHECK(std::abs(update - hp.lr / (1.0 + hp.eps)) < 1e-6);
}

TEST_CASE("adam three-step trajectory matches scalar reference") {
    // Hand-rolled scalar Adam on f(x) = grads {0.3, -0.2, 0.05}.
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const std::vector<double> grads = {0.3, -0.2, 0.05};
    double ref = 2.0, m = 0, v = 0;
    std::vector<double> ref_traj;
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        ref -= lr * mhat / (std::sqrt(vhat) + eps);
        ref_traj.push_back(ref);
    }

    auto p = TensorD::from_data({1}, {2.0});
    p.set_requires_grad(true);
    AdamT<double> opt({{"p", p}}, {lr, b1, b2, eps});
    for (int t = 0; t < 3; ++t) {
        p.zero_grad();
        p.grad_vec_mut()[0] = grads[t];
        opt.step();
        CHECK(std::abs(p.data()[0] - ref_traj[t]) < 1e-7);
    }
}

TEST_CASE("adam reports the missing-gradient parameter by name") {
    auto p = Tensor::ones({2});
    p.set_requires_grad(true);
    Adam opt({{"layer.weight", p}}, {});
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("layer.weight"), ValidationError);
}

TEST_CASE("ops are deterministic for identical inputs") {
    Rng rng1(99), rng2(99);
    auto x1 = Tensor::randn({2, 8, 6, 6}, rng1);
    auto x2 = Tensor::randn({2, 8, 6, 6}, rng2);
    CHECK(std::memcmp(x1.data(), x2.data(), sizeof(float) * x1.numel()) == 0);
    Rng rw1(100), rw2(100);
    auto w1 = Tensor::randn({4, 8, 3, 3}, rw1);
    auto w2 = Tensor::randn({4, 8, 3, 3}, rw2);
    auto y1 = conv2d(x1, w1, Tensor(), 1, 1);
    auto y2 = conv2d(x2, w2, Tensor(), 1, 1);
    CHECK(std::memcmp(y1.data(), y2.data(), sizeof(float) * y1.numel()) == 0);
}

TEST_CASE("randomized shape algebra for core ops") {
    Rng rng(123);
    for (int trial = 0; trial < 30; ++trial) {
        const int b = int(rng.uniform_int(1, 3));
        const int c = int(rng.uniform_int(1, 4));
        const int h = int(rng.uniform_int(3, 9));
        const int w = int(rng.uniform_int(3, 9));
        const int o = int(rng.uniform_int(1, 4));
        const int k = int(rng.uniform_int(1, 3));
        const int s = int(rng.uniform_int(1, 2));
        const int p = int(rng.uniform_int(0, 2));
        if (k > h + 2 * p || k > w + 2 * p) continue;
        auto x = Tensor::randn({b, c, h, w}, rng);
        auto wt = Tensor::randn({o, c, k, k}, rng);
        auto y = conv2d(x, wt, Tensor(), s, p);
        CHECK(y.shape() == Shape{b, o, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1});

        const int m = int(rng.uniform_int(1, 6)), kk = int(rng.uniform_int(1, 6)),
                  n = int(rng.uniform_int(1, 6));
        auto mm = matmul(Tensor::randn({m, kk}, rng), Tensor::randn({kk, n}, rng));
        CHECK(mm.shape() == Shape{m, n});

        auto up = upsample_nearest2(x);
        CHECK(up.shape() == Shape{b, c, 2 * h, 2 * w});
        if (h % 2 == 0 && w % 2 == 0) {
            auto pool = avg_pool2d(x, 2);
            CHECK(pool.shape() == Shape{b, c, h / 2, w / 2});
        }
    }
}

TEST_CASE("layout ops roundtrip and differentiate") {
    Rng rng(333);
    auto x = TensorD::randn({2, 3, 4}, rng);
    auto res = check_gradients(
        [&](const std::vector<TensorD>& in) {
            auto p = permute(in[0], {2, 0, 1});
            auto r = reshape(p, {4, 6});
            auto s = slice(r, 0, 1, 2);
            auto cat = concat(std::vector<TensorD>{s, s}, 1);
            return mean_all(mul(cat, cat));
        },
        {x});
    CHECK_MESSAGE(res.max_rel_error < 1e-5, res.where);

    // permute then inverse permute restores the layout
    auto p = permute(x, {1, 2, 0});
    auto back = permute(p, {2, 0, 1});
    for (int i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("broadcast helpers differentiate") {
    Rng rng(444);
    auto v = TensorD::randn({3}, rng);
    auto res = check_gradients(
        [&](const std::vector<TensorD>& in) {
            auto bc = broadcast_channels(in[0], 2, 4, 4);
            return mean_all(mul(bc, bc));
        },
        {v});
    CHECK_MESSAGE(res.max_rel_error < 1e-5, res.where);

    auto tok = TensorD::randn({4, 5}, rng);
    auto res2 = check_gradients(
        [&](const std::vector<TensorD>& in) {
            auto b = broadcast_batch(in[0], 3);
            auto scaled = mul_batch_scalar(b, {0.5, 1.0, 0.0});
            return sum_all(mul(scaled, scaled));
        },
        {tok});
    CHECK_MESSAGE(res2.max_rel_error < 1e-5, res2.where);
}
