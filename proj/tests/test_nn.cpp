#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

#include "odpg/nn.hpp"
#include "odpg/ops.hpp"
#include "support/gradcheck.hpp"

using namespace odpg;
using odpg_test::check_gradients;

namespace {

// Direct two-loop attention reference (single head).
template <typename T>
TensorT<T> attention_oracle(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v) {
    const int nq = q.size(0), nk = k.size(0), d = q.size(1);
    TensorT<T> out({nq, d});
    for (int i = 0; i < nq; ++i) {
        std::vector<double> logits(nk);
        double mx = -1e300;
        for (int j = 0; j < nk; ++j) {
            double s = 0;
            for (int c = 0; c < d; ++c) s += double(q.at(i, c)) * double(k.at(j, c));
            logits[j] = s / std::sqrt(double(d));
            mx = std::max(mx, logits[j]);
        }
        double z = 0;
        for (int j = 0; j < nk; ++j) z += std::exp(logits[j] - mx);
        for (int c = 0; c < d; ++c) {
            double acc = 0;
            for (int j = 0; j < nk; ++j)
                acc += std::exp(logits[j] - mx) / z * double(v.at(j, c));
            out.at(i, c) = T(acc);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("time_embed basics") {
    auto e = time_embed<float>({0}, 4);
    CHECK(e.at(0, 0) == 0.f);
    CHECK(e.at(0, 1) == 0.f);
    CHECK(e.at(0, 2) == 1.f);
    CHECK(e.at(0, 3) == 1.f);
    CHECK_THROWS_AS(time_embed<float>({1}, 5), ConfigError);
    CHECK_THROWS_AS(time_embed<float>({-1}, 4), ValidationError);
}

TEST_CASE("time_embed distinct over 0..1000 and bounded") {
    const int dim = 8;
    std::vector<std::int64_t> ts(1001);
    for (int t = 0; t <= 1000; ++t) ts[t] = t;
    auto e = time_embed<double>(ts, dim);
    for (int i = 0; i < e.numel(); ++i) {
        CHECK(e.data()[i] >= -1.0);
        CHECK(e.data()[i] <= 1.0);
    }
    // exhaustive pairwise comparison
    for (int a = 0; a <= 1000; ++a) {
        for (int b = a + 1; b <= 1000; ++b) {
            bool same = true;
            for (int c = 0; c < dim && same; ++c) same = e.at(a, c) == e.at(b, c);
            if (same) FAIL("duplicate embedding for t=" << a << " and t=" << b);
        }
    }
}

TEST_CASE("attention with identical keys averages the values") {
    Rng rng(5);
    auto q = Tensor::randn({3, 4}, rng);
    auto k = Tensor::zeros({5, 4});
    for (int j = 0; j < 5; ++j)
        for (int c = 0; c < 4; ++c) k.at(j, c) = 0.7f;
    auto v = Tensor::randn({5, 4}, rng);
    auto out = attention_core(q, k, v, 1);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 4; ++c) {
            double mean = 0;
            for (int j = 0; j < 5; ++j) mean += v.at(j, c);
            mean /= 5;
            CHECK(out.at(i, c) == doctest::Approx(mean).epsilon(1e-5));
        }
}

TEST_CASE("attention with a dominating logit selects that value row") {
    const int d = 4;
    auto q = Tensor::zeros({1, d});
    q.at(0, 0) = 1.f;
    auto k = Tensor::zeros({3, d});
    k.at(1, 0) = 50.f * std::sqrt(float(d));  // logit +50 for row 1
    Rng rng(9);
    auto v = Tensor::randn({3, d}, rng);
    auto out = attention_core(q, k, v, 1);
    auto ref = attention_oracle(q, k, v);
    for (int c = 0; c < d; ++c) {
        CHECK(std::abs(out.at(0, c) - v.at(1, c)) < 1e-6f);
        CHECK(out.at(0, c) == doctest::Approx(ref.at(0, c)));
    }
}

TEST_CASE("attention 3x3 random case matches two-loop reference") {
    Rng rng(11);
    auto q = Tensor::randn({3, 3}, rng);
    auto k = Tensor::randn({3, 3}, rng);
    auto v = Tensor::randn({3, 3}, rng);
    auto out = attention_core(q, k, v, 1);
    auto ref = attention_oracle(q, k, v);
    for (int i = 0; i < 9; ++i) CHECK(std::abs(out.data()[i] - ref.data()[i]) < 1e-6f);
}

TEST_CASE("attention outputs stay within value bounds (convex combination)") {
    Rng rng(13);
    auto q = Tensor::randn({6, 8}, rng);
    auto k = Tensor::randn({4, 8}, rng);
    auto v = Tensor::randn({4, 8}, rng);
    auto out = attention_core(q, k, v, 1);
    for (int c = 0; c < 8; ++c) {
        float lo = 1e30f, hi = -1e30f;
        for (int j = 0; j < 4; ++j) {
            lo = std::min(lo, v.at(j, c));
            hi = std::max(hi, v.at(j, c));
        }
        for (int i = 0; i < 6; ++i) {
            CHECK(out.at(i, c) >= lo - 1e-5f);
            CHECK(out.at(i, c) <= hi + 1e-5f);
        }
    }
}

TEST_CASE("attention is invariant to per-row logit shifts") {
    Rng rng(17);
    const int d = 4;
    auto k = Tensor::randn({5, d}, rng);
    // constant first component so that shifting Q[:,0] shifts whole rows
    for (int j = 0; j < 5; ++j) k.at(j, 0) = 1.0f;
    auto q = Tensor::randn({3, d}, rng);
    auto v = Tensor::randn({5, d}, rng);
    auto out0 = attention_core(q, k, v, 1);
    auto q2 = q.clone();
    for (int i = 0; i < 3; ++i) q2.at(i, 0) += float(10 + 3 * i);
    auto out1 = attention_core(q2, k, v, 1);
    for (int i = 0; i < out0.numel(); ++i)
        CHECK(std::abs(out0.data()[i] - out1.data()[i]) < 1e-5f);
}

TEST_CASE("attention multi-head shapes and errors") {
    Rng rng(19);
    auto q = Tensor::randn({2, 6, 8}, rng);
    auto k = Tensor::randn({2, 4, 8}, rng);
    auto v = Tensor::randn({2, 4, 8}, rng);
    auto out = attention_core(q, k, v, 4);
    CHECK(out.shape() == Shape{2, 6, 8});
    CHECK_THROWS_AS(attention_core(q, Tensor::randn({2, 4, 6}, rng), v, 1), DimensionError);
    CHECK_THROWS_AS(attention_core(q, k, v, 3), DimensionError);
}

TEST_CASE("attention_core gradients match finite differences") {
    Rng rng(23);
    auto q = TensorD::randn({3, 4}, rng);
    auto k = TensorD::randn({5, 4}, rng);
    auto v = TensorD::randn({5, 4}, rng);
    auto target = TensorD::randn({3, 4}, rng);
    auto res = check_gradients(
        [&](const std::vector<TensorD>& in) {
            return mse(attention_core(in[0], in[1], in[2], 2), target);
        },
        {q, k, v});
    CHECK_MESSAGE(res.max_rel_error < 1e-5, res.where);
}

TEST_CASE("zero conv: zero at init, passthrough with identity weights, trainable") {
    Rng rng(29);
    ZeroConv2d zc(3, 3);
    auto x = Tensor::randn({2, 3, 4, 4}, rng);
    auto y = zc.forward(x);
    for (int i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.f);

    // identity 1x1 kernel
    for (int o = 0; o < 3; ++o) zc.weight.at(o, o, 0, 0) = 1.f;
    auto y2 = zc.forward(x);
    for (int i = 0; i < y2.numel(); ++i) CHECK(y2.data()[i] == x.data()[i]);

    CHECK_THROWS_AS(zc.forward(Tensor::randn({2, 4, 4, 4}, rng)), DimensionError);

    // one Adam step with nonzero upstream gradient un-zeroes the layer
    ZeroConv2d fresh(3, 3);
    ParamMap params;
    fresh.collect("zc", params);
    Adam opt(params, {1e-2, 0.9, 0.999, 1e-8});
    auto out = fresh.forward(x);
    backward(sum_all(out));
    opt.step();
    auto y3 = fresh.forward(x);
    double norm = 0;
    for (int i = 0; i < y3.numel(); ++i) norm += double(y3.data()[i]) * y3.data()[i];
    CHECK(norm > 0.0);
}

TEST_CASE("residual block: shape contract and time conditioning") {
    Rng rng(31);
    ResidualBlock blk(8, 16, 12, 4, rng);
    auto x = Tensor::randn({2, 8, 5, 5}, rng);
    auto t1 = Tensor::randn({2, 12}, rng);
    auto t2 = Tensor::randn({2, 12}, rng);

    auto y1 = blk.forward(x, t1);
    CHECK(y1.shape() == Shape{2, 16, 5, 5});

    // different timestep embedding changes the output
    auto y2 = blk.forward(x, t2);
    double gap = 0;
    for (int i = 0; i < y1.numel(); ++i) {
        const double d = double(y1.data()[i]) - y2.data()[i];
        gap += d * d;
    }
    CHECK(gap > 0.0);

    // zeroed time projection makes the block time-independent
    blk.time_proj.weight.fill(0.f);
    blk.time_proj.bias.fill(0.f);
    auto z1 = blk.forward(x, t1);
    auto z2 = blk.forward(x, t2);
    for (int i = 0; i < z1.numel(); ++i) CHECK(z1.data()[i] == z2.data()[i]);

    CHECK_THROWS_AS(blk.forward(x, Tensor::randn({2, 8}, rng)), DimensionError);
}

TEST_CASE("residual block without channel change keeps spatial shape") {
    Rng rng(37);
    ResidualBlock blk(8, 8, 0, 4, rng);
    auto x = Tensor::randn({1, 8, 7, 3}, rng);
    auto y = blk.forward(x, Tensor());
    CHECK(y.shape() == Shape{1, 8, 7, 3});
}

TEST_CASE("transformer and decoder blocks differentiate") {
    Rng rng(41);
    TransformerBlockT<double> enc(8, 2, 2, rng);
    auto x = TensorD::randn({1, 5, 8}, rng);
    ParamMapT<double> params;
    enc.collect("enc", params);
    // spot-check gradients of a couple of parameters via FD
    std::vector<TensorD> leaves = {params[2].second, params[3].second};  // q.weight, q.bias
    auto res = check_gradients(
        [&](const std::vector<TensorD>&) { return mean_all(mul(enc.forward(x), enc.forward(x))); },
        leaves);
    CHECK_MESSAGE(res.max_rel_error < 1e-5, res.where);

    DecoderBlockT<double> dec(8, 2, 2, rng);
    auto mem = TensorD::randn({1, 3, 8}, rng);
    auto queries = TensorD::randn({1, 4, 8}, rng);
    auto out = dec.forward(queries, mem);
    CHECK(out.shape() == Shape{1, 4, 8});
}

TEST_CASE("linear layer matches manual matmul and rejects bad widths") {
    Rng rng(43);
    Linear lin(6, 3, rng);
    auto x = Tensor::randn({4, 6}, rng);
    auto y = lin.forward(x);
    auto ref = add_bias_lastdim(matmul(x, lin.weight), lin.bias);
    for (int i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == ref.data()[i]);
    CHECK_THROWS_AS(lin.forward(Tensor::randn({4, 5}, rng)), DimensionError);
}
