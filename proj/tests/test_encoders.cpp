#include "doctest.h"

#include <cmath>
#include <cstring>

#include "odpg/encoders.hpp"
#include "odpg/ops.hpp"

using namespace odpg;

namespace {

double l2_gap(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = double(a.data()[i]) - b.data()[i];
        s += d * d;
    }
    return s;
}

Tensor random_image(Rng& rng, int b = 1) {
    return Tensor::uniform({b, 3, 64, 64}, rng, -1.0, 1.0);
}

void force_posterior(VaeModel& vae, float mean_bias, float logvar_bias) {
    ParamMap params;
    vae.collect("vae", params);
    for (auto& [name, t] : params) {
        if (name == "vae.enc_out.weight") t.fill(0.f);
        if (name == "vae.enc_out.bias") {
            for (int c = 0; c < 4; ++c) t.at(c) = mean_bias;
            for (int c = 4; c < 8; ++c) t.at(c) = logvar_bias;
        }
    }
}

}  // namespace

TEST_CASE("vae encode is deterministic without sampling and has the contract shape") {
    Rng rng(1);
    VaeModel vae(rng);
    auto img = random_image(rng, 2);
    Rng s1(5), s2(5);
    NoGradGuard ng;
    auto z1 = vae.encode(img, false, s1);
    auto z2 = vae.encode(img, false, s2);
    CHECK(z1.shape() == Shape{2, 4, 16, 16});
    CHECK(std::memcmp(z1.data(), z2.data(), sizeof(float) * z1.numel()) == 0);
    auto dec = vae.decode(z1);
    CHECK(dec.shape() == Shape{2, 3, 64, 64});
}

TEST_CASE("vae rejects out-of-range pixels") {
    Rng rng(2);
    VaeModel vae(rng);
    auto img = random_image(rng);
    img.at(0, 0, 0, 0) = 3.5f;
    Rng s(1);
    CHECK_THROWS_AS(vae.encode(img, false, s), ValidationError);
}

TEST_CASE("vae sampling with collapsed variance equals the mean") {
    Rng rng(3);
    VaeModel vae(rng);
    force_posterior(vae, 0.25f, -30.f);
    auto img = random_image(rng);
    Rng s(7);
    NoGradGuard ng;
    auto mean = vae.encode(img, false, s);
    auto sampled = vae.encode(img, true, s);
    for (std::int64_t i = 0; i < mean.numel(); ++i) {
        CHECK(std::abs(mean.data()[i] - sampled.data()[i]) < 1e-5f);
    }
}

TEST_CASE("vae loss: zero posterior KL and non-negative terms") {
    Rng rng(4);
    VaeModel vae(rng);
    force_posterior(vae, 0.f, 0.f);
    auto img = random_image(rng);
    Rng s(11);
    auto bits = vae.loss(img, 1e-4, s);
    CHECK(bits.kl == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(bits.recon >= 0.0);
    CHECK(bits.total.item() == doctest::Approx(bits.recon + 1e-4 * bits.kl));

    Rng rng2(5);
    VaeModel vae2(rng2);
    for (int trial = 0; trial < 3; ++trial) {
        auto im = random_image(rng2);
        Rng sr(trial);
        auto b = vae2.loss(im, 1e-4, sr);
        CHECK(b.kl >= 0.0);
        CHECK(b.recon >= 0.0);
    }
}

TEST_CASE("vae short overfit run reduces reconstruction loss") {
    Rng rng(6);
    VaeModel vae(rng, 16);
    auto img = random_image(rng);
    ParamMap params;
    vae.collect("vae", params);
    Adam opt(params, {2e-3, 0.9, 0.999, 1e-8});
    double first = 0, last = 0;
    for (int step = 0; step < 40; ++step) {
        Rng s(100 + step);
        auto bits = vae.loss(img, 1e-4, s);
        if (step == 0) first = bits.recon;
        last = bits.recon;
        opt.zero_grad();
        backward(bits.total);
        opt.step();
    }
    CHECK(last < first * 0.6);
}

TEST_CASE("source and garment pyramids follow the configured ladders") {
    Rng rng(7);
    PyramidEncoder src(3, {64, 128, 256}, 4, rng);
    PyramidEncoder gar(4, {64, 128, 256, 512}, 4, rng);
    auto img = random_image(rng, 2);
    NoGradGuard ng;
    auto fs = src.forward(img);
    REQUIRE(fs.size() == 3);
    CHECK(fs[0].shape() == Shape{2, 64, 16, 16});
    CHECK(fs[1].shape() == Shape{2, 128, 8, 8});
    CHECK(fs[2].shape() == Shape{2, 256, 4, 4});
    auto fg = gar.forward(img);
    REQUIRE(fg.size() == 4);
    CHECK(fg[3].shape() == Shape{2, 512, 2, 2});
    // halving ladder
    for (std::size_t s = 1; s < fg.size(); ++s) {
        CHECK(fg[s].size(2) == fg[s - 1].size(2) / 2);
        CHECK(fg[s].size(3) == fg[s - 1].size(3) / 2);
    }
    CHECK_THROWS_AS(src.forward(Tensor::zeros({1, 3, 32, 32})), DimensionError);
}

TEST_CASE("pyramids distinguish images and are deterministic") {
    Rng rng(8);
    PyramidEncoder src(3, {64, 128, 256}, 4, rng);
    auto img1 = random_image(rng);
    auto img2 = random_image(rng);
    NoGradGuard ng;
    auto f1 = src.forward(img1);
    auto f2 = src.forward(img2);
    for (std::size_t s = 0; s < f1.size(); ++s) CHECK(l2_gap(f1[s], f2[s]) > 0.0);
    auto f1b = src.forward(img1);
    for (std::size_t s = 0; s < f1.size(); ++s) {
        CHECK(std::memcmp(f1[s].data(), f1b[s].data(), sizeof(float) * f1[s].numel()) == 0);
    }
}

TEST_CASE("heatmaps peak at the keypoint and carry constant mass") {
    PoseKeypoints kps{};
    for (auto& kp : kps) kp.visible = false;
    kps[kHead] = {32.f, 32.f, true};
    kps[kLeftWrist] = {5.f, 60.f, true};
    auto hm = render_heatmaps(kps, 64, 1.5);
    CHECK(hm.shape() == Shape{13, 64, 64});

    // argmax of the head channel at (32,32)
    int best = 0;
    for (int i = 1; i < 64 * 64; ++i) {
        if (hm.data()[i] > hm.data()[best]) best = i;
    }
    CHECK(best / 64 == 32);
    CHECK(best % 64 == 32);

    const double want_mass = 2.0 * M_PI * 1.5 * 1.5;
    for (int j : {int(kHead), int(kLeftWrist)}) {
        double mass = 0;
        for (int i = 0; i < 64 * 64; ++i) mass += hm.data()[j * 64 * 64 + i];
        CHECK(std::abs(mass - want_mass) / want_mass < 0.01);
    }
    // invisible channels are identically zero
    double z = 0;
    for (int i = 0; i < 64 * 64; ++i) z += std::abs(hm.data()[kLeftKnee * 64 * 64 + i]);
    CHECK(z == 0.0);
}

TEST_CASE("mirrored poses give mirrored heatmaps") {
    PoseKeypoints kps{};
    Rng rng(9);
    for (auto& kp : kps) {
        kp = {float(rng.uniform(4, 60)), float(rng.uniform(4, 60)), true};
    }
    PoseKeypoints mir = kps;
    for (auto& kp : mir) kp.x = 63.f - kp.x;
    auto a = render_heatmaps(kps);
    auto b = render_heatmaps(mir);
    for (int j = 0; j < 13; ++j)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                CHECK(a.at(j, y, x) == doctest::Approx(b.at(j, y, 63 - x)).epsilon(1e-6));
}

TEST_CASE("out-of-bounds visible keypoints are rejected") {
    PoseKeypoints kps{};
    for (auto& kp : kps) kp = {10.f, 10.f, true};
    kps[3].x = 70.f;
    CHECK_THROWS_AS(render_heatmaps(kps), ValidationError);
    kps[3].visible = false;
    CHECK_NOTHROW(render_heatmaps(kps));
}

TEST_CASE("pose encoder ladder and zero-input equivalence") {
    Rng rng(10);
    PoseEncoder enc({64, 128, 256}, 8, rng);
    PoseKeypoints kps{};
    for (auto& kp : kps) kp.visible = false;
    auto hm = render_heatmaps(kps);
    auto batch = reshape(hm, {1, 13, 64, 64});
    NoGradGuard ng;
    auto feats = enc.forward(batch);
    REQUIRE(feats.size() == 3);
    CHECK(feats[0].shape() == Shape{1, 64, 16, 16});
    CHECK(feats[1].shape() == Shape{1, 128, 8, 8});
    CHECK(feats[2].shape() == Shape{1, 256, 4, 4});
    // all-invisible pose == zero input
    auto zf = enc.forward(Tensor::zeros({1, 13, 64, 64}));
    for (int s = 0; s < 3; ++s) {
        CHECK(std::memcmp(feats[s].data(), zf[s].data(), sizeof(float) * zf[s].numel()) == 0);
    }
}

TEST_CASE("garment token decoder contract, zero-memory and permutation probes") {
    Rng rng(11);
    GarmentTokenDecoder dec(512, 4, 16, 256, 2, 4, rng);
    NoGradGuard ng;

    auto z1 = dec.forward(Tensor::zeros({1, 512, 2, 2}));
    auto z2 = dec.forward(Tensor::zeros({1, 512, 2, 2}));
    CHECK(z1.shape() == Shape{1, 16, 256});
    CHECK(std::memcmp(z1.data(), z2.data(), sizeof(float) * z1.numel()) == 0);

    auto f = Tensor::randn({1, 512, 2, 2}, rng);
    auto out = dec.forward(f);
    CHECK(out.shape() == Shape{1, 16, 256});

    // spatial permutation of the memory (without permuting pos_emb) changes the output
    auto fp = f.clone();
    for (int c = 0; c < 512; ++c) {
        std::swap(fp.at(0, c, 0, 0), fp.at(0, c, 1, 1));
        std::swap(fp.at(0, c, 0, 1), fp.at(0, c, 1, 0));
    }
    auto out_p = dec.forward(fp);
    CHECK(l2_gap(out, out_p) > 1e-8);

    CHECK_THROWS_AS(dec.forward(Tensor::zeros({1, 256, 2, 2})), DimensionError);
    CHECK_THROWS_AS(dec.forward(Tensor::zeros({1, 512, 4, 4})), DimensionError);
}

TEST_CASE("appearance encoder is exactly zero at init and trains away from zero") {
    Rng rng(12);
    AppearanceEncoder phi(64, 16, 16, 1, 4, rng);
    auto fs = Tensor::randn({2, 64, 16, 16}, rng);
    auto fg = Tensor::randn({2, 64, 16, 16}, rng);
    auto bias = phi.forward(fs, fg);
    CHECK(bias.shape() == Shape{2, 256, 64});
    for (std::int64_t i = 0; i < bias.numel(); ++i) CHECK(bias.data()[i] == 0.f);

    CHECK_THROWS_AS(phi.forward(fs, Tensor::randn({2, 64, 8, 8}, rng)), DimensionError);
    CHECK_THROWS_AS(phi.forward(Tensor::randn({2, 128, 16, 16}, rng), fs), DimensionError);

    // a few optimizer steps push the bias away from zero
    ParamMap params;
    phi.collect("phi", params);
    Adam opt(params, {1e-2, 0.9, 0.999, 1e-8});
    auto probe = Tensor::randn(bias.shape(), rng);
    for (int step = 0; step < 3; ++step) {
        auto b = phi.forward(fs, fg);
        opt.zero_grad();
        backward(sum_all(mul(b, probe)));
        opt.step();
    }
    auto b2 = phi.forward(fs, fg);
    double norm = 0;
    for (std::int64_t i = 0; i < b2.numel(); ++i) norm += double(b2.data()[i]) * b2.data()[i];
    CHECK(norm > 0.0);
}
