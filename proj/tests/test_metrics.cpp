#include "doctest.h"

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "odpg/metrics.hpp"
#include "odpg/ops.hpp"
#include "support/tmpdir.hpp"

using namespace odpg;
using odpg_test::TmpDir;

namespace {

// Independent direct-formula SSIM with the same window geometry.
double ssim_oracle(const Tensor& a, const Tensor& b) {
    const int c = a.size(0), h = a.size(1), w = a.size(2);
    int win = std::min(11, std::min(h, w));
    if (win % 2 == 0) --win;
    const int r = win / 2;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, sigma = 1.5;
    double total = 0;
    int count = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int cy = r; cy < h - r; ++cy) {
            for (int cx = r; cx < w - r; ++cx) {
                double ksum = 0, mu_a = 0, mu_b = 0;
                for (int y = -r; y <= r; ++y)
                    for (int x = -r; x <= r; ++x) {
                        const double k = std::exp(-(x * x + y * y) / (2 * sigma * sigma));
                        ksum += k;
                        mu_a += k * a.at(ch, cy + y, cx + x);
                        mu_b += k * b.at(ch, cy + y, cx + x);
                    }
                mu_a /= ksum;
                mu_b /= ksum;
                double va = 0, vb = 0, cov = 0;
                for (int y = -r; y <= r; ++y)
                    for (int x = -r; x <= r; ++x) {
                        const double k = std::exp(-(x * x + y * y) / (2 * sigma * sigma)) / ksum;
                        const double da = a.at(ch, cy + y, cx + x) - mu_a;
                        const double db = b.at(ch, cy + y, cx + x) - mu_b;
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                         ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return total / count;
}

}  // namespace

TEST_CASE("ssim identity, symmetry, and range") {
    Rng rng(1);
    auto x = Tensor::uniform({3, 16, 16}, rng, 0, 1);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    auto y = Tensor::uniform({3, 16, 16}, rng, 0, 1);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    CHECK(ssim(x, y) <= 1.0);
    CHECK(ssim(x, y) >= -1.0);
    CHECK_THROWS_AS(ssim(x, Tensor::zeros({3, 8, 8})), DimensionError);
}

TEST_CASE("ssim fixed 8x8 pair matches the direct-formula oracle") {
    Rng rng(2);
    auto a = Tensor::uniform({1, 8, 8}, rng, 0, 1);
    auto b = Tensor::uniform({1, 8, 8}, rng, 0, 1);
    const double got = ssim(a, b);
    const double want = ssim_oracle(a, b);
    CHECK(std::abs(got - want) < 1e-6);

    auto a3 = Tensor::uniform({3, 20, 20}, rng, 0, 1);
    auto b3 = Tensor::uniform({3, 20, 20}, rng, 0, 1);
    CHECK(std::abs(ssim(a3, b3) - ssim_oracle(a3, b3)) < 1e-6);
}

TEST_CASE("ssim is invariant to placing the same content elsewhere") {
    Rng rng(3);
    auto patch_a = Tensor::uniform({1, 6, 6}, rng, 0, 1);
    auto patch_b = Tensor::uniform({1, 6, 6}, rng, 0, 1);
    // keep every patch-influenced window center inside the valid region so
    // the window multiset is identical for both placements
    auto place = [&](const Tensor& patch, int ox, int oy) {
        auto canvas = Tensor::full({1, 40, 40}, 0.5f);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) canvas.at(0, oy + y, ox + x) = patch.at(0, y, x);
        return canvas;
    };
    const double s1 = ssim(place(patch_a, 10, 10), place(patch_b, 10, 10));
    const double s2 = ssim(place(patch_a, 22, 19), place(patch_b, 22, 19));
    CHECK(s1 == doctest::Approx(s2).epsilon(1e-9));
}

TEST_CASE("psnr: cap, exact uniform case, direct formula") {
    Rng rng(4);
    auto x = Tensor::uniform({3, 8, 8}, rng, 0, 1);
    CHECK(psnr(x, x) == 99.0);

    auto y = x.detach();
    for (auto& v : y.vec()) v += 0.1f;
    CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-5));

    auto z = Tensor::uniform({3, 8, 8}, rng, 0, 1);
    double mse = 0;
    for (int i = 0; i < x.numel(); ++i) {
        const double d = double(x.data()[i]) - z.data()[i];
        mse += d * d;
    }
    mse /= x.numel();
    CHECK(std::abs(psnr(x, z) - 10.0 * std::log10(1.0 / mse)) < 1e-9);
}

TEST_CASE("frechet: identity, symmetry, shifted-sample analytic case") {
    Rng rng(5);
    auto a = Tensor::randn({40, 4}, rng);
    CHECK(frechet_distance(a, a) < 1e-6);

    auto b = Tensor::randn({30, 4}, rng);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-6));
    CHECK(frechet_distance(a, b) >= 0.0);

    // identical samples shifted by delta: distance is exactly delta^2
    const double delta = 0.7;
    auto a1 = Tensor::randn({200, 1}, rng);
    auto a2 = a1.detach();
    for (auto& v : a2.vec()) v += float(delta);
    CHECK(frechet_distance(a1, a2) == doctest::Approx(delta * delta).epsilon(1e-4));
}

TEST_CASE("frechet matches the diagonal closed form") {
    // four-point designs with exactly diagonal empirical covariance
    auto design = [](double m1, double m2, double s1, double s2) {
        return Tensor::from_data({4, 2},
                                 {float(m1 + s1), float(m2 + s2), float(m1 + s1), float(m2 - s2),
                                  float(m1 - s1), float(m2 + s2), float(m1 - s1), float(m2 - s2)});
    };
    const double a1 = 0.9, a2 = 0.4, b1 = 0.3, b2 = 1.2;
    auto fa = design(0.0, 1.0, a1, a2);
    auto fb = design(0.5, -0.2, b1, b2);
    // unbiased variance of {+s,+s,-s,-s} is 4 s^2 / 3, plus the 1e-6 ridge
    auto var = [](double s) { return 4.0 * s * s / 3.0 + 1e-6; };
    const double mean_term = 0.5 * 0.5 + 1.2 * 1.2;
    const double tr_term = std::pow(std::sqrt(var(a1)) - std::sqrt(var(b1)), 2) +
                           std::pow(std::sqrt(var(a2)) - std::sqrt(var(b2)), 2);
    CHECK(frechet_distance(fa, fb) == doctest::Approx(mean_term + tr_term).epsilon(1e-4));
}

TEST_CASE("torso color match: exact, inverted, and degenerate cases") {
    GarmentSpec g;
    g.base = {180, 40, 40};
    PoseSpec pose;
    pose.joints = canonical_skeleton();

    auto uniform_img = [&](const Rgb& c) {
        Tensor img({3, 64, 64});
        const int hw = 64 * 64;
        for (int ch = 0; ch < 3; ++ch)
            for (int i = 0; i < hw; ++i)
                img.data()[ch * hw + i] = float(c[std::size_t(ch)] / 255.0 * 2.0 - 1.0);
        return img;
    };
    CHECK(torso_color_match(uniform_img(g.base), g, pose) < 1.0 / 255.0);

    const Rgb inverted = {255 - g.base[0], 255 - g.base[1], 255 - g.base[2]};
    double want = 0;
    for (int c = 0; c < 3; ++c) want += std::abs(255.0 - 2.0 * g.base[std::size_t(c)]) / 255.0;
    want /= 3.0;
    CHECK(torso_color_match(uniform_img(inverted), g, pose) == doctest::Approx(want).epsilon(1e-6));

    PoseSpec degenerate = pose;
    for (int id : {int(kLeftShoulder), int(kRightShoulder), int(kLeftHip), int(kRightHip)}) {
        degenerate.joints[std::size_t(id)].x = 32.f;
        degenerate.joints[std::size_t(id)].y = 30.f;
    }
    CHECK_THROWS_AS(torso_color_match(uniform_img(g.base), g, degenerate), ValidationError);
}

TEST_CASE("torso color match is small on ground-truth solid renders") {
    TmpDir tmp("torso");
    DatasetOptions opts;
    opts.n = 100;
    opts.seed = 21;
    opts.out_dir = tmp.sub("d");
    opts.w_solid = 1.0;
    opts.w_stripes = 0.0;
    opts.w_checker = 0.0;
    auto man = generate_dataset(opts);
    double total = 0;
    for (int i = 0; i < opts.n; ++i) {
        auto s = load_triplet(man, i);
        total += torso_color_match(s.target, s.garment_spec, s.target_pose);
    }
    CHECK(total / opts.n < 0.02);
}

TEST_CASE("feature extractor: deterministic features and trainable patterns") {
    TmpDir tmp("fx");
    DatasetOptions opts;
    opts.n = 24;
    opts.seed = 31;
    opts.out_dir = tmp.sub("d");
    opts.w_solid = 1.0;
    opts.w_stripes = 1.0;
    opts.w_checker = 1.0;
    auto man = generate_dataset(opts);

    auto fx = train_feature_extractor(man, 80, 8, 2e-3, 77);
    NoGradGuard ng;
    Tensor imgs({opts.n, 3, 64, 64});
    std::vector<int> labels(std::size_t(opts.n));
    for (int i = 0; i < opts.n; ++i) {
        auto s = load_triplet(man, i);
        std::copy(s.target.data(), s.target.data() + s.target.numel(),
                  imgs.data() + i * s.target.numel());
        labels[std::size_t(i)] = int(s.garment_spec.pattern);
    }
    auto f1 = fx.features(imgs);
    auto f2 = fx.features(imgs);
    CHECK(f1.shape() == Shape{opts.n, 64});
    for (int i = 0; i < f1.numel(); ++i) CHECK(f1.data()[i] == f2.data()[i]);

    auto lg = fx.logits(imgs);
    int correct = 0;
    for (int i = 0; i < opts.n; ++i) {
        int best = 0;
        for (int c = 1; c < 3; ++c) {
            if (lg.at(i, c) > lg.at(i, best)) best = c;
        }
        correct += best == labels[std::size_t(i)] ? 1 : 0;
    }
    CHECK(correct >= opts.n / 2);  // far above the 1/3 chance level
}

TEST_CASE("report writer emits aggregate plus per-sample rows") {
    TmpDir tmp("report");
    EvalReport rep;
    rep.samples = {{0, 0.9, 30.0, 0.01}, {1, 0.8, 25.0, 0.05}};
    rep.frechet = 1.25;
    rep.finalize();
    CHECK(rep.n == 2);
    CHECK(rep.ssim_mean == doctest::Approx(0.85));

    const auto jpath = tmp.sub("report.json");
    const auto cpath = tmp.sub("report.csv");
    write_report(rep, jpath, cpath);

    std::ifstream in(jpath);
    nlohmann::json doc = nlohmann::json::parse(in);
    CHECK(doc.at("aggregate").at("n").get<int>() == 2);
    CHECK(doc.at("aggregate").at("frechet").get<double>() == doctest::Approx(1.25));
    CHECK(doc.at("samples").size() == 2);

    std::ifstream csv(cpath);
    int lines = 0;
    std::string line;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 4);  // header + 2 samples + aggregate
}
