#include "odpg/metrics.hpp"

#include <Eigen/Dense>

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "odpg/ops.hpp"

namespace odpg {

Tensor to_unit_range(const Tensor& img) {
    auto out = img.detach();
    for (auto& v : out.vec()) v = (v + 1.0f) * 0.5f;
    return out;
}

namespace {

void check_image_pair(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    if (a.dim() != 3) {
        throw DimensionError(std::string(op) + ": expected [C,H,W], got " +
                             shape_str(a.shape()));
    }
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    check_image_pair("ssim", a, b);
    const int c = a.size(0), h = a.size(1), w = a.size(2);
    int win = 11;
    const int min_side = std::min(h, w);
    if (win > min_side) win = min_side % 2 == 1 ? min_side : min_side - 1;
    if (win < 3) throw DimensionError("ssim: image too small for any window");
    const int r = win / 2;
    const double sigma = 1.5;
    const double k1 = 0.01, k2 = 0.03, L = 1.0;
    const double c1 = (k1 * L) * (k1 * L);
    const double c2 = (k2 * L) * (k2 * L);

    std::vector<double> kern(static_cast<std::size_t>(win) * win);
    double ksum = 0;
    for (int y = 0; y < win; ++y) {
        for (int x = 0; x < win; ++x) {
            const double dy = y - r, dx = x - r;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            kern[static_cast<std::size_t>(y) * win + x] = v;
            ksum += v;
        }
    }
    for (auto& v : kern) v /= ksum;

    double total = 0;
    std::int64_t count = 0;
    const int hw = h * w;
    for (int ch = 0; ch < c; ++ch) {
        const float* pa = a.data() + static_cast<std::int64_t>(ch) * hw;
        const float* pb = b.data() + static_cast<std::int64_t>(ch) * hw;
        for (int cy = r; cy < h - r; ++cy) {
            for (int cx = r; cx < w - r; ++cx) {
                double mu_a = 0, mu_b = 0;
                for (int y = 0; y < win; ++y) {
                    for (int x = 0; x < win; ++x) {
                        const double k = kern[static_cast<std::size_t>(y) * win + x];
                        mu_a += k * pa[(cy + y - r) * w + cx + x - r];
                        mu_b += k * pb[(cy + y - r) * w + cx + x - r];
                    }
                }
                double var_a = 0, var_b = 0, cov = 0;
                for (int y = 0; y < win; ++y) {
                    for (int x = 0; x < win; ++x) {
                        const double k = kern[static_cast<std::size_t>(y) * win + x];
                        const double da = pa[(cy + y - r) * w + cx + x - r] - mu_a;
                        const double db = pb[(cy + y - r) * w + cx + x - r] - mu_b;
                        var_a += k * da * da;
                        var_b += k * db * db;
                        cov += k * da * db;
                    }
                }
                const double num = (2 * mu_a * mu_b + c1) * (2 * cov + c2);
                const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

double psnr(const Tensor& a, const Tensor& b) {
    check_image_pair("psnr", a, b);
    double mse = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

double frechet_distance(const Tensor& feats_a, const Tensor& feats_b) {
    if (feats_a.dim() != 2 || feats_b.dim() != 2 || feats_a.size(1) != feats_b.size(1)) {
        throw DimensionError("frechet: expected [n,d] and [m,d] feature sets");
    }
    const int n = feats_a.size(0), m = feats_b.size(0), d = feats_a.size(1);
    if (n < 2 || m < 2) throw ValidationError("frechet: need at least 2 samples per set");

    using Mat = Eigen::MatrixXd;
    using Vec = Eigen::VectorXd;
    auto stats = [&](const Tensor& f, int rows) {
        Mat x(rows, d);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < d; ++j) x(i, j) = f.data()[i * d + j];
        Vec mu = x.colwise().mean();
        Mat centered = x.rowwise() - mu.transpose();
        Mat cov = centered.transpose() * centered / static_cast<double>(rows - 1);
        cov += 1e-6 * Mat::Identity(d, d);
        return std::make_pair(mu, cov);
    };
    auto [mu_a, cov_a] = stats(feats_a, n);
    auto [mu_b, cov_b] = stats(feats_b, m);

    auto psd_sqrt = [&](const Mat& s) {
        Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (s + s.transpose()));
        if (eig.info() != Eigen::Success) {
            throw NumericalError("frechet: eigendecomposition failed");
        }
        Vec ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return Mat(eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose());
    };

    const Mat root_a = psd_sqrt(cov_a);
    const Mat inner = root_a * cov_b * root_a;
    Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (inner + inner.transpose()));
    if (eig.info() != Eigen::Success) {
        throw NumericalError("frechet: eigendecomposition of the product failed");
    }
    const double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double mean_term = (mu_a - mu_b).squaredNorm();
    const double value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    if (!std::isfinite(value)) {
        throw NumericalError("frechet: non-finite distance (degenerate covariance)");
    }
    return std::max(0.0, value);
}

double torso_color_match(const Tensor& output, const GarmentSpec& garment, const PoseSpec& pose) {
    if (output.dim() != 3 || output.size(0) != 3 || output.size(1) != 64 ||
        output.size(2) != 64) {
        throw DimensionError("torso_color_match: expected [3,64,64], got " +
                             shape_str(output.shape()));
    }
    const auto mask = torso_mask(pose);
    const int hw = 64 * 64;
    double total = 0;
    int count = 0;
    for (int i = 0; i < hw; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        double dist = 0;
        for (int c = 0; c < 3; ++c) {
            const double out01 = (static_cast<double>(output.data()[c * hw + i]) + 1.0) * 0.5;
            const double base01 = garment.base[static_cast<std::size_t>(c)] / 255.0;
            dist += std::abs(out01 - base01);
        }
        total += dist / 3.0;
        ++count;
    }
    if (count == 0) throw ValidationError("torso_color_match: empty torso region");
    return total / count;
}

// ---------------------------------------------------------------------------
// Feature extractor
// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(Rng& rng) {
    c1_ = Conv2dLayer(3, 16, 3, 2, 1, rng);
    n1_ = GroupNormLayer(16, 8);
    c2_ = Conv2dLayer(16, 32, 3, 2, 1, rng);
    n2_ = GroupNormLayer(32, 8);
    c3_ = Conv2dLayer(32, kFeatureDim, 3, 2, 1, rng);
    n3_ = GroupNormLayer(kFeatureDim, 8);
    head_ = Linear(kFeatureDim, kClasses, rng);
}

Tensor FeatureExtractor::features(const Tensor& images) const {
    if (images.dim() != 4 || images.size(1) != 3) {
        throw DimensionError("feature extractor: expected [B,3,64,64]");
    }
    auto h = silu(n1_.forward(c1_.forward(images)));
    h = silu(n2_.forward(c2_.forward(h)));
    h = silu(n3_.forward(c3_.forward(h)));
    h = avg_pool2d(h, h.size(2));  // global mean pool
    return reshape(h, {images.size(0), kFeatureDim});
}

Tensor FeatureExtractor::logits(const Tensor& images) const {
    return head_.forward(features(images));
}

void FeatureExtractor::collect(const std::string& prefix, ParamMap& out) {
    c1_.collect(prefix + ".c1", out);
    n1_.collect(prefix + ".n1", out);
    c2_.collect(prefix + ".c2", out);
    n2_.collect(prefix + ".n2", out);
    c3_.collect(prefix + ".c3", out);
    n3_.collect(prefix + ".n3", out);
    head_.collect(prefix + ".head", out);
}

FeatureExtractor train_feature_extractor(const Manifest& manifest, int steps, int batch_size,
                                         double lr, std::uint64_t seed) {
    if (manifest.entries.empty()) {
        throw ValidationError("feature extractor: empty dataset");
    }
    Rng rng(seed);
    FeatureExtractor fx(rng);
    ParamMap params;
    fx.collect("fx", params);
    Adam opt(params, {lr, 0.9, 0.999, 1e-8});

    // decode once; targets carry both person and garment statistics
    const int n = static_cast<int>(manifest.entries.size());
    std::vector<Tensor> images(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto s = load_triplet(manifest, i);
        images[static_cast<std::size_t>(i)] = s.target;
        labels[static_cast<std::size_t>(i)] = static_cast<int>(s.garment_spec.pattern);
    }

    const int bsz = std::min(batch_size, n);
    for (int step = 0; step < steps; ++step) {
        Tensor batch({bsz, 3, 64, 64});
        Tensor onehot({bsz, FeatureExtractor::kClasses});
        for (int k = 0; k < bsz; ++k) {
            const int idx = static_cast<int>(rng.uniform_int(0, n - 1));
            const auto& img = images[static_cast<std::size_t>(idx)];
            std::copy(img.data(), img.data() + img.numel(), batch.data() + k * img.numel());
            onehot.at(k, labels[static_cast<std::size_t>(idx)]) = 1.f;
        }
        auto p = softmax(fx.logits(batch), 1);
        auto ce = mul_scalar(sum_all(mul(log(p), onehot)), -1.0 / bsz);
        opt.zero_grad();
        backward(ce);
        opt.step();
    }
    return fx;
}

void EvalReport::finalize() {
    n = static_cast<int>(samples.size());
    ssim_mean = psnr_mean = torso_mean = 0.0;
    for (const auto& s : samples) {
        ssim_mean += s.ssim;
        psnr_mean += s.psnr;
        torso_mean += s.torso_match;
    }
    if (n > 0) {
        ssim_mean /= n;
        psnr_mean /= n;
        torso_mean /= n;
    }
}

void write_report(const EvalReport& report, const std::string& json_path,
                  const std::string& csv_path) {
    nlohmann::json doc;
    doc["aggregate"] = {{"n", report.n},
                        {"ssim_mean", report.ssim_mean},
                        {"psnr_mean", report.psnr_mean},
                        {"torso_match_mean", report.torso_mean},
                        {"frechet", report.frechet}};
    auto rows = nlohmann::json::array();
    for (const auto& s : report.samples) {
        rows.push_back({{"id", s.id},
                        {"ssim", s.ssim},
                        {"psnr", s.psnr},
                        {"torso_match", s.torso_match}});
    }
    doc["samples"] = rows;
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("write_report: cannot open " + json_path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write_report: write failed for " + json_path);

    if (!csv_path.empty()) {
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) throw IoError("write_report: cannot open " + csv_path);
        csv << "sample_id,ssim,psnr,torso_match\n";
        for (const auto& s : report.samples) {
            csv << s.id << "," << s.ssim << "," << s.psnr << "," << s.torso_match << "\n";
        }
        csv << "aggregate," << report.ssim_mean << "," << report.psnr_mean << ","
            << report.torso_mean << ",frechet=" << report.frechet << "\n";
        if (!csv) throw IoError("write_report: write failed for " + csv_path);
    }
}

}  // namespace odpg
