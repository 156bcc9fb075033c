#pragma once

#include <string>
#include <vector>

#include "odpg/datasynth.hpp"
#include "odpg/nn.hpp"

namespace odpg {

// Structural similarity over images in [0,1], Gaussian window (11x11,
// sigma 1.5, shrunk to fit small inputs), K1=0.01, K2=0.03, L=1; mean over
// channels and valid positions.
double ssim(const Tensor& a, const Tensor& b);

// 10*log10(1/MSE) on [0,1] images, capped at 99 dB.
double psnr(const Tensor& a, const Tensor& b);

// Frechet distance between feature sets [n,d] and [m,d]:
// |mu_a-mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), covariances regularised
// by +1e-6 I, PSD square roots via eigendecomposition.
double frechet_distance(const Tensor& feats_a, const Tensor& feats_b);

// Mean per-pixel RGB distance (0..1 scale) between the output's torso
// region and the garment base color.
double torso_color_match(const Tensor& output, const GarmentSpec& garment, const PoseSpec& pose);

// Maps [-1,1] image tensors onto the [0,1] range the metrics expect.
Tensor to_unit_range(const Tensor& img);

// Small convolutional classifier over the synthetic garment-pattern
// labels; its penultimate 64-wide activations drive the Frechet metric.
class FeatureExtractor {
  public:
    static constexpr int kFeatureDim = 64;
    static constexpr int kClasses = 3;  // solid / stripes / checker

    FeatureExtractor() = default;
    explicit FeatureExtractor(Rng& rng);

    Tensor features(const Tensor& images) const;  // [B,3,64,64] -> [B,64]
    Tensor logits(const Tensor& images) const;    // [B,3]

    void collect(const std::string& prefix, ParamMap& out);

  private:
    Conv2dLayer c1_, c2_, c3_;
    GroupNormLayer n1_, n2_, n3_;
    Linear head_;
};

// Trains the extractor on the dataset's target images against their
// garment-pattern labels. Deterministic in (manifest, seed).
FeatureExtractor train_feature_extractor(const Manifest& manifest, int steps, int batch_size,
                                         double lr, std::uint64_t seed);

struct SampleMetrics {
    int id = 0;
    double ssim = 0.0;
    double psnr = 0.0;
    double torso_match = 0.0;
};

struct EvalReport {
    std::vector<SampleMetrics> samples;
    double ssim_mean = 0.0;
    double psnr_mean = 0.0;
    double torso_mean = 0.0;
    double frechet = 0.0;
    int n = 0;

    void finalize();  // fills the aggregate means from the rows
};

// report.json always; CSV (sample rows plus one aggregate row) when
// csv_path is non-empty.
void write_report(const EvalReport& report, const std::string& json_path,
                  const std::string& csv_path);

}  // namespace odpg
