#pragma once

#include <array>
#include <utility>
#include <vector>

#include "odpg/nn.hpp"

namespace odpg {

// ---------------------------------------------------------------------------
// Tiny VAE: 64x64x3 image <-> 16x16x4 latent (downsample factor 4).
// ---------------------------------------------------------------------------

class VaeModel {
  public:
    static constexpr int kLatentChannels = 4;
    static constexpr int kImageSize = 64;
    static constexpr int kLatentSize = 16;

    VaeModel() = default;
    explicit VaeModel(Rng& rng, int base = 16);

    // (mean, logvar), both [B,4,16,16].
    std::pair<Tensor, Tensor> encode_params(const Tensor& image) const;
    // mean when sample == false, else mean + exp(logvar/2) * n.
    Tensor encode(const Tensor& image, bool sample, Rng& rng) const;
    Tensor decode(const Tensor& z) const;

    struct LossBits {
        Tensor total;
        double recon = 0.0;
        double kl = 0.0;
    };
    // MSE(decode(sample), image) + beta * KL(q || N(0,1)).
    LossBits loss(const Tensor& image, double beta, Rng& rng) const;

    void collect(const std::string& prefix, ParamMap& out);

    // Latent normalisation constant fitted after VAE training; diffusion
    // operates on encode() * latent_scale.
    float latent_scale = 1.0f;

  private:
    void validate_image(const Tensor& image) const;

    int base_ = 16;
    Conv2dLayer enc_in_;
    ResidualBlock enc_res1_, enc_res2_, enc_res3_;
    Conv2dLayer enc_down1_, enc_down2_, enc_out_;
    GroupNormLayer enc_norm_;
    Conv2dLayer dec_in_, dec_up1_, dec_up2_, dec_out_;
    ResidualBlock dec_res1_, dec_res2_, dec_res3_;
    GroupNormLayer dec_norm_;
};

// ---------------------------------------------------------------------------
// Hierarchical patch-merge encoder (windowless self-attention per stage).
// Source variant: 3 scales 16/8/4 px at widths [64,128,256]; garment adds
// a fourth 2 px scale at width 512.
// ---------------------------------------------------------------------------

class PyramidEncoder {
  public:
    PyramidEncoder() = default;
    PyramidEncoder(int n_scales, std::vector<int> widths, int heads, Rng& rng);

    // image [B,3,64,64] -> n_scales maps, halving spatial extent per scale.
    std::vector<Tensor> forward(const Tensor& image) const;

    int scales() const { return n_scales_; }
    const std::vector<int>& widths() const { return widths_; }

    void collect(const std::string& prefix, ParamMap& out);

  private:
    int n_scales_ = 0;
    std::vector<int> widths_;
    Conv2dLayer patch_embed_;
    std::vector<TransformerBlock> blocks_;
    std::vector<Conv2dLayer> merges_;
};

// ---------------------------------------------------------------------------
// Pose keypoints -> Gaussian heatmaps -> ResNet feature ladder.
// ---------------------------------------------------------------------------

struct Keypoint {
    float x = 0.0f;
    float y = 0.0f;
    bool visible = true;
};

constexpr int kNumJoints = 13;
using PoseKeypoints = std::array<Keypoint, kNumJoints>;

// Joint order used across the artifact (head plus six left/right pairs;
// the neck used for rendering is derived as the shoulder midpoint).
enum JointId {
    kHead = 0,
    kLeftShoulder,
    kRightShoulder,
    kLeftElbow,
    kRightElbow,
    kLeftWrist,
    kRightWrist,
    kLeftHip,
    kRightHip,
    kLeftKnee,
    kRightKnee,
    kLeftAnkle,
    kRightAnkle
};

// One unit-mass-normalised Gaussian channel per keypoint, scaled so every
// visible channel integrates to exactly 2*pi*sigma^2. Out-of-bounds
// visible keypoints are rejected.
Tensor render_heatmaps(const PoseKeypoints& kps, int size = 64, double sigma = 1.5);

class PoseEncoder {
  public:
    PoseEncoder() = default;
    PoseEncoder(std::vector<int> widths, int gn_groups, Rng& rng);

    // heatmaps [B,13,64,64] -> 3 scales at 16/8/4 px. The heatmap input is
    // downscaled by a factor of 4 before the residual stages.
    std::vector<Tensor> forward(const Tensor& heatmaps) const;

    void collect(const std::string& prefix, ParamMap& out);

  private:
    std::vector<int> widths_;
    Conv2dLayer conv_in_, down1_, down2_;
    ResidualBlock res1_, res2_, res3_;
};

// ---------------------------------------------------------------------------
// Garment token decoder: flattened coarsest garment scale + learned
// positional embeddings, transformer-decoded against learnable queries.
// ---------------------------------------------------------------------------

class GarmentTokenDecoder {
  public:
    GarmentTokenDecoder() = default;
    GarmentTokenDecoder(int in_dim, int mem_len, int n_tokens, int token_dim, int layers,
                        int heads, Rng& rng);

    // f_g4 [B,in_dim,sqrt(mem_len),sqrt(mem_len)] -> [B,n_tokens,token_dim]
    Tensor forward(const Tensor& f_g4) const;

    int tokens() const { return n_tokens_; }
    int token_dim() const { return token_dim_; }

    void collect(const std::string& prefix, ParamMap& out);

  private:
    int in_dim_ = 0, mem_len_ = 0, n_tokens_ = 0, token_dim_ = 0;
    Tensor queries_;  // [n_tokens, token_dim]
    Tensor pos_emb_;  // [mem_len, in_dim]
    Linear mem_proj_;
    std::vector<DecoderBlock> layers_;
};

// ---------------------------------------------------------------------------
// Appearance encoder phi_A for one scale: zero-conv in, transformer
// layers, zero-conv out. Together the boundaries make the bias exactly
// zero at initialisation.
// ---------------------------------------------------------------------------

class AppearanceEncoder {
  public:
    AppearanceEncoder() = default;
    AppearanceEncoder(int channels, int h, int w, int layers, int heads, Rng& rng);

    // (f_s, f_g), both [B,C,H,W] at this scale -> bias [B,H*W,C].
    Tensor forward(const Tensor& f_s, const Tensor& f_g) const;

    int channels() const { return channels_; }
    int height() const { return h_; }
    int width() const { return w_; }

    void collect(const std::string& prefix, ParamMap& out);

  private:
    int channels_ = 0, h_ = 0, w_ = 0;
    ZeroConv2d zc_in_;
    std::vector<TransformerBlock> layers_;
    ZeroConv2d zc_out_;
};

}  // namespace odpg
