#pragma once

#include <cstdint>
#include <vector>

#include "odpg/encoders.hpp"
#include "odpg/nn.hpp"

namespace odpg {

// Encoded conditions for one denoiser call, batch-first. Drop flags mark
// items whose condition is replaced by the corresponding learned null
// embedding inside the UNet; the encoded data itself always stays present.
struct ConditionSet {
    std::vector<Tensor> f_s;  // source pyramid, 3 scales
    std::vector<Tensor> f_p;  // pose pyramid, 3 scales
    std::vector<Tensor> f_g;  // garment pyramid, first 3 scales used here
    Tensor tokens;            // garment tokens [B, n_tokens, d_tok]
    std::vector<std::uint8_t> drop_app, drop_pose, drop_garment;

    int batch() const { return tokens.defined() ? tokens.size(0) : 0; }

    // Copy with every item's flags set to the given pattern.
    ConditionSet with_flags(bool app_dropped, bool pose_dropped, bool garment_dropped) const;
};

// Anything that can predict the noise in a latent given conditions; the
// sampler and guidance code only see this surface.
struct Denoiser {
    virtual ~Denoiser() = default;
    virtual Tensor predict_eps(const Tensor& z_t, const std::vector<std::int64_t>& ts,
                               const ConditionSet& cond) const = 0;
};

struct UNetConfig {
    std::vector<int> widths = {64, 128, 256};
    int latent_channels = 4;
    int latent_size = 16;
    int time_dim = 128;
    int heads = 4;
    int gn_groups = 8;
    int n_tokens = 16;
    int token_dim = 256;
    int phi_layers = 1;
    int max_timestep = 1000;
};

// One bias-augmented query attention site: learnable queries plus an
// externally supplied bias attend over the garment K/V, and the result
// re-enters the hidden path through a zero-initialised projection.
struct BqaSite {
    Tensor q_learn;  // [tokens, channels]
    Linear w_k, w_v;  // token_dim -> channels, no bias (homogeneous maps)
    ZeroConv2d out_proj;
    int h = 0, w = 0, channels = 0, heads = 4;

    BqaSite() = default;
    BqaSite(int h, int w, int channels, int token_dim, int heads, Rng& rng);

    // K,V [B, n_tokens, channels]; bias [B, tokens, channels].
    Tensor apply(const Tensor& hidden, const Tensor& bias, const Tensor& k,
                 const Tensor& v) const;

    void collect(const std::string& prefix, ParamMap& out);
};

// Optional per-block capture used by tests.
struct UNetTrace {
    std::vector<Tensor> down_bias, up_bias;  // bias delivered at each site
    std::vector<Tensor> down_out, up_out;    // hidden after each site
};

class UNetModel : public Denoiser {
  public:
    UNetModel() = default;
    explicit UNetModel(const UNetConfig& cfg, Rng& rng);

    const UNetConfig& config() const { return cfg_; }
    int num_sites() const { return 6; }  // 3 down + 3 up

    // K = W_k^l tokens, V = W_v^l tokens for attention site l (0..2 down,
    // 3..5 up, in forward order).
    std::pair<Tensor, Tensor> project_kv(const Tensor& tokens, int site) const;

    // Residual bias-augmented attention application at one site.
    Tensor bqa_apply(const Tensor& hidden, int site, const Tensor& bias, const Tensor& k,
                     const Tensor& v) const;

    // Noise prediction; ts holds one timestep index per batch item, each in
    // [0, max_timestep).
    Tensor forward(const Tensor& z_t, const std::vector<std::int64_t>& ts,
                   const ConditionSet& cond, UNetTrace* trace = nullptr,
                   bool disable_bqa = false) const;
    Tensor forward(const Tensor& z_t, std::int64_t t, const ConditionSet& cond) const;

    Tensor predict_eps(const Tensor& z_t, const std::vector<std::int64_t>& ts,
                       const ConditionSet& cond) const override {
        return forward(z_t, ts, cond);
    }

    void collect(const std::string& prefix, ParamMap& out);

    const BqaSite& site(int i) const { return sites_[static_cast<std::size_t>(i)]; }
    BqaSite& site_mut(int i) { return sites_[static_cast<std::size_t>(i)]; }

  private:
    Tensor effective_tokens(const ConditionSet& cond) const;
    Tensor pose_bias(const ConditionSet& cond, int scale) const;
    Tensor appearance_up_bias(const ConditionSet& cond, int scale) const;

    UNetConfig cfg_;
    Conv2dLayer conv_in_;
    Linear time_fc1_, time_fc2_;
    std::vector<ResidualBlock> down_res_;
    std::vector<Conv2dLayer> down_conv_;
    ResidualBlock mid_res_;
    std::vector<ResidualBlock> up_res_;   // indexed by scale (0 finest)
    std::vector<Conv2dLayer> up_conv_;
    GroupNormLayer out_norm_;
    Conv2dLayer out_conv_;  // zero-initialised
    std::vector<BqaSite> sites_;          // 0..2 down, 3..5 up(coarse->fine order 2,1,0)
    std::vector<Linear> pose_proj_;       // per down scale
    std::vector<AppearanceEncoder> phi_;  // per up scale
    std::vector<Tensor> null_pose_;       // [C_l] per down scale
    std::vector<Tensor> null_src_, null_gar_;  // [C_l] per up scale
    Tensor null_tokens_;                  // [n_tokens, token_dim]
};

}  // namespace odpg
