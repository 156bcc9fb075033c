#include "odpg/encoders.hpp"

#include <cmath>

#include "odpg/ops.hpp"

namespace odpg {

// ---------------------------------------------------------------------------
// VAE
// ---------------------------------------------------------------------------

VaeModel::VaeModel(Rng& rng, int base) : base_(base) {
    const int b1 = base, b2 = 2 * base, b3 = 4 * base;
    const int g = 8;
    enc_in_ = Conv2dLayer(3, b1, 3, 1, 1, rng);
    enc_res1_ = ResidualBlock(b1, b1, 0, g, rng);
    enc_down1_ = Conv2dLayer(b1, b2, 3, 2, 1, rng);
    enc_res2_ = ResidualBlock(b2, b2, 0, g, rng);
    enc_down2_ = Conv2dLayer(b2, b3, 3, 2, 1, rng);
    enc_res3_ = ResidualBlock(b3, b3, 0, g, rng);
    enc_norm_ = GroupNormLayer(b3, g);
    enc_out_ = Conv2dLayer(b3, 2 * kLatentChannels, 3, 1, 1, rng);

    dec_in_ = Conv2dLayer(kLatentChannels, b3, 3, 1, 1, rng);
    dec_res1_ = ResidualBlock(b3, b3, 0, g, rng);
    dec_up1_ = Conv2dLayer(b3, b2, 3, 1, 1, rng);
    dec_res2_ = ResidualBlock(b2, b2, 0, g, rng);
    dec_up2_ = Conv2dLayer(b2, b1, 3, 1, 1, rng);
    dec_res3_ = ResidualBlock(b1, b1, 0, g, rng);
    dec_norm_ = GroupNormLayer(b1, g);
    dec_out_ = Conv2dLayer(b1, 3, 3, 1, 1, rng);
}

void VaeModel::validate_image(const Tensor& image) const {
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != kImageSize ||
        image.size(3) != kImageSize) {
        throw DimensionError("vae: expected image [B,3,64,64], got " + shape_str(image.shape()));
    }
    for (std::int64_t i = 0; i < image.numel(); ++i) {
        const float v = image.data()[i];
        if (v < -1.0001f || v > 1.0001f) {
            throw ValidationError("vae: pixel values must lie in [-1,1], found " +
                                  std::to_string(v));
        }
    }
}

std::pair<Tensor, Tensor> VaeModel::encode_params(const Tensor& image) const {
    validate_image(image);
    auto h = enc_in_.forward(image);
    h = enc_res1_.forward(h, Tensor());
    h = enc_down1_.forward(h);
    h = enc_res2_.forward(h, Tensor());
    h = enc_down2_.forward(h);
    h = enc_res3_.forward(h, Tensor());
    h = enc_out_.forward(silu(enc_norm_.forward(h)));
    auto mean = slice(h, 1, 0, kLatentChannels);
    auto logvar = slice(h, 1, kLatentChannels, kLatentChannels);
    return {mean, logvar};
}

Tensor VaeModel::encode(const Tensor& image, bool sample, Rng& rng) const {
    auto [mean, logvar] = encode_params(image);
    if (!sample) return mean;
    auto noise = Tensor::randn(mean.shape(), rng);
    return add(mean, mul(exp(mul_scalar(logvar, 0.5)), noise));
}

Tensor VaeModel::decode(const Tensor& z) const {
    if (z.dim() != 4 || z.size(1) != kLatentChannels || z.size(2) != kLatentSize ||
        z.size(3) != kLatentSize) {
        throw DimensionError("vae: expected latent [B,4,16,16], got " + shape_str(z.shape()));
    }
    auto h = dec_in_.forward(z);
    h = dec_res1_.forward(h, Tensor());
    h = dec_up1_.forward(upsample_nearest2(h));
    h = dec_res2_.forward(h, Tensor());
    h = dec_up2_.forward(upsample_nearest2(h));
    h = dec_res3_.forward(h, Tensor());
    return dec_out_.forward(silu(dec_norm_.forward(h)));
}

VaeModel::LossBits VaeModel::loss(const Tensor& image, double beta, Rng& rng) const {
    auto [mean, logvar] = encode_params(image);
    auto noise = Tensor::randn(mean.shape(), rng);
    auto z = add(mean, mul(exp(mul_scalar(logvar, 0.5)), noise));
    auto recon = mse(decode(z), image);
    // KL(N(mu, sigma^2) || N(0,1)) per latent element:
    // -(1 + logvar - mu^2 - e^logvar) / 2
    auto kl_elem =
        mul_scalar(sub(add_scalar(logvar, 1.0), add(mul(mean, mean), exp(logvar))), -0.5);
    auto kl = mean_all(kl_elem);
    LossBits bits;
    bits.recon = recon.item();
    bits.kl = kl.item();
    bits.total = add(recon, mul_scalar(kl, beta));
    return bits;
}

void VaeModel::collect(const std::string& prefix, ParamMap& out) {
    enc_in_.collect(prefix + ".enc_in", out);
    enc_res1_.collect(prefix + ".enc_res1", out);
    enc_down1_.collect(prefix + ".enc_down1", out);
    enc_res2_.collect(prefix + ".enc_res2", out);
    enc_down2_.collect(prefix + ".enc_down2", out);
    enc_res3_.collect(prefix + ".enc_res3", out);
    enc_norm_.collect(prefix + ".enc_norm", out);
    enc_out_.collect(prefix + ".enc_out", out);
    dec_in_.collect(prefix + ".dec_in", out);
    dec_res1_.collect(prefix + ".dec_res1", out);
    dec_up1_.collect(prefix + ".dec_up1", out);
    dec_res2_.collect(prefix + ".dec_res2", out);
    dec_up2_.collect(prefix + ".dec_up2", out);
    dec_res3_.collect(prefix + ".dec_res3", out);
    dec_norm_.collect(prefix + ".dec_norm", out);
    dec_out_.collect(prefix + ".dec_out", out);
}

// ---------------------------------------------------------------------------
// Pyramid encoder
// ---------------------------------------------------------------------------

PyramidEncoder::PyramidEncoder(int n_scales, std::vector<int> widths, int heads, Rng& rng)
    : n_scales_(n_scales), widths_(std::move(widths)) {
    if (n_scales_ < 1 || static_cast<int>(widths_.size()) < n_scales_) {
        throw ConfigError("pyramid encoder: need one width per scale");
    }
    patch_embed_ = Conv2dLayer(3, widths_[0], 4, 4, 0, rng);
    for (int s = 0; s < n_scales_; ++s) {
        blocks_.emplace_back(widths_[s], heads, 2, rng);
        if (s + 1 < n_scales_) merges_.emplace_back(widths_[s], widths_[s + 1], 2, 2, 0, rng);
    }
}

std::vector<Tensor> PyramidEncoder::forward(const Tensor& image) const {
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != VaeModel::kImageSize ||
        image.size(3) != VaeModel::kImageSize) {
        throw DimensionError("pyramid encoder: expected [B,3,64,64], got " +
                             shape_str(image.shape()));
    }
    std::vector<Tensor> scales;
    auto x = patch_embed_.forward(image);
    for (int s = 0; s < n_scales_; ++s) {
        const int h = x.size(2), w = x.size(3);
        auto tokens = blocks_[s].forward(flatten_tokens(x));
        x = unflatten_tokens(tokens, h, w);
        scales.push_back(x);
        if (s + 1 < n_scales_) x = merges_[s].forward(x);
    }
    return scales;
}

void PyramidEncoder::collect(const std::string& prefix, ParamMap& out) {
    patch_embed_.collect(prefix + ".patch_embed", out);
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
        blocks_[s].collect(prefix + ".stage" + std::to_string(s), out);
        if (s < merges_.size()) merges_[s].collect(prefix + ".merge" + std::to_string(s), out);
    }
}

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------

Tensor render_heatmaps(const PoseKeypoints& kps, int size, double sigma) {
    Tensor out({kNumJoints, size, size});
    const double norm_mass = 2.0 * M_PI * sigma * sigma;
    for (int j = 0; j < kNumJoints; ++j) {
        const auto& kp = kps[static_cast<std::size_t>(j)];
        if (!kp.visible) continue;
        if (kp.x < 0.0f || kp.x >= static_cast<float>(size) || kp.y < 0.0f ||
            kp.y >= static_cast<float>(size)) {
            throw ValidationError("render_heatmaps: visible keypoint " + std::to_string(j) +
                                  " at (" + std::to_string(kp.x) + "," + std::to_string(kp.y) +
                                  ") outside image bounds");
        }
        float* ch = out.data() + static_cast<std::int64_t>(j) * size * size;
        double total = 0.0;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dx = x - kp.x;
                const double dy = y - kp.y;
                const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                ch[y * size + x] = static_cast<float>(v);
                total += v;
            }
        }
        // every visible channel integrates to exactly 2*pi*sigma^2
        const double scale = norm_mass / total;
        for (int i = 0; i < size * size; ++i) ch[i] = static_cast<float>(ch[i] * scale);
    }
    return out;
}

PoseEncoder::PoseEncoder(std::vector<int> widths, int gn_groups, Rng& rng)
    : widths_(std::move(widths)) {
    if (widths_.size() != 3) throw ConfigError("pose encoder: expects 3 scale widths");
    conv_in_ = Conv2dLayer(kNumJoints, widths_[0], 3, 1, 1, rng);
    res1_ = ResidualBlock(widths_[0], widths_[0], 0, gn_groups, rng);
    down1_ = Conv2dLayer(widths_[0], widths_[1], 3, 2, 1, rng);
    res2_ = ResidualBlock(widths_[1], widths_[1], 0, gn_groups, rng);
    down2_ = Conv2dLayer(widths_[1], widths_[2], 3, 2, 1, rng);
    res3_ = ResidualBlock(widths_[2], widths_[2], 0, gn_groups, rng);
}

std::vector<Tensor> PoseEncoder::forward(const Tensor& heatmaps) const {
    if (heatmaps.dim() != 4 || heatmaps.size(1) != kNumJoints) {
        throw DimensionError("pose encoder: expected [B,13,64,64], got " +
                             shape_str(heatmaps.shape()));
    }
    // pose input is downscaled by a factor of 4 before the blocks
    auto x = avg_pool2d(heatmaps, 4);
    auto f1 = res1_.forward(conv_in_.forward(x), Tensor());
    auto f2 = res2_.forward(down1_.forward(f1), Tensor());
    auto f3 = res3_.forward(down2_.forward(f2), Tensor());
    return {f1, f2, f3};
}

void PoseEncoder::collect(const std::string& prefix, ParamMap& out) {
    conv_in_.collect(prefix + ".conv_in", out);
    res1_.collect(prefix + ".res1", out);
    down1_.collect(prefix + ".down1", out);
    res2_.collect(prefix + ".res2", out);
    down2_.collect(prefix + ".down2", out);
    res3_.collect(prefix + ".res3", out);
}

// ---------------------------------------------------------------------------
// Garment token decoder
// ---------------------------------------------------------------------------

GarmentTokenDecoder::GarmentTokenDecoder(int in_dim, int mem_len, int n_tokens, int token_dim,
                                         int layers, int heads, Rng& rng)
    : in_dim_(in_dim), mem_len_(mem_len), n_tokens_(n_tokens), token_dim_(token_dim) {
    queries_ = Tensor::randn({n_tokens, token_dim}, rng, 0.0, 0.02);
    queries_.set_requires_grad(true);
    pos_emb_ = Tensor::randn({mem_len, in_dim}, rng, 0.0, 0.02);
    pos_emb_.set_requires_grad(true);
    mem_proj_ = Linear(in_dim, token_dim, rng);
    for (int i = 0; i < layers; ++i) layers_.emplace_back(token_dim, heads, 2, rng);
}

Tensor GarmentTokenDecoder::forward(const Tensor& f_g4) const {
    if (f_g4.dim() != 4 || f_g4.size(1) != in_dim_ || f_g4.size(2) * f_g4.size(3) != mem_len_) {
        throw DimensionError("garment tokens: expected coarsest scale [B," +
                             std::to_string(in_dim_) + ",h,w] with h*w=" +
                             std::to_string(mem_len_) + ", got " + shape_str(f_g4.shape()));
    }
    const int b = f_g4.size(0);
    auto mem_tokens = flatten_tokens(f_g4);  // [B, mem_len, in_dim]
    mem_tokens = add(mem_tokens, broadcast_batch(pos_emb_, b));
    auto mem = mem_proj_.forward(mem_tokens);  // [B, mem_len, token_dim]
    auto q = broadcast_batch(queries_, b);
    for (const auto& layer : layers_) q = layer.forward(q, mem);
    return q;
}

void GarmentTokenDecoder::collect(const std::string& prefix, ParamMap& out) {
    out.emplace_back(prefix + ".queries", queries_);
    out.emplace_back(prefix + ".pos_emb", pos_emb_);
    mem_proj_.collect(prefix + ".mem_proj", out);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
}

// ---------------------------------------------------------------------------
// Appearance encoder
// ---------------------------------------------------------------------------

AppearanceEncoder::AppearanceEncoder(int channels, int h, int w, int layers, int heads, Rng& rng)
    : channels_(channels), h_(h), w_(w) {
    zc_in_ = ZeroConv2d(2 * channels, channels);
    for (int i = 0; i < layers; ++i) layers_.emplace_back(channels, heads, 2, rng);
    zc_out_ = ZeroConv2d(channels, channels);
}

Tensor AppearanceEncoder::forward(const Tensor& f_s, const Tensor& f_g) const {
    if (f_s.dim() != 4 || f_s.size(1) != channels_ || f_s.size(2) != h_ || f_s.size(3) != w_ ||
        f_s.shape() != f_g.shape()) {
        throw DimensionError("appearance encoder: scale mismatch, expected both inputs [B," +
                             std::to_string(channels_) + "," + std::to_string(h_) + "," +
                             std::to_string(w_) + "], got " + shape_str(f_s.shape()) + " and " +
                             shape_str(f_g.shape()));
    }
    auto x = zc_in_.forward(concat(std::vector<Tensor>{f_s, f_g}, 1));
    auto tokens = flatten_tokens(x);
    for (const auto& layer : layers_) tokens = layer.forward(tokens);
    auto out = zc_out_.forward(unflatten_tokens(tokens, h_, w_));
    return flatten_tokens(out);
}

void AppearanceEncoder::collect(const std::string& prefix, ParamMap& out) {
    zc_in_.collect(prefix + ".zc_in", out);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
    zc_out_.collect(prefix + ".zc_out", out);
}

}  // namespace odpg
