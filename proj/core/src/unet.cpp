#include "odpg/unet.hpp"

#include <algorithm>

#include "odpg/ops.hpp"

namespace odpg {

namespace {

// [C] -> [B, n, C]
Tensor broadcast_rows(const Tensor& v, int batch, int n) {
    return broadcast_batch(broadcast_batch(v, n), batch);
}

std::vector<double> keep_mask(const std::vector<std::uint8_t>& dropped, int batch) {
    if (static_cast<int>(dropped.size()) != batch) {
        throw DimensionError("condition set: drop-flag count does not match batch extent");
    }
    std::vector<double> keep(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) keep[static_cast<std::size_t>(i)] = dropped[i] ? 0.0 : 1.0;
    return keep;
}

std::vector<double> inverted(const std::vector<double>& m) {
    std::vector<double> inv(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) inv[i] = 1.0 - m[i];
    return inv;
}

}  // namespace

ConditionSet ConditionSet::with_flags(bool app_dropped, bool pose_dropped,
                                      bool garment_dropped) const {
    ConditionSet out = *this;
    const auto b = static_cast<std::size_t>(batch());
    out.drop_app.assign(b, app_dropped ? 1 : 0);
    out.drop_pose.assign(b, pose_dropped ? 1 : 0);
    out.drop_garment.assign(b, garment_dropped ? 1 : 0);
    return out;
}

// ---------------------------------------------------------------------------
// BqaSite
// ---------------------------------------------------------------------------

BqaSite::BqaSite(int h_, int w_, int channels_, int token_dim, int heads_, Rng& rng)
    : h(h_), w(w_), channels(channels_), heads(heads_) {
    q_learn = Tensor::randn({h * w, channels}, rng, 0.0, 0.02);
    q_learn.set_requires_grad(true);
    w_k = Linear(token_dim, channels, rng, /*with_bias=*/false);
    w_v = Linear(token_dim, channels, rng, /*with_bias=*/false);
    out_proj = ZeroConv2d(channels, channels);
}

Tensor BqaSite::apply(const Tensor& hidden, const Tensor& bias, const Tensor& k,
                      const Tensor& v) const {
    const int b = hidden.size(0);
    if (bias.dim() != 3 || bias.size(0) != b || bias.size(1) != h * w ||
        bias.size(2) != channels) {
        throw DimensionError("bqa: bias shape " + shape_str(bias.shape()) +
                             " does not match query bank [" + std::to_string(h * w) + "," +
                             std::to_string(channels) + "]");
    }
    auto q = add(broadcast_batch(q_learn, b), bias);
    auto attn = attention_core(q, k, v, heads);
    auto res = out_proj.forward(unflatten_tokens(attn, h, w));
    return add(hidden, res);
}

void BqaSite::collect(const std::string& prefix, ParamMap& out) {
    out.emplace_back(prefix + ".q_learn", q_learn);
    w_k.collect(prefix + ".w_k", out);
    w_v.collect(prefix + ".w_v", out);
    out_proj.collect(prefix + ".out_proj", out);
}

// ---------------------------------------------------------------------------
// UNetModel
// ---------------------------------------------------------------------------

UNetModel::UNetModel(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const auto& w = cfg_.widths;
    if (w.size() != 3) throw ConfigError("unet: expects 3 scale widths");
    conv_in_ = Conv2dLayer(cfg_.latent_channels, w[0], 3, 1, 1, rng);
    time_fc1_ = Linear(cfg_.time_dim, cfg_.time_dim, rng);
    time_fc2_ = Linear(cfg_.time_dim, cfg_.time_dim, rng);

    int side = cfg_.latent_size;
    for (int l = 0; l < 3; ++l) {
        down_res_.emplace_back(w[static_cast<std::size_t>(l)], w[static_cast<std::size_t>(l)],
                               cfg_.time_dim, cfg_.gn_groups, rng);
        sites_.emplace_back(side, side, w[static_cast<std::size_t>(l)], cfg_.token_dim,
                            cfg_.heads, rng);
        pose_proj_.emplace_back(w[static_cast<std::size_t>(l)], w[static_cast<std::size_t>(l)],
                                rng);
        null_pose_.push_back(Tensor::randn({w[static_cast<std::size_t>(l)]}, rng, 0.0, 0.02));
        null_pose_.back().set_requires_grad(true);
        if (l < 2) {
            down_conv_.emplace_back(w[static_cast<std::size_t>(l)],
                                    w[static_cast<std::size_t>(l + 1)], 3, 2, 1, rng);
        }
        side /= 2;
    }
    mid_res_ = ResidualBlock(w[2], w[2], cfg_.time_dim, cfg_.gn_groups, rng);

    // up path, stored per scale (0 = finest)
    up_res_.resize(3);
    up_conv_.resize(2);
    side = cfg_.latent_size;
    std::vector<int> sides = {side, side / 2, side / 4};
    for (int l = 2; l >= 0; --l) {
        up_res_[static_cast<std::size_t>(l)] =
            ResidualBlock(2 * w[static_cast<std::size_t>(l)], w[static_cast<std::size_t>(l)],
                          cfg_.time_dim, cfg_.gn_groups, rng);
        sites_.emplace_back(sides[static_cast<std::size_t>(l)], sides[static_cast<std::size_t>(l)],
                            w[static_cast<std::size_t>(l)], cfg_.token_dim, cfg_.heads, rng);
        phi_.emplace_back(w[static_cast<std::size_t>(l)], sides[static_cast<std::size_t>(l)],
                          sides[static_cast<std::size_t>(l)], cfg_.phi_layers, cfg_.heads, rng);
        null_src_.push_back(Tensor::randn({w[static_cast<std::size_t>(l)]}, rng, 0.0, 0.02));
        null_src_.back().set_requires_grad(true);
        null_gar_.push_back(Tensor::randn({w[static_cast<std::size_t>(l)]}, rng, 0.0, 0.02));
        null_gar_.back().set_requires_grad(true);
        if (l > 0) {
            up_conv_[static_cast<std::size_t>(l - 1)] =
                Conv2dLayer(w[static_cast<std::size_t>(l)], w[static_cast<std::size_t>(l - 1)], 3,
                            1, 1, rng);
        }
    }
    // phi_/null_src_/null_gar_ were filled coarse-to-fine; reorder to scale order
    std::reverse(phi_.begin(), phi_.end());
    std::reverse(null_src_.begin(), null_src_.end());
    std::reverse(null_gar_.begin(), null_gar_.end());

    null_tokens_ = Tensor::randn({cfg_.n_tokens, cfg_.token_dim}, rng, 0.0, 0.02);
    null_tokens_.set_requires_grad(true);

    out_norm_ = GroupNormLayer(w[0], cfg_.gn_groups);
    out_conv_ = Conv2dLayer(w[0], cfg_.latent_channels, 3, 1, 1, rng);
}

std::pair<Tensor, Tensor> UNetModel::project_kv(const Tensor& tokens, int site) const {
    if (site < 0 || site >= num_sites()) {
        throw ConfigError("project_kv: unknown attention site " + std::to_string(site));
    }
    const auto& s = sites_[static_cast<std::size_t>(site)];
    return {s.w_k.forward(tokens), s.w_v.forward(tokens)};
}

Tensor UNetModel::bqa_apply(const Tensor& hidden, int site, const Tensor& bias, const Tensor& k,
                            const Tensor& v) const {
    if (site < 0 || site >= num_sites()) {
        throw ConfigError("bqa_apply: unknown attention site " + std::to_string(site));
    }
    return sites_[static_cast<std::size_t>(site)].apply(hidden, bias, k, v);
}

Tensor UNetModel::effective_tokens(const ConditionSet& cond) const {
    const int b = cond.batch();
    if (!cond.tokens.defined() || cond.tokens.dim() != 3 ||
        cond.tokens.size(1) != cfg_.n_tokens || cond.tokens.size(2) != cfg_.token_dim) {
        throw DimensionError("unet: garment tokens must be [B," + std::to_string(cfg_.n_tokens) +
                             "," + std::to_string(cfg_.token_dim) + "]");
    }
    auto keep = keep_mask(cond.drop_garment, b);
    return add(mul_batch_scalar(cond.tokens, keep),
               mul_batch_scalar(broadcast_batch(null_tokens_, b), inverted(keep)));
}

Tensor UNetModel::pose_bias(const ConditionSet& cond, int scale) const {
    const int b = cond.batch();
    const auto& f = cond.f_p.at(static_cast<std::size_t>(scale));
    const auto& s = sites_[static_cast<std::size_t>(scale)];
    if (f.dim() != 4 || f.size(1) != s.channels || f.size(2) != s.h || f.size(3) != s.w) {
        throw DimensionError("unet: pose features at scale " + std::to_string(scale) +
                             " expected [B," + std::to_string(s.channels) + "," +
                             std::to_string(s.h) + "," + std::to_string(s.w) + "], got " +
                             shape_str(f.shape()));
    }
    auto proj = pose_proj_[static_cast<std::size_t>(scale)].forward(flatten_tokens(f));
    auto keep = keep_mask(cond.drop_pose, b);
    auto nulls = broadcast_rows(null_pose_[static_cast<std::size_t>(scale)], b, s.h * s.w);
    return add(mul_batch_scalar(proj, keep), mul_batch_scalar(nulls, inverted(keep)));
}

Tensor UNetModel::appearance_up_bias(const ConditionSet& cond, int scale) const {
    const int b = cond.batch();
    const auto& phi = phi_[static_cast<std::size_t>(scale)];
    const auto& f_s = cond.f_s.at(static_cast<std::size_t>(scale));
    const auto& f_g = cond.f_g.at(static_cast<std::size_t>(scale));
    auto keep_a = keep_mask(cond.drop_app, b);
    auto keep_g = keep_mask(cond.drop_garment, b);
    auto null_s = broadcast_channels(null_src_[static_cast<std::size_t>(scale)], b, phi.height(),
                                     phi.width());
    auto null_g = broadcast_channels(null_gar_[static_cast<std::size_t>(scale)], b, phi.height(),
                                     phi.width());
    auto fs_eff = add(mul_batch_scalar(f_s, keep_a), mul_batch_scalar(null_s, inverted(keep_a)));
    auto fg_eff = add(mul_batch_scalar(f_g, keep_g), mul_batch_scalar(null_g, inverted(keep_g)));
    return phi.forward(fs_eff, fg_eff);
}

Tensor UNetModel::forward(const Tensor& z_t, const std::vector<std::int64_t>& ts,
                          const ConditionSet& cond, UNetTrace* trace, bool disable_bqa) const {
    if (z_t.dim() != 4 || z_t.size(1) != cfg_.latent_channels ||
        z_t.size(2) != cfg_.latent_size || z_t.size(3) != cfg_.latent_size) {
        throw DimensionError("unet: latent must be [B," + std::to_string(cfg_.latent_channels) +
                             "," + std::to_string(cfg_.latent_size) + "," +
                             std::to_string(cfg_.latent_size) + "], got " +
                             shape_str(z_t.shape()));
    }
    const int b = z_t.size(0);
    if (static_cast<int>(ts.size()) != b) {
        throw ValidationError("unet: need one timestep per batch item");
    }
    for (auto t : ts) {
        if (t < 0 || t >= cfg_.max_timestep) {
            throw ValidationError("unet: timestep " + std::to_string(t) + " outside [0," +
                                  std::to_string(cfg_.max_timestep) + ")");
        }
    }
    if (cond.batch() != b) throw DimensionError("unet: condition batch != latent batch");

    auto temb = time_fc2_.forward(silu(time_fc1_.forward(time_embed<float>(ts, cfg_.time_dim))));
    auto tokens_eff = effective_tokens(cond);

    auto h = conv_in_.forward(z_t);
    std::vector<Tensor> skips;
    for (int l = 0; l < 3; ++l) {
        h = down_res_[static_cast<std::size_t>(l)].forward(h, temb);
        auto bias = pose_bias(cond, l);
        if (trace) trace->down_bias.push_back(bias.detach());
        if (!disable_bqa) {
            auto [k, v] = project_kv(tokens_eff, l);
            h = sites_[static_cast<std::size_t>(l)].apply(h, bias, k, v);
        }
        if (trace) trace->down_out.push_back(h.detach());
        skips.push_back(h);
        if (l < 2) h = down_conv_[static_cast<std::size_t>(l)].forward(h);
    }

    h = mid_res_.forward(h, temb);

    for (int l = 2; l >= 0; --l) {
        h = concat(std::vector<Tensor>{h, skips[static_cast<std::size_t>(l)]}, 1);
        h = up_res_[static_cast<std::size_t>(l)].forward(h, temb);
        auto bias = appearance_up_bias(cond, l);
        if (trace) trace->up_bias.push_back(bias.detach());
        if (!disable_bqa) {
            const int site = 3 + (2 - l);
            auto [k, v] = project_kv(tokens_eff, site);
            h = sites_[static_cast<std::size_t>(site)].apply(h, bias, k, v);
        }
        if (trace) trace->up_out.push_back(h.detach());
        if (l > 0) h = up_conv_[static_cast<std::size_t>(l - 1)].forward(upsample_nearest2(h));
    }

    return out_conv_.forward(silu(out_norm_.forward(h)));
}

Tensor UNetModel::forward(const Tensor& z_t, std::int64_t t, const ConditionSet& cond) const {
    return forward(z_t, std::vector<std::int64_t>(static_cast<std::size_t>(z_t.size(0)), t), cond);
}

void UNetModel::collect(const std::string& prefix, ParamMap& out) {
    conv_in_.collect(prefix + ".conv_in", out);
    time_fc1_.collect(prefix + ".time_fc1", out);
    time_fc2_.collect(prefix + ".time_fc2", out);
    for (int l = 0; l < 3; ++l) {
        down_res_[static_cast<std::size_t>(l)].collect(prefix + ".down" + std::to_string(l), out);
        sites_[static_cast<std::size_t>(l)].collect(prefix + ".site_d" + std::to_string(l), out);
        pose_proj_[static_cast<std::size_t>(l)].collect(
            prefix + ".pose_proj" + std::to_string(l), out);
        out.emplace_back(prefix + ".null_pose" + std::to_string(l),
                         null_pose_[static_cast<std::size_t>(l)]);
        if (l < 2) {
            down_conv_[static_cast<std::size_t>(l)].collect(
                prefix + ".down_conv" + std::to_string(l), out);
        }
    }
    mid_res_.collect(prefix + ".mid", out);
    for (int l = 2; l >= 0; --l) {
        up_res_[static_cast<std::size_t>(l)].collect(prefix + ".up" + std::to_string(l), out);
        sites_[static_cast<std::size_t>(3 + (2 - l))].collect(
            prefix + ".site_u" + std::to_string(l), out);
        phi_[static_cast<std::size_t>(l)].collect(prefix + ".phi" + std::to_string(l), out);
        out.emplace_back(prefix + ".null_src" + std::to_string(l),
                         null_src_[static_cast<std::size_t>(l)]);
        out.emplace_back(prefix + ".null_gar" + std::to_string(l),
                         null_gar_[static_cast<std::size_t>(l)]);
        if (l > 0) {
            up_conv_[static_cast<std::size_t>(l - 1)].collect(
                prefix + ".up_conv" + std::to_string(l - 1), out);
        }
    }
    out.emplace_back(prefix + ".null_tokens", null_tokens_);
    out_norm_.collect(prefix + ".out_norm", out);
    out_conv_.collect(prefix + ".out_conv", out);
}

}  // namespace odpg
