#include "odpg/model.hpp"

namespace odpg {

OdpgModel::OdpgModel(const UNetConfig& cfg_, Rng& rng) : cfg(cfg_) {
    const auto& w = cfg.widths;
    source_encoder = PyramidEncoder(3, {w[0], w[1], w[2]}, cfg.heads, rng);
    garment_encoder = PyramidEncoder(4, {w[0], w[1], w[2], 2 * w[2]}, cfg.heads, rng);
    pose_encoder = PoseEncoder({w[0], w[1], w[2]}, cfg.gn_groups, rng);
    token_decoder =
        GarmentTokenDecoder(2 * w[2], 4, cfg.n_tokens, cfg.token_dim, 2, cfg.heads, rng);
    unet = UNetModel(cfg, rng);
}

ConditionSet OdpgModel::encode_conditions(const Tensor& source, const Tensor& pose_heatmaps,
                                          const Tensor& garment) const {
    ConditionSet cond;
    cond.f_s = source_encoder.forward(source);
    cond.f_g = garment_encoder.forward(garment);
    cond.tokens = token_decoder.forward(cond.f_g.back());
    cond.f_p = pose_encoder.forward(pose_heatmaps);
    const auto b = static_cast<std::size_t>(source.size(0));
    cond.drop_app.assign(b, 0);
    cond.drop_pose.assign(b, 0);
    cond.drop_garment.assign(b, 0);
    return cond;
}

void OdpgModel::collect(const std::string& prefix, ParamMap& out) {
    source_encoder.collect(prefix + ".src_enc", out);
    garment_encoder.collect(prefix + ".gar_enc", out);
    pose_encoder.collect(prefix + ".pose_enc", out);
    token_decoder.collect(prefix + ".tok_dec", out);
    unet.collect(prefix + ".unet", out);
}

ParamMap OdpgModel::parameters() {
    ParamMap out;
    collect("model", out);
    return out;
}

}  // namespace odpg
