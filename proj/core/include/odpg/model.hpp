#pragma once

#include "odpg/encoders.hpp"
#include "odpg/unet.hpp"

namespace odpg {

// The full conditional denoiser: condition encoders plus the
// bias-augmented UNet, trained jointly against a frozen VAE.
class OdpgModel : public Denoiser {
  public:
    OdpgModel() = default;
    OdpgModel(const UNetConfig& cfg, Rng& rng);

    // source/garment [B,3,64,64], pose heatmaps [B,13,64,64] -> encoded
    // conditions with all drop flags cleared.
    ConditionSet encode_conditions(const Tensor& source, const Tensor& pose_heatmaps,
                                   const Tensor& garment) const;

    Tensor predict_eps(const Tensor& z_t, const std::vector<std::int64_t>& ts,
                       const ConditionSet& cond) const override {
        return unet.forward(z_t, ts, cond);
    }

    void collect(const std::string& prefix, ParamMap& out);
    ParamMap parameters();

    UNetConfig cfg;
    PyramidEncoder source_encoder;
    PyramidEncoder garment_encoder;
    PoseEncoder pose_encoder;
    GarmentTokenDecoder token_decoder;
    UNetModel unet;
    bool trained = false;
};

}  // namespace odpg
