#include "odpg/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "odpg/ops.hpp"

namespace odpg {

double NoiseSchedule::abar(int t) const {
    if (t < 0 || t > steps) {
        throw ValidationError("schedule: t=" + std::to_string(t) + " outside [0," +
                              std::to_string(steps) + "]");
    }
    return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ConfigError("schedule: T must be >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.steps = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double b = beta_start + (beta_end - beta_start) * i / (T - 1);
        s.beta[static_cast<std::size_t>(i)] = b;
        s.alpha[static_cast<std::size_t>(i)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(i)] = prod;
    }
    return s;
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    return forward_diffuse(z0, std::vector<int>(static_cast<std::size_t>(z0.size(0)), t), eps,
                           sched);
}

Tensor forward_diffuse(const Tensor& z0, const std::vector<int>& ts, const Tensor& eps,
                       const NoiseSchedule& sched) {
    if (z0.shape() != eps.shape()) {
        throw DimensionError("forward_diffuse: eps shape must equal z0 shape");
    }
    const int b = z0.size(0);
    if (static_cast<int>(ts.size()) != b) {
        throw ValidationError("forward_diffuse: need one t per batch item");
    }
    std::vector<double> sa(static_cast<std::size_t>(b)), sn(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        const int t = ts[static_cast<std::size_t>(i)];
        if (t < 1 || t > sched.steps) {
            throw ValidationError("forward_diffuse: t=" + std::to_string(t) + " outside [1," +
                                  std::to_string(sched.steps) + "]");
        }
        const double ab = sched.abar(t);
        sa[static_cast<std::size_t>(i)] = std::sqrt(ab);
        sn[static_cast<std::size_t>(i)] = std::sqrt(1.0 - ab);
    }
    return add(mul_batch_scalar(z0, sa), mul_batch_scalar(eps, sn));
}

ConditionSet drop_conditions(const ConditionSet& cond, double p, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw ValidationError("drop_conditions: p must lie in [0,1]");
    ConditionSet out = cond;
    const auto b = static_cast<std::size_t>(cond.batch());
    out.drop_app.resize(b);
    out.drop_pose.resize(b);
    out.drop_garment.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        out.drop_app[i] = rng.bernoulli(p) ? 1 : 0;
        out.drop_pose[i] = rng.bernoulli(p) ? 1 : 0;
        out.drop_garment[i] = rng.bernoulli(p) ? 1 : 0;
    }
    return out;
}

namespace {

// Scaled frozen-VAE latents for diffusion.
Tensor encode_frozen(const VaeModel& vae, const Tensor& image) {
    NoGradGuard ng;
    Rng unused(0);
    auto z = vae.encode(image, /*sample=*/false, unused);
    return mul_scalar(z, static_cast<double>(vae.latent_scale)).detach();
}

}  // namespace

Tensor denoising_loss(const Denoiser& model, const ConditionSet& cond, const Tensor& z0,
                      const std::vector<int>& ts, const Tensor& eps, const NoiseSchedule& sched) {
    auto z_t = forward_diffuse(z0, ts, eps, sched);
    std::vector<std::int64_t> idx(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) idx[i] = ts[i] - 1;  // 0-based model index
    return mse(model.predict_eps(z_t, idx, cond), eps);
}

LossBreakdown training_loss(const OdpgModel& model, const VaeModel& vae, const TrainBatch& batch,
                            const NoiseSchedule& sched, double p_drop, double lambda_rec,
                            Rng& rng) {
    if (!batch.target.defined()) {
        throw ValidationError("training_loss: batch is missing the ground-truth image");
    }
    if (!batch.source.defined() || !batch.garment.defined() || !batch.source_pose.defined() ||
        !batch.target_pose.defined()) {
        throw ValidationError("training_loss: incomplete batch");
    }
    const int b = batch.source.size(0);

    // Shared appearance/garment encodings; the two loss branches reuse the
    // same graph nodes so encoder gradients accumulate across both.
    auto f_s = model.source_encoder.forward(batch.source);
    auto f_g = model.garment_encoder.forward(batch.garment);
    auto tokens = model.token_decoder.forward(f_g.back());

    ConditionSet cond_target;
    cond_target.f_s = f_s;
    cond_target.f_g = f_g;
    cond_target.tokens = tokens;
    cond_target.f_p = model.pose_encoder.forward(batch.target_pose);
    cond_target.drop_app.assign(static_cast<std::size_t>(b), 0);
    cond_target.drop_pose.assign(static_cast<std::size_t>(b), 0);
    cond_target.drop_garment.assign(static_cast<std::size_t>(b), 0);
    cond_target = drop_conditions(cond_target, p_drop, rng);

    ConditionSet cond_source = cond_target;
    cond_source.f_p = model.pose_encoder.forward(batch.source_pose);
    cond_source = drop_conditions(cond_source, p_drop, rng);

    auto z0_target = encode_frozen(vae, batch.target);
    auto z0_source = encode_frozen(vae, batch.source);

    auto draw_ts = [&]() {
        std::vector<int> ts(static_cast<std::size_t>(b));
        for (auto& t : ts) t = static_cast<int>(rng.uniform_int(1, sched.steps));
        return ts;
    };

    const auto ts_mse = draw_ts();
    auto eps_mse = Tensor::randn(z0_target.shape(), rng);
    auto l_mse = denoising_loss(model.unet, cond_target, z0_target, ts_mse, eps_mse, sched);

    const auto ts_rec = draw_ts();
    auto eps_rec = Tensor::randn(z0_source.shape(), rng);
    auto l_rec = denoising_loss(model.unet, cond_source, z0_source, ts_rec, eps_rec, sched);

    LossBreakdown out;
    out.lambda_rec = lambda_rec;
    out.total = add(l_mse, mul_scalar(l_rec, lambda_rec));
    out.l_mse = l_mse.item();
    out.l_rec = l_rec.item();
    out.l_overall = out.total.item();
    return out;
}

Tensor cfg_epsilon(const Denoiser& model, const Tensor& z_t, int t, const ConditionSet& cond,
                   const GuidanceWeights& w) {
    NoGradGuard ng;
    if (t < 1) throw ValidationError("cfg_epsilon: diffusion step t must be >= 1");
    // the model consumes the 0-based timestep index
    const std::vector<std::int64_t> ts(static_cast<std::size_t>(z_t.size(0)),
                                       static_cast<std::int64_t>(t - 1));
    // (app_dropped, pose_dropped, garment_dropped)
    auto e_uncond = model.predict_eps(z_t, ts, cond.with_flags(true, true, true));
    auto e_pose = model.predict_eps(z_t, ts, cond.with_flags(true, false, true));
    auto e_app = model.predict_eps(z_t, ts, cond.with_flags(false, false, true));
    auto e_gar = model.predict_eps(
        z_t, ts, cond.with_flags(w.joint_app_garment ? false : true, false, false));

    auto out = e_uncond;
    out = add(out, mul_scalar(sub(e_pose, e_uncond), w.pose));
    out = add(out, mul_scalar(sub(e_app, e_pose), w.app));
    out = add(out, mul_scalar(sub(e_gar, e_pose), w.garment));
    return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                 const NoiseSchedule& sched, double eta, Rng& rng) {
    if (!(t > t_prev) || t_prev < 0 || t > sched.steps) {
        throw ValidationError("ddim_step: need T >= t > t_prev >= 0, got t=" + std::to_string(t) +
                              ", t_prev=" + std::to_string(t_prev));
    }
    if (z_t.shape() != eps_pred.shape()) {
        throw DimensionError("ddim_step: eps shape must equal z shape");
    }
    const double ab_t = sched.abar(t);
    const double ab_p = sched.abar(t_prev);
    const double sigma =
        eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);

    // z0_hat = (z_t - sqrt(1-ab_t) eps) / sqrt(ab_t)
    auto z0_hat = mul_scalar(add(z_t, mul_scalar(eps_pred, -std::sqrt(1.0 - ab_t))),
                             1.0 / std::sqrt(ab_t));
    const double dir_coeff2 = 1.0 - ab_p - sigma * sigma;
    auto out = add(mul_scalar(z0_hat, std::sqrt(ab_p)),
                   mul_scalar(eps_pred, std::sqrt(std::max(0.0, dir_coeff2))));
    if (eta > 0.0 && sigma > 0.0) {
        auto noise = Tensor::randn(z_t.shape(), rng);
        out = add(out, mul_scalar(noise, sigma));
    }
    return out;
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ConfigError("ddim: steps must lie in [1, T]");
    std::vector<int> taus;
    if (steps == 1) {
        taus.push_back(T);
        return taus;
    }
    for (int j = 0; j < steps; ++j) {
        const double x = 1.0 + (static_cast<double>(T - 1) * j) / (steps - 1);
        int t = static_cast<int>(std::lround(x));
        t = std::clamp(t, 1, T);
        if (taus.empty() || t > taus.back()) taus.push_back(t);
    }
    return taus;
}

Tensor sample_latent(const Denoiser& model, const ConditionSet& cond, const GuidanceWeights& w,
                     const NoiseSchedule& sched, const SampleOptions& opt) {
    NoGradGuard ng;
    Rng rng(opt.seed);
    const int b = cond.batch();
    auto z = Tensor::randn({b, VaeModel::kLatentChannels, VaeModel::kLatentSize,
                            VaeModel::kLatentSize},
                           rng);
    const auto taus = ddim_timesteps(sched.steps, opt.steps);
    for (int j = static_cast<int>(taus.size()) - 1; j >= 0; --j) {
        const int t = taus[static_cast<std::size_t>(j)];
        const int t_prev = j > 0 ? taus[static_cast<std::size_t>(j - 1)] : 0;
        auto eps = cfg_epsilon(model, z, t, cond, w);
        z = ddim_step(z, eps, t, t_prev, sched, opt.eta, rng);
    }
    return z;
}

Tensor sample(const OdpgModel& model, const VaeModel& vae, const Tensor& source,
              const PoseKeypoints& target_pose, const Tensor& garment, const GuidanceWeights& w,
              const NoiseSchedule& sched, const SampleOptions& opt) {
    if (!model.trained) {
        throw ValidationError("sample: model has no trained weights loaded");
    }
    NoGradGuard ng;
    const int b = source.size(0);
    auto heat = broadcast_batch(render_heatmaps(target_pose), b);
    auto cond = model.encode_conditions(source, heat, garment);
    auto z = sample_latent(model, cond, w, sched, opt);
    auto img = vae.decode(mul_scalar(z, 1.0 / static_cast<double>(vae.latent_scale)));
    clamp_inplace(img, -1.0f, 1.0f);
    return img;
}

}  // namespace odpg
