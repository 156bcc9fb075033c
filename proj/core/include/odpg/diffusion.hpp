#pragma once

#include <vector>

#include "odpg/model.hpp"

namespace odpg {

// ---------------------------------------------------------------------------
// Noise schedule. Diffusion timesteps are 1-based: beta[t-1] belongs to
// step t, alpha_bar(0) == 1. The UNet consumes the 0-based index t-1.
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    int steps = 0;  // T
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    // cumulative product up to step t, with alpha_bar(0) == 1
    double abar(int t) const;
};

// Linear beta ramp from beta_start to beta_end over T steps.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, t in [1, T].
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);
// Per-item timesteps for a batch.
Tensor forward_diffuse(const Tensor& z0, const std::vector<int>& ts, const Tensor& eps,
                       const NoiseSchedule& sched);

// ---------------------------------------------------------------------------
// Guidance and losses
// ---------------------------------------------------------------------------

struct GuidanceWeights {
    double pose = 2.0;
    double app = 2.0;
    double garment = 2.0;
    // Experimental: derive the garment direction from a joint
    // appearance+garment branch instead of the garment-only branch.
    bool joint_app_garment = false;
};

struct LossBreakdown {
    double l_mse = 0.0;
    double l_rec = 0.0;
    double l_overall = 0.0;
    double lambda_rec = 1.0;
    Tensor total;  // graph-bearing scalar for backward()
};

// Re-draws every item's drop flags: each of appearance / pose / garment
// independently dropped with probability p.
ConditionSet drop_conditions(const ConditionSet& cond, double p, Rng& rng);

struct TrainBatch {
    Tensor source;       // [B,3,64,64]
    Tensor source_pose;  // heatmaps [B,13,64,64]
    Tensor target_pose;  // heatmaps [B,13,64,64]
    Tensor garment;      // [B,3,64,64]
    Tensor target;       // ground truth [B,3,64,64]
};

// One denoising objective term: diffuse z0 to the given per-item steps
// with the given noise and score the model's prediction against it.
Tensor denoising_loss(const Denoiser& model, const ConditionSet& cond, const Tensor& z0,
                      const std::vector<int>& ts, const Tensor& eps, const NoiseSchedule& sched);

// L_overall = L_mse + lambda_rec * L_rec, where L_mse denoises the target
// image under (source appearance, target pose, garment) and L_rec denoises
// the source image under its own pose and the same garment.
LossBreakdown training_loss(const OdpgModel& model, const VaeModel& vae, const TrainBatch& batch,
                            const NoiseSchedule& sched, double p_drop, double lambda_rec,
                            Rng& rng);

// Cumulative classifier-free guidance: exactly four model evaluations
//   e = e(0,0) + w_pose (e(0,tp) - e(0,0))
//             + w_app  (e(s,tp) - e(0,tp))
//             + w_gar  (e(g,tp) - e(0,tp))
// with the garment dropped in the (s,tp) branch and the appearance dropped
// in the (g,tp) branch.
Tensor cfg_epsilon(const Denoiser& model, const Tensor& z_t, int t, const ConditionSet& cond,
                   const GuidanceWeights& w);

// One DDIM update from step t to t_prev (t > t_prev >= 0); eta == 0 is the
// deterministic sampler.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                 const NoiseSchedule& sched, double eta, Rng& rng);

// Uniform timestep subsequence over [1, T] with a trailing step at t=1,
// returned ascending.
std::vector<int> ddim_timesteps(int T, int steps);

struct SampleOptions {
    int steps = 50;
    double eta = 0.0;
    std::uint64_t seed = 0;
};

// Full sampling pipeline: seeded Gaussian latent, DDIM with cfg_epsilon at
// every step, VAE decode, clamp to [-1,1]. Returns [B,3,64,64].
Tensor sample(const OdpgModel& model, const VaeModel& vae, const Tensor& source,
              const PoseKeypoints& target_pose, const Tensor& garment, const GuidanceWeights& w,
              const NoiseSchedule& sched, const SampleOptions& opt);

// Sampler over pre-encoded conditions (shared by eval/ablation drivers).
Tensor sample_latent(const Denoiser& model, const ConditionSet& cond, const GuidanceWeights& w,
                     const NoiseSchedule& sched, const SampleOptions& opt);

}  // namespace odpg
