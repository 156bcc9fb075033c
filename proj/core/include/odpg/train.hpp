#pragma once

#include <string>
#include <vector>

#include "odpg/checkpoint.hpp"
#include "odpg/config.hpp"
#include "odpg/datasynth.hpp"
#include "odpg/diffusion.hpp"
#include "odpg/image.hpp"
#include "odpg/metrics.hpp"

namespace odpg {

// ---------------------------------------------------------------------------
// Command-level drivers shared by the CLI and the acceptance suite.
// ---------------------------------------------------------------------------

Manifest run_gen_data(const RunConfig& cfg, const std::string& out_dir);

struct TrainVaeOutcome {
    std::string checkpoint_path;
    double final_recon = 0.0;
    double latent_scale = 1.0;
    std::int64_t steps_run = 0;
};
// Stage-0 VAE training; writes vae.ckpt plus loss_vae.csv under out_dir.
TrainVaeOutcome run_train_vae(const RunConfig& cfg, const std::string& out_dir,
                              const std::string& resume_path = "");

struct TrainOutcome {
    std::string checkpoint_path;
    LossBreakdown last;
    std::int64_t steps_run = 0;
};
// Diffusion training against a frozen VAE checkpoint; writes model.ckpt
// (VAE weights embedded) plus loss.csv under out_dir.
TrainOutcome run_train(const RunConfig& cfg, const std::string& out_dir,
                       const std::string& vae_checkpoint, const std::string& resume_path = "");

// Everything needed to sample: architecture rebuilt from the checkpoint's
// config snapshot, weights loaded, schedule materialised.
struct Pipeline {
    RunConfig cfg;
    OdpgModel model;
    VaeModel vae;
    NoiseSchedule sched;
    std::int64_t step = 0;
};
Pipeline load_pipeline(const std::string& checkpoint_path);
// VAE-only load (from a vae.ckpt or a combined checkpoint).
VaeModel load_vae(const std::string& checkpoint_path, RunConfig* cfg_out = nullptr);

// One sampled image [3,64,64] for raw condition inputs.
Tensor run_sample(const Pipeline& pipe, const Tensor& source, const PoseKeypoints& target_pose,
                  const Tensor& garment, const GuidanceWeights& w, int steps, double eta,
                  std::uint64_t seed);

// Side-by-side panel strip: source | pose heatmap projection | garment |
// output.
ImageU8 make_sample_grid(const Tensor& source, const PoseKeypoints& target_pose,
                         const Tensor& garment, const Tensor& output);

// Samples every item of the split, writes report.json / report.csv and a
// handful of grids into out_dir, and returns the report.
EvalReport run_eval(const Pipeline& pipe, const Manifest& manifest, const std::string& split,
                    const std::string& out_dir);

enum class AblationMode { kAppOnly, kApp2x, kGarmentOnly, kGarment2x, kBoth, kGrayMask };
AblationMode ablation_mode_from_name(const std::string& name);
std::string ablation_mode_name(AblationMode mode);

// Bias-input surgery for one mode; gray-mask is applied to the source
// image before encoding instead.
ConditionSet apply_ablation(const ConditionSet& cond, AblationMode mode);

// Sample one dataset item under an ablation mode (seeded per item id).
Tensor sample_ablated(const Pipeline& pipe, const TripletSample& s, AblationMode mode,
                      std::uint64_t seed);

struct AblationOutcome {
    AblationMode mode;
    EvalReport report;
};
// Runs one mode over the given item indices; writes report/grids into
// out_dir when non-empty.
AblationOutcome run_ablate(const Pipeline& pipe, const Manifest& manifest, AblationMode mode,
                           const std::vector<int>& indices, const std::string& out_dir);

}  // namespace odpg
