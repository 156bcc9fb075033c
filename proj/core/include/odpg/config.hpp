#pragma once

#include <cstdint>
#include <string>

#include "odpg/diffusion.hpp"
#include "odpg/unet.hpp"

namespace odpg {

// Run configuration for every CLI command. Defaults are the desk-scale
// preset; preset "paper" records the reference large-scale values.
struct RunConfig {
    // [data]
    std::string data_dir = "data";
    int data_n = 2000;
    std::uint64_t data_seed = 1;
    double w_solid = 0.5;
    double w_stripes = 0.3;
    double w_checker = 0.2;
    bool heldout_garments = false;
    std::string train_split = "train";

    // [model]
    UNetConfig model;

    // [schedule]
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // [optimizer]
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // [train]
    int steps = 5000;
    int epochs = 0;  // when > 0, overrides steps as epochs * n / batch
    int batch_size = 16;
    double p_drop = 0.2;
    double lambda_rec = 1.0;
    int log_every = 25;
    int save_every = 1000;
    int val_every = 1000;

    // [vae]
    int vae_steps = 3000;
    int vae_batch = 8;
    double vae_lr = 1e-3;
    double beta_kl = 1e-4;
    int vae_base = 16;

    // [guidance]
    GuidanceWeights guidance;

    // [sample]
    int ddim_steps = 50;
    double eta = 0.0;

    // global
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
    int effective_steps(int dataset_n) const;
};

// Named presets: "desk" (defaults) and "paper".
RunConfig config_preset(const std::string& name);

// Strict INI-style parser ([section] headers, key = value lines, '#'
// comments). Unknown sections or keys are rejected.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Canonical snapshot of a config (parseable by parse_config_text).
std::string config_to_text(const RunConfig& cfg);

}  // namespace odpg
