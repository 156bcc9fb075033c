// odpg: staged training, sampling, evaluation and ablation for the
// synthetic try-on diffusion pipeline.

#include <CLI11.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "odpg/threading.hpp"
#include "odpg/train.hpp"

namespace {

using namespace odpg;
namespace fs = std::filesystem;

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitIo = 4;
constexpr int kExitNumerical = 5;

PoseKeypoints pose_from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open pose file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("bad pose json " + path + ": " + e.what());
    }
    const nlohmann::json* arr = &doc;
    if (doc.is_object()) {
        if (doc.contains("target")) {
            arr = &doc.at("target");
        } else if (doc.contains("source")) {
            arr = &doc.at("source");
        } else {
            throw ValidationError("pose json " + path + " has neither 'target' nor 'source'");
        }
    }
    if (!arr->is_array() || arr->size() != kNumJoints) {
        throw ValidationError("pose json " + path + " must hold 13 [x,y,visible] triples");
    }
    PoseKeypoints kps{};
    for (int j = 0; j < kNumJoints; ++j) {
        const auto& kp = arr->at(static_cast<std::size_t>(j));
        kps[static_cast<std::size_t>(j)] = {kp.at(0).get<float>(), kp.at(1).get<float>(),
                                            kp.at(2).get<int>() != 0};
    }
    return kps;
}

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 0;
    bool seed_set = false;
    bool threads_set = false;
};

RunConfig effective_config(const GlobalArgs& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : parse_config_file(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    if (g.threads_set) cfg.threads = g.threads;
    cfg.validate();
    return cfg;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"synthetic multi-conditioned try-on diffusion"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "configuration file (INI-style)");
    app.add_option("--out", g.out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", g.seed, "global seed override");
    auto* threads_opt = app.add_option("--threads", g.threads,
                                       "worker threads (>1 voids bit-exact determinism)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic triplet dataset");

    auto* train_vae = app.add_subcommand("train-vae", "stage-0 VAE training");
    std::string vae_resume;
    train_vae->add_option("--resume", vae_resume, "checkpoint to resume from");

    auto* train = app.add_subcommand("train", "diffusion training (frozen VAE)");
    std::string train_vae_ckpt, train_resume;
    train->add_option("--vae", train_vae_ckpt, "frozen VAE checkpoint")->required();
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    auto* samp = app.add_subcommand("sample", "sample one image from a checkpoint");
    std::string s_ckpt, s_source, s_pose, s_garment, s_data;
    int s_index = -1;
    double s_wpose = -1, s_wapp = -1, s_wgar = -1, s_eta = -1;
    int s_steps = 0;
    samp->add_option("--checkpoint", s_ckpt, "trained checkpoint")->required();
    samp->add_option("--source", s_source, "source person PNG");
    samp->add_option("--pose", s_pose, "pose JSON (uses its 'target' keypoints)");
    samp->add_option("--garment", s_garment, "flat garment PNG");
    samp->add_option("--data", s_data, "dataset directory for --index");
    samp->add_option("--index", s_index, "sample the conditions of dataset item N");
    samp->add_option("--w-pose", s_wpose, "pose guidance weight");
    samp->add_option("--w-app", s_wapp, "appearance guidance weight");
    samp->add_option("--w-garment", s_wgar, "garment guidance weight");
    samp->add_option("--steps", s_steps, "DDIM steps");
    samp->add_option("--eta", s_eta, "DDIM eta");

    auto* eval = app.add_subcommand("eval", "metric report over a dataset split");
    std::string e_ckpt, e_split = "test", e_data;
    eval->add_option("--checkpoint", e_ckpt, "trained checkpoint")->required();
    eval->add_option("--split", e_split, "train / val / test / all");
    eval->add_option("--data", e_data, "dataset directory (defaults to config data.dir)");

    auto* abl = app.add_subcommand("ablate", "bias-input ablation modes");
    std::string a_ckpt, a_mode, a_split = "test", a_data;
    int a_count = 16;
    abl->add_option("--checkpoint", a_ckpt, "trained checkpoint")->required();
    abl->add_option("--mode", a_mode,
                    "app-only | app-2x | garment-only | garment-2x | both | gray-mask")
        ->required();
    abl->add_option("--split", a_split, "dataset split to draw samples from");
    abl->add_option("--count", a_count, "number of samples");
    abl->add_option("--data", a_data, "dataset directory (defaults to config data.dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    g.seed_set = seed_opt->count() > 0;
    g.threads_set = threads_opt->count() > 0;

    RunConfig cfg = effective_config(g);
    set_num_threads(cfg.threads);

    if (gen->parsed()) {
        const auto dir = g.out_dir.empty() ? cfg.data_dir : g.out_dir;
        auto man = run_gen_data(cfg, dir);
        std::printf("wrote %d triplets to %s\n", man.n, dir.c_str());
        return 0;
    }
    if (train_vae->parsed()) {
        const auto dir = g.out_dir.empty() ? std::string("runs/vae") : g.out_dir;
        auto out = run_train_vae(cfg, dir, vae_resume);
        std::printf("vae checkpoint: %s (recon %.6f, latent scale %.4f)\n",
                    out.checkpoint_path.c_str(), out.final_recon, out.latent_scale);
        return 0;
    }
    if (train->parsed()) {
        const auto dir = g.out_dir.empty() ? std::string("runs/diffusion") : g.out_dir;
        auto out = run_train(cfg, dir, train_vae_ckpt, train_resume);
        std::printf("model checkpoint: %s (l_mse %.6f, l_rec %.6f, l_overall %.6f)\n",
                    out.checkpoint_path.c_str(), out.last.l_mse, out.last.l_rec,
                    out.last.l_overall);
        return 0;
    }
    if (samp->parsed()) {
        auto pipe = load_pipeline(s_ckpt);
        pipe.cfg.seed = cfg.seed;
        pipe.cfg.threads = cfg.threads;
        GuidanceWeights w = pipe.cfg.guidance;
        if (s_wpose >= 0) w.pose = s_wpose;
        if (s_wapp >= 0) w.app = s_wapp;
        if (s_wgar >= 0) w.garment = s_wgar;
        const int steps = s_steps > 0 ? s_steps : pipe.cfg.ddim_steps;
        const double eta = s_eta >= 0 ? s_eta : pipe.cfg.eta;

        Tensor source, garment;
        PoseKeypoints pose{};
        if (s_index >= 0) {
            const auto dir = s_data.empty() ? cfg.data_dir : s_data;
            auto man = load_manifest(dir);
            auto s = load_triplet(man, s_index);
            source = s.source;
            garment = s.garment;
            pose = s.target_pose.joints;
        } else {
            if (s_source.empty() || s_pose.empty() || s_garment.empty()) {
                throw UsageError("sample: need --index or all of --source/--pose/--garment");
            }
            source = u8_to_tensor(read_png(s_source));
            garment = u8_to_tensor(read_png(s_garment));
            pose = pose_from_file(s_pose);
        }
        const auto dir = g.out_dir.empty() ? std::string(".") : g.out_dir;
        std::error_code ec;
        fs::create_directories(dir, ec);
        auto out = run_sample(pipe, source, pose, garment, w, steps, eta, cfg.seed);
        write_png((fs::path(dir) / "sample.png").string(), tensor_to_u8(out));
        write_png((fs::path(dir) / "grid.png").string(),
                  make_sample_grid(source, pose, garment, out));
        std::printf("wrote %s and %s\n", (fs::path(dir) / "sample.png").string().c_str(),
                    (fs::path(dir) / "grid.png").string().c_str());
        return 0;
    }
    if (eval->parsed()) {
        auto pipe = load_pipeline(e_ckpt);
        pipe.cfg.seed = cfg.seed;
        pipe.cfg.threads = cfg.threads;
        const auto data_dir = e_data.empty() ? cfg.data_dir : e_data;
        auto man = load_manifest(data_dir);
        const auto dir = g.out_dir.empty() ? std::string("eval") : g.out_dir;
        auto report = run_eval(pipe, man, e_split, dir);
        std::printf("eval[%s]: n=%d ssim=%.4f psnr=%.2f torso=%.4f frechet=%.4f\n",
                    e_split.c_str(), report.n, report.ssim_mean, report.psnr_mean,
                    report.torso_mean, report.frechet);
        return 0;
    }
    if (abl->parsed()) {
        auto pipe = load_pipeline(a_ckpt);
        pipe.cfg.seed = cfg.seed;
        pipe.cfg.threads = cfg.threads;
        const auto data_dir = a_data.empty() ? cfg.data_dir : a_data;
        auto man = load_manifest(data_dir);
        auto ids = man.split_indices(a_split);
        if (ids.empty()) throw ValidationError("ablate: split '" + a_split + "' is empty");
        if (static_cast<int>(ids.size()) > a_count) ids.resize(static_cast<std::size_t>(a_count));
        const auto mode = ablation_mode_from_name(a_mode);
        const auto dir = g.out_dir.empty() ? std::string("ablate") : g.out_dir;
        auto out = run_ablate(pipe, man, mode, ids, dir);
        std::printf("ablate[%s]: n=%d ssim=%.4f torso=%.4f\n", a_mode.c_str(), out.report.n,
                    out.report.ssim_mean, out.report.torso_mean);
        return 0;
    }
    throw UsageError("no subcommand selected");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    }
}
