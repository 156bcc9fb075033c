#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "odpg/encoders.hpp"
#include "odpg/tensor.hpp"

namespace odpg {

using Rgb = std::array<int, 3>;

struct PersonSpec {
    Rgb skin{224, 172, 138};
    Rgb hair{60, 40, 30};
    Rgb trouser{50, 60, 90};
    float shoulder_scale = 1.0f;  // within +-20% of canonical
    float limb_scale = 1.0f;      // within +-20% of canonical
};

struct GarmentSpec {
    enum class Pattern { kSolid, kStripes, kChecker };
    Rgb base{180, 40, 40};
    Pattern pattern = Pattern::kSolid;
    Rgb pattern_color{117, 26, 26};
    int stripe_px = 4;
};

std::string pattern_name(GarmentSpec::Pattern p);
GarmentSpec::Pattern pattern_from_name(const std::string& name);

struct PoseSpec {
    PoseKeypoints joints;
};

struct TripletSample {
    Tensor source;   // [3,64,64]
    Tensor garment;  // [3,64,64]
    Tensor target;   // [3,64,64]
    PoseSpec source_pose;
    PoseSpec target_pose;
    PersonSpec person;
    GarmentSpec garment_spec;
};

// Canonical skeleton and pose validity (all limb bones within +-25% of
// their canonical lengths, all joints inside the 64x64 frame).
const PoseKeypoints& canonical_skeleton();
void validate_pose(const PoseSpec& pose);

// Convex torso quad (shoulders to hips) rasterised over the 64x64 frame.
std::vector<std::uint8_t> torso_mask(const PoseSpec& pose, int size = 64);

// Deterministic sprite rasterisers, values in [-1,1].
Tensor render_person(const PersonSpec& person, const GarmentSpec& garment, const PoseSpec& pose);
Tensor render_garment_flat(const GarmentSpec& garment);

// Replaces the torso region with mid-gray (ablation input probe).
Tensor apply_gray_mask(const Tensor& image, const PoseSpec& pose);

// Spec samplers.
PersonSpec sample_person(Rng& rng);
// heldout picks garment base colors from the hue band excluded from the
// regular palette (the unseen-garment evaluation split).
GarmentSpec sample_garment(Rng& rng, bool heldout, double w_solid, double w_stripes,
                           double w_checker);
PoseSpec sample_pose(Rng& rng, const PersonSpec& person);

struct DatasetOptions {
    int n = 0;
    std::uint64_t seed = 0;
    std::string out_dir;
    double w_solid = 0.5;
    double w_stripes = 0.3;
    double w_checker = 0.2;
    bool heldout_garments = false;
};

struct ManifestEntry {
    int id = 0;
    int person_id = 0;
    std::string split;  // train / val / test, assigned by person identity
    std::string source_png, garment_png, target_png, pose_json;
    std::string sha_source, sha_garment, sha_target, sha_pose;
    PersonSpec person;
    GarmentSpec garment;
};

struct Manifest {
    int version = 1;
    int n = 0;
    std::uint64_t seed = 0;
    std::string root;  // directory holding the files; set on load/generate
    std::vector<ManifestEntry> entries;

    std::vector<int> split_indices(const std::string& split) const;
};

// Writes n triplets plus manifest.json into out_dir; a fixed (n, seed,
// palette) triple is byte-identical across runs.
Manifest generate_dataset(const DatasetOptions& opts);
Manifest load_manifest(const std::string& dir);
// Decodes one triplet; checksums are verified against the manifest.
TripletSample load_triplet(const Manifest& manifest, int idx);

}  // namespace odpg
