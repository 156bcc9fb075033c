#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "odpg/nn.hpp"

namespace odpg {

// Binary checkpoint: magic "ODPG1", u32 format version, u64 header length,
// JSON header (config snapshot, parameter table, optimizer metadata, step,
// RNG state, extras, payload digest), then the little-endian float32
// payload: every parameter in table order, followed by the optimizer's
// first and second moments for each optimized parameter.
struct CheckpointMeta {
    int format_version = 1;
    std::string config_text;
    std::int64_t step = 0;
    std::string rng_state;
    std::map<std::string, double> extras;
};

void save_checkpoint(const std::string& path, const ParamMap& params, const Adam* optimizer,
                     const CheckpointMeta& meta);

// Header-only read (config snapshot, step, extras); no payload check.
CheckpointMeta read_checkpoint_meta(const std::string& path);

// Full load: parameter names and shapes must match the table exactly, the
// payload digest is verified, and the optimizer (when given) must cover
// the same parameter subset it was saved with.
CheckpointMeta load_checkpoint(const std::string& path, ParamMap& params, Adam* optimizer);

}  // namespace odpg
