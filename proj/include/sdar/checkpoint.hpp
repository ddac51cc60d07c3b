// Checkpoint file: magic+version, a JSON header (model config, objective
// provenance, step, seed), then named tensor sections
// (name-length-prefixed string, rank u32, dims u32[], little-endian f32 data).
// Save -> load -> save is byte-identical.
#pragma once

#include <string>
#include <utility>

#include "sdar/model.hpp"

namespace sdar {

struct CheckpointMeta {
    ModelConfig config;
    std::string objective = "ar";  // provenance of the producing run
    int64_t step = 0;
    uint64_t seed = 0;
};

void save_checkpoint(const std::string & path, ModelParams<float> & params, const CheckpointMeta & meta);
std::pair<ModelParams<float>, CheckpointMeta> load_checkpoint(const std::string & path);

}  // namespace sdar
