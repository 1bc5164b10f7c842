// Checkpoint format: header (magic "CSPWCKPT", version, step, config echo),
// a manifest of named tensors (name, shape, byte offset), then the payload
// of 32-bit little-endian arrays. Training state is f32-representable by
// construction, so save/load round-trips bitwise.

#pragma once

#include <cstdint>
#include <string>

#include "cspw/config.hpp"
#include "cspw/model.hpp"

namespace cspw {

struct Checkpoint {
    RunConfig run_config;
    ModelParams params;
    AdamState adam;
};

void save_checkpoint(const std::string& path, const RunConfig& run_config,
                     ModelParams& params, AdamState& adam);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace cspw
