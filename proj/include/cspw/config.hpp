// Flat key = value run configuration with '#' comments. Every key is
// optional and has a documented default; unknown keys are errors. The same
// text format is echoed into checkpoints.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspw/model.hpp"

namespace cspw {

struct RunConfig {
    // model
    std::string variant = "conformal-sympow";
    int64_t d_model = 64;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t head_dim = 16;
    int64_t power = 2;
    int64_t context = 256;
    int64_t max_doc = 4096;
    int64_t vocab = 256;
    double gamma_bias = 0.0;

    // training
    uint64_t seed = 1;
    double lr = 0.0006;
    int64_t steps = 2000;
    int64_t batch = 16;
    int64_t log_every = 50;
    int64_t checkpoint_every = 0;  // 0 = final checkpoint only

    // data
    std::string data_path;
    std::string task;  // "" or "recall"
    int64_t recall_pairs = 8;
    int64_t query_position = -1;   // -1 = context - 2
    double answer_weight = 1.0;    // loss weight of the recall answer position
    int64_t doc_delimiter = -1;    // -1 = no document splitting

    // evaluation
    std::vector<int64_t> eval_lengths{64, 256, 1024};
    int64_t eval_sequences = 16;

    std::string out_dir = "out";

    // verification tolerances
    double tol_kernel = 1e-10;
    double tol_equivalence = 1e-8;
    double tol_conformal = 1e-6;
    double tol_rotation_power = 1e-9;
    double tol_alibi = 1e-12;
    double tol_reduction = 1e-6;
    double tol_gradient = 1e-4;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string config_to_text(const RunConfig& config);

// Throws on invariant violations (odd power/head_dim, unsorted eval lengths,
// unknown variant, ...).
void validate_config(const RunConfig& config);

ModelConfig to_model_config(const RunConfig& config);

// CSPW_SEED, when set, overrides the configured seed.
void apply_env_seed(RunConfig& config);

}  // namespace cspw
