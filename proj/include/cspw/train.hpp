// Training loop (data-parallel over the batch with a fixed reduction
// order), metrics emission, and the context-length evaluation harness that
// runs inference through the recurrent formulation.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspw/checkpoint.hpp"
#include "cspw/config.hpp"
#include "cspw/model.hpp"

namespace cspw {

struct TrainOutput {
    double final_loss = 0.0;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Runs the configured training; resume_from, when non-empty, restarts from a
// checkpoint at its recorded step. Batches are regenerated from (seed, step),
// so a resumed run is bitwise identical to an uninterrupted one.
TrainOutput cmd_train(const RunConfig& config, const std::string& resume_from = "");

// Per-position loss aggregation at each evaluation length, written as
// `length,position_bucket,mean_loss,n_tokens` with log2 position buckets.
// snapshot_roundtrip additionally reruns each sequence with a mid-sequence
// state serialize/restore and insists on bitwise-identical losses.
void cmd_eval(const Checkpoint& ckpt, const std::vector<int64_t>& lengths,
              const std::string& out_csv_path, bool snapshot_roundtrip = false);

// Mean next-token loss at the answer position over freshly generated recall
// instances (quadratic inference path).
double recall_answer_loss(const ModelParams& params, uint64_t seed, int64_t instances,
                          int64_t context, int64_t pairs);

// Mean full-sequence loss on a held-out batch, matching the training loss.
double heldout_loss(const ModelParams& params, const RunConfig& config, uint64_t seed,
                    int64_t instances);

// One full training step (shared by cmd_train and the trace tests): returns
// the batch-mean loss and applies the Adam update in place.
struct StepStats {
    double loss = 0.0;
    double gamma_mean = 1.0, gamma_min = 1.0, gamma_max = 1.0;
    double beta_mean = 1.0, beta_min = 1.0, beta_max = 1.0;
};
StepStats train_step(const RunConfig& config, ModelParams& params, AdamState& adam,
                     const std::vector<std::vector<int32_t>>& text_sequences);

}  // namespace cspw
