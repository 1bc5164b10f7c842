// Decoder-only toy language model whose attention is any of the sympow
// variants or the softmax baselines: pre-norm blocks, one 4x feed-forward
// per layer, an extra layernorm after input embeddings, rotary positions
// carried inside the attention op, learned token embedding, untied
// zero-initialized unembedding.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspw/autodiff.hpp"
#include "cspw/gating.hpp"
#include "cspw/matrix.hpp"

namespace cspw {

struct ModelConfig {
    Variant variant = Variant::ConformalSympow;
    int64_t vocab = 256;
    int64_t d_model = 64;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t head_dim = 16;
    int64_t power = 2;
    int64_t context = 256;
    int64_t max_doc = 4096;
    double gamma_bias = 0.0;   // fixed (non-learned) offset inside the gate sigmoid
    double denom_eps = 1e-12;  // attention row-mass epsilon on the training path

    int64_t ff_hidden() const { return 4 * d_model; }
};

struct LayerParams {
    std::vector<HeadParams> heads;
    Matrix w_o;  // (n_heads*head_dim)-by-d_model
    Matrix ln1_g, ln1_b;
    Matrix ln2_g, ln2_b;
    Matrix w_ff1;  // d_model-by-4*d_model
    Matrix w_ff2;  // 4*d_model-by-d_model
};

struct ModelParams {
    ModelConfig config;
    Matrix tok_emb;  // vocab-by-d_model
    Matrix ln_in_g, ln_in_b;
    std::vector<LayerParams> layers;
    Matrix ln_f_g, ln_f_b;
    Matrix unembed;  // d_model-by-vocab

    int64_t count() const;
};

struct NamedTensor {
    std::string name;
    Matrix* tensor;
};

// Fixed traversal order shared by init, Adam, checkpoints, and grad checks.
std::vector<NamedTensor> named_tensors(ModelParams& params);

ModelParams init_params(const ModelConfig& config, uint64_t seed);
ModelParams zeros_like(const ModelParams& params);

// Rounds every tensor through float. Training state is kept exactly
// f32-representable so the checkpoint format round-trips bitwise.
void round_to_f32(ModelParams& params);

struct ParamCountBreakdown {
    int64_t base = 0;            // everything except the two gate vectors
    int64_t gating = 0;          // w_gamma heads
    int64_t rotary_scaling = 0;  // w_beta heads
    int64_t total = 0;
};
ParamCountBreakdown param_count_breakdown(const ModelConfig& config, bool tied_unembed);

struct ForwardResult {
    int32_t loss = -1;
    std::vector<int32_t> gamma_nodes;  // live data-dependent gates, per layer/head
    std::vector<int32_t> beta_nodes;
};

struct ParamBinding {
    std::vector<int32_t> nodes;  // aligned with named_tensors order
};

// Builds the differentiable forward on the tape; targets/weights follow the
// unembed_cross_entropy contract.
ForwardResult model_forward(Tape& tape, ModelParams& params, const std::vector<int32_t>& tokens,
                            const std::vector<int32_t>& targets,
                            const std::vector<double>& weights, ParamBinding* binding);

// ALiBi slope for one head, the geometric schedule 2^{-8(h+1)/n_heads}.
double alibi_slope(int64_t head, int64_t n_heads);

// Inference-only forward (no tape): next-token loss at every position
// 0..t-2. recurrent = true runs the linear formulation inside attention;
// softmax variants only support the quadratic path. snapshot_split > 0
// serializes and restores every head's recurrent state at that step, which
// must not change any output.
std::vector<double> per_position_losses(const ModelParams& params,
                                        const std::vector<int32_t>& tokens, bool recurrent,
                                        int64_t snapshot_split = 0);

// One Adam update with bias correction; updated values are rounded through
// f32 (see round_to_f32).
void adam_update_tensor(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, int64_t step,
                        double lr, double beta1, double beta2, double eps);

struct AdamState {
    ModelParams m, v;
    int64_t step = 0;
};

void adam_step(ModelParams& params, ModelParams& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace cspw
