// Reverse-mode differentiation over tensor-level ops: a flat tape whose
// topological order is insertion order. backward() walks the nodes once in
// reverse, accumulating gradients into per-node buffers. The sympow
// attention op is fused: one node carries the whole
// gate/rotate/pair/normalize pipeline with a hand-derived backward.

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "cspw/attention.hpp"
#include "cspw/matrix.hpp"
#include "cspw/rotary.hpp"

namespace cspw {

enum class OpKind : uint8_t {
    Leaf,
    EmbedRows,
    LayerNorm,
    MatMul,
    Add,
    AddConst,
    Gelu,
    Sigmoid,
    OnePlusTanh,
    SympowAttn,
    SoftmaxAttn,
    ConcatCols,
    UnembedCrossEntropy,
};

struct AttnAux {
    VariantTraits traits;
    int64_t power = 2;
    double denom_eps = 0.0;
    std::vector<double> theta;  // fixed rates, for the beta gradient
    PreattnParts parts;
    Matrix u;                   // raw pair dots
    Matrix a;                   // normalized attention
    std::vector<double> srow;   // row mass + eps
};

struct SoftmaxAux {
    Matrix a;
    double temp = 1.0;
    double alibi_m = 0.0;
    bool has_alibi = false;
};

struct LnAux {
    std::vector<double> mean;
    std::vector<double> rstd;
};

struct CeAux {
    std::vector<int32_t> targets;
    std::vector<double> weights;
    double weight_sum = 0.0;
    std::vector<int32_t> active;  // rows with positive weight
    Matrix probs;                 // active-row softmax rows
};

struct Node {
    OpKind op = OpKind::Leaf;
    int n_in = 0;
    std::array<int32_t, 5> in{-1, -1, -1, -1, -1};
    Matrix val;
    Matrix grad;  // allocated lazily during backward
    double scalar = 0.0;
    std::vector<int32_t> tokens;
    std::unique_ptr<AttnAux> attn;
    std::unique_ptr<SoftmaxAux> softmax;
    std::unique_ptr<LnAux> ln;
    std::unique_ptr<CeAux> ce;
};

class Tape {
public:
    int32_t leaf(Matrix v);
    int32_t embed_rows(int32_t table, const std::vector<int32_t>& tokens);
    int32_t layer_norm(int32_t x, int32_t gain, int32_t bias);
    int32_t matmul_op(int32_t a, int32_t b);
    int32_t add(int32_t a, int32_t b);
    int32_t add_const(int32_t x, double c);
    int32_t gelu(int32_t x);
    int32_t sigmoid_op(int32_t x);
    int32_t one_plus_tanh(int32_t x);

    // gamma/beta are ids of t-by-1 nodes, or -1 when the variant lacks them.
    int32_t sympow_attention(Variant variant, int32_t q, int32_t k, int32_t v, int32_t gamma,
                             int32_t beta, const RotationRates& rates, int64_t power,
                             double denom_eps);
    int32_t softmax_attention_op(int32_t q, int32_t k, int32_t v, std::optional<double> alibi_m);
    int32_t concat_cols(const std::vector<int32_t>& parts);

    // Fused unembedding projection + masked mean cross-entropy; rows with
    // zero weight never touch the vocabulary dimension.
    int32_t unembed_cross_entropy(int32_t x, int32_t unembed, const std::vector<int32_t>& targets,
                                  const std::vector<double>& weights);

    void backward(int32_t loss_node);

    const Matrix& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].val; }
    const Matrix& grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool has_grad(int32_t id) const { return !nodes_[static_cast<size_t>(id)].grad.data.empty(); }
    size_t size() const { return nodes_.size(); }

private:
    Node& at(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
    Matrix& grad_buffer(int32_t id);
    int32_t push(Node node);
    void backward_node(int32_t id);
    void backward_sympow_attention(int32_t id);

    std::vector<Node> nodes_;
};

}  // namespace cspw
