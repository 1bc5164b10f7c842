// Quadratic attention for every variant: plain sympow (q^T k)^p, fixed and
// learned rotary, scalar gating, conformal-sympow, and the softmax/ALiBi
// baselines.
//
// Rotations are applied to queries and keys through their cumulative angles
// mu_i = sum_{k<=i} beta_k * theta, so B_ij = b_ij * ((R(mu_i)Q_i)^T
// (R(mu_j)K_j))^p depends on positions only through mu_i - mu_j. This is the
// exact pairing the recurrent formulation reproduces.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cspw/gating.hpp"
#include "cspw/matrix.hpp"
#include "cspw/rotary.hpp"

namespace cspw {

enum class Variant {
    Sympow,
    SympowRotary,
    SympowGated,
    SympowLearnedRotary,
    ConformalSympow,
    SoftmaxBaseline,
    SoftmaxAlibi,
};

struct VariantTraits {
    bool sympow = false;
    bool rotary = false;          // any rotation of queries/keys
    bool gated = false;           // data-dependent gamma
    bool learned_rotary = false;  // data-dependent beta
    bool alibi = false;
};

VariantTraits traits_of(Variant v);
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct AttentionTrace {
    Matrix b;  // t-by-t lower-triangular preattention
    Matrix a;  // t-by-t lower-triangular attention
    Matrix y;  // t-by-d outputs
};

// Test hook for `verify --inject-fault`.
struct FaultInjection {
    bool gating_off_by_one = false;  // widens the discount window by one step
};

// Shared per-sequence quantities consumed by the pair kernel and by the
// training path.
struct PreattnParts {
    std::vector<double> gamma;       // effective gates, 1.0 when inactive
    std::vector<double> beta;        // effective scales, 1.0 when inactive
    std::vector<double> log_prefix;  // length t+1, prefix sums of log gamma
    Matrix mu;                       // t-by-(d/2) cumulative angles, 0x0 when no rotary
    Matrix qr;                       // rotated queries (plain copies without rotary)
    Matrix kr;                       // rotated keys
};

PreattnParts build_preattn_parts(const VariantTraits& traits, const Matrix& q, const Matrix& k,
                                 const std::vector<double>& gamma, const std::vector<double>& beta,
                                 const RotationRates* rates, OpCounter* counter = nullptr);

// Fills the lower triangle of b. The OpenMP path splits over query rows;
// per-row arithmetic is identical to the serial reference, so outputs are
// bitwise equal.
void preattn_pairs(const PreattnParts& parts, int64_t power, bool fault_off_by_one, Matrix& b,
                   OpCounter* counter, bool parallel);

// Full preattention for the given variant, gates computed from x and params.
Matrix preattention(Variant variant, const Matrix& q, const Matrix& k, const Matrix& x,
                    const HeadParams& params, const RotationRates& rates, int64_t power,
                    OpCounter* counter = nullptr, const FaultInjection* fault = nullptr);
Matrix preattention_serial(Variant variant, const Matrix& q, const Matrix& k, const Matrix& x,
                           const HeadParams& params, const RotationRates& rates, int64_t power,
                           OpCounter* counter = nullptr, const FaultInjection* fault = nullptr);

// Row-normalizes causal non-negative preattention and mixes values.
// Rows whose mass falls below 1e-30 are an error, not silently uniform.
void normalize_and_attend(const Matrix& b, const Matrix& v, Matrix& a, Matrix& y,
                          OpCounter* counter = nullptr);

// Softmax baseline, optionally with an ALiBi slope; scores use the
// conventional 1/sqrt(d) temperature (baseline only).
AttentionTrace softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                 std::optional<double> alibi_m);

// Convenience composition used by verification and equivalence tests.
AttentionTrace attention_forward(Variant variant, const Matrix& q, const Matrix& k,
                                 const Matrix& v, const Matrix& x, const HeadParams& params,
                                 const RotationRates& rates, int64_t power,
                                 OpCounter* counter = nullptr,
                                 const FaultInjection* fault = nullptr,
                                 std::optional<double> alibi_m = std::nullopt);

inline double pow_int(double base, int64_t e) {
    double result = 1.0;
    double b = base;
    while (e > 0) {
        if (e & 1) result *= b;
        b *= b;
        e >>= 1;
    }
    return result;
}

}  // namespace cspw
