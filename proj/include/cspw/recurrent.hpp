// Linear-time recurrent formulation carrying (S, Z, mu). Each step costs
// O(dD) regardless of position; outputs match the quadratic formulation for
// every prefix. The conformal right-multiplication form is also provided,
// which rotates the state instead of the keys.

#pragma once

#include <cstdint>
#include <vector>

#include "cspw/attention.hpp"
#include "cspw/matrix.hpp"
#include "cspw/rotary.hpp"
#include "cspw/sympow.hpp"

namespace cspw {

struct RecurrentState {
    int64_t d = 0;
    int64_t p = 0;
    int64_t dim = 0;  // D
    Matrix s;         // d-by-D
    std::vector<double> z;  // length D
    AngleState mu;    // length d/2
    int64_t step_count = 0;
    bool conformal_form = false;  // state rotated in embedded space; queries embed unrotated
};

RecurrentState make_state(const MultisetBasis& basis);

// One update Z = gamma*Z + phi(R(mu)K)^T, S = gamma*S + V phi(R(mu)K)^T with
// mu advanced by beta*theta first. Plain sympow skips rotation entirely.
void step(RecurrentState& state, Variant variant, const double* k_i, const double* v_i,
          double gamma_i, double beta_i, const RotationRates& rates, const MultisetBasis& basis,
          OpCounter* counter = nullptr);

// Y_i = S phi(q') / Z phi(q') with q' rotated by the current mu (unrotated in
// the conformal form). denom_eps = 0 errors below 1e-30; the trainer passes
// 1e-12 instead.
std::vector<double> output(const RecurrentState& state, const double* q_i,
                           const MultisetBasis& basis, OpCounter* counter = nullptr,
                           double denom_eps = 0.0);

// Right-multiplies (S, Z) by scale * rot; used by the conformal-form update
// and measurable on its own.
void apply_conformal(RecurrentState& state, const Matrix& rot, double scale);

// Equivalent update in the conformal form: state right-multiplied by
// gamma_i * Rbar(theta, beta_i), then the unrotated key embedding is added.
// Requires D <= 512 to materialize the embedded rotation.
void step_conformal_form(RecurrentState& state, const double* k_i, const double* v_i,
                         double gamma_i, double beta_i, const RotationRates& rates,
                         const MultisetBasis& basis, RngStream& rng);

// Sequential fold of step + output over a t-row sequence; gamma/beta may be
// empty for variants that do not use them.
Matrix run_recurrent(Variant variant, const Matrix& q, const Matrix& k, const Matrix& v,
                     const std::vector<double>& gamma, const std::vector<double>& beta,
                     const RotationRates& rates, const MultisetBasis& basis,
                     OpCounter* counter = nullptr, double denom_eps = 0.0);

// Convenience overload computing projections and gates from x and params.
Matrix run_recurrent(Variant variant, const Matrix& x, const HeadParams& params,
                     const RotationRates& rates, const MultisetBasis& basis,
                     OpCounter* counter = nullptr, double denom_eps = 0.0);

// Snapshot format: 16-byte header (magic "SYMPOWST", version u32, d u16,
// p u16) then a flat little-endian f64 array [S row-major | Z | mu | step].
std::vector<uint8_t> serialize_state(const RecurrentState& state);
RecurrentState deserialize_state(const std::vector<uint8_t>& bytes);

}  // namespace cspw
