// Rotary positional machinery: block-diagonal rotations R(theta) applied to
// dimension pairs, cumulative data-dependent angle tracking, and the
// embedded-space rotation solved numerically for the conformal state form.

#pragma once

#include <cstdint>
#include <vector>

#include "cspw/matrix.hpp"
#include "cspw/sympow.hpp"

namespace cspw {

struct RotationRates {
    int64_t d = 0;        // head dimension, even
    int64_t max_doc = 0;  // N
    std::vector<double> theta;  // length d/2, theta_i = 2*pi / N^{2(i-1)/d}
};

struct AngleState {
    std::vector<double> mu;  // length d/2, cumulative radians
};

struct EmbeddedRotation {
    Matrix matrix;  // D-by-D orthogonal
};

RotationRates make_rates(int64_t d, int64_t max_doc);

// Rotates pair (v[2j], v[2j+1]) by mu[j]. Never materializes the d-by-d matrix.
std::vector<double> rotate(const AngleState& mu, const std::vector<double>& v);
void rotate_into(const double* mu, const double* v, double* out, int64_t half,
                 OpCounter* counter = nullptr);

AngleState advance(const AngleState& mu, const RotationRates& rates, double beta);

// Solves P_bar from stacked samples phi(R(mu) k_j) = P_bar phi(k_j) by least
// squares. Verification-side only; guards D <= 512 and retries on
// ill-conditioned sample matrices.
EmbeddedRotation solve_embedded_rotation(const AngleState& mu, const MultisetBasis& basis,
                                         RngStream& rng);

double max_orthogonality_error(const Matrix& m);  // max |M^T M - I|

}  // namespace cspw
