// Data-dependent scalar gates gamma_i = sigmoid(w_gamma^T x_i) in (0,1),
// rotation scales beta_i = 1 + tanh(w_beta^T x_i) in (0,2), their cumulative
// tracks b_ij (log space) and c_ij, and the ALiBi bridge gamma = exp(-m).

#pragma once

#include <cstdint>
#include <vector>

#include "cspw/matrix.hpp"

namespace cspw {

struct GateTrack {
    std::vector<double> gamma;  // length t
    std::vector<double> beta;   // length t
    Matrix log_b;               // t-by-t lower-triangular, log_b(i,j) = sum_{k=j+1..i} log gamma_k
    Matrix c;                   // t-by-t lower-triangular, c(i,j) = sum_{k=j+1..i} beta_k
};

// Per-head parameters; the gate and rotation-scale vectors act on the same
// inputs the projections consume.
struct HeadParams {
    Matrix w_q;      // d_model-by-d
    Matrix w_k;      // d_model-by-d
    Matrix w_v;      // d_model-by-d
    Matrix w_gamma;  // d_model-by-1
    Matrix w_beta;   // d_model-by-1
};

// gamma_i = sigmoid(w_gamma^T X_i); X is t-by-d_model, w is d_model-by-1.
std::vector<double> gate_values(const Matrix& x, const Matrix& w_gamma);

// beta_i = 1 + tanh(w_beta^T X_i), in (0,2).
std::vector<double> beta_values(const Matrix& x, const Matrix& w_beta);

GateTrack cumulate(const std::vector<double>& gamma, const std::vector<double>& beta);

// Scalar gate equivalent to an ALiBi slope m > 0.
double alibi_gamma(double m);

}  // namespace cspw
