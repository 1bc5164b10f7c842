#include "cspw/gating.hpp"

#include <cmath>
#include <stdexcept>

namespace cspw {

static std::vector<double> project_scalar(const Matrix& x, const Matrix& w, const char* who) {
    if (w.cols != 1 || w.rows != x.cols) {
        throw std::invalid_argument(std::string(who) + ": weight shape does not match inputs");
    }
    std::vector<double> out(static_cast<size_t>(x.rows));
    for (int64_t i = 0; i < x.rows; ++i) {
        double acc = 0.0;
        const double* xi = x.row(i);
        for (int64_t k = 0; k < x.cols; ++k) acc += xi[k] * w.data[static_cast<size_t>(k)];
        out[static_cast<size_t>(i)] = acc;
    }
    return out;
}

std::vector<double> gate_values(const Matrix& x, const Matrix& w_gamma) {
    std::vector<double> g = project_scalar(x, w_gamma, "gate_values");
    for (double& v : g) v = sigmoid(v);
    return g;
}

std::vector<double> beta_values(const Matrix& x, const Matrix& w_beta) {
    std::vector<double> b = project_scalar(x, w_beta, "beta_values");
    for (double& v : b) v = 1.0 + tanh_act(v);
    return b;
}

GateTrack cumulate(const std::vector<double>& gamma, const std::vector<double>& beta) {
    if (gamma.size() != beta.size()) throw std::invalid_argument("cumulate: length mismatch");
    const int64_t t = static_cast<int64_t>(gamma.size());
    GateTrack track;
    track.gamma = gamma;
    track.beta = beta;
    track.log_b = Matrix(t, t);
    track.c = Matrix(t, t);

    // prefix sums of log gamma and beta; b_ii = 1 and c_ii = 0 fall out as
    // empty ranges
    std::vector<double> log_prefix(static_cast<size_t>(t) + 1, 0.0);
    std::vector<double> beta_prefix(static_cast<size_t>(t) + 1, 0.0);
    for (int64_t i = 0; i < t; ++i) {
        if (!(gamma[static_cast<size_t>(i)] > 0.0)) {
            throw std::invalid_argument("cumulate: gamma must be positive to take logs");
        }
        log_prefix[static_cast<size_t>(i) + 1] =
            log_prefix[static_cast<size_t>(i)] + std::log(gamma[static_cast<size_t>(i)]);
        beta_prefix[static_cast<size_t>(i) + 1] =
            beta_prefix[static_cast<size_t>(i)] + beta[static_cast<size_t>(i)];
    }
    for (int64_t i = 0; i < t; ++i) {
        for (int64_t j = 0; j <= i; ++j) {
            track.log_b(i, j) = log_prefix[static_cast<size_t>(i) + 1] - log_prefix[static_cast<size_t>(j) + 1];
            track.c(i, j) = beta_prefix[static_cast<size_t>(i) + 1] - beta_prefix[static_cast<size_t>(j) + 1];
        }
    }
    return track;
}

double alibi_gamma(double m) {
    if (!(m > 0.0)) throw std::invalid_argument("alibi_gamma: slope must be positive");
    return std::exp(-m);
}

}  // namespace cspw
