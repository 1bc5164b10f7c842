#include "cspw/rotary.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cspw {

RotationRates make_rates(int64_t d, int64_t max_doc) {
    if (d < 2 || d % 2 != 0) throw std::invalid_argument("make_rates: d must be even and >= 2");
    if (max_doc < 1) throw std::invalid_argument("make_rates: max document size must be >= 1");
    RotationRates rates;
    rates.d = d;
    rates.max_doc = max_doc;
    rates.theta.resize(static_cast<size_t>(d / 2));
    const double two_pi = 2.0 * std::numbers::pi;
    for (int64_t i = 0; i < d / 2; ++i) {
        double expo = 2.0 * static_cast<double>(i) / static_cast<double>(d);
        rates.theta[static_cast<size_t>(i)] = two_pi / std::pow(static_cast<double>(max_doc), expo);
    }
    return rates;
}

void rotate_into(const double* mu, const double* v, double* out, int64_t half,
                 OpCounter* counter) {
    for (int64_t j = 0; j < half; ++j) {
        double c = std::cos(mu[j]);
        double s = std::sin(mu[j]);
        double a = v[2 * j];
        double b = v[2 * j + 1];
        out[2 * j] = c * a - s * b;
        out[2 * j + 1] = s * a + c * b;
    }
    if (counter) counter->add(static_cast<unsigned long long>(6 * half));
}

std::vector<double> rotate(const AngleState& mu, const std::vector<double>& v) {
    if (v.size() != 2 * mu.mu.size()) {
        throw std::invalid_argument("rotate: vector length must be twice the angle count");
    }
    std::vector<double> out(v.size());
    rotate_into(mu.mu.data(), v.data(), out.data(), static_cast<int64_t>(mu.mu.size()));
    return out;
}

AngleState advance(const AngleState& mu, const RotationRates& rates, double beta) {
    if (mu.mu.size() != rates.theta.size()) {
        throw std::invalid_argument("advance: angle state does not match rates");
    }
    AngleState out = mu;
    for (size_t j = 0; j < out.mu.size(); ++j) {
        out.mu[j] += beta * rates.theta[j];
    }
    return out;
}

double max_orthogonality_error(const Matrix& m) {
    double worst = 0.0;
    for (int64_t i = 0; i < m.cols; ++i) {
        for (int64_t j = 0; j < m.cols; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < m.rows; ++k) acc += m(k, i) * m(k, j);
            double target = (i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(acc - target));
        }
    }
    return worst;
}

EmbeddedRotation solve_embedded_rotation(const AngleState& mu, const MultisetBasis& basis,
                                         RngStream& rng) {
    if (2 * static_cast<int64_t>(mu.mu.size()) != basis.d) {
        throw std::invalid_argument("solve_embedded_rotation: angle count does not match basis");
    }
    const int64_t big_d = basis.dim;
    if (big_d > 512) {
        throw std::invalid_argument("solve_embedded_rotation: D > 512; too large to materialize");
    }
    const int64_t n_samples = big_d + 16;
    const int64_t half = basis.d / 2;

    for (int attempt = 0; attempt < 5; ++attempt) {
        // rows: phi(k_j)^T and phi(R(mu) k_j)^T
        Matrix plain(n_samples, big_d);
        Matrix rotated(n_samples, big_d);
        std::vector<double> k(static_cast<size_t>(basis.d));
        std::vector<double> rk(static_cast<size_t>(basis.d));
        for (int64_t j = 0; j < n_samples; ++j) {
            for (double& x : k) x = rng.normal();
            rotate_into(mu.mu.data(), k.data(), rk.data(), half);
            embed_into(k.data(), basis, plain.row(j));
            embed_into(rk.data(), basis, rotated.row(j));
        }
        LstsqResult sol = lstsq(plain, rotated);
        if (sol.diag_ratio < 1e-10) continue;

        // residual on the fitted samples
        Matrix fit = matmul(plain, sol.x);
        double resid = 0.0;
        for (size_t i = 0; i < fit.size(); ++i) {
            resid = std::max(resid, std::abs(fit.data[i] - rotated.data[i]));
        }
        if (resid > 1e-8) continue;

        EmbeddedRotation result;
        result.matrix = transpose(sol.x);  // rows solved as phi(k)^T P_bar^T
        if (max_orthogonality_error(result.matrix) > 1e-8) continue;
        return result;
    }
    throw std::runtime_error("solve_embedded_rotation: no well-conditioned sample set in 5 tries");
}

}  // namespace cspw
