#include "cspw/recurrent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cspw/binio.hpp"
#include "cspw/gating.hpp"

namespace cspw {

static const char kSnapshotMagic[8] = {'S', 'Y', 'M', 'P', 'O', 'W', 'S', 'T'};

RecurrentState make_state(const MultisetBasis& basis) {
    RecurrentState state;
    state.d = basis.d;
    state.p = basis.p;
    state.dim = basis.dim;
    state.s = Matrix(basis.d, basis.dim);
    state.z.assign(static_cast<size_t>(basis.dim), 0.0);
    state.mu.mu.assign(static_cast<size_t>(basis.d / 2), 0.0);
    return state;
}

void step(RecurrentState& state, Variant variant, const double* k_i, const double* v_i,
          double gamma_i, double beta_i, const RotationRates& rates, const MultisetBasis& basis,
          OpCounter* counter) {
    VariantTraits traits = traits_of(variant);
    if (!traits.sympow) throw std::invalid_argument("step: softmax variants have no recurrent form");
    if (state.d != basis.d || state.p != basis.p) {
        throw std::invalid_argument("step: state does not match basis");
    }
    const int64_t d = state.d;
    const int64_t dim = state.dim;

    std::vector<double> key(static_cast<size_t>(d));
    if (traits.rotary) {
        state.mu = advance(state.mu, rates, beta_i);
        rotate_into(state.mu.mu.data(), k_i, key.data(), d / 2, counter);
        if (counter) counter->add(static_cast<unsigned long long>(d));  // mu advance
    } else {
        std::memcpy(key.data(), k_i, static_cast<size_t>(d) * sizeof(double));
    }

    std::vector<double> phi(static_cast<size_t>(dim));
    embed_into(key.data(), basis, phi.data(), counter);

    for (int64_t e = 0; e < dim; ++e) {
        state.z[static_cast<size_t>(e)] = gamma_i * state.z[static_cast<size_t>(e)] + phi[static_cast<size_t>(e)];
    }
    for (int64_t r = 0; r < d; ++r) {
        double* srow = state.s.row(r);
        double vr = v_i[r];
        for (int64_t e = 0; e < dim; ++e) {
            srow[e] = gamma_i * srow[e] + vr * phi[static_cast<size_t>(e)];
        }
    }
    if (counter) counter->add(static_cast<unsigned long long>(2 * dim + 2 * d * dim));
    state.step_count += 1;
}

std::vector<double> output(const RecurrentState& state, const double* q_i,
                           const MultisetBasis& basis, OpCounter* counter, double denom_eps) {
    if (state.step_count < 1) throw std::invalid_argument("output: state has no steps");
    const int64_t d = state.d;
    const int64_t dim = state.dim;

    std::vector<double> query(static_cast<size_t>(d));
    bool rotate_query = !state.conformal_form &&
                        std::any_of(state.mu.mu.begin(), state.mu.mu.end(),
                                    [](double m) { return m != 0.0; });
    if (rotate_query) {
        rotate_into(state.mu.mu.data(), q_i, query.data(), d / 2, counter);
    } else {
        std::memcpy(query.data(), q_i, static_cast<size_t>(d) * sizeof(double));
    }

    std::vector<double> phi(static_cast<size_t>(dim));
    embed_into(query.data(), basis, phi.data(), counter);

    double denom = 0.0;
    for (int64_t e = 0; e < dim; ++e) denom += state.z[static_cast<size_t>(e)] * phi[static_cast<size_t>(e)];
    if (denom_eps > 0.0) {
        denom += denom_eps;
    } else if (!(std::abs(denom) >= 1e-30)) {
        throw std::runtime_error("degenerate normalizer at step " + std::to_string(state.step_count));
    }

    std::vector<double> y(static_cast<size_t>(d));
    for (int64_t r = 0; r < d; ++r) {
        const double* srow = state.s.row(r);
        double acc = 0.0;
        for (int64_t e = 0; e < dim; ++e) acc += srow[e] * phi[static_cast<size_t>(e)];
        y[static_cast<size_t>(r)] = acc / denom;
    }
    if (counter) counter->add(static_cast<unsigned long long>(dim + d * dim + d));
    return y;
}

void apply_conformal(RecurrentState& state, const Matrix& rot, double scale) {
    const int64_t dim = state.dim;
    if (rot.rows != dim || rot.cols != dim) {
        throw std::invalid_argument("apply_conformal: rotation shape mismatch");
    }
    std::vector<double> tmp(static_cast<size_t>(dim));
    auto right_multiply = [&](double* vec) {
        for (int64_t j = 0; j < dim; ++j) {
            double acc = 0.0;
            for (int64_t l = 0; l < dim; ++l) acc += vec[l] * rot(l, j);
            tmp[static_cast<size_t>(j)] = scale * acc;
        }
        std::memcpy(vec, tmp.data(), static_cast<size_t>(dim) * sizeof(double));
    };
    right_multiply(state.z.data());
    for (int64_t r = 0; r < state.d; ++r) right_multiply(state.s.row(r));
}

void step_conformal_form(RecurrentState& state, const double* k_i, const double* v_i,
                         double gamma_i, double beta_i, const RotationRates& rates,
                         const MultisetBasis& basis, RngStream& rng) {
    if (basis.dim > 512) {
        throw std::invalid_argument(
            "step_conformal_form: D > 512 cannot materialize the embedded rotation; use step()");
    }
    if (state.d != basis.d || state.p != basis.p) {
        throw std::invalid_argument("step_conformal_form: state does not match basis");
    }
    AngleState delta;
    delta.mu.resize(static_cast<size_t>(basis.d / 2));
    for (size_t j = 0; j < delta.mu.size(); ++j) delta.mu[j] = beta_i * rates.theta[j];
    EmbeddedRotation rbar = solve_embedded_rotation(delta, basis, rng);

    apply_conformal(state, rbar.matrix, gamma_i);

    std::vector<double> phi(static_cast<size_t>(state.dim));
    embed_into(k_i, basis, phi.data());
    for (int64_t e = 0; e < state.dim; ++e) state.z[static_cast<size_t>(e)] += phi[static_cast<size_t>(e)];
    for (int64_t r = 0; r < state.d; ++r) {
        double* srow = state.s.row(r);
        double vr = v_i[r];
        for (int64_t e = 0; e < state.dim; ++e) srow[e] += vr * phi[static_cast<size_t>(e)];
    }
    state.conformal_form = true;
    state.step_count += 1;
}

Matrix run_recurrent(Variant variant, const Matrix& q, const Matrix& k, const Matrix& v,
                     const std::vector<double>& gamma, const std::vector<double>& beta,
                     const RotationRates& rates, const MultisetBasis& basis, OpCounter* counter,
                     double denom_eps) {
    VariantTraits traits = traits_of(variant);
    if (!traits.sympow) {
        throw std::invalid_argument("run_recurrent: softmax variants have no recurrent form");
    }
    const int64_t t = q.rows;
    if (k.rows != t || v.rows != t) throw std::invalid_argument("run_recurrent: length mismatch");
    if (traits.gated && static_cast<int64_t>(gamma.size()) != t) {
        throw std::invalid_argument("run_recurrent: gamma track length mismatch");
    }
    if (traits.learned_rotary && static_cast<int64_t>(beta.size()) != t) {
        throw std::invalid_argument("run_recurrent: beta track length mismatch");
    }

    RecurrentState state = make_state(basis);
    Matrix y(t, v.cols);
    for (int64_t i = 0; i < t; ++i) {
        double g = traits.gated ? gamma[static_cast<size_t>(i)] : 1.0;
        double b = traits.learned_rotary ? beta[static_cast<size_t>(i)] : 1.0;
        step(state, variant, k.row(i), v.row(i), g, b, rates, basis, counter);
        std::vector<double> yi = output(state, q.row(i), basis, counter, denom_eps);
        std::memcpy(y.row(i), yi.data(), yi.size() * sizeof(double));
    }
    CSPW_DEBUG_CHECK_FINITE(y, "run_recurrent");
    return y;
}

Matrix run_recurrent(Variant variant, const Matrix& x, const HeadParams& params,
                     const RotationRates& rates, const MultisetBasis& basis, OpCounter* counter,
                     double denom_eps) {
    VariantTraits traits = traits_of(variant);
    Matrix q = matmul(x, params.w_q);
    Matrix k = matmul(x, params.w_k);
    Matrix v = matmul(x, params.w_v);
    std::vector<double> gamma, beta;
    if (traits.gated) gamma = gate_values(x, params.w_gamma);
    if (traits.learned_rotary) beta = beta_values(x, params.w_beta);
    return run_recurrent(variant, q, k, v, gamma, beta, rates, basis, counter, denom_eps);
}

std::vector<uint8_t> serialize_state(const RecurrentState& state) {
    if (state.conformal_form) {
        throw std::runtime_error("serialize_state: conformal-form states are not snapshotable");
    }
    std::vector<uint8_t> out;
    binio::put_bytes(out, kSnapshotMagic, 8);
    binio::put_le<uint32_t>(out, 1);
    binio::put_le<uint16_t>(out, static_cast<uint16_t>(state.d));
    binio::put_le<uint16_t>(out, static_cast<uint16_t>(state.p));
    for (double v : state.s.data) binio::put_f64(out, v);
    for (double v : state.z) binio::put_f64(out, v);
    for (double v : state.mu.mu) binio::put_f64(out, v);
    binio::put_f64(out, static_cast<double>(state.step_count));
    return out;
}

RecurrentState deserialize_state(const std::vector<uint8_t>& bytes) {
    binio::Reader r{bytes.data(), bytes.size()};
    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, kSnapshotMagic, 8) != 0) {
        throw std::runtime_error("deserialize_state: bad magic");
    }
    uint32_t version = r.get_le<uint32_t>();
    if (version != 1) throw std::runtime_error("deserialize_state: unsupported version");
    int64_t d = r.get_le<uint16_t>();
    int64_t p = r.get_le<uint16_t>();

    MultisetBasis basis = build_basis(d, p);
    RecurrentState state = make_state(basis);
    for (double& v : state.s.data) v = r.get_f64();
    for (double& v : state.z) v = r.get_f64();
    for (double& v : state.mu.mu) v = r.get_f64();
    state.step_count = static_cast<int64_t>(r.get_f64());
    return state;
}

}  // namespace cspw
