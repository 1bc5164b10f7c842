#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cspw/recurrent.hpp"
#include "instances.hpp"
#include "oracles.hpp"

using namespace cspw;
using testing_support::Instance;
using testing_support::make_instance;

namespace {

const Variant kSympowVariants[] = {Variant::Sympow, Variant::SympowRotary, Variant::SympowGated,
                                   Variant::SympowLearnedRotary, Variant::ConformalSympow};

struct Tracks {
    std::vector<double> gamma, beta;
};

Tracks gate_tracks(Variant variant, const Instance& inst) {
    VariantTraits traits = traits_of(variant);
    Tracks tracks;
    if (traits.gated) tracks.gamma = gate_values(inst.x, inst.params.w_gamma);
    if (traits.learned_rotary) tracks.beta = beta_values(inst.x, inst.params.w_beta);
    return tracks;
}

}  // namespace

TEST_CASE("first step fills S and Z from the rotated key") {
    RngStream rng(80, 0);
    Instance inst = make_instance(rng, 1, 6, 4);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);

    RecurrentState state = make_state(basis);
    step(state, Variant::SympowRotary, inst.k.row(0), inst.v.row(0), 1.0, 1.0, rates, basis);
    CHECK(state.step_count == 1);

    AngleState mu{rates.theta};  // one advance from zero
    std::vector<double> k0(inst.k.row(0), inst.k.row(0) + 4);
    EmbeddedVector phi = embed(rotate(mu, k0), basis);
    for (int64_t e = 0; e < basis.dim; ++e) {
        CHECK(state.z[static_cast<size_t>(e)] == doctest::Approx(phi.values[e]).epsilon(1e-14));
        for (int64_t r = 0; r < 4; ++r) {
            CHECK(state.s(r, e) ==
                  doctest::Approx(inst.v(0, r) * phi.values[e]).epsilon(1e-14));
        }
    }
}

TEST_CASE("single token output returns V1") {
    RngStream rng(81, 0);
    Instance inst = make_instance(rng, 1, 6, 4);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);
    for (Variant variant : kSympowVariants) {
        Tracks tracks = gate_tracks(variant, inst);
        Matrix y = run_recurrent(variant, inst.q, inst.k, inst.v, tracks.gamma, tracks.beta,
                                 rates, basis);
        // numerator and denominator round independently, so agreement is at
        // the equivalence tolerance rather than at machine precision
        for (int64_t l = 0; l < 4; ++l) {
            CHECK(std::abs(y(0, l) - inst.v(0, l)) <= 1e-8 * std::max(1.0, std::abs(inst.v(0, l))));
        }
    }
}

TEST_CASE("recurrent outputs equal quadratic outputs for every variant") {
    RngStream rng(82, 0);
    const int64_t t = 32;
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 256);
    for (Variant variant : kSympowVariants) {
        for (int trial = 0; trial < 5; ++trial) {
            Instance inst = make_instance(rng, t, 8, 4);
            AttentionTrace quad =
                attention_forward(variant, inst.q, inst.k, inst.v, inst.x, inst.params, rates, 2);
            Tracks tracks = gate_tracks(variant, inst);
            Matrix rec = run_recurrent(variant, inst.q, inst.k, inst.v, tracks.gamma,
                                       tracks.beta, rates, basis);
            CHECK(testing_support::max_rel_err(rec, quad.y) <= 1e-8);
        }
    }
}

TEST_CASE("gamma=1 beta=1 reduces the gated step to the rotary step") {
    RngStream rng(83, 0);
    Instance inst = make_instance(rng, 4, 6, 4);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);

    RecurrentState gated = make_state(basis);
    RecurrentState rotary = make_state(basis);
    for (int64_t i = 0; i < 4; ++i) {
        step(gated, Variant::SympowGated, inst.k.row(i), inst.v.row(i), 1.0, 1.0, rates, basis);
        step(rotary, Variant::SympowRotary, inst.k.row(i), inst.v.row(i), 1.0, 1.0, rates, basis);
    }
    for (size_t i = 0; i < gated.s.size(); ++i) CHECK(gated.s.data[i] == rotary.s.data[i]);
    for (size_t i = 0; i < gated.z.size(); ++i) CHECK(gated.z[i] == rotary.z[i]);
}

TEST_CASE("query scaling cancels in the output") {
    RngStream rng(84, 0);
    Instance inst = make_instance(rng, 8, 8, 4);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);
    Tracks tracks = gate_tracks(Variant::ConformalSympow, inst);
    Matrix y1 = run_recurrent(Variant::ConformalSympow, inst.q, inst.k, inst.v, tracks.gamma,
                              tracks.beta, rates, basis);
    Matrix q_scaled = inst.q;
    for (double& v : q_scaled.data) v *= 3.25;
    Matrix y2 = run_recurrent(Variant::ConformalSympow, q_scaled, inst.k, inst.v, tracks.gamma,
                              tracks.beta, rates, basis);
    CHECK(testing_support::max_rel_err(y2, y1) <= 1e-10);
}

TEST_CASE("state linearity: split processing is bitwise identical") {
    RngStream rng(85, 0);
    const int64_t t = 12, split = 5;
    Instance inst = make_instance(rng, t, 8, 4);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);
    std::vector<double> gamma = gate_values(inst.x, inst.params.w_gamma);
    std::vector<double> beta = beta_values(inst.x, inst.params.w_beta);

    RecurrentState whole = make_state(basis);
    for (int64_t i = 0; i < t; ++i) {
        step(whole, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
             gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
    }

    RecurrentState part = make_state(basis);
    for (int64_t i = 0; i < split; ++i) {
        step(part, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
             gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
    }
    std::vector<uint8_t> snap = serialize_state(part);
    RecurrentState resumed = deserialize_state(snap);
    for (int64_t i = split; i < t; ++i) {
        step(resumed, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
             gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
    }

    CHECK(resumed.step_count == whole.step_count);
    for (size_t i = 0; i < whole.s.size(); ++i) CHECK(resumed.s.data[i] == whole.s.data[i]);
    for (size_t i = 0; i < whole.z.size(); ++i) CHECK(resumed.z[i] == whole.z[i]);
    for (size_t i = 0; i < whole.mu.mu.size(); ++i) CHECK(resumed.mu.mu[i] == whole.mu.mu[i]);
}

TEST_CASE("snapshot header is validated") {
    MultisetBasis basis = build_basis(2, 2);
    RecurrentState state = make_state(basis);
    RotationRates rates = make_rates(2, 16);
    std::vector<double> k{1.0, 2.0}, v{0.5, -0.5};
    step(state, Variant::SympowRotary, k.data(), v.data(), 1.0, 1.0, rates, basis);

    std::vector<uint8_t> bytes = serialize_state(state);
    CHECK(bytes.size() == 16 + 8 * (2 * 3 + 3 + 1 + 1));
    CHECK(bytes[0] == 'S');
    CHECK(bytes[7] == 'T');

    bytes[3] ^= 0xFF;
    CHECK_THROWS_AS(deserialize_state(bytes), std::runtime_error);
}

TEST_CASE("conformal transform scales the state norm by exactly gamma") {
    RngStream rng(86, 0);
    MultisetBasis basis = build_basis(2, 2);
    RotationRates rates = make_rates(2, 16);
    RecurrentState state = make_state(basis);
    std::vector<double> k{0.3, -1.2}, v{1.0, 2.0};
    step(state, Variant::Sympow, k.data(), v.data(), 1.0, 1.0, rates, basis);

    double z_norm = 0.0;
    for (double x : state.z) z_norm += x * x;
    z_norm = std::sqrt(z_norm);

    AngleState delta{{0.7 * rates.theta[0]}};
    EmbeddedRotation rbar = solve_embedded_rotation(delta, basis, rng);
    const double gamma = 0.42;
    apply_conformal(state, rbar.matrix, gamma);

    double scaled = 0.0;
    for (double x : state.z) scaled += x * x;
    scaled = std::sqrt(scaled);
    CHECK(std::abs(scaled - gamma * z_norm) <= 1e-10 * std::max(1.0, gamma * z_norm));
}

TEST_CASE("conformal-form outputs match the standard step over 16 steps") {
    RngStream rng(87, 0);
    const int64_t t = 16;
    Instance inst = make_instance(rng, t, 6, 2);
    MultisetBasis basis = build_basis(2, 2);
    RotationRates rates = make_rates(2, 64);
    std::vector<double> gamma = gate_values(inst.x, inst.params.w_gamma);
    std::vector<double> beta = beta_values(inst.x, inst.params.w_beta);

    RecurrentState standard = make_state(basis);
    RecurrentState conformal = make_state(basis);
    RngStream solver_rng(88, 0);
    for (int64_t i = 0; i < t; ++i) {
        step(standard, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
             gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
        step_conformal_form(conformal, inst.k.row(i), inst.v.row(i),
                            gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates,
                            basis, solver_rng);
        std::vector<double> y_standard = output(standard, inst.q.row(i), basis);
        std::vector<double> y_conformal = output(conformal, inst.q.row(i), basis);
        for (int64_t l = 0; l < 2; ++l) {
            CHECK(std::abs(y_standard[static_cast<size_t>(l)] - y_conformal[static_cast<size_t>(l)]) <=
                  1e-6 * std::max(1.0, std::abs(y_standard[static_cast<size_t>(l)])));
        }
    }
}

TEST_CASE("conformal form refuses oversized D and snapshots") {
    MultisetBasis big = build_basis(10, 4);  // D = 715
    RecurrentState state = make_state(big);
    RotationRates rates = make_rates(10, 64);
    std::vector<double> k(10, 0.1), v(10, 0.2);
    RngStream rng(89, 0);
    CHECK_THROWS_AS(step_conformal_form(state, k.data(), v.data(), 0.9, 1.0, rates, big, rng),
                    std::invalid_argument);

    MultisetBasis small = build_basis(2, 2);
    RecurrentState cstate = make_state(small);
    RotationRates srates = make_rates(2, 16);
    std::vector<double> k2{1.0, 0.0}, v2{1.0, 1.0};
    step_conformal_form(cstate, k2.data(), v2.data(), 0.9, 1.0, srates, small, rng);
    CHECK_THROWS_AS(serialize_state(cstate), std::runtime_error);
}

TEST_CASE("zero key makes the normalizer degenerate") {
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);
    RecurrentState state = make_state(basis);
    std::vector<double> k(4, 0.0), v(4, 1.0), q(4, 1.0);
    step(state, Variant::Sympow, k.data(), v.data(), 1.0, 1.0, rates, basis);
    CHECK_THROWS_AS(output(state, q.data(), basis), std::runtime_error);
    // the trainer-style epsilon path returns zeros instead of erroring
    std::vector<double> y = output(state, q.data(), basis, nullptr, 1e-12);
    for (double x : y) CHECK(x == 0.0);
}

TEST_CASE("per-step cost is independent of sequence length") {
    RngStream rng(90, 0);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 256);
    std::vector<unsigned long long> per_step;
    for (int64_t t : {16, 32, 64}) {
        Instance inst = make_instance(rng, t, 8, 4);
        Tracks tracks = gate_tracks(Variant::ConformalSympow, inst);
        OpCounter counter;
        run_recurrent(Variant::ConformalSympow, inst.q, inst.k, inst.v, tracks.gamma,
                      tracks.beta, rates, basis, &counter);
        CHECK(counter.muladds % static_cast<unsigned long long>(t) == 0);
        per_step.push_back(counter.muladds / static_cast<unsigned long long>(t));
    }
    CHECK(per_step[0] == per_step[1]);
    CHECK(per_step[1] == per_step[2]);
}

TEST_CASE("softmax variants have no recurrent form") {
    RngStream rng(91, 0);
    Instance inst = make_instance(rng, 4, 6, 4);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);
    CHECK_THROWS_AS(run_recurrent(Variant::SoftmaxBaseline, inst.q, inst.k, inst.v, {}, {},
                                  rates, basis),
                    std::invalid_argument);
}
