#include "cspw/verify.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>

#include "cspw/data.hpp"
#include "cspw/model.hpp"
#include "cspw/recurrent.hpp"
#include "cspw/sympow.hpp"

namespace cspw {

namespace {

struct Harness {
    const RunConfig& config;
    const FaultInjection& fault;
    std::vector<SuiteResult> results;

    void record(const std::string& name, double max_err, double tol, int64_t n_cases) {
        results.push_back({name, max_err <= tol, max_err, tol, n_cases});
    }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

struct HeadInstance {
    Matrix x, q, k, v;
    HeadParams params;
};

HeadInstance make_head_instance(RngStream& rng, int64_t t, int64_t d_model, int64_t d) {
    HeadInstance inst;
    inst.x = gauss(rng, t, d_model);
    double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    auto draw = [&](int64_t r, int64_t c) {
        Matrix m = gauss(rng, r, c);
        for (double& v : m.data) v *= scale;
        return m;
    };
    inst.params.w_q = draw(d_model, d);
    inst.params.w_k = draw(d_model, d);
    inst.params.w_v = draw(d_model, d);
    inst.params.w_gamma = draw(d_model, 1);
    inst.params.w_beta = draw(d_model, 1);
    inst.q = matmul(inst.x, inst.params.w_q);
    inst.k = matmul(inst.x, inst.params.w_k);
    inst.v = matmul(inst.x, inst.params.w_v);
    return inst;
}

void suite_kernel_property(Harness& h) {
    double worst = 0.0;
    int64_t cases = 0;
    RngStream rng(h.config.seed ^ 0x4B65ull, 0);
    for (int64_t d : {2, 4, 8, 16}) {
        for (int64_t p : {2, 4}) {
            MultisetBasis basis = build_basis(d, p);
            std::vector<double> v(static_cast<size_t>(d)), w(static_cast<size_t>(d));
            std::vector<double> ev(static_cast<size_t>(basis.dim)), ew(static_cast<size_t>(basis.dim));
            for (int64_t trial = 0; trial < 10000; ++trial) {
                for (double& x : v) x = rng.normal();
                for (double& x : w) x = rng.normal();
                embed_into(v.data(), basis, ev.data());
                embed_into(w.data(), basis, ew.data());
                double want = std::pow(dot(v, w), static_cast<double>(p));
                double err = std::abs(dot(ev, ew) - want) / std::max(1.0, std::abs(want));
                worst = std::max(worst, err);
                ++cases;
            }
        }
    }
    h.record("kernel-property", worst, h.config.tol_kernel, cases);
}

void suite_embed_dimension(Harness& h) {
    double err = 0.0;
    int64_t cases = 0;
    auto expect = [&](int64_t got, int64_t want) {
        if (got != want) err = 1.0;
        ++cases;
    };
    expect(embed_dim(1, 4), 1);
    expect(embed_dim(2, 2), 3);
    expect(embed_dim(2, 4), 5);
    expect(embed_dim(64, 2), 2080);
    for (int64_t d : {2, 3, 5, 8}) {
        for (int64_t p : {1, 2, 3, 4}) {
            MultisetBasis basis = build_basis(d, p);
            expect(static_cast<int64_t>(basis.coeffs.size()), embed_dim(d, p));
            expect(static_cast<int64_t>(basis.entries.size()), basis.dim * p);
        }
    }
    h.record("embed-dimension", err, 0.0, cases);
}

void suite_embed_homogeneity(Harness& h) {
    RngStream rng(h.config.seed ^ 0x484Full, 0);
    double worst = 0.0;
    int64_t cases = 0;
    for (int64_t p : {2, 4}) {
        MultisetBasis basis = build_basis(6, p);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> v(6);
            for (double& x : v) x = rng.normal();
            double c = 0.25 + 2.0 * rng.uniform();
            std::vector<double> cv(6);
            for (int i = 0; i < 6; ++i) cv[i] = c * v[i];
            EmbeddedVector ev = embed(v, basis);
            EmbeddedVector ecv = embed(cv, basis);
            double scale = std::pow(c, static_cast<double>(p));
            for (int64_t e = 0; e < basis.dim; ++e) {
                double want = scale * ev.values[e];
                worst = std::max(worst,
                                 std::abs(ecv.values[e] - want) / std::max(1.0, std::abs(want)));
            }
            ++cases;
        }
    }
    h.record("embed-homogeneity", worst, h.config.tol_kernel, cases);
}

void suite_embed_jacobian(Harness& h) {
    RngStream rng(h.config.seed ^ 0x4A61ull, 0);
    double worst = 0.0;
    int64_t cases = 0;
    const double step = 1e-5;
    for (int64_t d : {2, 4}) {
        for (int64_t p : {1, 2, 4}) {
            MultisetBasis basis = build_basis(d, p);
            std::vector<double> v(static_cast<size_t>(d));
            for (double& x : v) x = rng.normal();
            Matrix jac = embed_jacobian(v, basis);
            for (int64_t j = 0; j < d; ++j) {
                std::vector<double> lo = v, hi = v;
                lo[static_cast<size_t>(j)] -= step;
                hi[static_cast<size_t>(j)] += step;
                EmbeddedVector elo = embed(lo, basis);
                EmbeddedVector ehi = embed(hi, basis);
                for (int64_t e = 0; e < basis.dim; ++e) {
                    double fd = (ehi.values[e] - elo.values[e]) / (2.0 * step);
                    worst = std::max(worst,
                                     std::abs(jac(e, j) - fd) / std::max(1.0, std::abs(fd)));
                    ++cases;
                }
            }
        }
    }
    h.record("embed-jacobian", worst, 1e-6, cases);
}

void suite_rotation_power(Harness& h) {
    const int64_t d = 8;
    RotationRates rates = make_rates(d, 1024);
    double worst = 0.0;
    // columns of R(theta)^k via repeated application vs R(k theta) directly
    std::vector<std::vector<double>> repeated(static_cast<size_t>(d));
    for (int64_t c = 0; c < d; ++c) {
        repeated[static_cast<size_t>(c)].assign(static_cast<size_t>(d), 0.0);
        repeated[static_cast<size_t>(c)][static_cast<size_t>(c)] = 1.0;
    }
    AngleState single{rates.theta};
    AngleState mu{std::vector<double>(static_cast<size_t>(d / 2), 0.0)};
    int64_t cases = 0;
    for (int64_t k = 1; k <= 1024; ++k) {
        mu = advance(mu, rates, 1.0);
        for (int64_t c = 0; c < d; ++c) {
            repeated[static_cast<size_t>(c)] = rotate(single, repeated[static_cast<size_t>(c)]);
        }
        std::vector<double> unit(static_cast<size_t>(d), 0.0);
        for (int64_t c = 0; c < d; ++c) {
            unit.assign(static_cast<size_t>(d), 0.0);
            unit[static_cast<size_t>(c)] = 1.0;
            std::vector<double> direct = rotate(mu, unit);
            for (int64_t r = 0; r < d; ++r) {
                worst = std::max(worst,
                                 std::abs(repeated[static_cast<size_t>(c)][static_cast<size_t>(r)] -
                                          direct[static_cast<size_t>(r)]));
            }
        }
        ++cases;
    }
    h.record("rotation-power", worst, h.config.tol_rotation_power, cases);
}

void suite_rotary_relative(Harness& h) {
    RngStream rng(h.config.seed ^ 0x5261ull, 0);
    const int64_t d = 8;
    RotationRates rates = make_rates(d, 256);
    double worst = 0.0;
    int64_t cases = 0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> q(static_cast<size_t>(d)), k(static_cast<size_t>(d));
        for (double& x : q) x = rng.normal();
        for (double& x : k) x = rng.normal();
        int64_t i = 1 + static_cast<int64_t>(rng.index(40));
        int64_t j = static_cast<int64_t>(rng.index(static_cast<uint64_t>(i)));
        int64_t shift = 1 + static_cast<int64_t>(rng.index(100));
        auto score = [&](int64_t qi, int64_t kj) {
            AngleState mq{std::vector<double>(static_cast<size_t>(d / 2), 0.0)};
            AngleState mk = mq;
            for (int64_t s = 0; s < qi; ++s) mq = advance(mq, rates, 1.0);
            for (int64_t s = 0; s < kj; ++s) mk = advance(mk, rates, 1.0);
            return dot(rotate(mq, q), rotate(mk, k));
        };
        double base = score(i, j);
        double moved = score(i + shift, j + shift);
        worst = std::max(worst, std::abs(base - moved) / std::max(1.0, std::abs(base)));
        ++cases;
    }
    h.record("rotary-relative", worst, 1e-10, cases);
}

void suite_rotary_norm(Harness& h) {
    RngStream rng(h.config.seed ^ 0x4E4Full, 0);
    double worst = 0.0;
    int64_t cases = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(12);
        for (double& x : v) x = rng.normal();
        AngleState mu{{rng.normal() * 5, rng.normal() * 5, rng.normal() * 5, rng.normal() * 5,
                       rng.normal() * 5, rng.normal() * 5}};
        std::vector<double> out = rotate(mu, v);
        double n0 = std::sqrt(dot(v, v));
        double n1 = std::sqrt(dot(out, out));
        worst = std::max(worst, std::abs(n1 - n0) / std::max(1e-12, n0));
        ++cases;
    }
    h.record("rotary-norm", worst, 1e-12, cases);
}

double equivalence_error(Harness& h, Variant variant, int64_t instances, int64_t t, int64_t d,
                         int64_t d_model, uint64_t salt) {
    VariantTraits traits = traits_of(variant);
    MultisetBasis basis = build_basis(d, h.config.power);
    RotationRates rates = make_rates(d, 1024);
    double worst = 0.0;
    for (int64_t inst_idx = 0; inst_idx < instances; ++inst_idx) {
        RngStream rng(h.config.seed ^ salt, static_cast<uint64_t>(inst_idx));
        HeadInstance inst = make_head_instance(rng, t, d_model, d);
        AttentionTrace quad = attention_forward(variant, inst.q, inst.k, inst.v, inst.x,
                                                inst.params, rates, h.config.power, nullptr,
                                                &h.fault);
        std::vector<double> gamma, beta;
        if (traits.gated) gamma = gate_values(inst.x, inst.params.w_gamma);
        if (traits.learned_rotary) beta = beta_values(inst.x, inst.params.w_beta);
        Matrix rec = run_recurrent(variant, inst.q, inst.k, inst.v, gamma, beta, rates, basis);
        for (size_t i = 0; i < rec.size(); ++i) {
            worst = std::max(worst, std::abs(rec.data[i] - quad.y.data[i]) /
                                        std::max(1.0, std::abs(quad.y.data[i])));
        }
    }
    return worst;
}

void suite_equivalences(Harness& h) {
    h.record("prop1-rotary-equivalence",
             equivalence_error(h, Variant::SympowRotary, 50, 64, 8, 16, 0x5031ull),
             h.config.tol_equivalence, 50);
    h.record("prop2-gating-equivalence",
             equivalence_error(h, Variant::SympowGated, 50, 64, 8, 16, 0x5032ull),
             h.config.tol_equivalence, 50);
    h.record("conformal-equivalence",
             equivalence_error(h, Variant::ConformalSympow, 50, 64, 8, 16, 0x5033ull),
             h.config.tol_equivalence, 50);
}

void suite_embedded_rotation(Harness& h) {
    double worst = 0.0;
    int64_t cases = 0;
    for (int64_t d : {2, 4}) {
        MultisetBasis basis = build_basis(d, 2);
        RotationRates rates = make_rates(d, 64);
        AngleState mu{std::vector<double>(static_cast<size_t>(d / 2), 0.0)};
        for (int64_t j = 0; j < d / 2; ++j) mu.mu[static_cast<size_t>(j)] = 1.3 * rates.theta[static_cast<size_t>(j)];
        RngStream rng(h.config.seed ^ 0x5033ull, 99);
        EmbeddedRotation rot = solve_embedded_rotation(mu, basis, rng);
        worst = std::max(worst, max_orthogonality_error(rot.matrix));
        RngStream fresh(h.config.seed ^ 0x5034ull, static_cast<uint64_t>(d));
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> v(static_cast<size_t>(d));
            for (double& x : v) x = fresh.normal();
            EmbeddedVector ev = embed(v, basis);
            EmbeddedVector want = embed(rotate(mu, v), basis);
            for (int64_t r = 0; r < basis.dim; ++r) {
                double got = 0.0;
                for (int64_t c = 0; c < basis.dim; ++c) got += rot.matrix(r, c) * ev.values[c];
                worst = std::max(worst, std::abs(got - want.values[r]));
            }
            ++cases;
        }
    }
    h.record("prop3-embedded-rotation", worst, 1e-8, cases);
}

void suite_conformal_state_form(Harness& h) {
    double worst = 0.0;
    int64_t cases = 0;
    for (int64_t d : {2, 4}) {
        MultisetBasis basis = build_basis(d, 2);
        RotationRates rates = make_rates(d, 64);
        RngStream rng(h.config.seed ^ 0x5035ull, static_cast<uint64_t>(d));
        HeadInstance inst = make_head_instance(rng, 16, 8, d);
        std::vector<double> gamma = gate_values(inst.x, inst.params.w_gamma);
        std::vector<double> beta = beta_values(inst.x, inst.params.w_beta);
        RecurrentState standard = make_state(basis);
        RecurrentState conformal = make_state(basis);
        RngStream solver(h.config.seed ^ 0x5036ull, static_cast<uint64_t>(d));
        for (int64_t i = 0; i < 16; ++i) {
            step(standard, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
                 gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
            step_conformal_form(conformal, inst.k.row(i), inst.v.row(i),
                                gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)],
                                rates, basis, solver);
            std::vector<double> ys = output(standard, inst.q.row(i), basis);
            std::vector<double> yc = output(conformal, inst.q.row(i), basis);
            for (int64_t l = 0; l < d; ++l) {
                worst = std::max(worst, std::abs(ys[static_cast<size_t>(l)] - yc[static_cast<size_t>(l)]) /
                                            std::max(1.0, std::abs(ys[static_cast<size_t>(l)])));
            }
            ++cases;
        }
    }
    h.record("conformal-state-form", worst, h.config.tol_conformal, cases);
}

void suite_alibi_gating(Harness& h) {
    RngStream rng(h.config.seed ^ 0xA11Bull, 0);
    const int64_t t = 128, d = 8;
    Matrix q = gauss(rng, t, d), k = gauss(rng, t, d), v = gauss(rng, t, d);
    const double temp = 1.0 / std::sqrt(static_cast<double>(d));
    double worst = 0.0;
    int64_t cases = 0;
    for (double m : {0.1, std::log(2.0), 1.0}) {
        AttentionTrace alibi = softmax_attention(q, k, v, m);
        double gamma = alibi_gamma(m);
        for (int64_t i = 0; i < t; ++i) {
            double maxs = -1e300;
            std::vector<double> scores(static_cast<size_t>(i) + 1);
            for (int64_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (int64_t l = 0; l < d; ++l) s += q(i, l) * k(j, l);
                scores[static_cast<size_t>(j)] = s * temp;
                maxs = std::max(maxs, s * temp);
            }
            double denom = 0.0;
            for (int64_t j = 0; j <= i; ++j) {
                scores[static_cast<size_t>(j)] = std::pow(gamma, static_cast<double>(i - j)) *
                                                 std::exp(scores[static_cast<size_t>(j)] - maxs);
                denom += scores[static_cast<size_t>(j)];
            }
            for (int64_t j = 0; j <= i; ++j) {
                double want = scores[static_cast<size_t>(j)] / denom;
                worst = std::max(worst, std::abs(alibi.a(i, j) - want) /
                                            std::max(1.0, std::abs(want)));
            }
        }
        ++cases;
    }
    h.record("alibi-gating", worst, h.config.tol_alibi, cases);
}

void suite_gate_cumulation(Harness& h) {
    RngStream rng(h.config.seed ^ 0x6A7Eull, 0);
    const int64_t t = 24;
    double worst = 0.0;
    int64_t cases = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> gamma(static_cast<size_t>(t)), beta(static_cast<size_t>(t));
        for (double& g : gamma) g = 0.02 + 0.96 * rng.uniform();
        for (double& b : beta) b = 2.0 * rng.uniform();
        GateTrack track = cumulate(gamma, beta);
        for (int64_t i = 0; i < t; ++i) {
            for (int64_t j = 0; j <= i; ++j) {
                for (int64_t k = j; k <= i; ++k) {
                    double lb = track.log_b(i, j);
                    double rb = track.log_b(i, k) + track.log_b(k, j);
                    worst = std::max(worst, std::abs(lb - rb) / std::max(1.0, std::abs(lb)));
                    double lc = track.c(i, j);
                    double rc = track.c(i, k) + track.c(k, j);
                    worst = std::max(worst, std::abs(lc - rc) / std::max(1.0, std::abs(lc)));
                }
            }
        }
        ++cases;
    }
    h.record("gate-cumulation", worst, 1e-12, cases);
}

void suite_attention_stochastic(Harness& h) {
    RngStream rng(h.config.seed ^ 0xA77Eull, 0);
    RotationRates rates = make_rates(8, 256);
    double worst = 0.0;
    int64_t cases = 0;
    for (Variant variant : {Variant::Sympow, Variant::SympowRotary, Variant::SympowGated,
                            Variant::SympowLearnedRotary, Variant::ConformalSympow}) {
        HeadInstance inst = make_head_instance(rng, 32, 16, 8);
        AttentionTrace trace = attention_forward(variant, inst.q, inst.k, inst.v, inst.x,
                                                 inst.params, rates, h.config.power);
        for (int64_t i = 0; i < 32; ++i) {
            double sum = 0.0;
            for (int64_t j = 0; j < 32; ++j) {
                if (j > i) {
                    worst = std::max(worst, std::abs(trace.a(i, j)));
                } else {
                    sum += trace.a(i, j);
                    if (trace.b(i, j) < 0.0) worst = std::max(worst, -trace.b(i, j));
                }
            }
            worst = std::max(worst, std::abs(sum - 1.0));
            for (int64_t l = 0; l < 8; ++l) {
                double lo = 1e300, hi = -1e300;
                for (int64_t j = 0; j <= i; ++j) {
                    lo = std::min(lo, inst.v(j, l));
                    hi = std::max(hi, inst.v(j, l));
                }
                worst = std::max(worst, std::max(lo - trace.y(i, l), trace.y(i, l) - hi));
            }
            ++cases;
        }
    }
    h.record("attention-stochastic", std::max(worst, 0.0), 1e-12, cases);
}

void suite_reduction_chain(Harness& h) {
    RngStream rng(h.config.seed ^ 0x6368ull, 0);
    RotationRates rates = make_rates(8, 256);
    const int64_t t = 24;
    double worst = 0.0;

    HeadInstance inst = make_head_instance(rng, t, 16, 8);
    HeadParams frozen = inst.params;
    for (double& v : frozen.w_beta.data) v = 0.0;
    AttentionTrace conformal = attention_forward(Variant::ConformalSympow, inst.q, inst.k, inst.v,
                                                 inst.x, frozen, rates, h.config.power, nullptr,
                                                 &h.fault);
    AttentionTrace gated = attention_forward(Variant::SympowGated, inst.q, inst.k, inst.v, inst.x,
                                             frozen, rates, h.config.power, nullptr, &h.fault);
    for (size_t i = 0; i < conformal.y.size(); ++i) {
        worst = std::max(worst, std::abs(conformal.y.data[i] - gated.y.data[i]) /
                                    std::max(1.0, std::abs(gated.y.data[i])));
    }

    // gamma -> 1 regime: +40 projections saturate the gate
    HeadInstance open = make_head_instance(rng, t, 16, 8);
    open.x = Matrix(t, 16);
    for (double& v : open.x.data) v = 2.5;
    open.params.w_gamma = Matrix(16, 1);
    for (double& v : open.params.w_gamma.data) v = 1.0;
    open.q = matmul(open.x, open.params.w_q);
    open.k = matmul(open.x, open.params.w_k);
    open.v = matmul(open.x, open.params.w_v);
    AttentionTrace g2 = attention_forward(Variant::SympowGated, open.q, open.k, open.v, open.x,
                                          open.params, rates, h.config.power, nullptr, &h.fault);
    AttentionTrace r2 = attention_forward(Variant::SympowRotary, open.q, open.k, open.v, open.x,
                                          open.params, rates, h.config.power, nullptr, &h.fault);
    for (size_t i = 0; i < g2.y.size(); ++i) {
        worst = std::max(worst,
                         std::abs(g2.y.data[i] - r2.y.data[i]) / std::max(1.0, std::abs(r2.y.data[i])));
    }
    h.record("reduction-chain", worst, h.config.tol_reduction, 2);
}

void suite_state_linearity(Harness& h) {
    RngStream rng(h.config.seed ^ 0x57A7ull, 0);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 256);
    const int64_t t = 20, split = 9;
    HeadInstance inst = make_head_instance(rng, t, 8, 4);
    std::vector<double> gamma = gate_values(inst.x, inst.params.w_gamma);
    std::vector<double> beta = beta_values(inst.x, inst.params.w_beta);

    RecurrentState whole = make_state(basis);
    RecurrentState part = make_state(basis);
    double worst = 0.0;
    for (int64_t i = 0; i < t; ++i) {
        step(whole, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
             gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
    }
    for (int64_t i = 0; i < split; ++i) {
        step(part, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
             gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
    }
    RecurrentState resumed = deserialize_state(serialize_state(part));
    for (int64_t i = split; i < t; ++i) {
        step(resumed, Variant::ConformalSympow, inst.k.row(i), inst.v.row(i),
             gamma[static_cast<size_t>(i)], beta[static_cast<size_t>(i)], rates, basis);
    }
    for (size_t i = 0; i < whole.s.size(); ++i) {
        worst = std::max(worst, std::abs(resumed.s.data[i] - whole.s.data[i]));
    }
    for (size_t i = 0; i < whole.z.size(); ++i) {
        worst = std::max(worst, std::abs(resumed.z[i] - whole.z[i]));
    }
    h.record("state-linearity", worst, 0.0, t);
}

void suite_linear_time_ops(Harness& h) {
    RngStream rng(h.config.seed ^ 0x11FEull, 0);
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 1024);
    std::vector<unsigned long long> rec_per_step;
    std::vector<unsigned long long> quad_total;
    for (int64_t t : {64, 128, 256}) {
        HeadInstance inst = make_head_instance(rng, t, 8, 4);
        std::vector<double> gamma = gate_values(inst.x, inst.params.w_gamma);
        std::vector<double> beta = beta_values(inst.x, inst.params.w_beta);
        OpCounter rec;
        run_recurrent(Variant::ConformalSympow, inst.q, inst.k, inst.v, gamma, beta, rates, basis,
                      &rec);
        rec_per_step.push_back(rec.muladds / static_cast<unsigned long long>(t));
        OpCounter quad;
        attention_forward(Variant::ConformalSympow, inst.q, inst.k, inst.v, inst.x, inst.params,
                          rates, h.config.power, &quad);
        quad_total.push_back(quad.muladds);
    }
    bool per_step_constant =
        rec_per_step[0] == rec_per_step[1] && rec_per_step[1] == rec_per_step[2];
    double worst = per_step_constant ? 0.0 : 1.0;
    for (size_t i = 1; i < quad_total.size(); ++i) {
        double ratio = static_cast<double>(quad_total[i]) / static_cast<double>(quad_total[i - 1]);
        worst = std::max(worst, std::abs(ratio - 4.0));
    }
    h.record("linear-time-ops", worst, 0.5, 3);
}

void suite_gradient_check(Harness& h) {
    ModelConfig config;
    config.variant = Variant::ConformalSympow;
    config.vocab = 13;
    config.d_model = 8;
    config.n_layers = 1;
    config.n_heads = 2;
    config.head_dim = 4;
    config.power = 2;
    config.context = 8;
    GradCheckResult result = gradient_check(config, h.config.seed ^ 0x67ull, 8, 1e-5);
    h.record("gradient-check", result.max_rel_err, h.config.tol_gradient, result.n_checked);
}

}  // namespace

GradCheckResult gradient_check(const ModelConfig& config, uint64_t seed, int64_t context,
                               double h) {
    ModelParams params = init_params(config, seed);
    // move off the symmetric init: zero gates carry no signal and a zero
    // unembedding blocks every upstream gradient exactly
    RngStream gate_rng(seed, 77);
    for (LayerParams& layer : params.layers) {
        for (HeadParams& head : layer.heads) {
            for (double& v : head.w_gamma.data) v = 0.3 * gate_rng.normal();
            for (double& v : head.w_beta.data) v = 0.3 * gate_rng.normal();
        }
    }
    for (double& v : params.unembed.data) v = 0.1 * gate_rng.normal();
    round_to_f32(params);

    RngStream data_rng(seed, 101);
    std::vector<int32_t> tokens(static_cast<size_t>(context));
    std::vector<int32_t> targets(static_cast<size_t>(context));
    std::vector<double> weights(static_cast<size_t>(context), 1.0);
    for (auto& t : tokens) t = static_cast<int32_t>(data_rng.index(static_cast<uint64_t>(config.vocab)));
    for (size_t i = 0; i + 1 < targets.size(); ++i) targets[i] = tokens[i + 1];
    targets.back() = 0;
    weights.back() = 0.0;

    auto loss_at = [&]() {
        Tape tape;
        ForwardResult fwd = model_forward(tape, params, tokens, targets, weights, nullptr);
        return tape.value(fwd.loss)(0, 0);
    };

    Tape tape;
    ParamBinding binding;
    ForwardResult fwd = model_forward(tape, params, tokens, targets, weights, &binding);
    tape.backward(fwd.loss);

    GradCheckResult result;
    std::vector<NamedTensor> tensors = named_tensors(params);
    for (size_t ti = 0; ti < tensors.size(); ++ti) {
        Matrix& tensor = *tensors[ti].tensor;
        double tensor_worst = 0.0;
        // a parameter the variant never touches has no grad buffer; its
        // analytic gradient is zero
        const bool live = tape.has_grad(binding.nodes[ti]);
        const Matrix& analytic = live ? tape.grad(binding.nodes[ti]) : tensor;
        for (size_t e = 0; e < tensor.size(); ++e) {
            double keep = tensor.data[e];
            tensor.data[e] = keep + h;
            double hi = loss_at();
            tensor.data[e] = keep - h;
            double lo = loss_at();
            tensor.data[e] = keep;
            double fd = (hi - lo) / (2.0 * h);
            double an = live ? analytic.data[e] : 0.0;
            double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            tensor_worst = std::max(tensor_worst, err);
            ++result.n_checked;
        }
        result.per_tensor.emplace_back(tensors[ti].name, tensor_worst);
        result.max_rel_err = std::max(result.max_rel_err, tensor_worst);
    }
    return result;
}

std::vector<SuiteResult> run_verification(const RunConfig& config, const FaultInjection& fault) {
    Harness h{config, fault, {}};
    suite_kernel_property(h);
    suite_embed_dimension(h);
    suite_embed_homogeneity(h);
    suite_embed_jacobian(h);
    suite_rotation_power(h);
    suite_rotary_relative(h);
    suite_rotary_norm(h);
    suite_equivalences(h);
    suite_embedded_rotation(h);
    suite_conformal_state_form(h);
    suite_alibi_gating(h);
    suite_gate_cumulation(h);
    suite_attention_stochastic(h);
    suite_reduction_chain(h);
    suite_state_linearity(h);
    suite_linear_time_ops(h);
    suite_gradient_check(h);
    return h.results;
}

std::string format_report(const std::vector<SuiteResult>& results) {
    std::string out;
    for (const SuiteResult& r : results) {
        char line[192];
        std::snprintf(line, sizeof(line), "%-28s %s %.3e %.3e %lld\n", r.name.c_str(),
                      r.pass ? "PASS" : "FAIL", r.max_err, r.tol,
                      static_cast<long long>(r.n_cases));
        out += line;
    }
    return out;
}

FaultInjection fault_from_name(const std::string& name) {
    FaultInjection fault;
    if (name.empty()) return fault;
    if (name == "gating-offby-one") {
        fault.gating_off_by_one = true;
        return fault;
    }
    throw std::invalid_argument("unknown fault name: " + name);
}

}  // namespace cspw
