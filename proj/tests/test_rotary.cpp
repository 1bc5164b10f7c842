#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cspw/rotary.hpp"
#include "oracles.hpp"

using namespace cspw;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

TEST_CASE("make_rates formula") {
    RotationRates r2 = make_rates(2, 777);
    REQUIRE(r2.theta.size() == 1);
    CHECK(r2.theta[0] == doctest::Approx(kTwoPi));

    RotationRates r4 = make_rates(4, 256);
    REQUIRE(r4.theta.size() == 2);
    CHECK(r4.theta[0] == doctest::Approx(kTwoPi));
    CHECK(r4.theta[1] == doctest::Approx(std::numbers::pi / 8.0));  // 2pi / 256^(1/2)

    RotationRates r1 = make_rates(4, 1);
    CHECK(r1.theta[0] == doctest::Approx(kTwoPi));
    CHECK(r1.theta[1] == doctest::Approx(kTwoPi));

    CHECK_THROWS_AS(make_rates(3, 16), std::invalid_argument);
    CHECK_THROWS_AS(make_rates(4, 0), std::invalid_argument);
}

TEST_CASE("rates strictly decreasing and in (0, 2pi]") {
    RotationRates r = make_rates(16, 4096);
    for (size_t i = 0; i < r.theta.size(); ++i) {
        CHECK(r.theta[i] > 0.0);
        CHECK(r.theta[i] <= kTwoPi);
        if (i > 0) CHECK(r.theta[i] < r.theta[i - 1]);
    }
}

TEST_CASE("rotate quarter turn and identity") {
    AngleState quarter{{std::numbers::pi / 2.0}};
    std::vector<double> v{1.0, 0.0};
    std::vector<double> out = rotate(quarter, v);
    CHECK(std::abs(out[0]) < 1e-15);
    CHECK(out[1] == doctest::Approx(1.0));

    AngleState zero{{0.0, 0.0}};
    std::vector<double> w{1.0, -2.0, 3.0, 4.0};
    std::vector<double> same = rotate(zero, w);
    for (size_t i = 0; i < w.size(); ++i) CHECK(same[i] == w[i]);

    CHECK_THROWS_AS(rotate(quarter, w), std::invalid_argument);
}

TEST_CASE("rotate matches dense block-matrix multiply") {
    RngStream rng(40, 0);
    AngleState mu{{std::numbers::pi / 3.0, std::numbers::pi / 7.0}};
    Matrix dense = oracle::dense_rotation(mu.mu);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix v = gauss(rng, 4, 1);
        std::vector<double> vv(v.data.begin(), v.data.end());
        std::vector<double> got = rotate(mu, vv);
        Matrix want = oracle::naive_matmul(dense, v);
        for (int i = 0; i < 4; ++i) CHECK(std::abs(got[i] - want(i, 0)) < 1e-12);
    }
}

TEST_CASE("rotation preserves norms") {
    RngStream rng(41, 0);
    for (int trial = 0; trial < 50; ++trial) {
        AngleState mu{{rng.normal() * 3.0, rng.normal() * 3.0, rng.normal() * 3.0}};
        std::vector<double> v(6);
        for (auto& x : v) x = rng.normal();
        std::vector<double> out = rotate(mu, v);
        double n0 = 0.0, n1 = 0.0;
        for (size_t i = 0; i < v.size(); ++i) {
            n0 += v[i] * v[i];
            n1 += out[i] * out[i];
        }
        CHECK(std::abs(std::sqrt(n1) - std::sqrt(n0)) <= 1e-12 * std::sqrt(n0));
    }
}

TEST_CASE("advance accumulates beta * theta") {
    RotationRates rates = make_rates(4, 64);
    AngleState mu{{0.0, 0.0}};
    AngleState two = advance(mu, rates, 2.0);
    CHECK(two.mu[0] == doctest::Approx(2.0 * rates.theta[0]));
    CHECK(two.mu[1] == doctest::Approx(2.0 * rates.theta[1]));

    AngleState still = advance(mu, rates, 0.0);
    CHECK(still.mu[0] == 0.0);
    CHECK(still.mu[1] == 0.0);
}

TEST_CASE("rotation power identity R(theta)^k = R(k theta)") {
    RotationRates rates = make_rates(8, 1024);
    RngStream rng(42, 0);
    std::vector<double> v(8);
    for (auto& x : v) x = rng.normal();

    AngleState mu{std::vector<double>(4, 0.0)};
    std::vector<double> repeated = v;
    AngleState single{rates.theta};
    for (int64_t k = 1; k <= 1024; ++k) {
        repeated = rotate(single, repeated);
        mu = advance(mu, rates, 1.0);
        if ((k & (k - 1)) == 0 || k == 1024) {  // powers of two and the cap
            std::vector<double> direct = rotate(mu, v);
            for (int i = 0; i < 8; ++i) CHECK(std::abs(repeated[i] - direct[i]) <= 1e-9);
        }
    }
}

TEST_CASE("relative position: scores depend only on i - j") {
    RotationRates rates = make_rates(6, 128);
    RngStream rng(43, 0);
    std::vector<double> q(6), k(6);
    for (auto& x : q) x = rng.normal();
    for (auto& x : k) x = rng.normal();

    auto score_at = [&](int64_t i, int64_t j) {
        AngleState mi{std::vector<double>(3, 0.0)}, mj{std::vector<double>(3, 0.0)};
        for (int64_t s = 0; s < i; ++s) mi = advance(mi, rates, 1.0);
        for (int64_t s = 0; s < j; ++s) mj = advance(mj, rates, 1.0);
        std::vector<double> qr = rotate(mi, q);
        std::vector<double> kr = rotate(mj, k);
        double acc = 0.0;
        for (int l = 0; l < 6; ++l) acc += qr[l] * kr[l];
        return acc;
    };

    for (int64_t shift : {1, 5, 23}) {
        double base = score_at(9, 4);
        double moved = score_at(9 + shift, 4 + shift);
        CHECK(std::abs(base - moved) <= 1e-10 * std::max(1.0, std::abs(base)));
    }
}

TEST_CASE("solve_embedded_rotation at mu = 0 gives identity") {
    MultisetBasis basis = build_basis(2, 2);
    AngleState mu{{0.0}};
    RngStream rng(44, 0);
    EmbeddedRotation rot = solve_embedded_rotation(mu, basis, rng);
    for (int64_t i = 0; i < basis.dim; ++i) {
        for (int64_t j = 0; j < basis.dim; ++j) {
            CHECK(std::abs(rot.matrix(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
        }
    }
}

TEST_CASE("embedded rotation consistency on held-out samples") {
    MultisetBasis basis = build_basis(2, 2);
    AngleState mu{{std::numbers::pi / 2.0}};
    RngStream rng(45, 0);
    EmbeddedRotation rot = solve_embedded_rotation(mu, basis, rng);

    CHECK(max_orthogonality_error(rot.matrix) <= 1e-8);

    // det = 1, checked only at this size
    const Matrix& m = rot.matrix;
    double det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                 m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                 m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    CHECK(det == doctest::Approx(1.0).epsilon(1e-8));

    RngStream fresh(46, 0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(2);
        for (auto& x : v) x = fresh.normal();
        EmbeddedVector ev = embed(v, basis);
        std::vector<double> rv = rotate(mu, v);
        EmbeddedVector want = embed(rv, basis);
        for (int64_t i = 0; i < basis.dim; ++i) {
            double got = 0.0;
            for (int64_t j = 0; j < basis.dim; ++j) got += rot.matrix(i, j) * ev.values[j];
            CHECK(std::abs(got - want.values[i]) <= 1e-9);
        }
    }
}

TEST_CASE("embedded rotation at larger d and p=2") {
    MultisetBasis basis = build_basis(4, 2);
    RotationRates rates = make_rates(4, 64);
    AngleState mu{{1.3 * rates.theta[0], 1.3 * rates.theta[1]}};
    RngStream rng(47, 0);
    EmbeddedRotation rot = solve_embedded_rotation(mu, basis, rng);
    CHECK(max_orthogonality_error(rot.matrix) <= 1e-8);

    RngStream fresh(48, 0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(4);
        for (auto& x : v) x = fresh.normal();
        EmbeddedVector ev = embed(v, basis);
        EmbeddedVector want = embed(rotate(mu, v), basis);
        for (int64_t i = 0; i < basis.dim; ++i) {
            double got = 0.0;
            for (int64_t j = 0; j < basis.dim; ++j) got += rot.matrix(i, j) * ev.values[j];
            CHECK(std::abs(got - want.values[i]) <= 1e-8);
        }
    }
}

TEST_CASE("embedded rotation guards oversized D") {
    MultisetBasis basis = build_basis(64, 3);  // D = 45760
    AngleState mu{std::vector<double>(32, 0.1)};
    RngStream rng(49, 0);
    CHECK_THROWS_AS(solve_embedded_rotation(mu, basis, rng), std::invalid_argument);
}
