#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cspw/matrix.hpp"
#include "oracles.hpp"

using namespace cspw;

TEST_CASE("matmul identity and annihilation") {
    Matrix eye(2, 2);
    eye(0, 0) = eye(1, 1) = 1.0;
    Matrix m(2, 2);
    m(0, 0) = 1; m(0, 1) = 2; m(1, 0) = 3; m(1, 1) = 4;
    Matrix prod = matmul(eye, m);
    for (size_t i = 0; i < m.size(); ++i) CHECK(prod.data[i] == m.data[i]);

    Matrix proj(2, 2);
    proj(0, 0) = 1.0;
    Matrix col(2, 1);
    col(1, 0) = 5.0;
    Matrix zero = matmul(proj, col);
    CHECK(zero(0, 0) == 0.0);
    CHECK(zero(1, 0) == 0.0);
}

TEST_CASE("matmul matches naive triple loop exactly") {
    RngStream rng(7, 0);
    Matrix a = gauss(rng, 3, 3);
    Matrix b = gauss(rng, 3, 3);
    Matrix fast = matmul(a, b);
    Matrix ref = oracle::naive_matmul(a, b);
    for (size_t i = 0; i < fast.size(); ++i) CHECK(fast.data[i] == ref.data[i]);

    Matrix serial = matmul_serial(a, b);
    for (size_t i = 0; i < fast.size(); ++i) CHECK(serial.data[i] == fast.data[i]);
}

TEST_CASE("parallel matmul is bitwise equal to serial on large shapes") {
    RngStream rng(11, 3);
    Matrix a = gauss(rng, 97, 64);
    Matrix b = gauss(rng, 64, 83);
    Matrix p = matmul(a, b);
    Matrix s = matmul_serial(a, b);
    for (size_t i = 0; i < p.size(); ++i) CHECK(p.data[i] == s.data[i]);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Matrix a(2, 3), b(2, 2);
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul associativity on random triples") {
    RngStream rng(13, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a = gauss(rng, 6, 5);
        Matrix b = gauss(rng, 5, 7);
        Matrix c = gauss(rng, 7, 4);
        Matrix left = matmul(matmul(a, b), c);
        Matrix right = matmul(a, matmul(b, c));
        double scale = 0.0;
        for (double v : left.data) scale = std::max(scale, std::abs(v));
        CHECK(oracle::max_abs_diff(left, right) <= 1e-10 * std::max(1.0, scale));
    }
}

TEST_CASE("activations") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(tanh_act(0.0) == 0.0);
    double tail = sigmoid(-100.0);
    CHECK(tail > 0.0);
    CHECK(tail < 1e-40);
    // saturates without overflow at the extremes
    CHECK(sigmoid(100.0) == 1.0);
    CHECK(std::isfinite(sigmoid(700.0)));
    CHECK(std::isfinite(sigmoid(-700.0)));
    // strictly monotone and inside (0,1) wherever double can resolve it
    double prev = -1.0;
    for (double x = -30.0; x <= 30.0; x += 1.5) {
        double s = sigmoid(x);
        CHECK(s > prev);
        CHECK(s > 0.0);
        CHECK(s < 1.0);
        prev = s;
    }
}

TEST_CASE("rng streams are reproducible and sensitive to ids") {
    RngStream a(42, 1), b(42, 1), c(42, 2);
    bool all_equal = true;
    bool any_differ = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t x = a.next_u64();
        all_equal = all_equal && (x == b.next_u64());
        any_differ = any_differ || (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_differ);

    RngStream g1(9, 5), g2(9, 5);
    Matrix m1 = gauss(g1, 4, 4);
    Matrix m2 = gauss(g2, 4, 4);
    for (size_t i = 0; i < m1.size(); ++i) CHECK(m1.data[i] == m2.data[i]);
}

TEST_CASE("gauss moments over 1e5 draws") {
    RngStream rng(2024, 0);
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    double mean = sum / n;
    double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("lstsq recovers an exact solution") {
    RngStream rng(5, 0);
    Matrix x_true = gauss(rng, 6, 2);
    Matrix a = gauss(rng, 10, 6);
    Matrix b = oracle::naive_matmul(a, x_true);
    LstsqResult sol = lstsq(a, b);
    CHECK(sol.diag_ratio > 1e-8);
    CHECK(oracle::max_abs_diff(sol.x, x_true) < 1e-10);
}

TEST_CASE("finite guard trips on NaN") {
    Matrix m(2, 2);
    m(1, 1) = std::nan("");
    CHECK(!all_finite(m));
    CHECK_THROWS_AS(check_finite(m, "test"), std::runtime_error);
}
