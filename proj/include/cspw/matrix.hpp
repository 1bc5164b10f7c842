// Dense row-major matrices, seeded RNG streams, and scalar activations.
// Everything here is deterministic: fixed summation order, pinned RNG
// algorithms, no fast-math. Verification paths run in 64-bit.

#pragma once

#include <cstdint>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cspw {

struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> data;  // row-major, size rows*cols

    Matrix() = default;
    Matrix(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0) {}

    double& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols + j)]; }
    double operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols + j)]; }

    double* row(int64_t i) { return data.data() + i * cols; }
    const double* row(int64_t i) const { return data.data() + i * cols; }

    size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Fixed left-to-right summation per output element; the OpenMP variant
// splits over output rows only, so results are bitwise equal to the serial
// reference under any schedule.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_serial(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

bool all_finite(const Matrix& m);
void check_finite(const Matrix& m, const char* where);

// NaN guard at module boundaries, active only in debug builds.
#ifndef NDEBUG
#define CSPW_DEBUG_CHECK_FINITE(m, where) ::cspw::check_finite((m), (where))
#else
#define CSPW_DEBUG_CHECK_FINITE(m, where) ((void)0)
#endif

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double tanh_act(double x) { return std::tanh(x); }

uint64_t splitmix64(uint64_t& state);

// Reproducible random stream keyed by (seed, stream). The generator and the
// normal transform are pinned (mt19937_64 + Box-Muller), so the sequence is
// identical across platforms and thread schedules.
class RngStream {
public:
    RngStream(uint64_t seed, uint64_t stream);

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal();

    // uniform integer in [0, n), rejection sampled
    uint64_t index(uint64_t n);

private:
    uint64_t seed_;
    uint64_t stream_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Matrix gauss(RngStream& rng, int64_t rows, int64_t cols);

// Minimizes ||a*x - b||_2 via Householder QR. a is m-by-n with m >= n; b is
// m-by-k. diag_ratio = min|R_ii| / max|R_ii| signals conditioning.
struct LstsqResult {
    Matrix x;
    double diag_ratio = 0.0;
};
LstsqResult lstsq(const Matrix& a, const Matrix& b);

// Multiply-add counter for the linear-time-inference contract checks.
struct OpCounter {
    unsigned long long muladds = 0;
    void add(unsigned long long n) { muladds += n; }
};

}  // namespace cspw
