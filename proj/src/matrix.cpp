#include "cspw/matrix.hpp"

#include <cmath>
#include <numbers>

namespace cspw {

// Row-accumulation (ikj) order: the k-ascending addition sequence per output
// element matches the naive triple loop exactly, with contiguous inner access.
static void matmul_row(const Matrix& a, const Matrix& b, Matrix& out, int64_t i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int64_t k = 0; k < a.cols; ++k) {
        double f = arow[k];
        const double* brow = b.row(k);
        for (int64_t j = 0; j < b.cols; ++j) {
            orow[j] += f * brow[j];
        }
    }
}

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                    " vs " + std::to_string(b.rows) + ")");
    }
    Matrix out(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        matmul_row(a, b, out, i);
    }
    CSPW_DEBUG_CHECK_FINITE(out, "matmul");
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                    " vs " + std::to_string(b.rows) + ")");
    }
    Matrix out(a.rows, b.cols);
    const int64_t work = a.rows * a.cols * b.cols;
#pragma omp parallel for schedule(static) if (work > (1 << 16))
    for (int64_t i = 0; i < a.rows; ++i) {
        matmul_row(a, b, out, i);
    }
    CSPW_DEBUG_CHECK_FINITE(out, "matmul");
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int64_t i = 0; i < a.rows; ++i) {
        for (int64_t j = 0; j < a.cols; ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

bool all_finite(const Matrix& m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void check_finite(const Matrix& m, const char* where) {
    if (!all_finite(m)) {
        throw std::runtime_error(std::string("non-finite value in ") + where);
    }
}

uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

RngStream::RngStream(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {
    uint64_t s = seed ^ (stream * 0xD6E8FEB86659FD93ull);
    uint64_t mixed = splitmix64(s);
    mixed ^= splitmix64(s);
    engine_.seed(mixed);
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 kept away from 0 so log() is safe.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
}

uint64_t RngStream::index(uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::index: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

Matrix gauss(RngStream& rng, int64_t rows, int64_t cols) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("gauss: invalid shape");
    Matrix m(rows, cols);
    for (double& v : m.data) {
        v = rng.normal();
    }
    return m;
}

LstsqResult lstsq(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw std::invalid_argument("lstsq: row counts differ");
    if (a.rows < a.cols) throw std::invalid_argument("lstsq: system is underdetermined");
    const int64_t m = a.rows, n = a.cols, k = b.cols;
    Matrix r = a;
    Matrix qtb = b;
    std::vector<double> house(static_cast<size_t>(m));

    for (int64_t col = 0; col < n; ++col) {
        double norm = 0.0;
        for (int64_t i = col; i < m; ++i) norm += r(i, col) * r(i, col);
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        double alpha = (r(col, col) > 0.0) ? -norm : norm;
        double vnorm2 = 0.0;
        for (int64_t i = col; i < m; ++i) {
            house[i] = r(i, col);
            if (i == col) house[i] -= alpha;
            vnorm2 += house[i] * house[i];
        }
        if (vnorm2 == 0.0) continue;
        // apply H = I - 2 v v^T / (v^T v) to the trailing block of r and to qtb
        for (int64_t j = col; j < n; ++j) {
            double dot = 0.0;
            for (int64_t i = col; i < m; ++i) dot += house[i] * r(i, j);
            double f = 2.0 * dot / vnorm2;
            for (int64_t i = col; i < m; ++i) r(i, j) -= f * house[i];
        }
        for (int64_t j = 0; j < k; ++j) {
            double dot = 0.0;
            for (int64_t i = col; i < m; ++i) dot += house[i] * qtb(i, j);
            double f = 2.0 * dot / vnorm2;
            for (int64_t i = col; i < m; ++i) qtb(i, j) -= f * house[i];
        }
        r(col, col) = alpha;
    }

    double dmin = std::abs(r(0, 0)), dmax = dmin;
    for (int64_t i = 1; i < n; ++i) {
        double d = std::abs(r(i, i));
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
    }

    LstsqResult result;
    result.diag_ratio = (dmax > 0.0) ? dmin / dmax : 0.0;
    result.x = Matrix(n, k);
    if (result.diag_ratio == 0.0) {
        return result;  // singular; caller checks diag_ratio
    }
    for (int64_t j = 0; j < k; ++j) {
        for (int64_t i = n - 1; i >= 0; --i) {
            double acc = qtb(i, j);
            for (int64_t l = i + 1; l < n; ++l) acc -= r(i, l) * result.x(l, j);
            result.x(i, j) = acc / r(i, i);
        }
    }
    return result;
}

}  // namespace cspw
