// Test-only reference implementations, independent of the library's fast
// paths: naive triple-loop matmul, dense block rotation matrices, and
// central finite differences.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cspw/matrix.hpp"

namespace oracle {

inline cspw::Matrix naive_matmul(const cspw::Matrix& a, const cspw::Matrix& b) {
    cspw::Matrix out(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        for (int64_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

// Dense d-by-d block-diagonal rotation with angles[j] on pair (2j, 2j+1).
inline cspw::Matrix dense_rotation(const std::vector<double>& angles) {
    int64_t d = 2 * static_cast<int64_t>(angles.size());
    cspw::Matrix r(d, d);
    for (size_t j = 0; j < angles.size(); ++j) {
        double c = std::cos(angles[j]);
        double s = std::sin(angles[j]);
        r(2 * j, 2 * j) = c;
        r(2 * j, 2 * j + 1) = -s;
        r(2 * j + 1, 2 * j) = s;
        r(2 * j + 1, 2 * j + 1) = c;
    }
    return r;
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double max_abs_diff(const cspw::Matrix& a, const cspw::Matrix& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

}  // namespace oracle
