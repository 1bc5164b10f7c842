#include "cspw/sympow.hpp"

#include <cmath>
#include <stdexcept>

namespace cspw {

int64_t embed_dim(int64_t d, int64_t p) {
    if (d < 1 || p < 1) throw std::invalid_argument("embed_dim: require d >= 1 and p >= 1");
    // binom(d+p-1, p) built iteratively; each partial value is itself a
    // binomial coefficient, so the division is exact.
    int64_t c = 1;
    for (int64_t i = 1; i <= p; ++i) {
        int64_t num = d - 1 + i;
        if (__builtin_mul_overflow(c, num, &c)) {
            throw std::overflow_error("embed_dim: binomial overflows 64-bit count");
        }
        c /= i;
    }
    return c;
}

MultisetBasis build_basis(int64_t d, int64_t p) {
    MultisetBasis basis;
    basis.d = d;
    basis.p = p;
    basis.dim = embed_dim(d, p);
    basis.entries.reserve(static_cast<size_t>(basis.dim * p));
    basis.coeffs.reserve(static_cast<size_t>(basis.dim));

    double p_factorial = 1.0;
    for (int64_t i = 2; i <= p; ++i) p_factorial *= static_cast<double>(i);

    std::vector<int32_t> tuple(static_cast<size_t>(p), 0);
    while (true) {
        basis.entries.insert(basis.entries.end(), tuple.begin(), tuple.end());
        // multinomial p! / prod(m_j!)
        double denom = 1.0;
        int64_t run = 1;
        for (int64_t i = 1; i < p; ++i) {
            if (tuple[i] == tuple[i - 1]) {
                ++run;
                denom *= static_cast<double>(run);
            } else {
                run = 1;
            }
        }
        basis.coeffs.push_back(std::sqrt(p_factorial / denom));

        // next non-decreasing tuple in lexicographic order
        int64_t pos = p - 1;
        while (pos >= 0 && tuple[pos] == d - 1) --pos;
        if (pos < 0) break;
        int32_t v = tuple[pos] + 1;
        for (int64_t i = pos; i < p; ++i) tuple[i] = v;
    }
    return basis;
}

void embed_into(const double* v, const MultisetBasis& basis, double* out, OpCounter* counter) {
    const int64_t p = basis.p;
    for (int64_t e = 0; e < basis.dim; ++e) {
        const int32_t* t = basis.tuple(e);
        double prod = basis.coeffs[e];
        for (int64_t i = 0; i < p; ++i) prod *= v[t[i]];
        out[e] = prod;
    }
    if (counter) counter->add(static_cast<unsigned long long>(basis.dim * p));
}

EmbeddedVector embed(const std::vector<double>& v, const MultisetBasis& basis) {
    if (static_cast<int64_t>(v.size()) != basis.d) {
        throw std::invalid_argument("embed: vector length does not match basis dimension");
    }
    EmbeddedVector out;
    out.basis = &basis;
    out.values.resize(static_cast<size_t>(basis.dim));
    embed_into(v.data(), basis, out.values.data());
    return out;
}

Matrix embed_jacobian(const std::vector<double>& v, const MultisetBasis& basis) {
    if (static_cast<int64_t>(v.size()) != basis.d) {
        throw std::invalid_argument("embed_jacobian: vector length does not match basis dimension");
    }
    const int64_t p = basis.p;
    Matrix jac(basis.dim, basis.d);
    for (int64_t e = 0; e < basis.dim; ++e) {
        const int32_t* t = basis.tuple(e);
        for (int64_t i = 0; i < p; ++i) {
            if (i > 0 && t[i] == t[i - 1]) continue;  // one derivative per distinct index
            int64_t mult = 1;
            for (int64_t l = i + 1; l < p && t[l] == t[i]; ++l) ++mult;
            double prod = basis.coeffs[e] * static_cast<double>(mult);
            bool skipped = false;  // drop exactly one factor of v[t[i]]
            for (int64_t l = 0; l < p; ++l) {
                if (!skipped && t[l] == t[i]) {
                    skipped = true;
                    continue;
                }
                prod *= v[t[l]];
            }
            jac(e, t[i]) = prod;
        }
    }
    CSPW_DEBUG_CHECK_FINITE(jac, "embed_jacobian");
    return jac;
}

}  // namespace cspw
