// Symmetric power feature map phi^p : R^d -> R^D with
// phi^p(v)^T phi^p(w) = (v^T w)^p, plus its dimension/basis machinery.
//
// The basis enumerates length-p non-decreasing index tuples over {0..d-1}
// in lexicographic order; the coefficient of a tuple is
// sqrt(p! / (m_1! * ... * m_d!)) where m_j is the multiplicity of index j.
// This is the unique diagonal scaling (up to signs) that makes the kernel
// identity hold, via the multinomial theorem.

#pragma once

#include <cstdint>
#include <vector>

#include "cspw/matrix.hpp"

namespace cspw {

struct MultisetBasis {
    int64_t d = 0;
    int64_t p = 0;
    int64_t dim = 0;                 // binom(d+p-1, p)
    std::vector<int32_t> entries;    // dim*p indices, tuple-major, each tuple non-decreasing
    std::vector<double> coeffs;      // dim multinomial square roots

    const int32_t* tuple(int64_t e) const { return entries.data() + e * p; }
};

struct EmbeddedVector {
    std::vector<double> values;      // length dim
    const MultisetBasis* basis = nullptr;
};

// binom(d+p-1, p); throws std::overflow_error if the count overflows int64.
int64_t embed_dim(int64_t d, int64_t p);

MultisetBasis build_basis(int64_t d, int64_t p);

EmbeddedVector embed(const std::vector<double>& v, const MultisetBasis& basis);

// Low-level form used by the recurrent hot loop; out must hold basis.dim.
void embed_into(const double* v, const MultisetBasis& basis, double* out,
                OpCounter* counter = nullptr);

// D-by-d Jacobian of the embedding at v.
Matrix embed_jacobian(const std::vector<double>& v, const MultisetBasis& basis);

}  // namespace cspw
