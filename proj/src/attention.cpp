#include "cspw/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace cspw {

VariantTraits traits_of(Variant v) {
    switch (v) {
        case Variant::Sympow:
            return {.sympow = true};
        case Variant::SympowRotary:
            return {.sympow = true, .rotary = true};
        case Variant::SympowGated:
            return {.sympow = true, .rotary = true, .gated = true};
        case Variant::SympowLearnedRotary:
            return {.sympow = true, .rotary = true, .learned_rotary = true};
        case Variant::ConformalSympow:
            return {.sympow = true, .rotary = true, .gated = true, .learned_rotary = true};
        case Variant::SoftmaxBaseline:
            return {};
        case Variant::SoftmaxAlibi:
            return {.alibi = true};
    }
    throw std::invalid_argument("traits_of: unknown variant");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Sympow: return "sympow";
        case Variant::SympowRotary: return "sympow-rotary";
        case Variant::SympowGated: return "sympow-gated";
        case Variant::SympowLearnedRotary: return "sympow-learned-rotary";
        case Variant::ConformalSympow: return "conformal-sympow";
        case Variant::SoftmaxBaseline: return "softmax";
        case Variant::SoftmaxAlibi: return "softmax-alibi";
    }
    throw std::invalid_argument("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::Sympow, Variant::SympowRotary, Variant::SympowGated,
                      Variant::SympowLearnedRotary, Variant::ConformalSympow,
                      Variant::SoftmaxBaseline, Variant::SoftmaxAlibi}) {
        if (variant_name(v) == name) return v;
    }
    throw std::invalid_argument("unknown variant name: " + name);
}

PreattnParts build_preattn_parts(const VariantTraits& traits, const Matrix& q, const Matrix& k,
                                 const std::vector<double>& gamma, const std::vector<double>& beta,
                                 const RotationRates* rates, OpCounter* counter) {
    const int64_t t = q.rows;
    const int64_t d = q.cols;
    if (k.rows != t || k.cols != d) throw std::invalid_argument("preattention: q/k shapes differ");

    PreattnParts parts;
    parts.gamma = traits.gated ? gamma : std::vector<double>(static_cast<size_t>(t), 1.0);
    parts.beta = traits.learned_rotary ? beta : std::vector<double>(static_cast<size_t>(t), 1.0);
    if (static_cast<int64_t>(parts.gamma.size()) != t || static_cast<int64_t>(parts.beta.size()) != t) {
        throw std::invalid_argument("preattention: gate track length mismatch");
    }

    parts.log_prefix.assign(static_cast<size_t>(t) + 1, 0.0);
    if (traits.gated) {
        for (int64_t i = 0; i < t; ++i) {
            double g = parts.gamma[static_cast<size_t>(i)];
            if (!(g > 0.0)) throw std::invalid_argument("preattention: gamma must be positive");
            parts.log_prefix[static_cast<size_t>(i) + 1] =
                parts.log_prefix[static_cast<size_t>(i)] + std::log(g);
        }
    }

    if (traits.rotary) {
        if (rates == nullptr || rates->d != d) {
            throw std::invalid_argument("preattention: rotation rates missing or mismatched");
        }
        if (d % 2 != 0) throw std::invalid_argument("preattention: rotary requires even d");
        const int64_t half = d / 2;
        parts.mu = Matrix(t, half);
        double const* theta = rates->theta.data();
        for (int64_t i = 0; i < t; ++i) {
            const double* prev = (i == 0) ? nullptr : parts.mu.row(i - 1);
            double* cur = parts.mu.row(i);
            double b = parts.beta[static_cast<size_t>(i)];
            for (int64_t j = 0; j < half; ++j) {
                cur[j] = (prev ? prev[j] : 0.0) + b * theta[j];
            }
        }
        parts.qr = Matrix(t, d);
        parts.kr = Matrix(t, d);
        for (int64_t i = 0; i < t; ++i) {
            rotate_into(parts.mu.row(i), q.row(i), parts.qr.row(i), half, counter);
            rotate_into(parts.mu.row(i), k.row(i), parts.kr.row(i), half, counter);
        }
    } else {
        parts.qr = q;
        parts.kr = k;
    }
    return parts;
}

static void preattn_row(const PreattnParts& parts, int64_t power, bool fault, int64_t i,
                        Matrix& b) {
    const int64_t d = parts.qr.cols;
    const double* qi = parts.qr.row(i);
    const double li = parts.log_prefix[static_cast<size_t>(i) + 1];
    double* brow = b.row(i);
    for (int64_t j = 0; j <= i; ++j) {
        const double* kj = parts.kr.row(j);
        double u = 0.0;
        for (int64_t l = 0; l < d; ++l) u += qi[l] * kj[l];
        // normal window is k in [j+1, i]; the injected fault widens it to [j, i]
        size_t jidx = static_cast<size_t>(j) + (fault ? 0 : 1);
        double discount = std::exp(li - parts.log_prefix[jidx]);
        brow[j] = discount * pow_int(u, power);
    }
}

void preattn_pairs(const PreattnParts& parts, int64_t power, bool fault_off_by_one, Matrix& b,
                   OpCounter* counter, bool parallel) {
    const int64_t t = parts.qr.rows;
    b = Matrix(t, t);
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < t; ++i) {
            preattn_row(parts, power, fault_off_by_one, i, b);
        }
    } else {
        for (int64_t i = 0; i < t; ++i) {
            preattn_row(parts, power, fault_off_by_one, i, b);
        }
    }
    if (counter) {
        unsigned long long pairs = static_cast<unsigned long long>(t) * (t + 1) / 2;
        counter->add(pairs * static_cast<unsigned long long>(parts.qr.cols + 4));
    }
}

static Matrix preattention_impl(Variant variant, const Matrix& q, const Matrix& k, const Matrix& x,
                                const HeadParams& params, const RotationRates& rates, int64_t power,
                                OpCounter* counter, const FaultInjection* fault, bool parallel) {
    VariantTraits traits = traits_of(variant);
    if (!traits.sympow) {
        throw std::invalid_argument("preattention: softmax variants use softmax_attention");
    }
    if (power < 2 || power % 2 != 0) {
        throw std::invalid_argument("preattention: sympow variants require even power >= 2");
    }
    std::vector<double> gamma, beta;
    if (traits.gated) gamma = gate_values(x, params.w_gamma);
    if (traits.learned_rotary) beta = beta_values(x, params.w_beta);
    PreattnParts parts = build_preattn_parts(traits, q, k, gamma, beta, &rates, counter);
    Matrix b;
    bool inject = fault != nullptr && fault->gating_off_by_one;
    preattn_pairs(parts, power, inject, b, counter, parallel);
    CSPW_DEBUG_CHECK_FINITE(b, "preattention");
    return b;
}

Matrix preattention(Variant variant, const Matrix& q, const Matrix& k, const Matrix& x,
                    const HeadParams& params, const RotationRates& rates, int64_t power,
                    OpCounter* counter, const FaultInjection* fault) {
    return preattention_impl(variant, q, k, x, params, rates, power, counter, fault, true);
}

Matrix preattention_serial(Variant variant, const Matrix& q, const Matrix& k, const Matrix& x,
                           const HeadParams& params, const RotationRates& rates, int64_t power,
                           OpCounter* counter, const FaultInjection* fault) {
    return preattention_impl(variant, q, k, x, params, rates, power, counter, fault, false);
}

void normalize_and_attend(const Matrix& b, const Matrix& v, Matrix& a, Matrix& y,
                          OpCounter* counter) {
    const int64_t t = b.rows;
    if (b.cols != t) throw std::invalid_argument("normalize_and_attend: b must be square");
    if (v.rows != t) throw std::invalid_argument("normalize_and_attend: v row count mismatch");
    const int64_t d = v.cols;
    a = Matrix(t, t);
    y = Matrix(t, d);
    for (int64_t i = 0; i < t; ++i) {
        const double* brow = b.row(i);
        double sum = 0.0;
        for (int64_t j = 0; j <= i; ++j) sum += brow[j];
        if (!(sum >= 1e-30)) {
            throw std::runtime_error("degenerate attention row " + std::to_string(i));
        }
        double inv = 1.0 / sum;
        double* arow = a.row(i);
        double* yrow = y.row(i);
        for (int64_t j = 0; j <= i; ++j) {
            double w = brow[j] * inv;
            arow[j] = w;
            const double* vrow = v.row(j);
            for (int64_t l = 0; l < d; ++l) yrow[l] += w * vrow[l];
        }
    }
    if (counter) {
        unsigned long long pairs = static_cast<unsigned long long>(t) * (t + 1) / 2;
        counter->add(pairs * static_cast<unsigned long long>(d + 2));
    }
    CSPW_DEBUG_CHECK_FINITE(y, "normalize_and_attend");
}

AttentionTrace softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                 std::optional<double> alibi_m) {
    const int64_t t = q.rows;
    const int64_t d = q.cols;
    if (k.rows != t || k.cols != d || v.rows != t) {
        throw std::invalid_argument("softmax_attention: shape mismatch");
    }
    const double temp = 1.0 / std::sqrt(static_cast<double>(d));
    const double m = alibi_m.value_or(0.0);

    AttentionTrace trace;
    trace.b = Matrix(t, t);
    trace.a = Matrix(t, t);
    trace.y = Matrix(t, v.cols);
    for (int64_t i = 0; i < t; ++i) {
        std::vector<double> score(static_cast<size_t>(i) + 1);
        double maxv = -1e300;
        for (int64_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int64_t l = 0; l < d; ++l) s += q(i, l) * k(j, l);
            s = s * temp + m * static_cast<double>(j - i);
            score[static_cast<size_t>(j)] = s;
            maxv = std::max(maxv, s);
            trace.b(i, j) = std::exp(s);
        }
        double denom = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
            double e = std::exp(score[static_cast<size_t>(j)] - maxv);
            trace.a(i, j) = e;
            denom += e;
        }
        double inv = 1.0 / denom;
        for (int64_t j = 0; j <= i; ++j) {
            trace.a(i, j) *= inv;
            for (int64_t l = 0; l < v.cols; ++l) trace.y(i, l) += trace.a(i, j) * v(j, l);
        }
    }
    CSPW_DEBUG_CHECK_FINITE(trace.y, "softmax_attention");
    return trace;
}

AttentionTrace attention_forward(Variant variant, const Matrix& q, const Matrix& k,
                                 const Matrix& v, const Matrix& x, const HeadParams& params,
                                 const RotationRates& rates, int64_t power, OpCounter* counter,
                                 const FaultInjection* fault, std::optional<double> alibi_m) {
    VariantTraits traits = traits_of(variant);
    if (!traits.sympow) {
        return softmax_attention(q, k, v, traits.alibi ? alibi_m : std::nullopt);
    }
    AttentionTrace trace;
    trace.b = preattention(variant, q, k, x, params, rates, power, counter, fault);
    normalize_and_attend(trace.b, v, trace.a, trace.y, counter);
    return trace;
}

}  // namespace cspw
