#include "cspw/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace cspw {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

// out += a * b^T restricted to rows of out
void add_mm_nt(Matrix& out, const Matrix& a, const Matrix& b) {
    const int64_t work = out.rows * out.cols * a.cols;
#pragma omp parallel for schedule(static) if (work > (1 << 16))
    for (int64_t i = 0; i < out.rows; ++i) {
        double* orow = out.row(i);
        const double* arow = a.row(i);
        for (int64_t j = 0; j < out.cols; ++j) {
            double acc = 0.0;
            const double* brow = b.row(j);
            for (int64_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] += acc;
        }
    }
}

// out += a^T * b
void add_mm_tn(Matrix& out, const Matrix& a, const Matrix& b) {
    const int64_t work = out.rows * out.cols * a.rows;
#pragma omp parallel for schedule(static) if (work > (1 << 16))
    for (int64_t i = 0; i < out.rows; ++i) {
        double* orow = out.row(i);
        for (int64_t k = 0; k < a.rows; ++k) {
            double f = a(k, i);
            const double* brow = b.row(k);
            for (int64_t j = 0; j < out.cols; ++j) orow[j] += f * brow[j];
        }
    }
}

std::vector<double> column_vector(const Matrix& m, const char* who) {
    if (m.cols != 1) throw std::invalid_argument(std::string(who) + ": expected a column");
    return m.data;
}

}  // namespace

int32_t Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<int32_t>(nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(int32_t id) {
    Node& n = at(id);
    if (n.grad.data.empty()) n.grad = Matrix(n.val.rows, n.val.cols);
    return n.grad;
}

int32_t Tape::leaf(Matrix v) {
    Node n;
    n.op = OpKind::Leaf;
    n.val = std::move(v);
    return push(std::move(n));
}

int32_t Tape::embed_rows(int32_t table, const std::vector<int32_t>& tokens) {
    const Matrix& e = value(table);
    Node n;
    n.op = OpKind::EmbedRows;
    n.n_in = 1;
    n.in[0] = table;
    n.tokens = tokens;
    n.val = Matrix(static_cast<int64_t>(tokens.size()), e.cols);
    for (size_t i = 0; i < tokens.size(); ++i) {
        int32_t tok = tokens[i];
        if (tok < 0 || tok >= e.rows) throw std::invalid_argument("embed_rows: token out of range");
        std::memcpy(n.val.row(static_cast<int64_t>(i)), e.row(tok),
                    static_cast<size_t>(e.cols) * sizeof(double));
    }
    return push(std::move(n));
}

int32_t Tape::layer_norm(int32_t x, int32_t gain, int32_t bias) {
    const Matrix& xv = value(x);
    const Matrix& g = value(gain);
    const Matrix& b = value(bias);
    if (g.rows != 1 || b.rows != 1 || g.cols != xv.cols || b.cols != xv.cols) {
        throw std::invalid_argument("layer_norm: gain/bias must be 1-by-cols");
    }
    Node n;
    n.op = OpKind::LayerNorm;
    n.n_in = 3;
    n.in = {x, gain, bias, -1, -1};
    n.val = Matrix(xv.rows, xv.cols);
    n.ln = std::make_unique<LnAux>();
    n.ln->mean.resize(static_cast<size_t>(xv.rows));
    n.ln->rstd.resize(static_cast<size_t>(xv.rows));
    for (int64_t i = 0; i < xv.rows; ++i) {
        const double* xr = xv.row(i);
        double mean = 0.0;
        for (int64_t c = 0; c < xv.cols; ++c) mean += xr[c];
        mean /= static_cast<double>(xv.cols);
        double var = 0.0;
        for (int64_t c = 0; c < xv.cols; ++c) {
            double dx = xr[c] - mean;
            var += dx * dx;
        }
        var /= static_cast<double>(xv.cols);
        double rstd = 1.0 / std::sqrt(var + kLnEps);
        n.ln->mean[static_cast<size_t>(i)] = mean;
        n.ln->rstd[static_cast<size_t>(i)] = rstd;
        double* yr = n.val.row(i);
        for (int64_t c = 0; c < xv.cols; ++c) {
            yr[c] = (xr[c] - mean) * rstd * g.data[static_cast<size_t>(c)] +
                    b.data[static_cast<size_t>(c)];
        }
    }
    return push(std::move(n));
}

int32_t Tape::matmul_op(int32_t a, int32_t b) {
    Node n;
    n.op = OpKind::MatMul;
    n.n_in = 2;
    n.in = {a, b, -1, -1, -1};
    n.val = matmul(value(a), value(b));
    return push(std::move(n));
}

int32_t Tape::add(int32_t a, int32_t b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
    Node n;
    n.op = OpKind::Add;
    n.n_in = 2;
    n.in = {a, b, -1, -1, -1};
    n.val = av;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.data[i] += bv.data[i];
    return push(std::move(n));
}

int32_t Tape::add_const(int32_t x, double c) {
    Node n;
    n.op = OpKind::AddConst;
    n.n_in = 1;
    n.in[0] = x;
    n.scalar = c;
    n.val = value(x);
    for (double& v : n.val.data) v += c;
    return push(std::move(n));
}

int32_t Tape::gelu(int32_t x) {
    Node n;
    n.op = OpKind::Gelu;
    n.n_in = 1;
    n.in[0] = x;
    n.val = value(x);
    for (double& v : n.val.data) {
        double u = kGeluC0 * (v + kGeluC1 * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    return push(std::move(n));
}

int32_t Tape::sigmoid_op(int32_t x) {
    Node n;
    n.op = OpKind::Sigmoid;
    n.n_in = 1;
    n.in[0] = x;
    n.val = value(x);
    for (double& v : n.val.data) v = sigmoid(v);
    return push(std::move(n));
}

int32_t Tape::one_plus_tanh(int32_t x) {
    Node n;
    n.op = OpKind::OnePlusTanh;
    n.n_in = 1;
    n.in[0] = x;
    n.val = value(x);
    for (double& v : n.val.data) v = 1.0 + std::tanh(v);
    return push(std::move(n));
}

int32_t Tape::sympow_attention(Variant variant, int32_t q, int32_t k, int32_t v, int32_t gamma,
                               int32_t beta, const RotationRates& rates, int64_t power,
                               double denom_eps) {
    VariantTraits traits = traits_of(variant);
    if (!traits.sympow) throw std::invalid_argument("sympow_attention: not a sympow variant");
    if (power < 2 || power % 2 != 0) {
        throw std::invalid_argument("sympow_attention: power must be even and >= 2");
    }
    const Matrix& qv = value(q);
    const Matrix& kv = value(k);
    const Matrix& vv = value(v);
    const int64_t t = qv.rows;

    std::vector<double> gamma_vec, beta_vec;
    if (traits.gated) {
        if (gamma < 0) throw std::invalid_argument("sympow_attention: gated variant needs gamma");
        gamma_vec = column_vector(value(gamma), "sympow_attention gamma");
    }
    if (traits.learned_rotary) {
        if (beta < 0) throw std::invalid_argument("sympow_attention: learned rotary needs beta");
        beta_vec = column_vector(value(beta), "sympow_attention beta");
    }

    Node n;
    n.op = OpKind::SympowAttn;
    n.n_in = 5;
    n.in = {q, k, v, gamma, beta};
    n.attn = std::make_unique<AttnAux>();
    AttnAux& aux = *n.attn;
    aux.traits = traits;
    aux.power = power;
    aux.denom_eps = denom_eps;
    aux.theta = rates.theta;
    aux.parts = build_preattn_parts(traits, qv, kv, gamma_vec, beta_vec, &rates, nullptr);

    // fused pair kernel + row normalization: same per-pair arithmetic as
    // preattn_pairs, without materializing B
    aux.u = Matrix(t, t);
    aux.a = Matrix(t, t);
    aux.srow.resize(static_cast<size_t>(t));
    n.val = Matrix(t, vv.cols);
    const PreattnParts& parts = aux.parts;
    const int64_t d = parts.qr.cols;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < t; ++i) {
        const double* qi = parts.qr.row(i);
        const double li = parts.log_prefix[static_cast<size_t>(i) + 1];
        double* urow = aux.u.row(i);
        double* arow = aux.a.row(i);
        double mass = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
            const double* kj = parts.kr.row(j);
            double u = 0.0;
            for (int64_t l = 0; l < d; ++l) u += qi[l] * kj[l];
            double discount = std::exp(li - parts.log_prefix[static_cast<size_t>(j) + 1]);
            urow[j] = u;
            double bij = discount * pow_int(u, power);
            arow[j] = bij;
            mass += bij;
        }
        mass += denom_eps;
        aux.srow[static_cast<size_t>(i)] = mass;
        double inv = 1.0 / mass;
        double* yrow = n.val.row(i);
        for (int64_t j = 0; j <= i; ++j) {
            arow[j] *= inv;
            const double* vrow = vv.row(j);
            for (int64_t l = 0; l < vv.cols; ++l) yrow[l] += arow[j] * vrow[l];
        }
    }
    CSPW_DEBUG_CHECK_FINITE(n.val, "sympow_attention");
    return push(std::move(n));
}

int32_t Tape::softmax_attention_op(int32_t q, int32_t k, int32_t v,
                                   std::optional<double> alibi_m) {
    const Matrix& qv = value(q);
    const Matrix& kv = value(k);
    const Matrix& vv = value(v);
    const int64_t t = qv.rows;
    const int64_t d = qv.cols;

    Node n;
    n.op = OpKind::SoftmaxAttn;
    n.n_in = 3;
    n.in = {q, k, v, -1, -1};
    n.softmax = std::make_unique<SoftmaxAux>();
    SoftmaxAux& aux = *n.softmax;
    aux.temp = 1.0 / std::sqrt(static_cast<double>(d));
    aux.has_alibi = alibi_m.has_value();
    aux.alibi_m = alibi_m.value_or(0.0);
    aux.a = Matrix(t, t);
    n.val = Matrix(t, vv.cols);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < t; ++i) {
        double* arow = aux.a.row(i);
        double maxs = -1e300;
        for (int64_t j = 0; j <= i; ++j) {
            double s = 0.0;
            const double* qr = qv.row(i);
            const double* kr = kv.row(j);
            for (int64_t l = 0; l < d; ++l) s += qr[l] * kr[l];
            s = s * aux.temp + aux.alibi_m * static_cast<double>(j - i);
            arow[j] = s;
            maxs = std::max(maxs, s);
        }
        double denom = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
            arow[j] = std::exp(arow[j] - maxs);
            denom += arow[j];
        }
        double inv = 1.0 / denom;
        double* yrow = n.val.row(i);
        for (int64_t j = 0; j <= i; ++j) {
            arow[j] *= inv;
            const double* vrow = vv.row(j);
            for (int64_t l = 0; l < vv.cols; ++l) yrow[l] += arow[j] * vrow[l];
        }
    }
    return push(std::move(n));
}

int32_t Tape::concat_cols(const std::vector<int32_t>& parts) {
    if (parts.empty() || parts.size() > 5) {
        throw std::invalid_argument("concat_cols: expected 1..5 parts");
    }
    int64_t rows = value(parts[0]).rows;
    int64_t cols = 0;
    for (int32_t id : parts) {
        if (value(id).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += value(id).cols;
    }
    Node n;
    n.op = OpKind::ConcatCols;
    n.n_in = static_cast<int>(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) n.in[i] = parts[i];
    n.val = Matrix(rows, cols);
    int64_t offset = 0;
    for (int32_t id : parts) {
        const Matrix& part = value(id);
        for (int64_t i = 0; i < rows; ++i) {
            std::memcpy(n.val.row(i) + offset, part.row(i),
                        static_cast<size_t>(part.cols) * sizeof(double));
        }
        offset += part.cols;
    }
    return push(std::move(n));
}

int32_t Tape::unembed_cross_entropy(int32_t x, int32_t unembed,
                                    const std::vector<int32_t>& targets,
                                    const std::vector<double>& weights) {
    const Matrix& xv = value(x);
    const Matrix& w = value(unembed);
    const int64_t t = xv.rows;
    const int64_t vocab = w.cols;
    if (xv.cols != w.rows) throw std::invalid_argument("unembed_cross_entropy: shape mismatch");
    if (static_cast<int64_t>(targets.size()) != t || static_cast<int64_t>(weights.size()) != t) {
        throw std::invalid_argument("unembed_cross_entropy: targets/weights length mismatch");
    }

    Node n;
    n.op = OpKind::UnembedCrossEntropy;
    n.n_in = 2;
    n.in = {x, unembed, -1, -1, -1};
    n.ce = std::make_unique<CeAux>();
    CeAux& aux = *n.ce;
    aux.targets = targets;
    aux.weights = weights;
    for (int64_t i = 0; i < t; ++i) {
        if (weights[static_cast<size_t>(i)] > 0.0) {
            if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= vocab) {
                throw std::invalid_argument("unembed_cross_entropy: target token out of range");
            }
            aux.active.push_back(static_cast<int32_t>(i));
            aux.weight_sum += weights[static_cast<size_t>(i)];
        }
    }
    if (aux.active.empty()) throw std::invalid_argument("unembed_cross_entropy: no scored rows");

    const int64_t n_active = static_cast<int64_t>(aux.active.size());
    aux.probs = Matrix(n_active, vocab);
    std::vector<double> losses(static_cast<size_t>(n_active));
#pragma omp parallel for schedule(static)
    for (int64_t ai = 0; ai < n_active; ++ai) {
        int64_t i = aux.active[static_cast<size_t>(ai)];
        const double* xr = xv.row(i);
        double* prow = aux.probs.row(ai);
        for (int64_t r = 0; r < w.rows; ++r) {
            double f = xr[r];
            const double* wrow = w.row(r);
            for (int64_t c = 0; c < vocab; ++c) prow[c] += f * wrow[c];
        }
        double maxv = -1e300;
        for (int64_t c = 0; c < vocab; ++c) maxv = std::max(maxv, prow[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < vocab; ++c) {
            prow[c] = std::exp(prow[c] - maxv);
            denom += prow[c];
        }
        double inv = 1.0 / denom;
        for (int64_t c = 0; c < vocab; ++c) prow[c] *= inv;
        losses[static_cast<size_t>(ai)] =
            -std::log(prow[aux.targets[static_cast<size_t>(i)]]);
    }
    double loss = 0.0;
    for (int64_t ai = 0; ai < n_active; ++ai) {
        int64_t i = aux.active[static_cast<size_t>(ai)];
        loss += aux.weights[static_cast<size_t>(i)] * losses[static_cast<size_t>(ai)];
    }
    loss /= aux.weight_sum;

    n.val = Matrix(1, 1);
    n.val(0, 0) = loss;
    return push(std::move(n));
}

// Backward through B_ij = exp(L_i - L_j) * u_ij^p, u_ij = Qr_i . Kr_j,
// A_ij = B_ij / (row mass + eps), Y_i = sum_j A_ij V_j, where Qr/Kr are the
// per-row rotations by mu_i = sum_{k<=i} beta_k theta and L is the log-gamma
// prefix. Gradients flow to Q, K, V and, when live, to the gamma and beta
// columns.
void Tape::backward_sympow_attention(int32_t id) {
    Node& n = at(id);
    const AttnAux& aux = *n.attn;
    const PreattnParts& parts = aux.parts;
    const Matrix& g = n.grad;
    const Matrix& qv = value(n.in[0]);
    const Matrix& kv = value(n.in[1]);
    const Matrix& vv = value(n.in[2]);
    Matrix& dq = grad_buffer(n.in[0]);
    Matrix& dk = grad_buffer(n.in[1]);
    Matrix& dv = grad_buffer(n.in[2]);

    const int64_t t = qv.rows;
    const int64_t d = qv.cols;
    const int64_t p = aux.power;
    const bool rotary = aux.traits.rotary;
    const bool gated = aux.traits.gated;

    Matrix du(t, t);
    Matrix dlogb;  // dB_ij * B_ij, for the gamma path
    if (gated) dlogb = Matrix(t, t);

    // per-row: dA -> dB -> du (and the log-discount factor)
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < t; ++i) {
        const double* grow = g.row(i);
        const double* arow = aux.a.row(i);
        const double* urow = aux.u.row(i);
        const double li = parts.log_prefix[static_cast<size_t>(i) + 1];
        const double inv_mass = 1.0 / aux.srow[static_cast<size_t>(i)];
        double* durow = du.row(i);
        double dot = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
            double da = 0.0;
            const double* vrow = vv.row(j);
            for (int64_t l = 0; l < vv.cols; ++l) da += grow[l] * vrow[l];
            durow[j] = da;  // stash dA here until the row dot is known
            dot += da * arow[j];
        }
        for (int64_t j = 0; j <= i; ++j) {
            double db = (durow[j] - dot) * inv_mass;
            double bfac = std::exp(li - parts.log_prefix[static_cast<size_t>(j) + 1]);
            double u = urow[j];
            double upm1 = pow_int(u, p - 1);
            durow[j] = db * bfac * static_cast<double>(p) * upm1;
            if (gated) dlogb(i, j) = db * bfac * upm1 * u;
        }
    }

    // column accumulations: dKr_j and dV_j, on transposed pair matrices so
    // the inner walks are contiguous
    Matrix dut = transpose(du);
    Matrix at = transpose(aux.a);
    Matrix dkr(t, d);
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < t; ++j) {
        double* dkrow = dkr.row(j);
        double* dvrow = dv.row(j);
        const double* dutrow = dut.row(j);
        const double* atrow = at.row(j);
        for (int64_t i = j; i < t; ++i) {
            const double* qrow = parts.qr.row(i);
            const double* grow = g.row(i);
            double duij = dutrow[i];
            double aij = atrow[i];
            for (int64_t l = 0; l < d; ++l) dkrow[l] += duij * qrow[l];
            for (int64_t l = 0; l < vv.cols; ++l) dvrow[l] += aij * grow[l];
        }
    }

    // row accumulations: dQr_i
    Matrix dqr(t, d);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < t; ++i) {
        double* dqrow = dqr.row(i);
        const double* durow = du.row(i);
        for (int64_t j = 0; j <= i; ++j) {
            const double* krow = parts.kr.row(j);
            double duij = durow[j];
            for (int64_t l = 0; l < d; ++l) dqrow[l] += duij * krow[l];
        }
    }

    std::vector<double> dmu_dot(static_cast<size_t>(t), 0.0);  // dmu_i . theta
    if (rotary) {
        const int64_t half = d / 2;
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < t; ++i) {
            const double* mu = parts.mu.row(i);
            const double* dqrow = dqr.row(i);
            const double* dkrow = dkr.row(i);
            double* dq_out = dq.row(i);
            double* dk_out = dk.row(i);
            const double* q_in = qv.row(i);
            const double* k_in = kv.row(i);
            double wsum = 0.0;
            for (int64_t l = 0; l < half; ++l) {
                double c = std::cos(mu[l]);
                double s = std::sin(mu[l]);
                double dra = dqrow[2 * l], drb = dqrow[2 * l + 1];
                double qa = q_in[2 * l], qb = q_in[2 * l + 1];
                dq_out[2 * l] += c * dra + s * drb;
                dq_out[2 * l + 1] += -s * dra + c * drb;
                double dmu = dra * (-s * qa - c * qb) + drb * (c * qa - s * qb);

                double dka = dkrow[2 * l], dkb = dkrow[2 * l + 1];
                double ka = k_in[2 * l], kb = k_in[2 * l + 1];
                dk_out[2 * l] += c * dka + s * dkb;
                dk_out[2 * l + 1] += -s * dka + c * dkb;
                dmu += dka * (-s * ka - c * kb) + dkb * (c * ka - s * kb);

                wsum += dmu * aux.theta[static_cast<size_t>(l)];
            }
            dmu_dot[static_cast<size_t>(i)] = wsum;
        }
    } else {
        for (int64_t i = 0; i < t; ++i) {
            double* dq_out = dq.row(i);
            double* dk_out = dk.row(i);
            const double* dqrow = dqr.row(i);
            const double* dkrow = dkr.row(i);
            for (int64_t l = 0; l < d; ++l) {
                dq_out[l] += dqrow[l];
                dk_out[l] += dkrow[l];
            }
        }
    }

    // beta_k sees every mu_i with i >= k
    if (aux.traits.learned_rotary && n.in[4] >= 0) {
        Matrix& dbeta = grad_buffer(n.in[4]);
        double suffix = 0.0;
        for (int64_t i = t - 1; i >= 0; --i) {
            suffix += dmu_dot[static_cast<size_t>(i)];
            dbeta(i, 0) += suffix;
        }
    }

    // gamma_k multiplies b_ij exactly when j < k <= i
    if (gated && n.in[3] >= 0) {
        Matrix& dgamma = grad_buffer(n.in[3]);
        std::vector<double> dlog(static_cast<size_t>(t), 0.0);
        for (int64_t i = 0; i < t; ++i) {
            double running = 0.0;
            const double* grow = dlogb.row(i);
            for (int64_t k = 1; k <= i; ++k) {
                running += grow[k - 1];
                dlog[static_cast<size_t>(k)] += running;
            }
        }
        for (int64_t k = 0; k < t; ++k) {
            dgamma(k, 0) += dlog[static_cast<size_t>(k)] / parts.gamma[static_cast<size_t>(k)];
        }
    }
}

void Tape::backward(int32_t loss_node) {
    const Matrix& loss = value(loss_node);
    if (loss.rows != 1 || loss.cols != 1) {
        throw std::invalid_argument("backward: loss node must be scalar");
    }
    grad_buffer(loss_node)(0, 0) = 1.0;
    for (int32_t id = loss_node; id >= 0; --id) {
        Node& n = at(id);
        if (n.op == OpKind::Leaf || n.grad.data.empty()) continue;
        backward_node(id);
    }
}

void Tape::backward_node(int32_t id) {
    Node& n = at(id);
    const Matrix& g = n.grad;
    switch (n.op) {
        case OpKind::Leaf:
            return;
        case OpKind::EmbedRows: {
            Matrix& de = grad_buffer(n.in[0]);
            for (size_t i = 0; i < n.tokens.size(); ++i) {
                const double* grow = g.row(static_cast<int64_t>(i));
                double* erow = de.row(n.tokens[i]);
                for (int64_t c = 0; c < de.cols; ++c) erow[c] += grow[c];
            }
            return;
        }
        case OpKind::LayerNorm: {
            const Matrix& xv = value(n.in[0]);
            const Matrix& gain = value(n.in[1]);
            Matrix& dx = grad_buffer(n.in[0]);
            Matrix& dgain = grad_buffer(n.in[1]);
            Matrix& dbias = grad_buffer(n.in[2]);
            const int64_t cols = xv.cols;
            const double inv_cols = 1.0 / static_cast<double>(cols);
            std::vector<double> xhat(static_cast<size_t>(cols));
            std::vector<double> dxhat(static_cast<size_t>(cols));
            for (int64_t i = 0; i < xv.rows; ++i) {
                const double* xr = xv.row(i);
                const double* gr = g.row(i);
                double mean = n.ln->mean[static_cast<size_t>(i)];
                double rstd = n.ln->rstd[static_cast<size_t>(i)];
                double m1 = 0.0, m2 = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    xhat[static_cast<size_t>(c)] = (xr[c] - mean) * rstd;
                    dxhat[static_cast<size_t>(c)] = gr[c] * gain.data[static_cast<size_t>(c)];
                    dgain.data[static_cast<size_t>(c)] += gr[c] * xhat[static_cast<size_t>(c)];
                    dbias.data[static_cast<size_t>(c)] += gr[c];
                    m1 += dxhat[static_cast<size_t>(c)];
                    m2 += dxhat[static_cast<size_t>(c)] * xhat[static_cast<size_t>(c)];
                }
                m1 *= inv_cols;
                m2 *= inv_cols;
                double* dxr = dx.row(i);
                for (int64_t c = 0; c < cols; ++c) {
                    dxr[c] += rstd * (dxhat[static_cast<size_t>(c)] - m1 -
                                      xhat[static_cast<size_t>(c)] * m2);
                }
            }
            return;
        }
        case OpKind::MatMul: {
            const Matrix& a = value(n.in[0]);
            const Matrix& b = value(n.in[1]);
            add_mm_nt(grad_buffer(n.in[0]), g, b);
            add_mm_tn(grad_buffer(n.in[1]), a, g);
            return;
        }
        case OpKind::Add: {
            for (int k = 0; k < 2; ++k) {
                Matrix& dx = grad_buffer(n.in[k]);
                for (size_t i = 0; i < dx.size(); ++i) dx.data[i] += g.data[i];
            }
            return;
        }
        case OpKind::AddConst: {
            Matrix& dx = grad_buffer(n.in[0]);
            for (size_t i = 0; i < dx.size(); ++i) dx.data[i] += g.data[i];
            return;
        }
        case OpKind::Gelu: {
            const Matrix& xv = value(n.in[0]);
            Matrix& dx = grad_buffer(n.in[0]);
            for (size_t i = 0; i < dx.size(); ++i) {
                double x = xv.data[i];
                double u = kGeluC0 * (x + kGeluC1 * x * x * x);
                double th = std::tanh(u);
                double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
                double deriv = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                dx.data[i] += g.data[i] * deriv;
            }
            return;
        }
        case OpKind::Sigmoid: {
            Matrix& dx = grad_buffer(n.in[0]);
            for (size_t i = 0; i < dx.size(); ++i) {
                double y = n.val.data[i];
                dx.data[i] += g.data[i] * y * (1.0 - y);
            }
            return;
        }
        case OpKind::OnePlusTanh: {
            Matrix& dx = grad_buffer(n.in[0]);
            for (size_t i = 0; i < dx.size(); ++i) {
                double th = n.val.data[i] - 1.0;
                dx.data[i] += g.data[i] * (1.0 - th * th);
            }
            return;
        }
        case OpKind::SympowAttn: {
            backward_sympow_attention(id);
            return;
        }
        case OpKind::SoftmaxAttn: {
            const Matrix& qv = value(n.in[0]);
            const Matrix& kv = value(n.in[1]);
            const Matrix& vv = value(n.in[2]);
            Matrix& dq = grad_buffer(n.in[0]);
            Matrix& dk = grad_buffer(n.in[1]);
            Matrix& dv = grad_buffer(n.in[2]);
            const SoftmaxAux& aux = *n.softmax;
            const int64_t t = qv.rows;
            const int64_t d = qv.cols;
            Matrix ds(t, t);
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < t; ++i) {
                const double* grow = g.row(i);
                const double* arow = aux.a.row(i);
                double* dsrow = ds.row(i);
                double dot = 0.0;
                for (int64_t j = 0; j <= i; ++j) {
                    double da = 0.0;
                    const double* vrow = vv.row(j);
                    for (int64_t l = 0; l < d; ++l) da += grow[l] * vrow[l];
                    dsrow[j] = da;
                    dot += da * arow[j];
                }
                double* dqrow = dq.row(i);
                for (int64_t j = 0; j <= i; ++j) {
                    dsrow[j] = arow[j] * (dsrow[j] - dot);
                    const double* krow = kv.row(j);
                    for (int64_t l = 0; l < d; ++l) dqrow[l] += aux.temp * dsrow[j] * krow[l];
                }
            }
#pragma omp parallel for schedule(static)
            for (int64_t j = 0; j < t; ++j) {
                double* dkrow = dk.row(j);
                double* dvrow = dv.row(j);
                for (int64_t i = j; i < t; ++i) {
                    const double* qrow = qv.row(i);
                    const double* grow = g.row(i);
                    double dsij = ds(i, j);
                    double aij = aux.a(i, j);
                    for (int64_t l = 0; l < d; ++l) {
                        dkrow[l] += aux.temp * dsij * qrow[l];
                        dvrow[l] += aij * grow[l];
                    }
                }
            }
            return;
        }
        case OpKind::ConcatCols: {
            int64_t offset = 0;
            for (int k = 0; k < n.n_in; ++k) {
                Matrix& dx = grad_buffer(n.in[k]);
                for (int64_t i = 0; i < dx.rows; ++i) {
                    const double* grow = g.row(i) + offset;
                    double* drow = dx.row(i);
                    for (int64_t c = 0; c < dx.cols; ++c) drow[c] += grow[c];
                }
                offset += dx.cols;
            }
            return;
        }
        case OpKind::UnembedCrossEntropy: {
            const Matrix& xv = value(n.in[0]);
            const Matrix& w = value(n.in[1]);
            Matrix& dx = grad_buffer(n.in[0]);
            Matrix& dw = grad_buffer(n.in[1]);
            const CeAux& aux = *n.ce;
            const double dloss = g(0, 0);
            const int64_t n_active = static_cast<int64_t>(aux.active.size());
            const int64_t vocab = w.cols;
            Matrix dlogits(n_active, vocab);
#pragma omp parallel for schedule(static)
            for (int64_t ai = 0; ai < n_active; ++ai) {
                int64_t i = aux.active[static_cast<size_t>(ai)];
                double coeff = dloss * aux.weights[static_cast<size_t>(i)] / aux.weight_sum;
                const double* prow = aux.probs.row(ai);
                double* dlrow = dlogits.row(ai);
                for (int64_t c = 0; c < vocab; ++c) dlrow[c] = coeff * prow[c];
                dlrow[aux.targets[static_cast<size_t>(i)]] -= coeff;
                double* dxrow = dx.row(i);
                for (int64_t r = 0; r < w.rows; ++r) {
                    double acc = 0.0;
                    const double* wrow = w.row(r);
                    for (int64_t c = 0; c < vocab; ++c) acc += dlrow[c] * wrow[c];
                    dxrow[r] += acc;
                }
            }
#pragma omp parallel for schedule(static)
            for (int64_t r = 0; r < w.rows; ++r) {
                double* dwrow = dw.row(r);
                for (int64_t ai = 0; ai < n_active; ++ai) {
                    int64_t i = aux.active[static_cast<size_t>(ai)];
                    double xval = xv(i, r);
                    const double* dlrow = dlogits.row(ai);
                    for (int64_t c = 0; c < vocab; ++c) dwrow[c] += xval * dlrow[c];
                }
            }
            return;
        }
    }
}

}  // namespace cspw
