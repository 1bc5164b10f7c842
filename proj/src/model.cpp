#include "cspw/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cspw/recurrent.hpp"

namespace cspw {

namespace {

Matrix filled(int64_t r, int64_t c, double v) {
    Matrix m(r, c);
    for (double& x : m.data) x = v;
    return m;
}

Matrix init_gauss(RngStream& rng, int64_t r, int64_t c, double std) {
    Matrix m = gauss(rng, r, c);
    for (double& x : m.data) x *= std;
    return m;
}

}  // namespace

int64_t ModelParams::count() const {
    int64_t total = 0;
    auto tensors = named_tensors(*const_cast<ModelParams*>(this));
    for (const NamedTensor& nt : tensors) total += static_cast<int64_t>(nt.tensor->size());
    return total;
}

std::vector<NamedTensor> named_tensors(ModelParams& params) {
    std::vector<NamedTensor> out;
    out.push_back({"tok_emb", &params.tok_emb});
    out.push_back({"ln_in.g", &params.ln_in_g});
    out.push_back({"ln_in.b", &params.ln_in_b});
    for (size_t l = 0; l < params.layers.size(); ++l) {
        LayerParams& layer = params.layers[l];
        std::string prefix = "layer" + std::to_string(l) + ".";
        out.push_back({prefix + "ln1.g", &layer.ln1_g});
        out.push_back({prefix + "ln1.b", &layer.ln1_b});
        for (size_t h = 0; h < layer.heads.size(); ++h) {
            std::string hp = prefix + "head" + std::to_string(h) + ".";
            out.push_back({hp + "wq", &layer.heads[h].w_q});
            out.push_back({hp + "wk", &layer.heads[h].w_k});
            out.push_back({hp + "wv", &layer.heads[h].w_v});
            out.push_back({hp + "wgamma", &layer.heads[h].w_gamma});
            out.push_back({hp + "wbeta", &layer.heads[h].w_beta});
        }
        out.push_back({prefix + "wo", &layer.w_o});
        out.push_back({prefix + "ln2.g", &layer.ln2_g});
        out.push_back({prefix + "ln2.b", &layer.ln2_b});
        out.push_back({prefix + "ff1", &layer.w_ff1});
        out.push_back({prefix + "ff2", &layer.w_ff2});
    }
    out.push_back({"ln_f.g", &params.ln_f_g});
    out.push_back({"ln_f.b", &params.ln_f_b});
    out.push_back({"unembed", &params.unembed});
    return out;
}

ModelParams init_params(const ModelConfig& config, uint64_t seed) {
    if (config.head_dim < 2 || config.head_dim % 2 != 0) {
        throw std::invalid_argument("init_params: head_dim must be even and >= 2");
    }
    if (config.power < 2 || config.power % 2 != 0) {
        throw std::invalid_argument("init_params: power must be even and >= 2");
    }
    ModelParams params;
    params.config = config;
    const int64_t dm = config.d_model;
    const double std = 0.02;

    uint64_t stream = 1000;
    auto next = [&](int64_t r, int64_t c) {
        RngStream rng(seed, stream++);
        return init_gauss(rng, r, c, std);
    };

    params.tok_emb = next(config.vocab, dm);
    params.ln_in_g = filled(1, dm, 1.0);
    params.ln_in_b = Matrix(1, dm);
    params.layers.resize(static_cast<size_t>(config.n_layers));
    for (LayerParams& layer : params.layers) {
        layer.ln1_g = filled(1, dm, 1.0);
        layer.ln1_b = Matrix(1, dm);
        layer.heads.resize(static_cast<size_t>(config.n_heads));
        for (HeadParams& head : layer.heads) {
            head.w_q = next(dm, config.head_dim);
            head.w_k = next(dm, config.head_dim);
            head.w_v = next(dm, config.head_dim);
            head.w_gamma = Matrix(dm, 1);  // zero: gamma starts at 0.5
            head.w_beta = Matrix(dm, 1);   // zero: beta = 1 recovers fixed rotary
        }
        layer.w_o = next(config.n_heads * config.head_dim, dm);
        layer.ln2_g = filled(1, dm, 1.0);
        layer.ln2_b = Matrix(1, dm);
        layer.w_ff1 = next(dm, config.ff_hidden());
        layer.w_ff2 = next(config.ff_hidden(), dm);
    }
    params.ln_f_g = filled(1, dm, 1.0);
    params.ln_f_b = Matrix(1, dm);
    params.unembed = Matrix(dm, config.vocab);  // zero: untrained loss is ln(vocab)

    round_to_f32(params);
    return params;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams out;
    out.config = params.config;
    out.tok_emb = Matrix(params.tok_emb.rows, params.tok_emb.cols);
    out.ln_in_g = Matrix(1, params.config.d_model);
    out.ln_in_b = Matrix(1, params.config.d_model);
    out.layers.resize(params.layers.size());
    for (size_t l = 0; l < params.layers.size(); ++l) {
        const LayerParams& src = params.layers[l];
        LayerParams& dst = out.layers[l];
        dst.ln1_g = Matrix(1, params.config.d_model);
        dst.ln1_b = Matrix(1, params.config.d_model);
        dst.heads.resize(src.heads.size());
        for (size_t h = 0; h < src.heads.size(); ++h) {
            dst.heads[h].w_q = Matrix(src.heads[h].w_q.rows, src.heads[h].w_q.cols);
            dst.heads[h].w_k = Matrix(src.heads[h].w_k.rows, src.heads[h].w_k.cols);
            dst.heads[h].w_v = Matrix(src.heads[h].w_v.rows, src.heads[h].w_v.cols);
            dst.heads[h].w_gamma = Matrix(src.heads[h].w_gamma.rows, 1);
            dst.heads[h].w_beta = Matrix(src.heads[h].w_beta.rows, 1);
        }
        dst.w_o = Matrix(src.w_o.rows, src.w_o.cols);
        dst.ln2_g = Matrix(1, params.config.d_model);
        dst.ln2_b = Matrix(1, params.config.d_model);
        dst.w_ff1 = Matrix(src.w_ff1.rows, src.w_ff1.cols);
        dst.w_ff2 = Matrix(src.w_ff2.rows, src.w_ff2.cols);
    }
    out.ln_f_g = Matrix(1, params.config.d_model);
    out.ln_f_b = Matrix(1, params.config.d_model);
    out.unembed = Matrix(params.unembed.rows, params.unembed.cols);
    return out;
}

void round_to_f32(ModelParams& params) {
    for (NamedTensor& nt : named_tensors(params)) {
        for (double& v : nt.tensor->data) v = static_cast<double>(static_cast<float>(v));
    }
}

ParamCountBreakdown param_count_breakdown(const ModelConfig& config, bool tied_unembed) {
    const int64_t dm = config.d_model;
    ParamCountBreakdown out;
    out.base += config.vocab * dm;           // token embedding
    if (!tied_unembed) out.base += dm * config.vocab;
    out.base += 2 * dm;                      // input layernorm
    out.base += 2 * dm;                      // final layernorm
    int64_t per_layer = 0;
    per_layer += 3 * dm * config.head_dim * config.n_heads;  // q,k,v
    per_layer += config.n_heads * config.head_dim * dm;      // output projection
    per_layer += 2 * dm * config.ff_hidden();                // feed-forward
    per_layer += 4 * dm;                                     // two layernorms
    out.base += per_layer * config.n_layers;
    out.gating = dm * config.n_heads * config.n_layers;
    out.rotary_scaling = dm * config.n_heads * config.n_layers;

    VariantTraits traits = traits_of(config.variant);
    out.total = out.base + (traits.gated ? out.gating : 0) +
                (traits.learned_rotary ? out.rotary_scaling : 0);
    return out;
}

double alibi_slope(int64_t head, int64_t n_heads) {
    return std::pow(2.0, -8.0 * static_cast<double>(head + 1) / static_cast<double>(n_heads));
}

ForwardResult model_forward(Tape& tape, ModelParams& params, const std::vector<int32_t>& tokens,
                            const std::vector<int32_t>& targets,
                            const std::vector<double>& weights, ParamBinding* binding) {
    const ModelConfig& config = params.config;
    if (static_cast<int64_t>(tokens.size()) > config.context) {
        throw std::invalid_argument("model_forward: sequence exceeds context");
    }
    VariantTraits traits = traits_of(config.variant);
    RotationRates rates = make_rates(config.head_dim, config.max_doc);

    // register parameter leaves in named_tensors order
    std::vector<NamedTensor> tensors = named_tensors(params);
    std::vector<int32_t> ids(tensors.size());
    for (size_t i = 0; i < tensors.size(); ++i) ids[i] = tape.leaf(*tensors[i].tensor);
    if (binding) binding->nodes = ids;
    auto node_of = [&](const std::string& name) {
        for (size_t i = 0; i < tensors.size(); ++i) {
            if (tensors[i].name == name) return ids[i];
        }
        throw std::logic_error("model_forward: missing tensor " + name);
    };

    ForwardResult result;
    int32_t x = tape.embed_rows(node_of("tok_emb"), tokens);
    x = tape.layer_norm(x, node_of("ln_in.g"), node_of("ln_in.b"));

    for (int64_t l = 0; l < config.n_layers; ++l) {
        std::string prefix = "layer" + std::to_string(l) + ".";
        int32_t h = tape.layer_norm(x, node_of(prefix + "ln1.g"), node_of(prefix + "ln1.b"));
        std::vector<int32_t> head_outputs;
        for (int64_t head = 0; head < config.n_heads; ++head) {
            std::string hp = prefix + "head" + std::to_string(head) + ".";
            int32_t q = tape.matmul_op(h, node_of(hp + "wq"));
            int32_t k = tape.matmul_op(h, node_of(hp + "wk"));
            int32_t v = tape.matmul_op(h, node_of(hp + "wv"));
            if (traits.sympow) {
                int32_t gamma = -1, beta = -1;
                if (traits.gated) {
                    int32_t pre = tape.matmul_op(h, node_of(hp + "wgamma"));
                    if (config.gamma_bias != 0.0) pre = tape.add_const(pre, config.gamma_bias);
                    gamma = tape.sigmoid_op(pre);
                    result.gamma_nodes.push_back(gamma);
                }
                if (traits.learned_rotary) {
                    beta = tape.one_plus_tanh(tape.matmul_op(h, node_of(hp + "wbeta")));
                    result.beta_nodes.push_back(beta);
                }
                head_outputs.push_back(tape.sympow_attention(config.variant, q, k, v, gamma, beta,
                                                             rates, config.power,
                                                             config.denom_eps));
            } else {
                std::optional<double> m;
                if (traits.alibi) m = alibi_slope(head, config.n_heads);
                head_outputs.push_back(tape.softmax_attention_op(q, k, v, m));
            }
        }
        int32_t cat = head_outputs[0];
        for (size_t i = 1; i < head_outputs.size(); ) {
            std::vector<int32_t> chunk{cat};
            while (chunk.size() < 5 && i < head_outputs.size()) chunk.push_back(head_outputs[i++]);
            cat = tape.concat_cols(chunk);
        }
        x = tape.add(x, tape.matmul_op(cat, node_of(prefix + "wo")));

        int32_t h2 = tape.layer_norm(x, node_of(prefix + "ln2.g"), node_of(prefix + "ln2.b"));
        int32_t ff = tape.matmul_op(tape.gelu(tape.matmul_op(h2, node_of(prefix + "ff1"))),
                                    node_of(prefix + "ff2"));
        x = tape.add(x, ff);
    }

    x = tape.layer_norm(x, node_of("ln_f.g"), node_of("ln_f.b"));
    result.loss = tape.unembed_cross_entropy(x, node_of("unembed"), targets, weights);
    return result;
}

namespace {

// run_recurrent with a serialize/restore of the state mid-fold; outputs must
// be bitwise identical to the plain fold.
Matrix run_recurrent_snapshot(Variant variant, const Matrix& q, const Matrix& k, const Matrix& v,
                              const std::vector<double>& gamma, const std::vector<double>& beta,
                              const RotationRates& rates, const MultisetBasis& basis,
                              double denom_eps, int64_t split) {
    VariantTraits traits = traits_of(variant);
    const int64_t t = q.rows;
    RecurrentState state = make_state(basis);
    Matrix y(t, v.cols);
    for (int64_t i = 0; i < t; ++i) {
        if (i == split) state = deserialize_state(serialize_state(state));
        double g = traits.gated ? gamma[static_cast<size_t>(i)] : 1.0;
        double b = traits.learned_rotary ? beta[static_cast<size_t>(i)] : 1.0;
        step(state, variant, k.row(i), v.row(i), g, b, rates, basis);
        std::vector<double> yi = output(state, q.row(i), basis, nullptr, denom_eps);
        std::copy(yi.begin(), yi.end(), y.row(i));
    }
    return y;
}

}  // namespace

std::vector<double> per_position_losses(const ModelParams& params,
                                        const std::vector<int32_t>& tokens, bool recurrent,
                                        int64_t snapshot_split) {
    const ModelConfig& config = params.config;
    VariantTraits traits = traits_of(config.variant);
    if (recurrent && !traits.sympow) {
        throw std::invalid_argument("per_position_losses: softmax variants have no recurrent form");
    }
    const int64_t t = static_cast<int64_t>(tokens.size());
    if (t < 2) throw std::invalid_argument("per_position_losses: need at least two tokens");

    RotationRates rates = make_rates(config.head_dim, config.max_doc);
    MultisetBasis basis = build_basis(config.head_dim, config.power);

    // plain forward with matrices (no tape) so recurrent attention can slot in
    ModelParams& mutable_params = const_cast<ModelParams&>(params);
    std::vector<NamedTensor> tensors = named_tensors(mutable_params);
    auto tensor_of = [&](const std::string& name) -> const Matrix& {
        for (NamedTensor& nt : tensors) {
            if (nt.name == name) return *nt.tensor;
        }
        throw std::logic_error("per_position_losses: missing tensor " + name);
    };

    auto layer_norm_rows = [](const Matrix& xm, const Matrix& gm, const Matrix& bm) {
        Matrix out(xm.rows, xm.cols);
        for (int64_t i = 0; i < xm.rows; ++i) {
            const double* xr = xm.row(i);
            double mean = 0.0;
            for (int64_t c = 0; c < xm.cols; ++c) mean += xr[c];
            mean /= static_cast<double>(xm.cols);
            double var = 0.0;
            for (int64_t c = 0; c < xm.cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
            var /= static_cast<double>(xm.cols);
            double rstd = 1.0 / std::sqrt(var + 1e-5);
            double* yr = out.row(i);
            for (int64_t c = 0; c < xm.cols; ++c) {
                yr[c] = (xr[c] - mean) * rstd * gm.data[static_cast<size_t>(c)] +
                        bm.data[static_cast<size_t>(c)];
            }
        }
        return out;
    };

    Matrix x(t, config.d_model);
    const Matrix& emb = tensor_of("tok_emb");
    for (int64_t i = 0; i < t; ++i) {
        int32_t tok = tokens[static_cast<size_t>(i)];
        if (tok < 0 || tok >= config.vocab) {
            throw std::invalid_argument("per_position_losses: token out of range");
        }
        std::copy(emb.row(tok), emb.row(tok) + config.d_model, x.row(i));
    }
    x = layer_norm_rows(x, tensor_of("ln_in.g"), tensor_of("ln_in.b"));

    for (int64_t l = 0; l < config.n_layers; ++l) {
        std::string prefix = "layer" + std::to_string(l) + ".";
        Matrix h = layer_norm_rows(x, tensor_of(prefix + "ln1.g"), tensor_of(prefix + "ln1.b"));
        Matrix cat(t, config.n_heads * config.head_dim);
        for (int64_t head = 0; head < config.n_heads; ++head) {
            std::string hp = prefix + "head" + std::to_string(head) + ".";
            Matrix q = matmul(h, tensor_of(hp + "wq"));
            Matrix k = matmul(h, tensor_of(hp + "wk"));
            Matrix v = matmul(h, tensor_of(hp + "wv"));
            Matrix y;
            if (traits.sympow) {
                std::vector<double> gamma, beta;
                if (traits.gated) {
                    if (config.gamma_bias != 0.0) {
                        const Matrix& wg = tensor_of(hp + "wgamma");
                        gamma.resize(static_cast<size_t>(t));
                        for (int64_t i = 0; i < t; ++i) {
                            double acc = config.gamma_bias;
                            for (int64_t c = 0; c < config.d_model; ++c) {
                                acc += h(i, c) * wg.data[static_cast<size_t>(c)];
                            }
                            gamma[static_cast<size_t>(i)] = sigmoid(acc);
                        }
                    } else {
                        gamma = gate_values(h, tensor_of(hp + "wgamma"));
                    }
                }
                if (traits.learned_rotary) beta = beta_values(h, tensor_of(hp + "wbeta"));
                if (recurrent && snapshot_split > 0) {
                    y = run_recurrent_snapshot(config.variant, q, k, v, gamma, beta, rates, basis,
                                               config.denom_eps, snapshot_split);
                } else if (recurrent) {
                    y = run_recurrent(config.variant, q, k, v, gamma, beta, rates, basis, nullptr,
                                      config.denom_eps);
                } else {
                    PreattnParts parts =
                        build_preattn_parts(traits, q, k, gamma, beta, &rates, nullptr);
                    Matrix b;
                    preattn_pairs(parts, config.power, false, b, nullptr, true);
                    y = Matrix(t, config.head_dim);
                    for (int64_t i = 0; i < t; ++i) {
                        double mass = config.denom_eps;
                        const double* brow = b.row(i);
                        for (int64_t j = 0; j <= i; ++j) mass += brow[j];
                        double inv = 1.0 / mass;
                        double* yr = y.row(i);
                        for (int64_t j = 0; j <= i; ++j) {
                            double w = brow[j] * inv;
                            const double* vr = v.row(j);
                            for (int64_t c = 0; c < config.head_dim; ++c) yr[c] += w * vr[c];
                        }
                    }
                }
            } else {
                std::optional<double> m;
                if (traits.alibi) m = alibi_slope(head, config.n_heads);
                y = softmax_attention(q, k, v, m).y;
            }
            for (int64_t i = 0; i < t; ++i) {
                std::copy(y.row(i), y.row(i) + config.head_dim,
                          cat.row(i) + head * config.head_dim);
            }
        }
        Matrix attn_out = matmul(cat, tensor_of(prefix + "wo"));
        for (size_t i = 0; i < x.size(); ++i) x.data[i] += attn_out.data[i];

        Matrix h2 = layer_norm_rows(x, tensor_of(prefix + "ln2.g"), tensor_of(prefix + "ln2.b"));
        Matrix ff = matmul(h2, tensor_of(prefix + "ff1"));
        for (double& v : ff.data) {
            double u = 0.7978845608028654 * (v + 0.044715 * v * v * v);
            v = 0.5 * v * (1.0 + std::tanh(u));
        }
        Matrix ff2 = matmul(ff, tensor_of(prefix + "ff2"));
        for (size_t i = 0; i < x.size(); ++i) x.data[i] += ff2.data[i];
    }

    x = layer_norm_rows(x, tensor_of("ln_f.g"), tensor_of("ln_f.b"));

    const Matrix& w = tensor_of("unembed");
    std::vector<double> losses(static_cast<size_t>(t - 1));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < t - 1; ++i) {
        const double* xr = x.row(i);
        std::vector<double> logits(static_cast<size_t>(config.vocab), 0.0);
        for (int64_t r = 0; r < w.rows; ++r) {
            double f = xr[r];
            const double* wrow = w.row(r);
            for (int64_t c = 0; c < config.vocab; ++c) logits[static_cast<size_t>(c)] += f * wrow[c];
        }
        double maxv = -1e300;
        for (int64_t c = 0; c < config.vocab; ++c) {
            maxv = std::max(maxv, logits[static_cast<size_t>(c)]);
        }
        double denom = 0.0;
        for (int64_t c = 0; c < config.vocab; ++c) {
            denom += std::exp(logits[static_cast<size_t>(c)] - maxv);
        }
        int32_t target = tokens[static_cast<size_t>(i) + 1];
        losses[static_cast<size_t>(i)] =
            -(logits[static_cast<size_t>(target)] - maxv - std::log(denom));
    }
    return losses;
}

void adam_update_tensor(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, int64_t step,
                        double lr, double beta1, double beta2, double eps) {
    if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v)) {
        throw std::invalid_argument("adam_update_tensor: shape mismatch");
    }
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < param.size(); ++i) {
        double g = grad.data[i];
        double mi = beta1 * m.data[i] + (1.0 - beta1) * g;
        double vi = beta2 * v.data[i] + (1.0 - beta2) * g * g;
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        double updated = param.data[i] - lr * mhat / (std::sqrt(vhat) + eps);
        m.data[i] = static_cast<double>(static_cast<float>(mi));
        v.data[i] = static_cast<double>(static_cast<float>(vi));
        param.data[i] = static_cast<double>(static_cast<float>(updated));
    }
}

void adam_step(ModelParams& params, ModelParams& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    state.step += 1;
    std::vector<NamedTensor> p = named_tensors(params);
    std::vector<NamedTensor> g = named_tensors(grads);
    std::vector<NamedTensor> m = named_tensors(state.m);
    std::vector<NamedTensor> v = named_tensors(state.v);
    for (size_t i = 0; i < p.size(); ++i) {
        adam_update_tensor(*p[i].tensor, *g[i].tensor, *m[i].tensor, *v[i].tensor, state.step, lr,
                           beta1, beta2, eps);
    }
}

}  // namespace cspw
