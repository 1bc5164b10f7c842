#include "cspw/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "cspw/data.hpp"
#include "cspw/recurrent.hpp"

namespace cspw {

namespace {

constexpr uint64_t kRecallStreamSalt = 0xDA7A5EEDull;
constexpr uint64_t kTextStreamSalt = 0x7E57DA7Aull;
constexpr uint64_t kHeldoutSalt = 0xE7A10015ull;

struct SequenceBatch {
    std::vector<std::vector<int32_t>> tokens;
    std::vector<std::vector<int32_t>> targets;
    std::vector<std::vector<double>> weights;
};

// Training scores every next-token position; on the recall task the answer
// position additionally carries answer_weight, concentrating gradient on the
// retrieval the task grades.
void fill_lm_targets(const std::vector<int32_t>& tokens, std::vector<int32_t>& targets,
                     std::vector<double>& weights) {
    size_t t = tokens.size();
    targets.assign(t, 0);
    weights.assign(t, 0.0);
    for (size_t i = 0; i + 1 < t; ++i) {
        targets[i] = tokens[i + 1];
        weights[i] = 1.0;
    }
}

SequenceBatch make_batch(const RunConfig& config, int64_t step,
                         const std::vector<std::vector<int32_t>>& text_sequences) {
    SequenceBatch batch;
    batch.tokens.resize(static_cast<size_t>(config.batch));
    batch.targets.resize(static_cast<size_t>(config.batch));
    batch.weights.resize(static_cast<size_t>(config.batch));
    for (int64_t b = 0; b < config.batch; ++b) {
        uint64_t stream = static_cast<uint64_t>(step) * 1000003ull + static_cast<uint64_t>(b);
        if (config.task == "recall") {
            RngStream rng(config.seed ^ kRecallStreamSalt, stream);
            RecallInstance inst =
                gen_recall_task(rng, config.context, config.recall_pairs, config.query_position);
            batch.tokens[static_cast<size_t>(b)] = inst.tokens;
            fill_lm_targets(batch.tokens[static_cast<size_t>(b)],
                            batch.targets[static_cast<size_t>(b)],
                            batch.weights[static_cast<size_t>(b)]);
            if (config.answer_weight != 1.0) {
                for (size_t p = 0; p < inst.answer_weights.size(); ++p) {
                    if (inst.answer_weights[p] > 0.0) {
                        batch.weights[static_cast<size_t>(b)][p] = config.answer_weight;
                    }
                }
            }
            continue;
        } else {
            RngStream rng(config.seed ^ kTextStreamSalt, stream);
            const std::vector<int32_t>* seq = nullptr;
            for (int guard = 0; guard < 4096; ++guard) {
                const auto& candidate = text_sequences[rng.index(text_sequences.size())];
                if (candidate.size() >= 2) {
                    seq = &candidate;
                    break;
                }
            }
            if (seq == nullptr) {
                throw std::runtime_error("train: no usable sequences (all shorter than 2 tokens)");
            }
            batch.tokens[static_cast<size_t>(b)] = *seq;
        }
        fill_lm_targets(batch.tokens[static_cast<size_t>(b)], batch.targets[static_cast<size_t>(b)],
                        batch.weights[static_cast<size_t>(b)]);
    }
    return batch;
}

struct SeqResult {
    double loss = 0.0;
    ModelParams grads;
    double gamma_sum = 0.0, gamma_min = 1e300, gamma_max = -1e300;
    double beta_sum = 0.0, beta_min = 1e300, beta_max = -1e300;
    int64_t gamma_count = 0, beta_count = 0;
};

}  // namespace

StepStats train_step(const RunConfig& config, ModelParams& params, AdamState& adam,
                     const std::vector<std::vector<int32_t>>& text_sequences) {
    const int64_t step = adam.step + 1;
    SequenceBatch batch = make_batch(config, step, text_sequences);

    std::vector<SeqResult> results(static_cast<size_t>(config.batch));
#pragma omp parallel for schedule(dynamic, 1)
    for (int64_t b = 0; b < config.batch; ++b) {
        SeqResult& res = results[static_cast<size_t>(b)];
        Tape tape;
        ParamBinding binding;
        ForwardResult fwd = model_forward(tape, params, batch.tokens[static_cast<size_t>(b)],
                                          batch.targets[static_cast<size_t>(b)],
                                          batch.weights[static_cast<size_t>(b)], &binding);
        tape.backward(fwd.loss);
        res.loss = tape.value(fwd.loss)(0, 0);
        res.grads = zeros_like(params);
        std::vector<NamedTensor> slots = named_tensors(res.grads);
        for (size_t i = 0; i < slots.size(); ++i) {
            if (tape.has_grad(binding.nodes[i])) *slots[i].tensor = tape.grad(binding.nodes[i]);
        }
        for (int32_t id : fwd.gamma_nodes) {
            for (double v : tape.value(id).data) {
                res.gamma_sum += v;
                res.gamma_min = std::min(res.gamma_min, v);
                res.gamma_max = std::max(res.gamma_max, v);
                res.gamma_count += 1;
            }
        }
        for (int32_t id : fwd.beta_nodes) {
            for (double v : tape.value(id).data) {
                res.beta_sum += v;
                res.beta_min = std::min(res.beta_min, v);
                res.beta_max = std::max(res.beta_max, v);
                res.beta_count += 1;
            }
        }
    }

    // fixed-order reduction keeps the step independent of the thread schedule
    StepStats stats;
    ModelParams total = zeros_like(params);
    std::vector<NamedTensor> total_slots = named_tensors(total);
    double loss_sum = 0.0;
    double gamma_sum = 0.0, beta_sum = 0.0;
    int64_t gamma_count = 0, beta_count = 0;
    double gamma_min = 1e300, gamma_max = -1e300, beta_min = 1e300, beta_max = -1e300;
    for (int64_t b = 0; b < config.batch; ++b) {
        SeqResult& res = results[static_cast<size_t>(b)];
        loss_sum += res.loss;
        std::vector<NamedTensor> slots = named_tensors(res.grads);
        for (size_t i = 0; i < slots.size(); ++i) {
            Matrix& dst = *total_slots[i].tensor;
            const Matrix& src = *slots[i].tensor;
            for (size_t j = 0; j < dst.size(); ++j) dst.data[j] += src.data[j];
        }
        gamma_sum += res.gamma_sum;
        gamma_count += res.gamma_count;
        beta_sum += res.beta_sum;
        beta_count += res.beta_count;
        gamma_min = std::min(gamma_min, res.gamma_min);
        gamma_max = std::max(gamma_max, res.gamma_max);
        beta_min = std::min(beta_min, res.beta_min);
        beta_max = std::max(beta_max, res.beta_max);
    }

    stats.loss = loss_sum / static_cast<double>(config.batch);
    if (!std::isfinite(stats.loss)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                 " (seed " + std::to_string(config.seed) + ", batch stream base " +
                                 std::to_string(step * 1000003) + ")");
    }
    if (gamma_count > 0) {
        stats.gamma_mean = gamma_sum / static_cast<double>(gamma_count);
        stats.gamma_min = gamma_min;
        stats.gamma_max = gamma_max;
    }
    if (beta_count > 0) {
        stats.beta_mean = beta_sum / static_cast<double>(beta_count);
        stats.beta_min = beta_min;
        stats.beta_max = beta_max;
    }

    double inv_batch = 1.0 / static_cast<double>(config.batch);
    for (NamedTensor& nt : total_slots) {
        for (double& v : nt.tensor->data) v *= inv_batch;
    }
    adam_step(params, total, adam, config.lr);
    return stats;
}

TrainOutput cmd_train(const RunConfig& config, const std::string& resume_from) {
    validate_config(config);
    if (config.task.empty() && config.data_path.empty()) {
        throw std::invalid_argument("train: need either a task or a data path");
    }

    std::vector<std::vector<int32_t>> text_sequences;
    if (config.task.empty()) {
        text_sequences = ingest_text(config.data_path, config.context, config.doc_delimiter);
    }

    ModelParams params;
    AdamState adam;
    if (!resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_from);
        params = std::move(ckpt.params);
        adam = std::move(ckpt.adam);
        params.config = to_model_config(config);
    } else {
        params = init_params(to_model_config(config), config.seed);
        adam.m = zeros_like(params);
        adam.v = zeros_like(params);
    }

    std::filesystem::create_directories(config.out_dir);
    std::string metrics_path = config.out_dir + "/metrics.csv";
    bool fresh_metrics = !std::filesystem::exists(metrics_path) || resume_from.empty();
    std::ofstream metrics(metrics_path,
                          fresh_metrics ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("train: cannot open " + metrics_path);
    if (fresh_metrics) {
        metrics << "step,loss,wall_ms,gamma_mean,gamma_min,gamma_max,beta_mean,beta_min,beta_max\n";
    }

    auto start = std::chrono::steady_clock::now();
    TrainOutput out;
    out.metrics_path = metrics_path;
    out.checkpoint_path = config.out_dir + "/checkpoint.bin";

    double last_loss = 0.0;
    while (adam.step < config.steps) {
        StepStats stats = train_step(config, params, adam, text_sequences);
        last_loss = stats.loss;
        int64_t step = adam.step;
        if (step % config.log_every == 0 || step == config.steps) {
            double wall_ms = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - start)
                                 .count();
            char line[256];
            std::snprintf(line, sizeof(line), "%lld,%.17g,%.1f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                          static_cast<long long>(step), stats.loss, wall_ms, stats.gamma_mean,
                          stats.gamma_min, stats.gamma_max, stats.beta_mean, stats.beta_min,
                          stats.beta_max);
            metrics << line;
            metrics.flush();
        }
        if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 &&
            step != config.steps) {
            save_checkpoint(config.out_dir + "/checkpoint_step" + std::to_string(step) + ".bin",
                            config, params, adam);
        }
    }
    save_checkpoint(out.checkpoint_path, config, params, adam);
    out.final_loss = last_loss;
    return out;
}

double recall_answer_loss(const ModelParams& params, uint64_t seed, int64_t instances,
                          int64_t context, int64_t pairs) {
    double total = 0.0;
    for (int64_t i = 0; i < instances; ++i) {
        RngStream rng(seed ^ kHeldoutSalt, static_cast<uint64_t>(i));
        RecallInstance inst = gen_recall_task(rng, context, pairs);
        std::vector<double> losses = per_position_losses(params, inst.tokens, false);
        int64_t answer_pos = -1;
        for (size_t p = 0; p < inst.answer_weights.size(); ++p) {
            if (inst.answer_weights[p] > 0.0) answer_pos = static_cast<int64_t>(p);
        }
        total += losses[static_cast<size_t>(answer_pos)];
    }
    return total / static_cast<double>(instances);
}

double heldout_loss(const ModelParams& params, const RunConfig& config, uint64_t seed,
                    int64_t instances) {
    double total = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < instances; ++i) {
        RngStream rng(seed ^ kHeldoutSalt, 7000000ull + static_cast<uint64_t>(i));
        RecallInstance inst = gen_recall_task(rng, config.context, config.recall_pairs,
                                              config.query_position);
        std::vector<double> losses = per_position_losses(params, inst.tokens, false);
        for (double l : losses) {
            total += l;
            count += 1;
        }
    }
    return total / static_cast<double>(count);
}

void cmd_eval(const Checkpoint& ckpt, const std::vector<int64_t>& lengths,
              const std::string& out_csv_path, bool snapshot_roundtrip) {
    const RunConfig& config = ckpt.run_config;
    VariantTraits traits = traits_of(variant_from_name(config.variant));
    const bool recurrent = traits.sympow;

    std::ofstream csv(out_csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("eval: cannot open " + out_csv_path);
    csv << "length,position_bucket,mean_loss,n_tokens\n";

    for (int64_t length : lengths) {
        if (length < 2) throw std::invalid_argument("eval: lengths must be >= 2");
        if (length > (1 << 20)) {
            throw std::invalid_argument("eval: length exceeds the hard cap 2^20");
        }

        std::vector<std::vector<int32_t>> sequences;
        if (config.task == "recall") {
            for (int64_t i = 0; i < config.eval_sequences; ++i) {
                RngStream rng(config.seed ^ kHeldoutSalt, 50000ull + static_cast<uint64_t>(i));
                sequences.push_back(gen_recall_task(rng, length, config.recall_pairs).tokens);
            }
        } else {
            auto chunks = ingest_text(config.data_path, length, config.doc_delimiter);
            for (const auto& chunk : chunks) {
                if (static_cast<int64_t>(sequences.size()) >= config.eval_sequences) break;
                if (chunk.size() >= 2) sequences.push_back(chunk);
            }
            if (sequences.empty()) throw std::runtime_error("eval: no usable sequences");
        }

        // log2 position buckets over [1, length)
        int64_t n_buckets = 0;
        while ((1ll << (n_buckets + 1)) <= length) ++n_buckets;
        std::vector<double> bucket_loss(static_cast<size_t>(n_buckets) + 1, 0.0);
        std::vector<int64_t> bucket_count(static_cast<size_t>(n_buckets) + 1, 0);

        for (const std::vector<int32_t>& tokens : sequences) {
            std::vector<double> losses = per_position_losses(ckpt.params, tokens, recurrent);
            if (snapshot_roundtrip && recurrent) {
                std::vector<double> again = per_position_losses(
                    ckpt.params, tokens, true, static_cast<int64_t>(tokens.size()) / 2);
                if (again != losses) {
                    throw std::runtime_error("eval: snapshot roundtrip changed the losses");
                }
            }
            for (size_t i = 0; i < losses.size(); ++i) {
                int64_t pos = static_cast<int64_t>(i) + 1;  // tokens of context seen
                int64_t b = 0;
                while ((1ll << (b + 1)) <= pos) ++b;
                bucket_loss[static_cast<size_t>(b)] += losses[i];
                bucket_count[static_cast<size_t>(b)] += 1;
            }
        }
        for (int64_t b = 0; b <= n_buckets; ++b) {
            if (bucket_count[static_cast<size_t>(b)] == 0) continue;
            char line[160];
            std::snprintf(line, sizeof(line), "%lld,%lld,%.9g,%lld\n",
                          static_cast<long long>(length), static_cast<long long>(1ll << b),
                          bucket_loss[static_cast<size_t>(b)] /
                              static_cast<double>(bucket_count[static_cast<size_t>(b)]),
                          static_cast<long long>(bucket_count[static_cast<size_t>(b)]));
            csv << line;
        }
    }
}

}  // namespace cspw
