#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cspw/checkpoint.hpp"
#include "cspw/config.hpp"
#include "cspw/data.hpp"

using namespace cspw;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

}  // namespace

TEST_CASE("config defaults, parsing, comments, and unknown keys") {
    RunConfig def = parse_config_text("");
    CHECK(def.variant == "conformal-sympow");
    CHECK(def.lr == 0.0006);
    CHECK(def.steps == 2000);

    RunConfig c = parse_config_text(
        "# comment line\n"
        "variant = sympow-gated  # trailing comment\n"
        "head_dim=8\n"
        "eval_lengths = 16, 64, 256\n"
        "seed = 99\n");
    CHECK(c.variant == "sympow-gated");
    CHECK(c.head_dim == 8);
    CHECK(c.eval_lengths == std::vector<int64_t>{16, 64, 256});
    CHECK(c.seed == 99);

    CHECK_THROWS_AS(parse_config_text("no_such_key = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("power = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("head_dim = 5\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("eval_lengths = 64,32\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("variant = nope\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("steps\n"), std::invalid_argument);
}

TEST_CASE("config round trips through its text form") {
    RunConfig c;
    c.variant = "sympow";
    c.seed = 1234567;
    c.lr = 0.00123;
    c.task = "recall";
    c.eval_lengths = {8, 32};
    RunConfig back = parse_config_text(config_to_text(c));
    CHECK(back.variant == c.variant);
    CHECK(back.seed == c.seed);
    CHECK(back.lr == c.lr);
    CHECK(back.task == c.task);
    CHECK(back.eval_lengths == c.eval_lengths);
}

TEST_CASE("CSPW_SEED overrides the configured seed") {
    RunConfig c;
    c.seed = 7;
    setenv("CSPW_SEED", "4242", 1);
    apply_env_seed(c);
    unsetenv("CSPW_SEED");
    CHECK(c.seed == 4242);
    apply_env_seed(c);
    CHECK(c.seed == 4242);  // unset leaves it alone
}

TEST_CASE("byte round trip and single-byte files") {
    std::string path = temp_path("cspw_bytes.bin");
    std::string content = "hello\x00world\xff!";
    content[5] = '\x00';
    write_file(path, content);
    auto seqs = ingest_text(path, 1024, -1);
    REQUIRE(seqs.size() == 1);
    CHECK(detokenize(seqs[0]) == content);

    write_file(path, "Q");
    seqs = ingest_text(path, 16, -1);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].size() == 1);
    CHECK(seqs[0][0] == 'Q');
}

TEST_CASE("packing counts and document splitting") {
    std::string path = temp_path("cspw_pack.bin");
    write_file(path, std::string(100, 'a'));
    CHECK(ingest_text(path, 16, -1).size() == 7);  // ceil(100/16)
    CHECK(ingest_text(path, 100, -1).size() == 1);
    CHECK(ingest_text(path, 101, -1).size() == 1);

    // delimiter splits documents and is dropped; chunks never span documents
    write_file(path, "aaaa|bbbbbbb|c");
    auto seqs = ingest_text(path, 4, static_cast<int64_t>('|'));
    REQUIRE(seqs.size() == 4);
    CHECK(detokenize(seqs[0]) == "aaaa");
    CHECK(detokenize(seqs[1]) == "bbbb");
    CHECK(detokenize(seqs[2]) == "bbb");
    CHECK(detokenize(seqs[3]) == "c");

    write_file(path, "");
    CHECK_THROWS_AS(ingest_text(path, 16, -1), std::runtime_error);
    CHECK_THROWS_AS(ingest_text(temp_path("no_such_file_here"), 16, -1), std::runtime_error);
}

TEST_CASE("recall task layout and determinism") {
    RngStream rng(77, 0);
    RecallInstance inst = gen_recall_task(rng, 32, 4);
    REQUIRE(inst.tokens.size() == 32);
    // pairs at the front, filler zeros, query at t-2
    for (int i = 0; i < 8; i += 2) CHECK(inst.tokens[static_cast<size_t>(i)] != 0);
    for (int i = 8; i < 30; ++i) CHECK(inst.tokens[static_cast<size_t>(i)] == 0);
    int32_t query = inst.tokens[30];
    int32_t answer = inst.tokens[31];
    bool found = false;
    for (int i = 0; i < 8; i += 2) {
        if (inst.tokens[static_cast<size_t>(i)] == query) {
            CHECK(inst.tokens[static_cast<size_t>(i) + 1] == answer);
            found = true;
        }
    }
    CHECK(found);
    CHECK(inst.answer_weights[30] == 1.0);
    double weight_sum = 0.0;
    for (double w : inst.answer_weights) weight_sum += w;
    CHECK(weight_sum == 1.0);
    CHECK(inst.targets[30] == answer);

    RngStream rng_a(123, 5), rng_b(123, 5);
    RecallInstance a = gen_recall_task(rng_a, 64, 8);
    RecallInstance b = gen_recall_task(rng_b, 64, 8);
    CHECK(a.tokens == b.tokens);

    // k=1 with no filler is the minimal copy instance k v k v: a
    // bigram-perfect predictor is exact at the answer position
    RngStream rng_min(9, 9);
    RecallInstance minimal = gen_recall_task(rng_min, 4, 1);
    CHECK(minimal.tokens[2] == minimal.tokens[0]);
    CHECK(minimal.tokens[3] == minimal.tokens[1]);
    CHECK(minimal.answer_weights[2] == 1.0);

    CHECK_THROWS_AS(gen_recall_task(rng, 9, 4), std::invalid_argument);
    CHECK_THROWS_AS(gen_recall_task(rng, 32, 4, 5), std::invalid_argument);
    CHECK_THROWS_AS(gen_recall_task(rng, 32, 0), std::invalid_argument);
}

TEST_CASE("answer byte is uniform over the vocabulary") {
    std::vector<int64_t> counts(256, 0);
    const int64_t n = 10000;
    for (int64_t i = 0; i < n; ++i) {
        RngStream rng(2025, static_cast<uint64_t>(i));
        RecallInstance inst = gen_recall_task(rng, 24, 4);
        counts[static_cast<size_t>(inst.tokens.back())] += 1;
    }
    double expected = static_cast<double>(n) / 256.0;
    double chi2 = 0.0;
    for (int64_t c : counts) {
        double diff = static_cast<double>(c) - expected;
        chi2 += diff * diff / expected;
    }
    // p > 0.001 for df=255: Wilson-Hilferty quantile at z = 3.09 is ~330
    double wh = 255.0 * std::pow(1.0 - 2.0 / (9.0 * 255.0) +
                                     3.0902 * std::sqrt(2.0 / (9.0 * 255.0)),
                                 3.0);
    CHECK(chi2 < wh);
}

TEST_CASE("checkpoint save/load round trips bitwise") {
    RunConfig config;
    config.d_model = 8;
    config.n_layers = 1;
    config.n_heads = 2;
    config.head_dim = 4;
    config.vocab = 17;
    config.context = 8;
    config.task = "recall";
    ModelParams params = init_params(to_model_config(config), 55);
    AdamState adam;
    adam.m = zeros_like(params);
    adam.v = zeros_like(params);
    adam.step = 42;
    RngStream rng(5, 1);
    for (NamedTensor& nt : named_tensors(adam.m)) {
        for (double& v : nt.tensor->data) v = static_cast<float>(rng.normal());
    }

    std::string path = temp_path("cspw_ckpt.bin");
    save_checkpoint(path, config, params, adam);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.adam.step == 42);
    CHECK(back.run_config.vocab == 17);
    CHECK(back.run_config.task == "recall");

    std::vector<NamedTensor> orig = named_tensors(params);
    std::vector<NamedTensor> loaded = named_tensors(back.params);
    REQUIRE(orig.size() == loaded.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        REQUIRE(orig[i].tensor->size() == loaded[i].tensor->size());
        for (size_t j = 0; j < orig[i].tensor->size(); ++j) {
            CHECK(orig[i].tensor->data[j] == loaded[i].tensor->data[j]);
        }
    }
    std::vector<NamedTensor> m_orig = named_tensors(adam.m);
    std::vector<NamedTensor> m_loaded = named_tensors(back.adam.m);
    for (size_t i = 0; i < m_orig.size(); ++i) {
        for (size_t j = 0; j < m_orig[i].tensor->size(); ++j) {
            CHECK(m_orig[i].tensor->data[j] == m_loaded[i].tensor->data[j]);
        }
    }

    // corrupt magic
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}
