#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cspw/data.hpp"
#include "cspw/train.hpp"
#include "cspw/verify.hpp"

using namespace cspw;

namespace {

RunConfig tiny_train_config(const std::string& out_dir) {
    RunConfig config;
    config.variant = "conformal-sympow";
    config.d_model = 16;
    config.n_layers = 1;
    config.n_heads = 2;
    config.head_dim = 4;
    config.power = 2;
    config.context = 24;
    config.max_doc = 64;
    config.vocab = 256;
    config.seed = 11;
    config.lr = 1e-3;
    config.steps = 6;
    config.batch = 2;
    config.log_every = 2;
    config.task = "recall";
    config.recall_pairs = 4;
    config.out_dir = out_dir;
    return config;
}

std::string out_dir(const std::string& name) {
    std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::filesystem::remove_all(path);
    return path;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        rows.push_back(fields);
    }
    return rows;
}

}  // namespace

TEST_CASE("training writes metrics with the pinned header and a checkpoint") {
    RunConfig config = tiny_train_config(out_dir("cspw_train_a"));
    TrainOutput out = cmd_train(config);
    CHECK(std::isfinite(out.final_loss));

    auto rows = read_csv(out.metrics_path);
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == std::vector<std::string>{"step", "loss", "wall_ms", "gamma_mean", "gamma_min",
                                              "gamma_max", "beta_mean", "beta_min", "beta_max"});
    for (size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 9);
        double loss = std::stod(rows[i][1]);
        CHECK(std::isfinite(loss));
        double gmin = std::stod(rows[i][4]);
        double gmax = std::stod(rows[i][5]);
        CHECK(gmin > 0.0);
        CHECK(gmax < 1.0);
        double bmin = std::stod(rows[i][7]);
        double bmax = std::stod(rows[i][8]);
        CHECK(bmin > 0.0);
        CHECK(bmax < 2.0);
    }
    CHECK(std::filesystem::exists(out.checkpoint_path));

    // on the trained checkpoint, recurrent inference agrees with the
    // quadratic evaluation at every position
    Checkpoint ckpt = load_checkpoint(out.checkpoint_path);
    RngStream rng(4321, 0);
    RecallInstance inst = gen_recall_task(rng, 24, 4);
    std::vector<double> quad = per_position_losses(ckpt.params, inst.tokens, false);
    std::vector<double> rec = per_position_losses(ckpt.params, inst.tokens, true);
    REQUIRE(quad.size() == rec.size());
    for (size_t i = 0; i < quad.size(); ++i) {
        CHECK(std::abs(quad[i] - rec[i]) <= 1e-4 * std::max(1.0, std::abs(quad[i])));
    }
}

TEST_CASE("reruns are bitwise identical apart from wall time") {
    RunConfig a = tiny_train_config(out_dir("cspw_train_b1"));
    RunConfig b = tiny_train_config(out_dir("cspw_train_b2"));
    TrainOutput out_a = cmd_train(a);
    TrainOutput out_b = cmd_train(b);

    auto rows_a = read_csv(out_a.metrics_path);
    auto rows_b = read_csv(out_b.metrics_path);
    REQUIRE(rows_a.size() == rows_b.size());
    for (size_t i = 0; i < rows_a.size(); ++i) {
        REQUIRE(rows_a[i].size() == rows_b[i].size());
        for (size_t f = 0; f < rows_a[i].size(); ++f) {
            if (f == 2) continue;  // wall_ms is timing, not content
            CHECK(rows_a[i][f] == rows_b[i][f]);
        }
    }

    std::ifstream fa(out_a.checkpoint_path, std::ios::binary);
    std::ifstream fb(out_b.checkpoint_path, std::ios::binary);
    std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    // config echoes differ only in out_dir; compare the tensor payloads
    CHECK(bytes_a.substr(bytes_a.size() - 2000) == bytes_b.substr(bytes_b.size() - 2000));
}

TEST_CASE("resume reproduces the continued run bitwise") {
    RunConfig full = tiny_train_config(out_dir("cspw_train_c1"));
    full.checkpoint_every = 3;
    TrainOutput out_full = cmd_train(full);

    RunConfig resumed = full;
    resumed.out_dir = out_dir("cspw_train_c2");
    TrainOutput out_resumed =
        cmd_train(resumed, full.out_dir + "/checkpoint_step3.bin");

    Checkpoint a = load_checkpoint(out_full.checkpoint_path);
    Checkpoint b = load_checkpoint(out_resumed.checkpoint_path);
    CHECK(a.adam.step == b.adam.step);
    std::vector<NamedTensor> ta = named_tensors(a.params);
    std::vector<NamedTensor> tb = named_tensors(b.params);
    for (size_t i = 0; i < ta.size(); ++i) {
        for (size_t j = 0; j < ta[i].tensor->size(); ++j) {
            CHECK(ta[i].tensor->data[j] == tb[i].tensor->data[j]);
        }
    }

    // the step-4 losses logged by both runs agree bitwise
    auto rows_full = read_csv(out_full.metrics_path);
    auto rows_resumed = read_csv(out_resumed.metrics_path);
    std::string loss_full, loss_resumed;
    for (const auto& row : rows_full) {
        if (row[0] == "4") loss_full = row[1];
    }
    for (const auto& row : rows_resumed) {
        if (row[0] == "4") loss_resumed = row[1];
    }
    REQUIRE(!loss_full.empty());
    CHECK(loss_full == loss_resumed);
}

TEST_CASE("text training path consumes a byte file") {
    std::string data_path =
        (std::filesystem::temp_directory_path() / "cspw_train_text.bin").string();
    {
        std::ofstream f(data_path, std::ios::binary | std::ios::trunc);
        RngStream rng(3, 0);
        for (int i = 0; i < 4096; ++i) {
            f.put(static_cast<char>('a' + static_cast<char>(rng.index(20))));
        }
    }
    RunConfig config = tiny_train_config(out_dir("cspw_train_text"));
    config.task.clear();
    config.data_path = data_path;
    config.steps = 3;
    TrainOutput out = cmd_train(config);
    CHECK(std::isfinite(out.final_loss));
    CHECK(out.final_loss < std::log(256.0) + 0.1);
}

TEST_CASE("untrained eval reports ln(vocab) everywhere and snapshots round trip") {
    RunConfig config = tiny_train_config(out_dir("cspw_train_eval"));
    config.steps = 0;
    TrainOutput out = cmd_train(config);

    Checkpoint ckpt = load_checkpoint(out.checkpoint_path);
    std::string csv_path = config.out_dir + "/eval.csv";
    cmd_eval(ckpt, {16, 24, 48}, csv_path, true);

    auto rows = read_csv(csv_path);
    REQUIRE(rows.size() > 1);
    CHECK(rows[0] == std::vector<std::string>{"length", "position_bucket", "mean_loss", "n_tokens"});
    double want = std::log(256.0);
    int64_t buckets_for_24 = 0;
    for (size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 4);
        CHECK(std::abs(std::stod(rows[i][2]) - want) < 0.02);
        if (rows[i][0] == "24") ++buckets_for_24;
    }
    // log2 buckets 1,2,4,8,16 cover positions 1..23
    CHECK(buckets_for_24 == 5);

    CHECK_THROWS_AS(cmd_eval(ckpt, {1 << 21}, csv_path, false), std::invalid_argument);
}

TEST_CASE("recall answer loss of an untrained model is ln(vocab)") {
    RunConfig config = tiny_train_config(out_dir("cspw_train_ans"));
    ModelParams params = init_params(to_model_config(config), 5);
    double loss = recall_answer_loss(params, 5, 4, 24, 4);
    CHECK(std::abs(loss - std::log(256.0)) < 1e-6);
    double held = heldout_loss(params, config, 5, 2);
    CHECK(std::abs(held - std::log(256.0)) < 1e-6);
}

#ifdef _OPENMP
#include <omp.h>
TEST_CASE("a training step is independent of the thread count") {
    RunConfig config = tiny_train_config(out_dir("cspw_train_threads"));
    config.batch = 4;
    auto run_with = [&](int threads) {
        omp_set_num_threads(threads);
        ModelParams params = init_params(to_model_config(config), config.seed);
        AdamState adam;
        adam.m = zeros_like(params);
        adam.v = zeros_like(params);
        StepStats stats{};
        for (int s = 0; s < 3; ++s) stats = train_step(config, params, adam, {});
        return std::pair<double, ModelParams>(stats.loss, std::move(params));
    };
    auto [loss1, params1] = run_with(1);
    auto [loss2, params2] = run_with(2);
    omp_set_num_threads(omp_get_num_procs());
    CHECK(loss1 == loss2);
    std::vector<NamedTensor> t1 = named_tensors(params1);
    std::vector<NamedTensor> t2 = named_tensors(params2);
    for (size_t i = 0; i < t1.size(); ++i) {
        for (size_t j = 0; j < t1[i].tensor->size(); ++j) {
            CHECK(t1[i].tensor->data[j] == t2[i].tensor->data[j]);
        }
    }
}
#endif

TEST_CASE("verification passes clean and fails under the injected fault") {
    RunConfig config;
    config.seed = 3;
    FaultInjection clean;
    std::vector<SuiteResult> results = run_verification(config, clean);
    CHECK(results.size() >= 10);
    for (const SuiteResult& r : results) {
        INFO(r.name, " max_err=", r.max_err, " tol=", r.tol);
        CHECK(r.pass);
    }
    std::string report = format_report(results);
    CHECK(report.find("prop1-rotary-equivalence") != std::string::npos);
    CHECK(report.find("PASS") != std::string::npos);

    FaultInjection fault = fault_from_name("gating-offby-one");
    std::vector<SuiteResult> broken = run_verification(config, fault);
    bool prop2_failed = false;
    bool prop1_ok = false;
    for (const SuiteResult& r : broken) {
        if (r.name == "prop2-gating-equivalence") prop2_failed = !r.pass;
        if (r.name == "prop1-rotary-equivalence") prop1_ok = r.pass;
    }
    CHECK(prop2_failed);
    CHECK(prop1_ok);

    CHECK_THROWS_AS(fault_from_name("no-such-fault"), std::invalid_argument);
}
