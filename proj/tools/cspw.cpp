// cspw command line: verification suites, training, context-length
// evaluation, and the recurrent-state size calculator.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "cspw/checkpoint.hpp"
#include "cspw/config.hpp"
#include "cspw/sympow.hpp"
#include "cspw/train.hpp"
#include "cspw/verify.hpp"

namespace {

cspw::RunConfig load_or_default(const std::string& path) {
    cspw::RunConfig config;
    if (!path.empty()) config = cspw::load_config_file(path);
    cspw::apply_env_seed(config);
    return config;
}

int run_verify(const std::string& config_path, const std::string& fault_name) {
    cspw::RunConfig config = load_or_default(config_path);
    cspw::FaultInjection fault = cspw::fault_from_name(fault_name);
    std::vector<cspw::SuiteResult> results = cspw::run_verification(config, fault);
    std::cout << cspw::format_report(results);
    int failures = 0;
    for (const cspw::SuiteResult& r : results) failures += r.pass ? 0 : 1;
    if (failures > 0) {
        std::cout << failures << " suite(s) failed\n";
        return 1;
    }
    std::cout << "all " << results.size() << " suites passed\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_path,
              const std::string& task, const std::string& resume) {
    cspw::RunConfig config = load_or_default(config_path);
    if (!data_path.empty()) {
        config.data_path = data_path;
        config.task.clear();
    }
    if (!task.empty()) config.task = task;
    cspw::validate_config(config);
    cspw::TrainOutput out = cspw::cmd_train(config, resume);
    std::printf("final loss %.6f\n", out.final_loss);
    std::printf("checkpoint %s\n", out.checkpoint_path.c_str());
    std::printf("metrics %s\n", out.metrics_path.c_str());
    return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& lengths_csv,
             const std::string& out_csv, bool snapshot_roundtrip) {
    cspw::Checkpoint ckpt = cspw::load_checkpoint(checkpoint_path);
    cspw::apply_env_seed(ckpt.run_config);
    std::vector<int64_t> lengths;
    std::string item;
    std::stringstream ss(lengths_csv);
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) lengths.push_back(std::stoll(item));
    }
    if (lengths.empty()) throw std::invalid_argument("eval: no lengths given");
    cspw::cmd_eval(ckpt, lengths, out_csv, snapshot_roundtrip);
    std::printf("eval csv %s\n", out_csv.c_str());
    return 0;
}

int run_dim(int64_t d, int64_t p, int64_t heads, int64_t layers, int64_t bytes) {
    int64_t dim = cspw::embed_dim(d, p);
    double state_bytes = static_cast<double>(d + 1) * static_cast<double>(dim) *
                         static_cast<double>(heads) * static_cast<double>(bytes) *
                         static_cast<double>(layers);
    std::printf("D = %lld\n", static_cast<long long>(dim));
    std::printf("state bytes = %.0f (%.2f MB) for %lld head(s), %lld layer(s), %lld-byte elements\n",
                state_bytes, state_bytes / 1e6, static_cast<long long>(heads),
                static_cast<long long>(layers), static_cast<long long>(bytes));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conformal symmetric power attention toolkit"};
    app.require_subcommand(1);

    std::string config_path, fault_name;
    CLI::App* verify = app.add_subcommand("verify", "run every verification suite");
    verify->add_option("--config", config_path, "run configuration file");
    verify->add_option("--inject-fault", fault_name, "named fault, e.g. gating-offby-one");

    std::string train_config, train_data, train_task, train_resume;
    CLI::App* train = app.add_subcommand("train", "train a toy model");
    train->add_option("--config", train_config, "run configuration file");
    train->add_option("--data", train_data, "path to a byte-level text file");
    train->add_option("--task", train_task, "synthetic task name (recall)");
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    std::string eval_checkpoint, eval_lengths, eval_out = "eval.csv";
    bool snapshot_roundtrip = false;
    CLI::App* eval = app.add_subcommand("eval", "per-position loss at evaluation lengths");
    eval->add_option("--checkpoint", eval_checkpoint, "trained checkpoint")->required();
    eval->add_option("--lengths", eval_lengths, "comma-separated context lengths")->required();
    eval->add_option("--out", eval_out, "output csv path");
    eval->add_flag("--snapshot-roundtrip", snapshot_roundtrip,
                   "serialize/restore recurrent state mid-sequence and insist on identical losses");

    int64_t dim_d = 0, dim_p = 0, dim_heads = 1, dim_layers = 1, dim_bytes = 8;
    CLI::App* dim = app.add_subcommand("dim", "embedding dimension and state footprint");
    dim->add_option("--d", dim_d, "head dimension")->required();
    dim->add_option("--p", dim_p, "symmetric power")->required();
    dim->add_option("--heads", dim_heads, "attention heads");
    dim->add_option("--layers", dim_layers, "layers");
    dim->add_option("--bytes", dim_bytes, "bytes per element (2, 4, or 8)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return run_verify(config_path, fault_name);
        if (train->parsed()) return run_train(train_config, train_data, train_task, train_resume);
        if (eval->parsed()) return run_eval(eval_checkpoint, eval_lengths, eval_out,
                                            snapshot_roundtrip);
        if (dim->parsed()) {
            if (dim_bytes != 2 && dim_bytes != 4 && dim_bytes != 8) {
                throw std::invalid_argument("dim: --bytes must be 2, 4, or 8");
            }
            return run_dim(dim_d, dim_p, dim_heads, dim_layers, dim_bytes);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
