#include "cspw/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cspw {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& v, const std::string& key) {
    size_t pos = 0;
    int64_t out;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    return out;
}

double parse_double(const std::string& v, const std::string& key) {
    size_t pos = 0;
    double out;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad number for " + key + ": " + v);
    return out;
}

std::vector<int64_t> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_int(item, key));
    }
    return out;
}

std::string join_ints(const std::vector<int64_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig config;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));

        if (key == "variant") config.variant = value;
        else if (key == "d_model") config.d_model = parse_int(value, key);
        else if (key == "n_layers") config.n_layers = parse_int(value, key);
        else if (key == "n_heads") config.n_heads = parse_int(value, key);
        else if (key == "head_dim") config.head_dim = parse_int(value, key);
        else if (key == "power") config.power = parse_int(value, key);
        else if (key == "context") config.context = parse_int(value, key);
        else if (key == "max_doc") config.max_doc = parse_int(value, key);
        else if (key == "vocab") config.vocab = parse_int(value, key);
        else if (key == "gamma_bias") config.gamma_bias = parse_double(value, key);
        else if (key == "seed") config.seed = static_cast<uint64_t>(parse_int(value, key));
        else if (key == "lr") config.lr = parse_double(value, key);
        else if (key == "steps") config.steps = parse_int(value, key);
        else if (key == "batch") config.batch = parse_int(value, key);
        else if (key == "log_every") config.log_every = parse_int(value, key);
        else if (key == "checkpoint_every") config.checkpoint_every = parse_int(value, key);
        else if (key == "data_path") config.data_path = value;
        else if (key == "task") config.task = value;
        else if (key == "recall_pairs") config.recall_pairs = parse_int(value, key);
        else if (key == "query_position") config.query_position = parse_int(value, key);
        else if (key == "answer_weight") config.answer_weight = parse_double(value, key);
        else if (key == "doc_delimiter") config.doc_delimiter = parse_int(value, key);
        else if (key == "eval_lengths") config.eval_lengths = parse_int_list(value, key);
        else if (key == "eval_sequences") config.eval_sequences = parse_int(value, key);
        else if (key == "out_dir") config.out_dir = value;
        else if (key == "tol_kernel") config.tol_kernel = parse_double(value, key);
        else if (key == "tol_equivalence") config.tol_equivalence = parse_double(value, key);
        else if (key == "tol_conformal") config.tol_conformal = parse_double(value, key);
        else if (key == "tol_rotation_power") config.tol_rotation_power = parse_double(value, key);
        else if (key == "tol_alibi") config.tol_alibi = parse_double(value, key);
        else if (key == "tol_reduction") config.tol_reduction = parse_double(value, key);
        else if (key == "tol_gradient") config.tol_gradient = parse_double(value, key);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    validate_config(config);
    return config;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_text(const RunConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "variant = " << c.variant << "\n";
    out << "d_model = " << c.d_model << "\n";
    out << "n_layers = " << c.n_layers << "\n";
    out << "n_heads = " << c.n_heads << "\n";
    out << "head_dim = " << c.head_dim << "\n";
    out << "power = " << c.power << "\n";
    out << "context = " << c.context << "\n";
    out << "max_doc = " << c.max_doc << "\n";
    out << "vocab = " << c.vocab << "\n";
    out << "gamma_bias = " << c.gamma_bias << "\n";
    out << "seed = " << c.seed << "\n";
    out << "lr = " << c.lr << "\n";
    out << "steps = " << c.steps << "\n";
    out << "batch = " << c.batch << "\n";
    out << "log_every = " << c.log_every << "\n";
    out << "checkpoint_every = " << c.checkpoint_every << "\n";
    if (!c.data_path.empty()) out << "data_path = " << c.data_path << "\n";
    if (!c.task.empty()) out << "task = " << c.task << "\n";
    out << "recall_pairs = " << c.recall_pairs << "\n";
    out << "query_position = " << c.query_position << "\n";
    out << "answer_weight = " << c.answer_weight << "\n";
    out << "doc_delimiter = " << c.doc_delimiter << "\n";
    out << "eval_lengths = " << join_ints(c.eval_lengths) << "\n";
    out << "eval_sequences = " << c.eval_sequences << "\n";
    out << "out_dir = " << c.out_dir << "\n";
    out << "tol_kernel = " << c.tol_kernel << "\n";
    out << "tol_equivalence = " << c.tol_equivalence << "\n";
    out << "tol_conformal = " << c.tol_conformal << "\n";
    out << "tol_rotation_power = " << c.tol_rotation_power << "\n";
    out << "tol_alibi = " << c.tol_alibi << "\n";
    out << "tol_reduction = " << c.tol_reduction << "\n";
    out << "tol_gradient = " << c.tol_gradient << "\n";
    return out.str();
}

void validate_config(const RunConfig& c) {
    variant_from_name(c.variant);  // throws on unknown names
    if (c.power < 2 || c.power % 2 != 0) {
        throw std::invalid_argument("config: power must be even and >= 2");
    }
    if (c.head_dim < 2 || c.head_dim % 2 != 0) {
        throw std::invalid_argument("config: head_dim must be even and >= 2");
    }
    if (c.context < 1) throw std::invalid_argument("config: context must be >= 1");
    if (c.vocab < 1 || c.vocab > 256) {
        throw std::invalid_argument("config: vocab must be in [1, 256] (byte-level)");
    }
    if (c.d_model < 1 || c.n_layers < 1 || c.n_heads < 1) {
        throw std::invalid_argument("config: model dimensions must be positive");
    }
    if (c.max_doc < 1) throw std::invalid_argument("config: max_doc must be >= 1");
    if (c.batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (c.steps < 0) throw std::invalid_argument("config: steps must be >= 0");
    if (c.log_every < 1) throw std::invalid_argument("config: log_every must be >= 1");
    for (size_t i = 1; i < c.eval_lengths.size(); ++i) {
        if (c.eval_lengths[i] <= c.eval_lengths[i - 1]) {
            throw std::invalid_argument("config: eval_lengths must be sorted ascending");
        }
    }
    if (!c.eval_lengths.empty() && c.eval_lengths.front() < 2) {
        throw std::invalid_argument("config: eval lengths need at least 2 tokens");
    }
    if (c.doc_delimiter < -1 || c.doc_delimiter > 255) {
        throw std::invalid_argument("config: doc_delimiter must be -1 or a byte value");
    }
    if (!(c.answer_weight >= 0.0)) {
        throw std::invalid_argument("config: answer_weight must be >= 0");
    }
    if (!c.task.empty() && c.task != "recall") {
        throw std::invalid_argument("config: unknown task '" + c.task + "'");
    }
}

ModelConfig to_model_config(const RunConfig& c) {
    ModelConfig m;
    m.variant = variant_from_name(c.variant);
    m.vocab = c.vocab;
    m.d_model = c.d_model;
    m.n_layers = c.n_layers;
    m.n_heads = c.n_heads;
    m.head_dim = c.head_dim;
    m.power = c.power;
    m.context = c.context;
    m.max_doc = c.max_doc;
    m.gamma_bias = c.gamma_bias;
    return m;
}

void apply_env_seed(RunConfig& config) {
    const char* env = std::getenv("CSPW_SEED");
    if (env == nullptr || *env == '\0') return;
    config.seed = static_cast<uint64_t>(parse_int(env, "CSPW_SEED"));
}

}  // namespace cspw
