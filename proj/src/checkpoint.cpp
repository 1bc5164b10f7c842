#include "cspw/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cspw/binio.hpp"

namespace cspw {

namespace {

const char kMagic[8] = {'C', 'S', 'P', 'W', 'C', 'K', 'P', 'T'};

struct TensorRef {
    std::string name;
    Matrix* tensor;
};

std::vector<TensorRef> all_tensors(ModelParams& params, AdamState& adam) {
    std::vector<TensorRef> out;
    for (NamedTensor& nt : named_tensors(params)) out.push_back({nt.name, nt.tensor});
    for (NamedTensor& nt : named_tensors(adam.m)) out.push_back({"adam_m." + nt.name, nt.tensor});
    for (NamedTensor& nt : named_tensors(adam.v)) out.push_back({"adam_v." + nt.name, nt.tensor});
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& run_config, ModelParams& params,
                     AdamState& adam) {
    std::string config_echo = config_to_text(run_config);
    std::vector<TensorRef> tensors = all_tensors(params, adam);

    std::vector<uint8_t> out;
    binio::put_bytes(out, kMagic, 8);
    binio::put_le<uint32_t>(out, 1);
    binio::put_le<uint64_t>(out, static_cast<uint64_t>(adam.step));
    binio::put_le<uint32_t>(out, static_cast<uint32_t>(config_echo.size()));
    binio::put_bytes(out, config_echo.data(), config_echo.size());

    binio::put_le<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
    uint64_t offset = 0;
    for (const TensorRef& ref : tensors) {
        binio::put_le<uint16_t>(out, static_cast<uint16_t>(ref.name.size()));
        binio::put_bytes(out, ref.name.data(), ref.name.size());
        binio::put_le<uint64_t>(out, static_cast<uint64_t>(ref.tensor->rows));
        binio::put_le<uint64_t>(out, static_cast<uint64_t>(ref.tensor->cols));
        binio::put_le<uint64_t>(out, offset);
        offset += ref.tensor->size() * 4;
    }
    binio::put_le<uint64_t>(out, offset);
    for (const TensorRef& ref : tensors) {
        for (double v : ref.tensor->data) binio::put_f32(out, static_cast<float>(v));
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("save_checkpoint: cannot open " + path);
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!file) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                               std::istreambuf_iterator<char>());
    binio::Reader r{bytes.data(), bytes.size()};

    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    uint32_t version = r.get_le<uint32_t>();
    if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    int64_t step = static_cast<int64_t>(r.get_le<uint64_t>());
    uint32_t config_len = r.get_le<uint32_t>();
    std::string config_echo(config_len, '\0');
    r.get_bytes(config_echo.data(), config_len);

    Checkpoint ckpt;
    ckpt.run_config = parse_config_text(config_echo);
    ModelConfig model_config = to_model_config(ckpt.run_config);
    ckpt.params = init_params(model_config, 0);
    ckpt.adam.m = zeros_like(ckpt.params);
    ckpt.adam.v = zeros_like(ckpt.params);
    ckpt.adam.step = step;

    std::vector<TensorRef> tensors = all_tensors(ckpt.params, ckpt.adam);
    uint32_t n_tensors = r.get_le<uint32_t>();
    if (n_tensors != tensors.size()) {
        throw std::runtime_error("load_checkpoint: tensor count mismatch");
    }
    struct Entry {
        std::string name;
        uint64_t rows, cols, offset;
    };
    std::vector<Entry> manifest(n_tensors);
    for (Entry& e : manifest) {
        uint16_t name_len = r.get_le<uint16_t>();
        e.name.resize(name_len);
        r.get_bytes(e.name.data(), name_len);
        e.rows = r.get_le<uint64_t>();
        e.cols = r.get_le<uint64_t>();
        e.offset = r.get_le<uint64_t>();
    }
    uint64_t payload_len = r.get_le<uint64_t>();
    r.need(payload_len);
    const uint8_t* payload = bytes.data() + r.pos;

    for (size_t i = 0; i < tensors.size(); ++i) {
        const Entry& e = manifest[i];
        if (e.name != tensors[i].name) {
            throw std::runtime_error("load_checkpoint: unexpected tensor '" + e.name + "'");
        }
        Matrix& m = *tensors[i].tensor;
        if (static_cast<int64_t>(e.rows) != m.rows || static_cast<int64_t>(e.cols) != m.cols) {
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + e.name + "'");
        }
        if (e.offset + m.size() * 4 > payload_len) {
            throw std::runtime_error("load_checkpoint: payload overrun for '" + e.name + "'");
        }
        binio::Reader tr{payload + e.offset, m.size() * 4};
        for (double& v : m.data) v = static_cast<double>(tr.get_f32());
    }
    return ckpt;
}

}  // namespace cspw
