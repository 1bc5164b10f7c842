#include "cspw/data.hpp"

#include <fstream>
#include <stdexcept>

namespace cspw {

std::vector<int32_t> tokenize_bytes(const std::string& bytes) {
    std::vector<int32_t> out;
    out.reserve(bytes.size());
    for (unsigned char c : bytes) out.push_back(static_cast<int32_t>(c));
    return out;
}

std::string detokenize(const std::vector<int32_t>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int32_t t : tokens) {
        if (t < 0 || t > 255) throw std::invalid_argument("detokenize: token out of byte range");
        out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

std::vector<std::vector<int32_t>> ingest_text(const std::string& path, int64_t context,
                                              int64_t doc_delimiter) {
    if (context < 1) throw std::invalid_argument("ingest_text: context must be >= 1");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ingest_text: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) throw std::runtime_error("ingest_text: empty file " + path);

    std::vector<std::vector<int32_t>> documents;
    std::vector<int32_t> current;
    for (unsigned char c : bytes) {
        if (doc_delimiter >= 0 && static_cast<int64_t>(c) == doc_delimiter) {
            if (!current.empty()) documents.push_back(std::move(current));
            current.clear();
            continue;
        }
        current.push_back(static_cast<int32_t>(c));
    }
    if (!current.empty()) documents.push_back(std::move(current));

    std::vector<std::vector<int32_t>> sequences;
    for (const std::vector<int32_t>& doc : documents) {
        for (size_t start = 0; start < doc.size(); start += static_cast<size_t>(context)) {
            size_t end = std::min(doc.size(), start + static_cast<size_t>(context));
            sequences.emplace_back(doc.begin() + static_cast<int64_t>(start),
                                   doc.begin() + static_cast<int64_t>(end));
        }
    }
    return sequences;
}

RecallInstance gen_recall_task(RngStream& rng, int64_t context, int64_t pairs,
                               int64_t query_pos) {
    if (pairs < 1) throw std::invalid_argument("gen_recall_task: need at least one pair");
    if (2 * pairs + 2 > context) {
        throw std::invalid_argument("gen_recall_task: context too small for the pair count");
    }
    if (query_pos < 0) query_pos = context - 2;
    if (query_pos < 2 * pairs || query_pos > context - 2) {
        throw std::invalid_argument("gen_recall_task: query position out of range");
    }

    // distinct keys from [1,256) so the filler byte 0 never collides
    std::vector<int32_t> keys;
    while (static_cast<int64_t>(keys.size()) < pairs) {
        int32_t k = static_cast<int32_t>(1 + rng.index(255));
        bool dup = false;
        for (int32_t seen : keys) dup = dup || (seen == k);
        if (!dup) keys.push_back(k);
    }
    std::vector<int32_t> values;
    for (int64_t i = 0; i < pairs; ++i) {
        values.push_back(static_cast<int32_t>(rng.index(256)));
    }
    int64_t which = static_cast<int64_t>(rng.index(static_cast<uint64_t>(pairs)));

    RecallInstance inst;
    inst.tokens.assign(static_cast<size_t>(context), 0);
    for (int64_t i = 0; i < pairs; ++i) {
        inst.tokens[static_cast<size_t>(2 * i)] = keys[static_cast<size_t>(i)];
        inst.tokens[static_cast<size_t>(2 * i + 1)] = values[static_cast<size_t>(i)];
    }
    inst.tokens[static_cast<size_t>(query_pos)] = keys[static_cast<size_t>(which)];
    inst.tokens[static_cast<size_t>(query_pos) + 1] = values[static_cast<size_t>(which)];

    inst.targets.assign(static_cast<size_t>(context), 0);
    for (int64_t i = 0; i + 1 < context; ++i) {
        inst.targets[static_cast<size_t>(i)] = inst.tokens[static_cast<size_t>(i) + 1];
    }
    inst.answer_weights.assign(static_cast<size_t>(context), 0.0);
    inst.answer_weights[static_cast<size_t>(query_pos)] = 1.0;
    return inst;
}

}  // namespace cspw
