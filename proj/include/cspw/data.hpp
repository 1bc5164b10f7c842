// Byte-level data plumbing: text ingestion with document splitting, and the
// synthetic key-value recall task.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspw/matrix.hpp"

namespace cspw {

// Reads a file as raw byte tokens (vocab 256), splits documents on the
// delimiter byte (delimiter = -1 disables splitting; delimiter bytes are
// dropped), and packs each document into chunks of at most `context` tokens.
// Sequences never span documents, which is what resets attention at
// boundaries. A file of n bytes with no delimiter yields ceil(n/context)
// sequences.
std::vector<std::vector<int32_t>> ingest_text(const std::string& path, int64_t context,
                                              int64_t doc_delimiter);

std::vector<int32_t> tokenize_bytes(const std::string& bytes);
std::string detokenize(const std::vector<int32_t>& tokens);

// One key-value recall instance:
//   k1 v1 k2 v2 ... kp vp  F F ... F  kq vq
// Keys are distinct bytes from [1,256); values are i.i.d. uniform over the
// whole vocabulary; filler is byte 0. The repeated key sits at query_pos and
// the matching value follows it. answer_weights marks the position whose
// next-token prediction is the answer; it is the task's scored position.
struct RecallInstance {
    std::vector<int32_t> tokens;
    std::vector<int32_t> targets;         // next-token targets, last entry unused
    std::vector<double> answer_weights;   // 1.0 at the answer-prediction position
};

RecallInstance gen_recall_task(RngStream& rng, int64_t context, int64_t pairs,
                               int64_t query_pos = -1);

}  // namespace cspw
