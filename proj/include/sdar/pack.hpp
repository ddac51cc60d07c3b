// Corpus packing: documents joined with EOS separators and chunked into
// fixed-length rows whose length is a multiple of the block size.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdar/vocab.hpp"

namespace sdar {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PackedBatch {
    int64_t rows = 0;
    int64_t ctx_len = 0;  // L_ctx, divisible by block_size
    int64_t block_size = 0;
    std::vector<int32_t> ids;       // rows × ctx_len, row-major
    std::vector<uint8_t> loss_mask; // rows × ctx_len; 1 = contributes to loss

    int32_t id_at(int64_t r, int64_t c) const { return ids[size_t(r * ctx_len + c)]; }
    bool loss_at(int64_t r, int64_t c) const { return loss_mask[size_t(r * ctx_len + c)] != 0; }
    PackedBatch row(int64_t r) const;
    void append_rows(const PackedBatch & other);
};

// Concatenates documents with EOS separators and chunks to rows of exactly
// ctx_len tokens. The final partial chunk is padded with PAD; PAD positions
// are excluded from the loss.
PackedBatch pack(const std::vector<TokenSequence> & corpus, int64_t ctx_len, int64_t block_size);

// One supervised row: [prompt | PAD to block edge | response EOS | PAD fill].
// The prompt region is never corrupted and never contributes to loss; the
// response region starts on a block edge and runs to a block edge, with the
// trailing intra-block filler trained as PAD. Returns the row and the index
// where the corruption-eligible region starts.
struct SftRow {
    PackedBatch row;
    int64_t response_start = 0;  // block-aligned corruption boundary
};
SftRow make_sft_example(const TokenSequence & prompt, const TokenSequence & response, int64_t ctx_len,
                        int64_t block_size);

// Binary packed-corpus file (little-endian u32 ids, row-major) plus a JSON
// sidecar { "V", "L_ctx", "B", "rows" } written next to it as <path>.json.
void save_packed(const PackedBatch & batch, const std::string & path);
PackedBatch load_packed(const std::string & path);

}  // namespace sdar
