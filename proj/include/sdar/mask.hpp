// The four attention regimes. blockwise_training covers the concatenated
// [perturbed | clean] input used for conversion training: perturbed blocks
// attend to themselves and to strictly preceding clean blocks; clean blocks
// use block-wise causal attention (bidirectional within a block, causal
// across blocks); the clean half never sees the perturbed half.
#pragma once

#include <cstdint>
#include <optional>

#include "sdar/corruption.hpp"
#include "sdar/tensor.hpp"

namespace sdar {

enum class MaskKind {
    causal,
    bidirectional,
    blockwise_training,
    blockwise_decode,
};

struct AttentionMaskSpec {
    MaskKind kind = MaskKind::causal;
    std::optional<BlockLayout> layout;  // required for blockwise kinds
    int64_t prefix_len = 0;             // blockwise_decode only

    static AttentionMaskSpec make_causal() { return {MaskKind::causal, std::nullopt, 0}; }
    static AttentionMaskSpec make_bidirectional() { return {MaskKind::bidirectional, std::nullopt, 0}; }
    static AttentionMaskSpec make_blockwise_training(BlockLayout l) {
        return {MaskKind::blockwise_training, l, 0};
    }
    static AttentionMaskSpec make_blockwise_decode(BlockLayout l, int64_t prefix) {
        return {MaskKind::blockwise_decode, l, prefix};
    }
};

BoolMatrix build_mask(const AttentionMaskSpec & spec, int64_t query_len, int64_t key_len);

// Block-wise causal allow matrix over a clean prefix (bidirectional within a
// block, causal across blocks). This is the clean-half quadrant of the
// blockwise_training mask; the decoder's prefill pass uses it.
BoolMatrix block_causal_mask(int64_t len, int64_t block_size);

}  // namespace sdar
