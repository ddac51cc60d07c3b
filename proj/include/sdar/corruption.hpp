// Absorbing-state forward process: each eligible position is independently
// replaced by MASK with probability 1 - alpha(t) = t under the linear
// schedule, applied per (row, block).
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sdar/pack.hpp"

namespace sdar {

struct NoiseSchedule {
    // Linear schedule alpha_t = 1 - t on (0, 1].
    static double alpha(double t) { return 1.0 - t; }
};

struct BlockLayout {
    int64_t block_size = 1;   // B
    int64_t num_blocks = 1;   // K

    BlockLayout() = default;
    BlockLayout(int64_t b, int64_t k) : block_size(b), num_blocks(k) {
        if (b < 1 || k < 1) throw ConfigError("block layout: B and K must be >= 1");
    }
    static BlockLayout for_ctx(int64_t ctx_len, int64_t block_size) {
        if (block_size < 1 || ctx_len % block_size != 0) {
            throw ConfigError("context length must be divisible by block size");
        }
        return BlockLayout(block_size, ctx_len / block_size);
    }
    int64_t ctx_len() const { return block_size * num_blocks; }
    int64_t block_of(int64_t pos) const { return pos / block_size; }
};

struct CorruptedBatch {
    int64_t rows = 0;
    BlockLayout layout;
    std::vector<int32_t> x0;             // clean ids, rows × L
    std::vector<int32_t> xt;             // corrupted ids, rows × L
    std::vector<uint8_t> mask_indicator; // rows × L; 1 where xt == MASK
    std::vector<uint8_t> eligible;       // rows × L; block-aligned corruption region
    std::vector<double> t_per_block;     // rows × K; 0 marks an ineligible block
    std::vector<uint8_t> loss_mask;      // rows × L, copied from the input batch

    double t_of(int64_t r, int64_t b) const { return t_per_block[size_t(r * layout.num_blocks + b)]; }
};

inline constexpr double kDefaultTMin = 1e-3;

// Corrupts one block at diffusion time t; deterministic for a given seed.
// eligible, when provided, freezes the ineligible positions.
struct BlockCorruption {
    std::vector<int32_t> xt;
    std::vector<uint8_t> mask_indicator;
};
BlockCorruption corrupt_block(std::span<const int32_t> x0_block, double t, uint64_t seed,
                              std::span<const uint8_t> eligible = {});

// Independent t ~ U(t_min, 1] per (row, block); corruption restricted to
// blocks fully covered by the loss mask. A row whose draw produced no masked
// position anywhere (despite having eligible blocks) is redrawn once.
CorruptedBatch corrupt_batch(const PackedBatch & batch, const BlockLayout & layout, uint64_t seed,
                             double t_min = kDefaultTMin);

}  // namespace sdar
