#include "sdar/corruption.hpp"

#include <stdexcept>

#include "sdar/rng.hpp"

namespace sdar {

BlockCorruption corrupt_block(std::span<const int32_t> x0_block, double t, uint64_t seed,
                              std::span<const uint8_t> eligible) {
    if (!(t > 0.0) || t > 1.0) {
        throw std::invalid_argument("corrupt_block: t must be in (0, 1]");
    }
    if (!eligible.empty() && eligible.size() != x0_block.size()) {
        throw std::invalid_argument("corrupt_block: eligibility span must match block");
    }
    BlockCorruption out;
    out.xt.assign(x0_block.begin(), x0_block.end());
    out.mask_indicator.assign(x0_block.size(), 0);
    Rng rng(seed);
    for (size_t i = 0; i < x0_block.size(); ++i) {
        const double u = rand_unit(rng);  // draw for every slot to keep streams aligned
        if (!eligible.empty() && !eligible[i]) continue;
        if (u < t) {
            out.xt[i] = Vocabulary::MASK;
            out.mask_indicator[i] = 1;
        }
    }
    return out;
}

namespace {

// t ~ U(t_min, 1]; the open-at-zero side keeps the 1/t loss weight bounded.
double draw_t(Rng & rng, double t_min) {
    return 1.0 - rand_unit(rng) * (1.0 - t_min);
}

// A block is corruption-eligible only when the loss mask covers all of it,
// which keeps the eligible region block-aligned.
bool block_eligible(const PackedBatch & batch, int64_t row, int64_t block, const BlockLayout & layout) {
    const int64_t b0 = block * layout.block_size;
    for (int64_t i = 0; i < layout.block_size; ++i) {
        if (!batch.loss_at(row, b0 + i)) return false;
    }
    return true;
}

void corrupt_row(const PackedBatch & batch, const BlockLayout & layout, uint64_t seed, double t_min, int64_t r,
                 uint64_t salt, CorruptedBatch & out) {
    const int64_t L = layout.ctx_len();
    const int64_t B = layout.block_size;
    for (int64_t b = 0; b < layout.num_blocks; ++b) {
        const int64_t base = r * L + b * B;
        if (!block_eligible(batch, r, b, layout)) {
            out.t_per_block[size_t(r * layout.num_blocks + b)] = 0.0;
            for (int64_t i = 0; i < B; ++i) {
                out.xt[size_t(base + i)] = out.x0[size_t(base + i)];
                out.mask_indicator[size_t(base + i)] = 0;
            }
            continue;
        }
        const uint64_t block_seed = derive_seed(seed, uint64_t(r), uint64_t(b), salt);
        Rng trng(mix64(block_seed));
        const double t = draw_t(trng, t_min);
        out.t_per_block[size_t(r * layout.num_blocks + b)] = t;
        for (int64_t i = 0; i < B; ++i) out.eligible[size_t(base + i)] = 1;
        auto corr = corrupt_block(std::span<const int32_t>(out.x0.data() + base, size_t(B)), t, block_seed);
        for (int64_t i = 0; i < B; ++i) {
            out.xt[size_t(base + i)] = corr.xt[size_t(i)];
            out.mask_indicator[size_t(base + i)] = corr.mask_indicator[size_t(i)];
        }
    }
}

}  // namespace

CorruptedBatch corrupt_batch(const PackedBatch & batch, const BlockLayout & layout, uint64_t seed, double t_min) {
    if (batch.ctx_len != layout.ctx_len()) {
        throw ConfigError("corrupt_batch: batch is not aligned with the block layout");
    }
    CorruptedBatch out;
    out.rows = batch.rows;
    out.layout = layout;
    out.x0 = batch.ids;
    out.xt = batch.ids;
    out.mask_indicator.assign(batch.ids.size(), 0);
    out.eligible.assign(batch.ids.size(), 0);
    out.t_per_block.assign(size_t(batch.rows * layout.num_blocks), 0.0);
    out.loss_mask = batch.loss_mask;

    const int64_t L = layout.ctx_len();
    for (int64_t r = 0; r < batch.rows; ++r) {
        corrupt_row(batch, layout, seed, t_min, r, 0, out);
        bool any_eligible = false;
        bool any_masked = false;
        for (int64_t i = 0; i < L; ++i) {
            any_eligible = any_eligible || out.eligible[size_t(r * L + i)];
            any_masked = any_masked || out.mask_indicator[size_t(r * L + i)];
        }
        if (any_eligible && !any_masked) {
            // Useless row under the masked objective; one salted redraw.
            std::fill(out.eligible.begin() + r * L, out.eligible.begin() + (r + 1) * L, uint8_t(0));
            corrupt_row(batch, layout, seed, t_min, r, 1, out);
        }
    }
    return out;
}

}  // namespace sdar
