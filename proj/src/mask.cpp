#include "sdar/mask.hpp"

namespace sdar {

BoolMatrix block_causal_mask(int64_t len, int64_t block_size) {
    BoolMatrix m(len, len);
    for (int64_t q = 0; q < len; ++q) {
        const int64_t qb = q / block_size;
        for (int64_t k = 0; k < len; ++k) {
            if (k / block_size <= qb) m.at(q, k) = 1;
        }
    }
    return m;
}

BoolMatrix build_mask(const AttentionMaskSpec & spec, int64_t query_len, int64_t key_len) {
    switch (spec.kind) {
        case MaskKind::causal: {
            if (query_len != key_len) throw ConfigError("causal mask: query/key lengths must match");
            BoolMatrix m(query_len, key_len);
            for (int64_t q = 0; q < query_len; ++q) {
                for (int64_t k = 0; k <= q; ++k) m.at(q, k) = 1;
            }
            return m;
        }
        case MaskKind::bidirectional: {
            return BoolMatrix(query_len, key_len, 1);
        }
        case MaskKind::blockwise_training: {
            if (!spec.layout) throw ConfigError("blockwise_training mask: layout required");
            const int64_t L = spec.layout->ctx_len();
            const int64_t B = spec.layout->block_size;
            if (query_len != 2 * L || key_len != 2 * L) {
                throw ConfigError("blockwise_training mask: lengths must equal 2*L_ctx");
            }
            // Layout: [perturbed 0..L-1 | clean L..2L-1].
            BoolMatrix m(2 * L, 2 * L);
            for (int64_t q = 0; q < L; ++q) {
                const int64_t qb = q / B;
                for (int64_t k = 0; k < L; ++k) {
                    if (k / B == qb) m.at(q, k) = 1;  // own perturbed block
                }
                for (int64_t k = 0; k < L; ++k) {
                    if (k / B < qb) m.at(q, L + k) = 1;  // strictly preceding clean blocks
                }
            }
            for (int64_t q = 0; q < L; ++q) {
                const int64_t qb = q / B;
                for (int64_t k = 0; k < L; ++k) {
                    if (k / B <= qb) m.at(L + q, L + k) = 1;  // block-wise causal clean half
                }
            }
            return m;
        }
        case MaskKind::blockwise_decode: {
            if (!spec.layout) throw ConfigError("blockwise_decode mask: layout required");
            const int64_t B = spec.layout->block_size;
            if (query_len != B || key_len != spec.prefix_len + B) {
                throw ConfigError("blockwise_decode mask: expected B queries over prefix+B keys");
            }
            return BoolMatrix(query_len, key_len, 1);
        }
    }
    throw ConfigError("build_mask: unknown mask kind");
}

}  // namespace sdar
