// Hierarchical generation: block-level autoregression with KV-cache reuse and
// intra-block iterative denoising under static or dynamic low-confidence
// remasking. Committed tokens are never re-masked; remasking only chooses
// which masked positions to decode next.
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sdar/mask.hpp"
#include "sdar/model.hpp"
#include "sdar/rng.hpp"
#include "sdar/vocab.hpp"

namespace sdar {

enum class DecodeMode { static_steps, dynamic_threshold };
enum class SamplerKind { greedy, sample };

struct DecodePolicy {
    DecodeMode mode = DecodeMode::dynamic_threshold;
    int64_t block_size = 8;   // B
    int64_t steps = 8;        // T (static mode)
    double tau = 0.9;         // confidence threshold (dynamic mode)
    int64_t min_per_step = 1; // dynamic fallback commit count
    SamplerKind sampler = SamplerKind::greedy;
    double temperature = 1.0;
    double top_p = 1.0;
    int64_t top_k = 0;
    int64_t max_blocks = std::numeric_limits<int64_t>::max();
    uint64_t seed = 0;
    bool stop_on_eos = true;
    bool pad_prompt_to_block = false;  // match SFT geometry (prompt padded to a block edge)
    bool fused_cache_fill = false;     // fold a block's cache fill into the next block's first denoise pass

    void validate() const {
        if (block_size < 1) throw ConfigError("decode.block must be >= 1");
        if (mode == DecodeMode::static_steps && (steps < 1 || steps > block_size)) {
            throw ConfigError("decode.steps must satisfy 1 <= T <= B");
        }
        if (mode == DecodeMode::dynamic_threshold && min_per_step < 1) {
            throw ConfigError("decode.min_per_step must be >= 1");
        }
        if (temperature <= 0) throw ConfigError("decode.temperature must be positive");
    }
};

enum class PassKind { prefill, denoise, cache_fill };

inline const char * pass_kind_name(PassKind k) {
    switch (k) {
        case PassKind::prefill: return "prefill";
        case PassKind::denoise: return "denoise";
        case PassKind::cache_fill: return "cache_fill";
    }
    return "?";
}

struct TracePass {
    PassKind kind;
    int64_t block;                    // block index on the absolute grid
    std::vector<int64_t> positions;   // absolute positions committed this pass
    std::vector<double> confidences;  // parallel to positions
    std::vector<int32_t> tokens;      // parallel to positions
};

struct DecodeTrace {
    std::vector<TracePass> passes;
    int64_t generated_tokens = 0;
    int64_t denoise_passes = 0;
    int64_t cache_fill_passes = 0;
    int64_t prefill_passes = 0;
    int64_t blocks_decoded = 0;

    // Mean denoise passes per block; the prefill pass never counts.
    double gamma() const { return blocks_decoded ? double(denoise_passes) / double(blocks_decoded) : 0.0; }
};

// ---------------------------------------------------------------------------
// Position selection
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<int64_t> top_by_confidence(std::span<const double> conf, int64_t count) {
    std::vector<int64_t> idx(conf.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (conf[size_t(a)] != conf[size_t(b)]) return conf[size_t(a)] > conf[size_t(b)];
        return a < b;  // ties broken by lowest position index
    });
    idx.resize(size_t(std::min<int64_t>(count, int64_t(idx.size()))));
    std::sort(idx.begin(), idx.end());
    return idx;
}
}  // namespace detail

// Static remasking: exactly min(ceil(B/T), remaining) highest-confidence
// positions. already_decoded_count is carried for partially pre-filled blocks
// but does not change the per-step count.
inline std::vector<int64_t> select_static(std::span<const double> confidences, int64_t block_size, int64_t steps,
                                          [[maybe_unused]] int64_t already_decoded_count = 0) {
    if (confidences.empty()) throw std::invalid_argument("select_static: no masked positions remain");
    const int64_t per_step = (block_size + steps - 1) / steps;
    return detail::top_by_confidence(confidences, per_step);
}

// Dynamic remasking: everything above tau; top-min_per_step as fallback.
inline std::vector<int64_t> select_dynamic(std::span<const double> confidences, double tau, int64_t min_per_step) {
    if (confidences.empty()) throw std::invalid_argument("select_dynamic: no masked positions remain");
    std::vector<int64_t> above;
    for (int64_t i = 0; i < int64_t(confidences.size()); ++i) {
        if (confidences[size_t(i)] > tau) above.push_back(i);
    }
    if (int64_t(above.size()) >= min_per_step) return above;
    return detail::top_by_confidence(confidences, min_per_step);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

// Confidence of a chosen token: greedy takes the highest probability; the
// stochastic sampler takes the post-temperature probability of its sample.
inline double confidence(std::span<const double> probs, int32_t chosen, bool greedy) {
    if (greedy) return *std::max_element(probs.begin(), probs.end());
    return probs[size_t(chosen)];
}

namespace detail {

template <typename T>
std::vector<double> softmax_row(std::span<const T> logits, double temperature) {
    std::vector<double> p(logits.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (const T & v : logits) mx = std::max(mx, double(v));
    double den = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((double(logits[i]) - mx) / temperature);
        den += p[i];
    }
    for (double & v : p) v /= den;
    return p;
}

struct Sampled {
    int32_t token;
    double conf;
};

template <typename T>
Sampled sample_token(std::span<const T> logits, const DecodePolicy & policy, Rng & rng) {
    if (policy.sampler == SamplerKind::greedy) {
        int32_t best = 0;
        for (size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[size_t(best)]) best = int32_t(j);
        }
        std::vector<double> p = softmax_row(logits, 1.0);
        return {best, confidence(p, best, true)};
    }
    std::vector<double> p = softmax_row(logits, policy.temperature);
    // top-k / top-p filter over a sorted copy, then renormalized draw.
    std::vector<int32_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int32_t a, int32_t b) { return p[size_t(a)] > p[size_t(b)]; });
    size_t keep = idx.size();
    if (policy.top_k > 0) keep = std::min<size_t>(keep, size_t(policy.top_k));
    if (policy.top_p < 1.0) {
        double cum = 0.0;
        size_t k = 0;
        while (k < keep) {
            cum += p[size_t(idx[k])];
            ++k;
            if (cum >= policy.top_p) break;
        }
        keep = std::max<size_t>(k, 1);
    }
    double total = 0.0;
    for (size_t k = 0; k < keep; ++k) total += p[size_t(idx[k])];
    double u = rand_unit(rng) * total;
    int32_t chosen = idx[keep - 1];
    for (size_t k = 0; k < keep; ++k) {
        u -= p[size_t(idx[k])];
        if (u <= 0.0) {
            chosen = idx[k];
            break;
        }
    }
    return {chosen, confidence(p, chosen, false)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Block decoding and generation
// ---------------------------------------------------------------------------

// Decodes one block in place. `block_ids` may arrive partially committed (a
// prompt tail); MASK marks the positions to generate. `pending_prev` carries a
// finalized-but-uncached previous block in fused mode; its cache fill rides on
// this block's first denoise pass.
template <typename T>
void decode_block(const ModelParams<T> & params, KVCache<T> & cache, const DecodePolicy & policy,
                  std::vector<int32_t> & block_ids, int64_t block_index, Rng & rng, DecodeTrace & trace,
                  std::vector<int32_t> * pending_prev = nullptr) {
    const int64_t B = policy.block_size;
    const BlockLayout layout(B, std::max<int64_t>(1, params.config.max_ctx / B));
    const int64_t block_start = block_index * B;
    bool first_pass = true;

    auto masked_positions = [&]() {
        std::vector<int64_t> m;
        for (int64_t i = 0; i < B; ++i) {
            if (block_ids[size_t(i)] == Vocabulary::MASK) m.push_back(i);
        }
        return m;
    };

    const int64_t already_at_entry = B - int64_t(masked_positions().size());

    while (true) {
        std::vector<int64_t> masked = masked_positions();
        if (masked.empty()) break;

        Tensor<T> logits;
        if (first_pass && pending_prev && !pending_prev->empty()) {
            // Fused pass over [previous block | current block]: the first half
            // writes its K/V into the cache, the second half is denoised.
            std::vector<int32_t> span_ids = *pending_prev;
            span_ids.insert(span_ids.end(), block_ids.begin(), block_ids.end());
            std::vector<int32_t> positions(size_t(2 * B));
            for (int64_t i = 0; i < 2 * B; ++i) positions[size_t(i)] = int32_t(block_start - B + i);
            const int64_t prefix = cache.len;
            BoolMatrix mask(2 * B, prefix + 2 * B, 0);
            for (int64_t q = 0; q < 2 * B; ++q) {
                for (int64_t k = 0; k < prefix + B; ++k) mask.at(q, k) = 1;  // prefix + previous block
                if (q >= B) {
                    for (int64_t k = prefix + B; k < prefix + 2 * B; ++k) mask.at(q, k) = 1;  // own block
                }
            }
            Tensor<T> full = run_span(params, cache, span_ids, positions, mask, /*append_rows=*/B,
                                      /*want_logits=*/true);
            logits = row_slice<T>(nullptr, full, B, B);
            pending_prev->clear();
        } else {
            std::vector<int32_t> positions(size_t(B));
            for (int64_t i = 0; i < B; ++i) positions[size_t(i)] = int32_t(block_start + i);
            BoolMatrix mask =
                build_mask(AttentionMaskSpec::make_blockwise_decode(layout, cache.len), B, cache.len + B);
            logits = run_span(params, cache, block_ids, positions, mask, /*append_rows=*/0, /*want_logits=*/true);
        }
        first_pass = false;

        // Predictions and confidences at the masked positions, in position order.
        const int64_t v = params.config.vocab;
        std::vector<detail::Sampled> picks;
        std::vector<double> confs;
        picks.reserve(masked.size());
        for (int64_t i : masked) {
            std::span<const T> row(logits.data() + i * v, size_t(v));
            picks.push_back(detail::sample_token(row, policy, rng));
            confs.push_back(picks.back().conf);
        }
        std::vector<int64_t> chosen =
            policy.mode == DecodeMode::static_steps
                ? select_static(confs, B, policy.steps, already_at_entry)
                : select_dynamic(confs, policy.tau, policy.min_per_step);

        TracePass pass{PassKind::denoise, block_index, {}, {}, {}};
        for (int64_t sel : chosen) {
            const int64_t pos = masked[size_t(sel)];
            block_ids[size_t(pos)] = picks[size_t(sel)].token;
            pass.positions.push_back(block_start + pos);
            pass.confidences.push_back(picks[size_t(sel)].conf);
            pass.tokens.push_back(picks[size_t(sel)].token);
        }
        trace.generated_tokens += int64_t(pass.positions.size());
        trace.denoise_passes += 1;
        trace.passes.push_back(std::move(pass));
    }

    if (!policy.fused_cache_fill) {
        // Extra forward that writes the finalized block's K/V (the "+1" pass).
        std::vector<int32_t> positions(size_t(B));
        for (int64_t i = 0; i < B; ++i) positions[size_t(i)] = int32_t(block_start + i);
        BoolMatrix mask = build_mask(AttentionMaskSpec::make_blockwise_decode(layout, cache.len), B, cache.len + B);
        run_span(params, cache, block_ids, positions, mask, /*append_rows=*/B, /*want_logits=*/false);
        trace.cache_fill_passes += 1;
        trace.passes.push_back(TracePass{PassKind::cache_fill, block_index, {}, {}, {}});
    }
    trace.blocks_decoded += 1;
}

struct GenerateResult {
    TokenSequence tokens;  // generated tokens, truncated at the first EOS
    DecodeTrace trace;
};

// Generates blocks after `prompt` until EOS or max_blocks. The block grid is
// anchored at position 0; a prompt that ends mid-block is completed through a
// partially committed first block. One prefill pass caches the prompt's full
// blocks.
template <typename T>
GenerateResult generate(const ModelParams<T> & params, const TokenSequence & prompt, const DecodePolicy & policy) {
    policy.validate();
    const ModelConfig & cfg = params.config;
    const int64_t B = policy.block_size;

    GenerateResult out;
    if (policy.max_blocks == 0) return out;  // 0 generated / 0 passes

    TokenSequence padded = prompt;
    for (int32_t id : padded) {
        if (!Vocabulary::is_valid(id) || id == Vocabulary::MASK) {
            throw ConfigError("generate: prompt contains invalid ids");
        }
    }
    if (policy.pad_prompt_to_block) {
        while (int64_t(padded.size()) % B != 0) padded.push_back(Vocabulary::PAD);
    }
    const int64_t p = int64_t(padded.size());
    if (p + B > cfg.max_ctx) throw CacheError("generate: prompt leaves no room for a block");

    KVCache<T> cache(cfg, B);
    Rng rng(mix64(policy.seed ^ 0xdecade));

    const int64_t full_prefix = p / B;  // whole prompt blocks
    if (full_prefix > 0) {
        const int64_t plen = full_prefix * B;
        std::vector<int32_t> positions(size_t(plen));
        for (int64_t i = 0; i < plen; ++i) positions[size_t(i)] = int32_t(i);
        BoolMatrix mask = block_causal_mask(plen, B);
        run_span(params, cache, std::span<const int32_t>(padded.data(), size_t(plen)), positions, mask,
                 /*append_rows=*/plen, /*want_logits=*/false);
        out.trace.prefill_passes += 1;
        out.trace.passes.push_back(TracePass{PassKind::prefill, -1, {}, {}, {}});
    }

    const int64_t first_block = full_prefix;
    const int64_t last_block = cfg.max_ctx / B - 1;
    std::vector<int32_t> pending_prev;  // fused mode: finalized block awaiting cache fill
    std::vector<int32_t> all_generated;

    int64_t blocks_done = 0;
    for (int64_t g = first_block; g <= last_block && blocks_done < policy.max_blocks; ++g, ++blocks_done) {
        std::vector<int32_t> block_ids(size_t(B), Vocabulary::MASK);
        if (g == first_block) {
            for (int64_t i = g * B; i < p; ++i) block_ids[size_t(i - g * B)] = padded[size_t(i)];
        }
        decode_block(params, cache, policy, block_ids, g, rng, out.trace,
                     policy.fused_cache_fill ? &pending_prev : nullptr);
        const int64_t gen_from = std::max<int64_t>(0, p - g * B);
        for (int64_t i = gen_from; i < B; ++i) all_generated.push_back(block_ids[size_t(i)]);
        if (policy.fused_cache_fill) pending_prev = block_ids;
        if (policy.stop_on_eos &&
            std::find(block_ids.begin() + gen_from, block_ids.end(), Vocabulary::EOS) != block_ids.end()) {
            break;
        }
    }

    for (int32_t id : all_generated) {
        if (id == Vocabulary::EOS) break;
        out.tokens.push_back(id);
    }
    return out;
}

// Independent per-prompt decodes with derived seeds; a batched engine groups
// these forwards, which changes wall time but not any row's results.
template <typename T>
std::vector<GenerateResult> generate_batch(const ModelParams<T> & params, const std::vector<TokenSequence> & prompts,
                                           const DecodePolicy & policy) {
    std::vector<GenerateResult> out;
    out.reserve(prompts.size());
    for (size_t r = 0; r < prompts.size(); ++r) {
        DecodePolicy row_policy = policy;
        row_policy.seed = derive_seed(policy.seed, uint64_t(r));
        out.push_back(generate(params, prompts[r], row_policy));
    }
    return out;
}

}  // namespace sdar
