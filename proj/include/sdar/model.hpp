// Decoder-only transformer whose attention pattern is injected per call; the
// same weights serve next-token prediction (causal mask) and in-block
// denoising (blockwise masks) without a logits shift. The decode path keeps a
// block-granular KV cache; the block currently being decoded never stores
// cache entries.
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdar/mask.hpp"
#include "sdar/rng.hpp"
#include "sdar/tensor.hpp"
#include "sdar/vocab.hpp"

namespace sdar {

enum class PositionKind { rotary, learned };

struct ModelConfig {
    int64_t layers = 2;
    int64_t heads = 4;
    int64_t model_dim = 32;
    int64_t ff_dim = 64;
    int64_t vocab = Vocabulary::SIZE;
    int64_t max_ctx = 64;
    PositionKind positions = PositionKind::rotary;
    double rope_theta = 10000.0;

    int64_t head_dim() const { return model_dim / heads; }
    void validate() const {
        if (layers < 1 || heads < 1 || model_dim < 1 || ff_dim < 1 || vocab < 1 || max_ctx < 1) {
            throw ConfigError("model config: all dimensions must be positive");
        }
        if (model_dim % heads != 0) throw ConfigError("model config: model_dim must be divisible by heads");
        if (head_dim() % 2 != 0) throw ConfigError("model config: head_dim must be even for rotary positions");
    }
    bool operator==(const ModelConfig &) const = default;
};

template <typename T>
struct LayerParams {
    Tensor<T> ln1_g, wq, wk, wv, wo;
    Tensor<T> ln2_g, w_up, w_down;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    Tensor<T> tok_embed;  // [V×d]
    Tensor<T> pos_embed;  // [max_ctx×d], learned positions only
    std::vector<LayerParams<T>> layers;
    Tensor<T> final_norm_g;
    Tensor<T> head_w;  // [d×V]

    static ModelParams init(const ModelConfig & cfg, uint64_t seed) {
        cfg.validate();
        ModelParams p;
        p.config = cfg;
        Rng rng(mix64(seed));
        std::normal_distribution<double> dist(0.0, 0.02);
        auto randn = [&](std::vector<int64_t> shape) {
            Tensor<T> t = Tensor<T>::zeros(shape);
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = T(dist(rng));
            return t;
        };
        auto ones = [&](int64_t n) {
            Tensor<T> t = Tensor<T>::zeros({n});
            std::fill(t.data(), t.data() + n, T(1));
            return t;
        };
        p.tok_embed = randn({cfg.vocab, cfg.model_dim});
        if (cfg.positions == PositionKind::learned) p.pos_embed = randn({cfg.max_ctx, cfg.model_dim});
        for (int64_t l = 0; l < cfg.layers; ++l) {
            LayerParams<T> lp;
            lp.ln1_g = ones(cfg.model_dim);
            lp.wq = randn({cfg.model_dim, cfg.model_dim});
            lp.wk = randn({cfg.model_dim, cfg.model_dim});
            lp.wv = randn({cfg.model_dim, cfg.model_dim});
            lp.wo = randn({cfg.model_dim, cfg.model_dim});
            lp.ln2_g = ones(cfg.model_dim);
            lp.w_up = randn({cfg.model_dim, cfg.ff_dim});
            lp.w_down = randn({cfg.ff_dim, cfg.model_dim});
            p.layers.push_back(std::move(lp));
        }
        p.final_norm_g = ones(cfg.model_dim);
        p.head_w = randn({cfg.model_dim, cfg.vocab});
        return p;
    }

    // Stable name -> tensor map; checkpoint order and optimizer state follow it.
    std::vector<std::pair<std::string, Tensor<T> *>> named() {
        std::vector<std::pair<std::string, Tensor<T> *>> out;
        out.emplace_back("tok_embed", &tok_embed);
        if (config.positions == PositionKind::learned) out.emplace_back("pos_embed", &pos_embed);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string pfx = "layer" + std::to_string(l) + ".";
            out.emplace_back(pfx + "ln1.g", &layers[l].ln1_g);
            out.emplace_back(pfx + "attn.wq", &layers[l].wq);
            out.emplace_back(pfx + "attn.wk", &layers[l].wk);
            out.emplace_back(pfx + "attn.wv", &layers[l].wv);
            out.emplace_back(pfx + "attn.wo", &layers[l].wo);
            out.emplace_back(pfx + "ln2.g", &layers[l].ln2_g);
            out.emplace_back(pfx + "mlp.w_up", &layers[l].w_up);
            out.emplace_back(pfx + "mlp.w_down", &layers[l].w_down);
        }
        out.emplace_back("final_norm.g", &final_norm_g);
        out.emplace_back("head.w", &head_w);
        return out;
    }

    void track(Tape<T> & tape) {
        for (auto & [name, t] : named()) tape.track(*t);
    }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.config = config;
        auto conv = [](const Tensor<T> & src) {
            Tensor<U> dst = Tensor<U>::zeros(src.shape);
            for (int64_t i = 0; i < src.numel(); ++i) dst.data()[i] = U(src.data()[i]);
            return dst;
        };
        out.tok_embed = conv(tok_embed);
        if (config.positions == PositionKind::learned) out.pos_embed = conv(pos_embed);
        for (const auto & lp : layers) {
            LayerParams<U> o;
            o.ln1_g = conv(lp.ln1_g);
            o.wq = conv(lp.wq);
            o.wk = conv(lp.wk);
            o.wv = conv(lp.wv);
            o.wo = conv(lp.wo);
            o.ln2_g = conv(lp.ln2_g);
            o.w_up = conv(lp.w_up);
            o.w_down = conv(lp.w_down);
            out.layers.push_back(std::move(o));
        }
        out.final_norm_g = conv(final_norm_g);
        out.head_w = conv(head_w);
        return out;
    }
};

namespace detail {

template <typename T>
Tensor<T> embed_input(Tape<T> * tp, const ModelParams<T> & p, std::span<const int32_t> ids,
                      std::span<const int32_t> positions) {
    Tensor<T> x = embedding(tp, ids, p.tok_embed);
    if (p.config.positions == PositionKind::learned) {
        Tensor<T> pe = embedding(tp, positions, p.pos_embed);
        x = add(tp, x, pe);
    }
    return x;
}

// Attention over one sequence with per-head slicing; q/k carry rotary phases
// already when rotary positions are enabled.
template <typename T>
Tensor<T> attention_seq(Tape<T> * tp, const ModelConfig & cfg, const Tensor<T> & q, const Tensor<T> & k,
                        const Tensor<T> & v, const BoolMatrix & mask) {
    const int64_t hd = cfg.head_dim();
    const T inv_scale = T(1) / T(std::sqrt(double(hd)));
    std::vector<Tensor<T>> heads;
    heads.reserve(size_t(cfg.heads));
    for (int64_t h = 0; h < cfg.heads; ++h) {
        Tensor<T> qh = col_slice(tp, q, h * hd, hd);
        Tensor<T> kh = col_slice(tp, k, h * hd, hd);
        Tensor<T> vh = col_slice(tp, v, h * hd, hd);
        Tensor<T> scores = scale(tp, matmul_nt(tp, qh, kh), inv_scale);
        Tensor<T> probs = masked_softmax(tp, scores, mask);
        heads.push_back(matmul(tp, probs, vh));
    }
    return concat_cols(tp, heads);
}

}  // namespace detail

// Full forward over `batch` packed sequences of equal length. `mask` is the
// per-sequence allow matrix (shared across the batch); `positions` gives the
// absolute index of every element of `ids`.
template <typename T>
Tensor<T> forward_hidden(Tape<T> * tp, const ModelParams<T> & p, std::span<const int32_t> ids,
                         const BoolMatrix & mask, std::span<const int32_t> positions, int64_t batch = 1) {
    const ModelConfig & cfg = p.config;
    if (batch < 1 || int64_t(ids.size()) % batch != 0) throw ShapeError("forward: ids not divisible into batch");
    const int64_t len = int64_t(ids.size()) / batch;
    if (int64_t(positions.size()) != int64_t(ids.size())) throw ShapeError("forward: positions must match ids");
    if (mask.rows != len || mask.cols != len) throw ShapeError("forward: mask must be len×len");
    for (int32_t pos : positions) {
        if (pos < 0 || pos >= cfg.max_ctx) throw ShapeError("forward: position exceeds L_ctx_max");
    }

    Tensor<T> x = detail::embed_input(tp, p, ids, positions);
    for (const auto & lp : p.layers) {
        Tensor<T> xn = rmsnorm(tp, x, lp.ln1_g);
        Tensor<T> q = matmul(tp, xn, lp.wq);
        Tensor<T> k = matmul(tp, xn, lp.wk);
        Tensor<T> v = matmul(tp, xn, lp.wv);
        if (cfg.positions == PositionKind::rotary) {
            q = rope(tp, q, positions, cfg.head_dim(), cfg.rope_theta);
            k = rope(tp, k, positions, cfg.head_dim(), cfg.rope_theta);
        }
        std::vector<Tensor<T>> ctx_rows;
        ctx_rows.reserve(size_t(batch));
        for (int64_t s = 0; s < batch; ++s) {
            Tensor<T> qs = row_slice(tp, q, s * len, len);
            Tensor<T> ks = row_slice(tp, k, s * len, len);
            Tensor<T> vs = row_slice(tp, v, s * len, len);
            ctx_rows.push_back(detail::attention_seq(tp, cfg, qs, ks, vs, mask));
        }
        Tensor<T> ctx = batch == 1 ? ctx_rows[0] : concat_rows(tp, ctx_rows);
        x = add(tp, x, matmul(tp, ctx, lp.wo));
        Tensor<T> hn = rmsnorm(tp, x, lp.ln2_g);
        Tensor<T> up = gelu(tp, matmul(tp, hn, lp.w_up));
        x = add(tp, x, matmul(tp, up, lp.w_down));
    }
    return rmsnorm(tp, x, p.final_norm_g);
}

template <typename T>
Tensor<T> lm_head(Tape<T> * tp, const ModelParams<T> & p, const Tensor<T> & hidden) {
    return matmul(tp, hidden, p.head_w);
}

template <typename T>
Tensor<T> forward_logits(Tape<T> * tp, const ModelParams<T> & p, std::span<const int32_t> ids,
                         const BoolMatrix & mask, std::span<const int32_t> positions, int64_t batch = 1) {
    return lm_head(tp, p, forward_hidden(tp, p, ids, mask, positions, batch));
}

// ---------------------------------------------------------------------------
// KV-cache decode path. Cache entries cover finalized positions only; storage
// grows in units of block_size positions.
// ---------------------------------------------------------------------------

struct CacheError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct KVCache {
    ModelConfig config;
    int64_t block_size = 1;
    int64_t len = 0;       // finalized tokens (prompt blocks + completed blocks)
    int64_t capacity = 0;  // allocated positions, multiple of block_size
    std::vector<std::vector<T>> k, v;  // per layer, len*model_dim used

    KVCache() = default;
    KVCache(const ModelConfig & cfg, int64_t block) : config(cfg), block_size(block) {
        k.resize(size_t(cfg.layers));
        v.resize(size_t(cfg.layers));
    }

    void ensure_room(int64_t extra) {
        const int64_t need = len + extra;
        if (need > config.max_ctx) {
            throw CacheError("KV cache capacity exhausted: need " + std::to_string(need) + " > max_ctx " +
                             std::to_string(config.max_ctx));
        }
        if (need > capacity) {
            capacity = (need + block_size - 1) / block_size * block_size;
            for (int64_t l = 0; l < config.layers; ++l) {
                k[size_t(l)].reserve(size_t(capacity * config.model_dim));
                v[size_t(l)].reserve(size_t(capacity * config.model_dim));
            }
        }
    }
};

// Runs the stack over a span of `m` ids placed after the cache's `len`
// finalized positions. `mask` is [m × (len+m)]: prefix columns first, then
// the span's own columns. The keys/values of the first `append_rows` span
// positions are appended to the cache (prefill and cache-fill passes; 0 for a
// denoise pass); `want_logits` applies the lm head.
template <typename T>
Tensor<T> run_span(const ModelParams<T> & p, KVCache<T> & cache, std::span<const int32_t> ids,
                   std::span<const int32_t> positions, const BoolMatrix & mask, int64_t append_rows,
                   bool want_logits) {
    const ModelConfig & cfg = p.config;
    const int64_t m = int64_t(ids.size());
    const int64_t d = cfg.model_dim;
    const int64_t hd = cfg.head_dim();
    const int64_t prefix = cache.len;
    if (mask.rows != m || mask.cols != prefix + m) throw ShapeError("run_span: mask must be m×(prefix+m)");
    if (append_rows < 0 || append_rows > m) throw ShapeError("run_span: append_rows out of range");
    if (append_rows > 0) cache.ensure_room(append_rows);
    if (prefix + m > cfg.max_ctx) throw CacheError("run_span: span exceeds L_ctx_max");

    Tape<T> * tp = nullptr;  // inference is tapeless
    Tensor<T> x = detail::embed_input(tp, p, ids, positions);
    const T inv_scale = T(1) / T(std::sqrt(double(hd)));
    for (int64_t l = 0; l < cfg.layers; ++l) {
        const auto & lp = p.layers[size_t(l)];
        Tensor<T> xn = rmsnorm(tp, x, lp.ln1_g);
        Tensor<T> q = matmul(tp, xn, lp.wq);
        Tensor<T> k = matmul(tp, xn, lp.wk);
        Tensor<T> v = matmul(tp, xn, lp.wv);
        if (cfg.positions == PositionKind::rotary) {
            q = rope(tp, q, positions, hd, cfg.rope_theta);
            k = rope(tp, k, positions, hd, cfg.rope_theta);
        }
        const T * ck = cache.k[size_t(l)].data();
        const T * cv = cache.v[size_t(l)].data();
        Tensor<T> scores = Tensor<T>::zeros({m, prefix + m});
        Tensor<T> ctx = Tensor<T>::zeros({m, d});
        for (int64_t h = 0; h < cfg.heads; ++h) {
            // scores[:, :prefix] = q_h · cache_k_h^T; scores[:, prefix:] = q_h · k_h^T
            if (prefix > 0) {
                gemm_raw(false, true, m, prefix, hd, inv_scale, q.data() + h * hd, d, ck + h * hd, d, T(0),
                         scores.data(), prefix + m);
            }
            gemm_raw(false, true, m, m, hd, inv_scale, q.data() + h * hd, d, k.data() + h * hd, d, T(0),
                     scores.data() + prefix, prefix + m);
            Tensor<T> probs = masked_softmax(tp, scores, mask);
            // ctx_h = probs[:, :prefix] · cache_v_h + probs[:, prefix:] · v_h
            if (prefix > 0) {
                gemm_raw(false, false, m, hd, prefix, T(1), probs.data(), prefix + m, cv + h * hd, d, T(0),
                         ctx.data() + h * hd, d);
            }
            gemm_raw(false, false, m, hd, m, T(1), probs.data() + prefix, prefix + m, v.data() + h * hd, d,
                     prefix > 0 ? T(1) : T(0), ctx.data() + h * hd, d);
        }
        if (append_rows > 0) {
            cache.k[size_t(l)].insert(cache.k[size_t(l)].end(), k.data(), k.data() + append_rows * d);
            cache.v[size_t(l)].insert(cache.v[size_t(l)].end(), v.data(), v.data() + append_rows * d);
        }
        x = add(tp, x, matmul(tp, ctx, lp.wo));
        Tensor<T> hn = rmsnorm(tp, x, lp.ln2_g);
        Tensor<T> up = gelu(tp, matmul(tp, hn, lp.w_up));
        x = add(tp, x, matmul(tp, up, lp.w_down));
    }
    cache.len += append_rows;
    if (!want_logits) return Tensor<T>();
    return lm_head(tp, p, rmsnorm(tp, x, p.final_norm_g));
}

}  // namespace sdar
