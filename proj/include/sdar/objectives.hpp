// Training losses and procedures. loss_ar is the shifted next-token NLL;
// loss_mdlm is the 1/t-reweighted masked cross-entropy; loss_blockwise is its
// per-block counterpart over the concatenated [perturbed | clean] input. All
// three normalize by the count of loss-eligible tokens so magnitudes stay
// comparable across block sizes.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdar/corruption.hpp"
#include "sdar/model.hpp"
#include "sdar/pack.hpp"
#include "sdar/tensor.hpp"

namespace sdar {

template <typename T>
struct LossReport {
    Tensor<T> loss;                          // normalized scalar on the tape
    double loss_value = 0.0;                 // double accounting of the same number
    double weighted_sum = 0.0;               // sum of w_i * nll_i before normalization
    int64_t masked_tokens = 0;               // positions that contributed
    int64_t eligible_tokens = 0;             // normalization denominator
    std::vector<double> per_block_weighted;  // per (row, block) weighted sums
};

namespace detail {

// Shared accounting: row-major weighted NLL with per-row subtotals so that
// per-sequence and batch entry points sum in exactly the same order.
template <typename T>
LossReport<T> weighted_loss(Tape<T> * tp, const Tensor<T> & logits, std::span<const int32_t> targets,
                            std::span<const double> weights, int64_t rows_per_seq, int64_t eligible,
                            std::vector<double> * nll_out = nullptr) {
    LossReport<T> rep;
    rep.eligible_tokens = eligible;
    std::vector<double> nll_local;
    std::vector<double> & nll = nll_out ? *nll_out : nll_local;
    Tensor<T> total = weighted_nll(tp, logits, targets, weights, &nll);
    const int64_t n = logits.shape[0];
    double acc = 0.0;
    for (int64_t r0 = 0; r0 < n; r0 += rows_per_seq) {
        double row_sum = 0.0;
        for (int64_t i = r0; i < r0 + rows_per_seq; ++i) {
            if (weights[size_t(i)] != 0.0) {
                row_sum += weights[size_t(i)] * nll[size_t(i)];
                rep.masked_tokens += 1;
            }
        }
        acc += row_sum;
    }
    rep.weighted_sum = acc;
    if (eligible > 0) {
        rep.loss = scale(tp, total, T(1.0 / double(eligible)));
        rep.loss_value = acc / double(eligible);
    } else {
        rep.loss = Tensor<T>::from({1}, {T(0)});
        rep.loss_value = 0.0;
    }
    return rep;
}

}  // namespace detail

// Shifted next-token loss: logit row l-1 predicts token l. Mean over the
// masked-in positions.
template <typename T>
LossReport<T> loss_ar(Tape<T> * tp, const Tensor<T> & logits, std::span<const int32_t> ids,
                      std::span<const uint8_t> loss_mask, int64_t batch = 1) {
    const int64_t n = logits.shape[0];
    if (int64_t(ids.size()) != n || int64_t(loss_mask.size()) != n) {
        throw ShapeError("loss_ar: ids/loss_mask must match logits rows");
    }
    if (batch < 1 || n % batch != 0) throw ShapeError("loss_ar: rows not divisible into batch");
    const int64_t len = n / batch;
    std::vector<int32_t> targets(size_t(n), 0);
    std::vector<double> weights(size_t(n), 0.0);
    int64_t count = 0;
    for (int64_t s = 0; s < batch; ++s) {
        for (int64_t l = 1; l < len; ++l) {  // position 0 has no predecessor
            if (loss_mask[size_t(s * len + l)]) {
                targets[size_t(s * len + l - 1)] = ids[size_t(s * len + l)];
                weights[size_t(s * len + l - 1)] = 1.0;
                ++count;
            }
        }
    }
    if (count == 0) throw std::invalid_argument("loss_ar: all positions are masked out of the loss");
    return detail::weighted_loss(tp, logits, targets, weights, len, count);
}

// Reweighted masked cross-entropy for one sequence at a single diffusion
// time t: (1/t) * sum over masked positions of -log p(x0 | x_t).
template <typename T>
LossReport<T> loss_mdlm(Tape<T> * tp, const Tensor<T> & logits, std::span<const int32_t> x0,
                        std::span<const uint8_t> mask_indicator, double t,
                        std::span<const uint8_t> eligible = {}) {
    if (!(t > 0.0) || t > 1.0) throw std::invalid_argument("loss_mdlm: t must be in (0, 1]");
    const int64_t n = logits.shape[0];
    if (int64_t(x0.size()) != n || int64_t(mask_indicator.size()) != n) {
        throw ShapeError("loss_mdlm: x0/mask must match logits rows");
    }
    std::vector<int32_t> targets(size_t(n), 0);
    std::vector<double> weights(size_t(n), 0.0);
    const double w = 1.0 / t;
    int64_t elig = 0;
    for (int64_t i = 0; i < n; ++i) {
        const bool e = eligible.empty() ? true : eligible[size_t(i)] != 0;
        if (e) ++elig;
        if (mask_indicator[size_t(i)]) {
            targets[size_t(i)] = x0[size_t(i)];
            weights[size_t(i)] = w;
        }
    }
    return detail::weighted_loss(tp, logits, targets, weights, n, elig);
}

// Blockwise NELBO over a corrupted batch. `logits` are the perturbed-half
// rows only (rows*L × V). Each eligible block contributes its masked
// positions at weight 1/t_block.
template <typename T>
LossReport<T> loss_blockwise(Tape<T> * tp, const Tensor<T> & logits, const CorruptedBatch & corrupted) {
    const BlockLayout & layout = corrupted.layout;
    const int64_t L = layout.ctx_len();
    const int64_t n = logits.shape[0];
    if (n != corrupted.rows * L) {
        throw ShapeError("loss_blockwise: logits rows do not match the corrupted batch layout");
    }
    std::vector<int32_t> targets(size_t(n), 0);
    std::vector<double> weights(size_t(n), 0.0);
    int64_t eligible = 0;
    std::vector<double> per_block(size_t(corrupted.rows * layout.num_blocks), 0.0);
    for (int64_t r = 0; r < corrupted.rows; ++r) {
        for (int64_t b = 0; b < layout.num_blocks; ++b) {
            const double t = corrupted.t_of(r, b);
            if (t == 0.0) continue;  // ineligible block
            eligible += layout.block_size;
            const double w = 1.0 / t;
            for (int64_t i = 0; i < layout.block_size; ++i) {
                const int64_t pos = r * L + b * layout.block_size + i;
                if (corrupted.mask_indicator[size_t(pos)]) {
                    targets[size_t(pos)] = corrupted.x0[size_t(pos)];
                    weights[size_t(pos)] = w;
                }
            }
        }
    }
    std::vector<double> nll;
    LossReport<T> rep = detail::weighted_loss(tp, logits, targets, weights, L, eligible, &nll);
    for (int64_t r = 0; r < corrupted.rows; ++r) {
        for (int64_t b = 0; b < layout.num_blocks; ++b) {
            double s = 0.0;
            for (int64_t i = 0; i < layout.block_size; ++i) {
                const int64_t pos = r * L + b * layout.block_size + i;
                s += weights[size_t(pos)] * nll[size_t(pos)];
            }
            per_block[size_t(r * layout.num_blocks + b)] = s;
        }
    }
    rep.per_block_weighted = std::move(per_block);
    return rep;
}

// ---------------------------------------------------------------------------
// Objective = forward pass + loss, shared by the trainer and the gradient
// checks.
// ---------------------------------------------------------------------------

template <typename T>
LossReport<T> objective_ar(Tape<T> * tp, const ModelParams<T> & params, const PackedBatch & batch) {
    const int64_t L = batch.ctx_len;
    std::vector<int32_t> positions(size_t(batch.rows * L));
    for (int64_t s = 0; s < batch.rows; ++s) {
        for (int64_t i = 0; i < L; ++i) positions[size_t(s * L + i)] = int32_t(i);
    }
    BoolMatrix mask = build_mask(AttentionMaskSpec::make_causal(), L, L);
    Tensor<T> logits = forward_logits(tp, params, batch.ids, mask, positions, batch.rows);
    return loss_ar(tp, logits, batch.ids, batch.loss_mask, batch.rows);
}

// Plain masked-diffusion objective: bidirectional attention over x_t with a
// single t per row (the corrupted batch must use a one-block layout).
template <typename T>
LossReport<T> objective_mdlm(Tape<T> * tp, const ModelParams<T> & params, const CorruptedBatch & corrupted) {
    if (corrupted.layout.num_blocks != 1) {
        throw ConfigError("objective_mdlm: expected a single-block layout (one t per sequence)");
    }
    const int64_t L = corrupted.layout.ctx_len();
    std::vector<int32_t> positions(size_t(corrupted.rows * L));
    for (int64_t s = 0; s < corrupted.rows; ++s) {
        for (int64_t i = 0; i < L; ++i) positions[size_t(s * L + i)] = int32_t(i);
    }
    BoolMatrix mask = build_mask(AttentionMaskSpec::make_bidirectional(), L, L);
    Tensor<T> logits = forward_logits(tp, params, corrupted.xt, mask, positions, corrupted.rows);
    return loss_blockwise(tp, logits, corrupted);  // K = 1 reduces to Eq. (3)
}

// Conversion objective: concatenated [perturbed | clean] input under the
// blockwise_training mask; loss on the perturbed-half outputs only. Clean and
// perturbed copies of a block share position indices.
template <typename T>
LossReport<T> objective_blockwise(Tape<T> * tp, const ModelParams<T> & params, const CorruptedBatch & corrupted) {
    const BlockLayout & layout = corrupted.layout;
    const int64_t L = layout.ctx_len();
    const int64_t rows = corrupted.rows;
    std::vector<int32_t> concat_ids(size_t(rows * 2 * L));
    std::vector<int32_t> positions(size_t(rows * 2 * L));
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t i = 0; i < L; ++i) {
            concat_ids[size_t(r * 2 * L + i)] = corrupted.xt[size_t(r * L + i)];
            concat_ids[size_t(r * 2 * L + L + i)] = corrupted.x0[size_t(r * L + i)];
            positions[size_t(r * 2 * L + i)] = int32_t(i);
            positions[size_t(r * 2 * L + L + i)] = int32_t(i);
        }
    }
    BoolMatrix mask = build_mask(AttentionMaskSpec::make_blockwise_training(layout), 2 * L, 2 * L);
    Tensor<T> hidden = forward_hidden(tp, params, concat_ids, mask, positions, rows);
    std::vector<Tensor<T>> perturbed;
    perturbed.reserve(size_t(rows));
    for (int64_t r = 0; r < rows; ++r) perturbed.push_back(row_slice(tp, hidden, r * 2 * L, L));
    Tensor<T> ph = rows == 1 ? perturbed[0] : concat_rows(tp, perturbed);
    Tensor<T> logits = lm_head(tp, params, ph);
    return loss_blockwise(tp, logits, corrupted);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string objective = "ar";  // ar | mdlm | blockwise
    int64_t steps = 1000;
    int64_t batch_rows = 8;
    int64_t block_size = 8;  // blockwise layout
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    int64_t warmup_steps = 100;
    double lr_floor = 0.1;  // cosine decay floor as a fraction of lr
    uint64_t seed = 1;
    double t_min = kDefaultTMin;
    int64_t ckpt_every = 0;  // 0 = final only
    int64_t eval_every = 0;
    std::string log_csv;

    void validate() const {
        if (lr <= 0) throw ConfigError("train.lr must be positive");
        if (steps <= 0) throw ConfigError("train.steps must be positive");
        if (batch_rows <= 0) throw ConfigError("train.batch_rows must be positive");
        if (objective != "ar" && objective != "mdlm" && objective != "blockwise") {
            throw ConfigError("train.objective must be ar|mdlm|blockwise");
        }
    }
};

class AdamW {
  public:
    AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    // One update over named parameters whose gradients live on the tape.
    // decay_mask: parameters with fewer than 2 dims (norm gains) skip decay.
    void step(std::vector<std::pair<std::string, Tensor<float> *>> & params, Tape<float> & tape, double lr_now);

    double base_lr() const { return lr_; }

  private:
    double lr_, b1_, b2_, eps_, wd_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

struct TrainLogRow {
    int64_t step;
    std::string objective;
    double loss;
    int64_t masked_tokens;
    double lr;
};

struct TrainResult {
    ModelParams<float> params;
    std::vector<TrainLogRow> log;
    std::vector<std::pair<int64_t, double>> eval_curve;  // (step, eval loss)
};

using CheckpointSink = std::function<void(const ModelParams<float> &, int64_t step)>;

TrainResult train(const ModelConfig & model_cfg, const TrainConfig & cfg, const PackedBatch & data,
                  const PackedBatch * eval_data = nullptr,
                  std::optional<ModelParams<float>> init = std::nullopt, CheckpointSink ckpt_sink = nullptr);

// Mean loss of the configured objective over a held-out batch (no gradients;
// corruption draws fixed by eval_seed so successive evals are comparable).
double eval_loss(const ModelParams<float> & params, const TrainConfig & cfg, const PackedBatch & eval_data,
                 uint64_t eval_seed = 0xe7a1);

}  // namespace sdar
