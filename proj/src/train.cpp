#include <algorithm>
#include <fstream>
#include <numeric>

#include "sdar/objectives.hpp"
#include "sdar/rng.hpp"

namespace sdar {

void AdamW::step(std::vector<std::pair<std::string, Tensor<float> *>> & params, Tape<float> & tape, double lr_now) {
    if (m_.empty()) {
        for (auto & [name, p] : params) {
            m_.emplace_back(size_t(p->numel()), 0.0f);
            v_.emplace_back(size_t(p->numel()), 0.0f);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, double(t_));
    const double bc2 = 1.0 - std::pow(b2_, double(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<float> & p = *params[pi].second;
        if (p.node < 0 || !tape.grad_reached(p.node)) continue;
        const std::vector<float> & g = tape.grad(p.node);
        const bool decay = p.shape.size() >= 2;  // norm gains skip weight decay
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double gi = double(g[size_t(i)]);
            double m = double(m_[pi][size_t(i)]) * b1_ + (1.0 - b1_) * gi;
            double v = double(v_[pi][size_t(i)]) * b2_ + (1.0 - b2_) * gi * gi;
            m_[pi][size_t(i)] = float(m);
            v_[pi][size_t(i)] = float(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            double upd = lr_now * mhat / (std::sqrt(vhat) + eps_);
            if (decay) upd += lr_now * wd_ * double(p.data()[i]);
            p.data()[i] = float(double(p.data()[i]) - upd);
        }
    }
}

namespace {

double lr_schedule(const TrainConfig & cfg, int64_t step) {
    const double warm = cfg.warmup_steps > 0 ? std::min(1.0, double(step + 1) / double(cfg.warmup_steps)) : 1.0;
    double decay = 1.0;
    if (step >= cfg.warmup_steps && cfg.steps > cfg.warmup_steps) {
        const double prog = double(step - cfg.warmup_steps) / double(cfg.steps - cfg.warmup_steps);
        decay = cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(prog * 3.14159265358979323846));
    }
    return cfg.lr * warm * decay;
}

PackedBatch take_rows(const PackedBatch & data, const std::vector<int64_t> & order, int64_t first, int64_t count) {
    PackedBatch out;
    out.rows = count;
    out.ctx_len = data.ctx_len;
    out.block_size = data.block_size;
    out.ids.reserve(size_t(count * data.ctx_len));
    out.loss_mask.reserve(size_t(count * data.ctx_len));
    for (int64_t i = 0; i < count; ++i) {
        const int64_t r = order[size_t((first + i) % int64_t(order.size()))];
        out.ids.insert(out.ids.end(), data.ids.begin() + r * data.ctx_len, data.ids.begin() + (r + 1) * data.ctx_len);
        out.loss_mask.insert(out.loss_mask.end(), data.loss_mask.begin() + r * data.ctx_len,
                             data.loss_mask.begin() + (r + 1) * data.ctx_len);
    }
    return out;
}

LossReport<float> run_objective(Tape<float> * tape, const ModelParams<float> & params, const TrainConfig & cfg,
                                const PackedBatch & batch, uint64_t corruption_seed) {
    if (cfg.objective == "ar") {
        return objective_ar(tape, params, batch);
    }
    if (cfg.objective == "mdlm") {
        const BlockLayout layout(batch.ctx_len, 1);  // one block: a single t per row
        CorruptedBatch corrupted = corrupt_batch(batch, layout, corruption_seed, cfg.t_min);
        return objective_mdlm(tape, params, corrupted);
    }
    const BlockLayout layout = BlockLayout::for_ctx(batch.ctx_len, cfg.block_size);
    CorruptedBatch corrupted = corrupt_batch(batch, layout, corruption_seed, cfg.t_min);
    return objective_blockwise(tape, params, corrupted);
}

}  // namespace

double eval_loss(const ModelParams<float> & params, const TrainConfig & cfg, const PackedBatch & eval_data,
                 uint64_t eval_seed) {
    double total = 0.0;
    int64_t batches = 0;
    const int64_t bs = std::min(cfg.batch_rows, eval_data.rows);
    std::vector<int64_t> order(size_t(eval_data.rows));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t first = 0; first + bs <= eval_data.rows; first += bs) {
        PackedBatch batch = take_rows(eval_data, order, first, bs);
        LossReport<float> rep = run_objective(nullptr, params, cfg, batch, derive_seed(eval_seed, uint64_t(first)));
        total += rep.loss_value;
        ++batches;
    }
    return batches ? total / double(batches) : 0.0;
}

TrainResult train(const ModelConfig & model_cfg, const TrainConfig & cfg, const PackedBatch & data,
                  const PackedBatch * eval_data, std::optional<ModelParams<float>> init, CheckpointSink ckpt_sink) {
    cfg.validate();
    model_cfg.validate();
    if (data.rows == 0) throw ConfigError("train: empty dataset");
    if (cfg.objective == "blockwise" && data.ctx_len % cfg.block_size != 0) {
        throw ConfigError("train: L_ctx not divisible by train.block_size");
    }

    TrainResult result{init ? std::move(*init) : ModelParams<float>::init(model_cfg, cfg.seed), {}, {}};
    if (result.params.config != model_cfg) {
        throw ConfigError("train: initial checkpoint config does not match the model config");
    }
    AdamW opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);

    std::ofstream csv;
    if (!cfg.log_csv.empty()) {
        csv.open(cfg.log_csv);
        if (!csv) throw std::runtime_error("cannot open " + cfg.log_csv);
        csv << "step,objective,loss,masked_tokens,lr\n";
    }

    Rng shuffle_rng(mix64(cfg.seed ^ 0x7a3f));
    std::vector<int64_t> order(size_t(data.rows));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    Tape<float> tape;
    int64_t cursor = 0;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        if (cursor + cfg.batch_rows > int64_t(order.size())) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            cursor = 0;
        }
        PackedBatch batch = take_rows(data, order, cursor, cfg.batch_rows);
        cursor += cfg.batch_rows;

        tape.reset();
        auto named = result.params.named();
        result.params.track(tape);
        LossReport<float> rep = run_objective(&tape, result.params, cfg, batch, derive_seed(cfg.seed, uint64_t(step)));
        const double lr_now = lr_schedule(cfg, step);
        if (!std::isfinite(rep.loss_value)) {
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                     " (lr=" + std::to_string(lr_now) + ")");
        }
        if (rep.eligible_tokens > 0) {
            tape.backward(rep.loss);
            // Global gradient-norm clip.
            if (cfg.grad_clip > 0) {
                double sq = 0.0;
                for (auto & [name, p] : named) {
                    if (p->node < 0 || !tape.grad_reached(p->node)) continue;
                    for (float g : tape.grad(p->node)) sq += double(g) * double(g);
                }
                const double norm = std::sqrt(sq);
                if (norm > cfg.grad_clip) {
                    const float s = float(cfg.grad_clip / norm);
                    for (auto & [name, p] : named) {
                        if (p->node < 0 || !tape.grad_reached(p->node)) continue;
                        for (float & g : tape.grad(p->node)) g *= s;
                    }
                }
            }
            opt.step(named, tape, lr_now);
        }

        result.log.push_back({step, cfg.objective, rep.loss_value, rep.masked_tokens, lr_now});
        if (csv.is_open()) {
            csv << step << "," << cfg.objective << "," << rep.loss_value << "," << rep.masked_tokens << "," << lr_now
                << "\n";
        }
        if (cfg.eval_every > 0 && eval_data && (step + 1) % cfg.eval_every == 0) {
            result.eval_curve.emplace_back(step + 1, eval_loss(result.params, cfg, *eval_data));
        }
        if (ckpt_sink && cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0 && step + 1 != cfg.steps) {
            ckpt_sink(result.params, step + 1);
        }
    }
    if (ckpt_sink) ckpt_sink(result.params, cfg.steps);
    return result;
}

}  // namespace sdar
