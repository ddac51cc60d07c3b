#include "sdar/tasks.hpp"

#include <algorithm>
#include <stdexcept>

#include "sdar/bench.hpp"
#include "sdar/rng.hpp"

namespace sdar {

TaskKind task_kind_from_name(const std::string & name) {
    if (name == "copy") return TaskKind::copy;
    if (name == "reverse") return TaskKind::reverse;
    if (name == "modular_sum") return TaskKind::modular_sum;
    throw ConfigError("unknown task kind: " + name);
}

const char * task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::copy: return "copy";
        case TaskKind::reverse: return "reverse";
        case TaskKind::modular_sum: return "modular_sum";
    }
    return "?";
}

namespace {

std::string random_payload(Rng & rng, int64_t len_min, int64_t len_max) {
    const int64_t len = len_min + int64_t(rng() % uint64_t(len_max - len_min + 1));
    std::string s;
    s.reserve(size_t(len));
    for (int64_t i = 0; i < len; ++i) s.push_back(char('a' + rng() % 26));
    return s;
}

}  // namespace

std::vector<TaskExample> gen_task(const TaskSpec & spec) {
    if (spec.len_min < 1 || spec.len_max < spec.len_min) throw ConfigError("task: bad payload length range");
    std::vector<TaskExample> out;
    out.reserve(size_t(spec.count));
    Rng rng(mix64(spec.seed ^ (uint64_t(spec.kind) << 32)));
    for (int64_t i = 0; i < spec.count; ++i) {
        TaskExample ex;
        switch (spec.kind) {
            case TaskKind::copy: {
                const std::string p = random_payload(rng, spec.len_min, spec.len_max);
                ex.prompt = "c:" + p + ";";
                ex.gold = p + ".";
                break;
            }
            case TaskKind::reverse: {
                const std::string p = random_payload(rng, spec.len_min, spec.len_max);
                std::string r(p.rbegin(), p.rend());
                ex.prompt = "r:" + p + ";";
                ex.gold = r + ".";
                break;
            }
            case TaskKind::modular_sum: {
                const int64_t a = int64_t(rng() % 100);
                const int64_t b = int64_t(rng() % 100);
                const int64_t m = 2 + int64_t(rng() % 98);
                ex.prompt = "m:" + std::to_string(a) + "+" + std::to_string(b) + " mod " + std::to_string(m) + ";";
                ex.gold = std::to_string((a + b) % m) + ".";
                break;
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<TokenSequence> task_corpus(const std::vector<TaskSpec> & specs) {
    std::vector<std::vector<TaskExample>> per_kind;
    for (const auto & spec : specs) per_kind.push_back(gen_task(spec));
    std::vector<TokenSequence> docs;
    size_t longest = 0;
    for (const auto & v : per_kind) longest = std::max(longest, v.size());
    for (size_t i = 0; i < longest; ++i) {
        for (const auto & v : per_kind) {
            if (i < v.size()) docs.push_back(encode(v[i].doc()));
        }
    }
    return docs;
}

EvalMetrics evaluate(const ModelParams<float> & params, const DecodePolicy & policy,
                     const std::vector<TaskExample> & tasks, std::vector<DecodeTrace> * traces) {
    EvalMetrics m;
    m.n = int64_t(tasks.size());
    int64_t hits = 0;
    for (size_t i = 0; i < tasks.size(); ++i) {
        DecodePolicy row_policy = policy;
        row_policy.seed = derive_seed(policy.seed, uint64_t(i));
        GenerateResult gen = generate(params, encode(tasks[i].prompt), row_policy);
        if (decode(gen.tokens) == tasks[i].gold) ++hits;
        m.generated_tokens += gen.trace.generated_tokens;
        m.denoise_passes += gen.trace.denoise_passes;
        m.cache_fill_passes += gen.trace.cache_fill_passes;
        m.blocks += gen.trace.blocks_decoded;
        if (traces) traces->push_back(std::move(gen.trace));
    }
    m.exact_match = m.n ? double(hits) / double(m.n) : 0.0;
    if (m.denoise_passes + m.cache_fill_passes > 0) {
        m.tpf_with_cache = double(m.generated_tokens) / double(m.denoise_passes + m.cache_fill_passes);
    }
    if (m.denoise_passes > 0) m.tpf_no_cache = double(m.generated_tokens) / double(m.denoise_passes);
    if (m.blocks > 0) m.mean_gamma = double(m.denoise_passes) / double(m.blocks);
    return m;
}

}  // namespace sdar
