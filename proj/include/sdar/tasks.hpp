// Synthetic desk-scale tasks with exact gold oracles, plus the evaluation
// harness that contrasts decode policies on a trained checkpoint.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdar/decoder.hpp"
#include "sdar/pack.hpp"

namespace sdar {

enum class TaskKind { copy, reverse, modular_sum };

TaskKind task_kind_from_name(const std::string & name);
const char * task_kind_name(TaskKind k);

struct TaskSpec {
    TaskKind kind = TaskKind::copy;
    int64_t len_min = 4;
    int64_t len_max = 24;
    int64_t count = 100;
    uint64_t seed = 0;
};

struct TaskExample {
    std::string prompt;  // e.g. "c:abcde;"
    std::string gold;    // e.g. "abcde."
    std::string doc() const { return prompt + gold; }
};

std::vector<TaskExample> gen_task(const TaskSpec & spec);

// Mixed-task training corpus: one document per example, round-robin over kinds.
std::vector<TokenSequence> task_corpus(const std::vector<TaskSpec> & specs);

struct EvalMetrics {
    int64_t n = 0;
    double exact_match = 0.0;
    double tpf_with_cache = 0.0;  // pooled: total tokens / total passes
    double tpf_no_cache = 0.0;
    double mean_gamma = 0.0;  // pooled: total denoise passes / total blocks
    int64_t generated_tokens = 0;
    int64_t denoise_passes = 0;
    int64_t cache_fill_passes = 0;
    int64_t blocks = 0;
};

EvalMetrics evaluate(const ModelParams<float> & params, const DecodePolicy & policy,
                     const std::vector<TaskExample> & tasks, std::vector<DecodeTrace> * traces = nullptr);

}  // namespace sdar
