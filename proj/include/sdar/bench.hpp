// Efficiency accounting (TPF), the analytical throughput model (TGS over a
// hinge-shaped t_f curve), and test-time-scaling aggregators.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdar/decoder.hpp"

namespace sdar {

// Tokens per forward pass. Denoise passes always count; cache-fill passes
// count under the default accounting that matches the TGS formulas, and are
// excluded for the beta/gamma identity. The one-time prompt prefill is not a
// decode pass under either accounting. Zero passes reports 0.
double tpf(const DecodeTrace & trace, bool count_cache_fill = true);

double tgs_ar(double alpha, double t_f);
double tgs_static(double alpha, double beta, double t_f);
double tgs_dynamic(double alpha, double beta, double gamma, double t_f);

// Piecewise t_f(alpha): constant floor below a compute-bound threshold, then
// linear. threshold = +inf encodes a flat curve.
struct ThroughputModel {
    double floor = 0.0;
    double threshold = 0.0;
    double slope = 0.0;
    double residual_rms = 0.0;

    double t_f(double alpha) const {
        if (alpha <= threshold) return floor;
        return floor + slope * (alpha - threshold);
    }
};

// Least-squares hinge fit over (alpha, seconds-per-pass) measurements.
// Requires at least 4 distinct alpha values.
ThroughputModel fit_tf(const std::vector<std::pair<double, double>> & measurements);

std::string normalize_answer(const std::string & s);

// Most frequent answer after normalization; ties go to the first occurrence.
std::string majority_vote(const std::vector<std::string> & answers);

// True iff one of the first k answers matches gold (after normalization).
bool pass_at_k(const std::vector<std::string> & answers, const std::string & gold, int64_t k);

// Mock-clock engine: drives the real decoder on one stream, then charges
// every forward pass (prefill included) t_f seconds for a batch of alpha
// identical streams.
struct SimResult {
    int64_t passes = 0;  // prefill + denoise + cache_fill, per stream
    int64_t tokens = 0;  // generated tokens per stream
    double gamma = 0.0;
    double tpf_with_cache = 0.0;
    double tpf_no_cache = 0.0;
    double tgs_measured = 0.0;  // alpha * tokens / (passes * t_f)
    double tgs_model = 0.0;     // closed-form TGS at the same alpha/beta(/gamma)
};

SimResult simulate_tgs(const ModelParams<float> & params, const TokenSequence & prompt, const DecodePolicy & policy,
                       double alpha, double t_f);

}  // namespace sdar
