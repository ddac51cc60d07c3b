#include "sdar/bench.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace sdar {

double tpf(const DecodeTrace & trace, bool count_cache_fill) {
    int64_t passes = trace.denoise_passes + (count_cache_fill ? trace.cache_fill_passes : 0);
    if (passes == 0) return 0.0;
    return double(trace.generated_tokens) / double(passes);
}

double tgs_ar(double alpha, double t_f) { return alpha / t_f; }

double tgs_static(double alpha, double beta, double t_f) {
    if (alpha <= 0 || beta <= 0 || t_f <= 0) throw std::invalid_argument("tgs_static: arguments must be positive");
    return alpha * beta / ((beta + 1.0) * t_f);
}

double tgs_dynamic(double alpha, double beta, double gamma, double t_f) {
    if (alpha <= 0 || beta <= 0 || t_f <= 0) throw std::invalid_argument("tgs_dynamic: arguments must be positive");
    if (gamma < 1.0) throw std::invalid_argument("tgs_dynamic: gamma must be >= 1");
    return alpha * beta / ((gamma + 1.0) * t_f);
}

namespace {

struct HingeFit {
    double floor, slope, rss;
};

// For a fixed threshold the model is linear in (floor, slope); closed-form LS.
HingeFit fit_at_threshold(const std::vector<std::pair<double, double>> & pts, double threshold) {
    double s11 = 0, s1x = 0, sxx = 0, s1y = 0, sxy = 0;
    for (auto & [a, t] : pts) {
        const double x = std::max(0.0, a - threshold);
        s11 += 1;
        s1x += x;
        sxx += x * x;
        s1y += t;
        sxy += x * t;
    }
    const double det = s11 * sxx - s1x * s1x;
    double floor, slope;
    if (std::abs(det) < 1e-12) {  // all points on the flat side
        floor = s1y / s11;
        slope = 0.0;
    } else {
        floor = (sxx * s1y - s1x * sxy) / det;
        slope = (s11 * sxy - s1x * s1y) / det;
    }
    if (slope < 0) {  // t_f is non-decreasing; fall back to the flat fit
        floor = s1y / s11;
        slope = 0.0;
    }
    double rss = 0;
    for (auto & [a, t] : pts) {
        const double pred = floor + slope * std::max(0.0, a - threshold);
        rss += (t - pred) * (t - pred);
    }
    return {floor, slope, rss};
}

}  // namespace

ThroughputModel fit_tf(const std::vector<std::pair<double, double>> & measurements) {
    std::vector<double> alphas;
    for (auto & [a, t] : measurements) {
        if (t <= 0) throw std::invalid_argument("fit_tf: forward-pass times must be positive");
        alphas.push_back(a);
    }
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
    if (alphas.size() < 4) {
        throw std::invalid_argument("fit_tf: need at least 4 distinct batch sizes (underdetermined)");
    }

    const double lo = alphas.front(), hi = alphas.back();
    double best_thr = std::numeric_limits<double>::infinity();
    HingeFit best = fit_at_threshold(measurements, hi);  // flat curve candidate
    best.slope = 0.0;
    {
        // A flat fit's threshold is reported as +inf.
        double mean = 0;
        for (auto & [a, t] : measurements) mean += t;
        mean /= double(measurements.size());
        double rss = 0;
        for (auto & [a, t] : measurements) rss += (t - mean) * (t - mean);
        best = {mean, 0.0, rss};
    }

    constexpr int kGrid = 1024;
    for (int i = 0; i <= kGrid; ++i) {
        const double thr = lo + (hi - lo) * double(i) / double(kGrid);
        HingeFit f = fit_at_threshold(measurements, thr);
        if (f.rss < best.rss - 1e-15) {
            best = f;
            best_thr = thr;
        }
    }
    if (std::isfinite(best_thr)) {
        // Golden-section refinement around the best grid point.
        double a = std::max(lo, best_thr - (hi - lo) / kGrid);
        double b = std::min(hi, best_thr + (hi - lo) / kGrid);
        for (int it = 0; it < 60; ++it) {
            const double m1 = a + (b - a) / 3, m2 = b - (b - a) / 3;
            if (fit_at_threshold(measurements, m1).rss < fit_at_threshold(measurements, m2).rss) b = m2;
            else a = m1;
        }
        best_thr = (a + b) / 2;
        best = fit_at_threshold(measurements, best_thr);
        if (best.slope == 0.0) best_thr = std::numeric_limits<double>::infinity();
    }

    ThroughputModel out;
    out.floor = best.floor;
    out.threshold = best_thr;
    out.slope = best.slope;
    out.residual_rms = std::sqrt(best.rss / double(measurements.size()));
    return out;
}

std::string normalize_answer(const std::string & s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    std::string out = s.substr(b, e - b);
    for (char & c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string majority_vote(const std::vector<std::string> & answers) {
    if (answers.empty()) throw std::invalid_argument("majority_vote: no answers");
    std::map<std::string, int64_t> counts;
    std::vector<std::string> order;
    for (const auto & a : answers) {
        const std::string n = normalize_answer(a);
        if (counts.find(n) == counts.end()) order.push_back(n);
        counts[n] += 1;
    }
    std::string best;
    int64_t best_count = -1;
    for (const auto & n : order) {  // first occurrence wins ties
        if (counts[n] > best_count) {
            best = n;
            best_count = counts[n];
        }
    }
    return best;
}

bool pass_at_k(const std::vector<std::string> & answers, const std::string & gold, int64_t k) {
    if (k <= 0) throw std::invalid_argument("pass_at_k: k must be positive");
    if (int64_t(answers.size()) < k) throw std::invalid_argument("pass_at_k: fewer than k answers");
    const std::string g = normalize_answer(gold);
    for (int64_t i = 0; i < k; ++i) {
        if (normalize_answer(answers[size_t(i)]) == g) return true;
    }
    return false;
}

SimResult simulate_tgs(const ModelParams<float> & params, const TokenSequence & prompt, const DecodePolicy & policy,
                       double alpha, double t_f) {
    GenerateResult gen = generate(params, prompt, policy);
    SimResult out;
    out.passes = gen.trace.prefill_passes + gen.trace.denoise_passes + gen.trace.cache_fill_passes;
    out.tokens = gen.trace.generated_tokens;
    out.gamma = gen.trace.gamma();
    out.tpf_with_cache = tpf(gen.trace, true);
    out.tpf_no_cache = tpf(gen.trace, false);
    if (out.passes > 0) out.tgs_measured = alpha * double(out.tokens) / (double(out.passes) * t_f);
    const double beta = double(policy.block_size);
    out.tgs_model = policy.mode == DecodeMode::static_steps ? tgs_static(alpha, beta, t_f)
                                                            : tgs_dynamic(alpha, beta, std::max(1.0, out.gamma), t_f);
    return out;
}

}  // namespace sdar
