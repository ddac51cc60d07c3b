#include "sdar/trace_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

#include "sdar/bench.hpp"

namespace sdar {

void write_trace_jsonl(const std::string & path, const DecodeTrace & trace) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    for (const TracePass & p : trace.passes) {
        nlohmann::json rec = {
            {"pass_kind", pass_kind_name(p.kind)},
            {"block", p.block},
            {"positions", p.positions},
            {"confidences", p.confidences},
            {"tokens", p.tokens},
        };
        os << rec.dump() << "\n";
    }
    nlohmann::json summary = {
        {"summary", true},
        {"generated_tokens", trace.generated_tokens},
        {"denoise_passes", trace.denoise_passes},
        {"cache_fill_passes", trace.cache_fill_passes},
        {"prefill_passes", trace.prefill_passes},
        {"blocks_decoded", trace.blocks_decoded},
        {"gamma", trace.gamma()},
        {"tpf_with_cache", tpf(trace, true)},
        {"tpf_no_cache", tpf(trace, false)},
    };
    os << summary.dump() << "\n";
}

DecodeTrace read_trace_jsonl(const std::string & path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    DecodeTrace trace;
    nlohmann::json summary;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        if (rec.contains("summary")) {
            summary = rec;
            continue;
        }
        TracePass p;
        const std::string kind = rec.at("pass_kind").get<std::string>();
        if (kind == "prefill") p.kind = PassKind::prefill;
        else if (kind == "denoise") p.kind = PassKind::denoise;
        else if (kind == "cache_fill") p.kind = PassKind::cache_fill;
        else throw std::runtime_error("trace: unknown pass kind " + kind);
        p.block = rec.at("block").get<int64_t>();
        p.positions = rec.at("positions").get<std::vector<int64_t>>();
        p.confidences = rec.at("confidences").get<std::vector<double>>();
        p.tokens = rec.at("tokens").get<std::vector<int32_t>>();
        switch (p.kind) {
            case PassKind::prefill: trace.prefill_passes += 1; break;
            case PassKind::denoise:
                trace.denoise_passes += 1;
                trace.generated_tokens += int64_t(p.positions.size());
                break;
            case PassKind::cache_fill: trace.cache_fill_passes += 1; break;
        }
        trace.passes.push_back(std::move(p));
    }
    // blocks_decoded = distinct blocks with at least one denoise pass
    int64_t last = -2;
    for (const TracePass & p : trace.passes) {
        if (p.kind == PassKind::denoise && p.block != last) {
            trace.blocks_decoded += 1;
            last = p.block;
        }
    }
    if (!summary.is_null()) {
        if (summary.at("generated_tokens").get<int64_t>() != trace.generated_tokens ||
            summary.at("denoise_passes").get<int64_t>() != trace.denoise_passes ||
            summary.at("cache_fill_passes").get<int64_t>() != trace.cache_fill_passes) {
            throw std::runtime_error("trace: summary record disagrees with pass records");
        }
    }
    return trace;
}

std::string trace_summary_text(const DecodeTrace & trace) {
    std::ostringstream os;
    os << "passes: " << trace.passes.size() << " (prefill " << trace.prefill_passes << ", denoise "
       << trace.denoise_passes << ", cache_fill " << trace.cache_fill_passes << ")\n"
       << "blocks decoded: " << trace.blocks_decoded << "\n"
       << "generated tokens: " << trace.generated_tokens << "\n"
       << "gamma (denoise passes / block): " << trace.gamma() << "\n"
       << "tpf (cache fills counted): " << tpf(trace, true) << "\n"
       << "tpf (cache fills excluded): " << tpf(trace, false) << "\n";
    return os.str();
}

}  // namespace sdar
