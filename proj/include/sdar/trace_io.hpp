// Decode-trace export: JSON-lines with one record per forward pass plus a
// trailing summary record.
#pragma once

#include <string>

#include "sdar/decoder.hpp"

namespace sdar {

void write_trace_jsonl(const std::string & path, const DecodeTrace & trace);

// Reads a trace file back; pass records are reconstructed and the summary
// recomputed from them (the stored summary is cross-checked).
DecodeTrace read_trace_jsonl(const std::string & path);

std::string trace_summary_text(const DecodeTrace & trace);

}  // namespace sdar
