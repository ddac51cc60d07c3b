// Declarative run configuration: one JSON file with model / train / decode /
// data / bench sections, schema-validated before any work. CLI flags override
// individual keys.
#pragma once

#include <nlohmann/json.hpp>

#include <string>

#include "sdar/decoder.hpp"
#include "sdar/model.hpp"
#include "sdar/objectives.hpp"

namespace sdar {

struct RunConfig {
    nlohmann::json raw;  // validated, defaults merged

    ModelConfig model() const;
    TrainConfig train() const;
    DecodePolicy decode() const;

    std::string data_str(const std::string & key, const std::string & fallback = "") const;
    int64_t data_int(const std::string & key, int64_t fallback) const;
};

// Parses and validates a config file. Unknown sections/keys and type
// mismatches raise ConfigError naming the offending path (e.g. "decode.tau").
RunConfig load_run_config(const std::string & path);

// Validates an in-memory document (tests use this directly).
RunConfig validate_run_config(const nlohmann::json & doc);

// Applies a "section.key=value" override string.
void apply_override(RunConfig & cfg, const std::string & assignment);

}  // namespace sdar
