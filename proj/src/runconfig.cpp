#include "sdar/runconfig.hpp"

#include <fstream>
#include <map>

namespace sdar {

namespace {

enum class Kind { integer, number, string, boolean, num_array };

const std::map<std::string, std::map<std::string, Kind>> & schema() {
    static const std::map<std::string, std::map<std::string, Kind>> s = {
        {"model",
         {
             {"layers", Kind::integer},
             {"heads", Kind::integer},
             {"model_dim", Kind::integer},
             {"ff_dim", Kind::integer},
             {"max_ctx", Kind::integer},
             {"positions", Kind::string},
             {"rope_theta", Kind::number},
         }},
        {"train",
         {
             {"objective", Kind::string},
             {"steps", Kind::integer},
             {"batch_rows", Kind::integer},
             {"block_size", Kind::integer},
             {"lr", Kind::number},
             {"beta1", Kind::number},
             {"beta2", Kind::number},
             {"adam_eps", Kind::number},
             {"weight_decay", Kind::number},
             {"grad_clip", Kind::number},
             {"warmup_steps", Kind::integer},
             {"lr_floor", Kind::number},
             {"seed", Kind::integer},
             {"t_min", Kind::number},
             {"ckpt_every", Kind::integer},
             {"eval_every", Kind::integer},
             {"log_csv", Kind::string},
         }},
        {"decode",
         {
             {"mode", Kind::string},  // static | dynamic
             {"block", Kind::integer},
             {"steps", Kind::integer},
             {"tau", Kind::number},
             {"min_per_step", Kind::integer},
             {"sampler", Kind::string},  // greedy | sample
             {"temperature", Kind::number},
             {"top_p", Kind::number},
             {"top_k", Kind::integer},
             {"max_blocks", Kind::integer},
             {"seed", Kind::integer},
             {"stop_on_eos", Kind::boolean},
             {"pad_prompt", Kind::boolean},
             {"fused_cache_fill", Kind::boolean},
         }},
        {"data",
         {
             {"input", Kind::string},
             {"train", Kind::string},
             {"eval", Kind::string},
             {"out", Kind::string},
             {"ctx", Kind::integer},
             {"block", Kind::integer},
             {"per_file", Kind::boolean},
             {"eval_rows", Kind::integer},
         }},
        {"bench",
         {
             {"alphas", Kind::num_array},
             {"betas", Kind::num_array},
             {"taus", Kind::num_array},
             {"tf", Kind::number},
             {"max_blocks", Kind::integer},
             {"reps", Kind::integer},
             {"task", Kind::string},
             {"count", Kind::integer},
             {"seed", Kind::integer},
         }},
    };
    return s;
}

bool kind_matches(const nlohmann::json & v, Kind k) {
    switch (k) {
        case Kind::integer: return v.is_number_integer();
        case Kind::number: return v.is_number();
        case Kind::string: return v.is_string();
        case Kind::boolean: return v.is_boolean();
        case Kind::num_array: {
            if (!v.is_array()) return false;
            for (const auto & e : v) {
                if (!e.is_number()) return false;
            }
            return true;
        }
    }
    return false;
}

const char * kind_name(Kind k) {
    switch (k) {
        case Kind::integer: return "integer";
        case Kind::number: return "number";
        case Kind::string: return "string";
        case Kind::boolean: return "boolean";
        case Kind::num_array: return "array of numbers";
    }
    return "?";
}

}  // namespace

RunConfig validate_run_config(const nlohmann::json & doc) {
    if (!doc.is_object()) throw ConfigError("config error at <root>: expected an object");
    for (const auto & [section, body] : doc.items()) {
        auto sit = schema().find(section);
        if (sit == schema().end()) throw ConfigError("config error at " + section + ": unknown section");
        if (!body.is_object()) throw ConfigError("config error at " + section + ": expected an object");
        for (const auto & [key, value] : body.items()) {
            auto kit = sit->second.find(key);
            if (kit == sit->second.end()) {
                throw ConfigError("config error at " + section + "." + key + ": unknown key");
            }
            if (!kind_matches(value, kit->second)) {
                throw ConfigError("config error at " + section + "." + key + ": expected " +
                                  kind_name(kit->second));
            }
        }
    }
    RunConfig cfg;
    cfg.raw = doc;
    return cfg;
}

RunConfig load_run_config(const std::string & path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error & e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return validate_run_config(doc);
}

namespace {
template <typename T>
T get_or(const nlohmann::json & raw, const std::string & section, const std::string & key, T fallback) {
    if (!raw.contains(section)) return fallback;
    const auto & s = raw.at(section);
    if (!s.contains(key)) return fallback;
    return s.at(key).get<T>();
}
}  // namespace

ModelConfig RunConfig::model() const {
    ModelConfig c;
    c.layers = get_or<int64_t>(raw, "model", "layers", 4);
    c.heads = get_or<int64_t>(raw, "model", "heads", 4);
    c.model_dim = get_or<int64_t>(raw, "model", "model_dim", 128);
    c.ff_dim = get_or<int64_t>(raw, "model", "ff_dim", 256);
    c.max_ctx = get_or<int64_t>(raw, "model", "max_ctx", 64);
    c.rope_theta = get_or<double>(raw, "model", "rope_theta", 10000.0);
    const std::string pos = get_or<std::string>(raw, "model", "positions", "rotary");
    if (pos != "rotary" && pos != "learned") {
        throw ConfigError("config error at model.positions: expected \"rotary\" or \"learned\"");
    }
    c.positions = pos == "rotary" ? PositionKind::rotary : PositionKind::learned;
    c.vocab = Vocabulary::SIZE;
    c.validate();
    return c;
}

TrainConfig RunConfig::train() const {
    TrainConfig c;
    c.objective = get_or<std::string>(raw, "train", "objective", c.objective);
    c.steps = get_or<int64_t>(raw, "train", "steps", c.steps);
    c.batch_rows = get_or<int64_t>(raw, "train", "batch_rows", c.batch_rows);
    c.block_size = get_or<int64_t>(raw, "train", "block_size", c.block_size);
    c.lr = get_or<double>(raw, "train", "lr", c.lr);
    c.beta1 = get_or<double>(raw, "train", "beta1", c.beta1);
    c.beta2 = get_or<double>(raw, "train", "beta2", c.beta2);
    c.adam_eps = get_or<double>(raw, "train", "adam_eps", c.adam_eps);
    c.weight_decay = get_or<double>(raw, "train", "weight_decay", c.weight_decay);
    c.grad_clip = get_or<double>(raw, "train", "grad_clip", c.grad_clip);
    c.warmup_steps = get_or<int64_t>(raw, "train", "warmup_steps", c.warmup_steps);
    c.lr_floor = get_or<double>(raw, "train", "lr_floor", c.lr_floor);
    c.seed = uint64_t(get_or<int64_t>(raw, "train", "seed", int64_t(c.seed)));
    c.t_min = get_or<double>(raw, "train", "t_min", c.t_min);
    c.ckpt_every = get_or<int64_t>(raw, "train", "ckpt_every", c.ckpt_every);
    c.eval_every = get_or<int64_t>(raw, "train", "eval_every", c.eval_every);
    c.log_csv = get_or<std::string>(raw, "train", "log_csv", c.log_csv);
    c.validate();
    return c;
}

DecodePolicy RunConfig::decode() const {
    DecodePolicy p;
    const std::string mode = get_or<std::string>(raw, "decode", "mode", "dynamic");
    if (mode == "static") p.mode = DecodeMode::static_steps;
    else if (mode == "dynamic") p.mode = DecodeMode::dynamic_threshold;
    else throw ConfigError("config error at decode.mode: expected \"static\" or \"dynamic\"");
    p.block_size = get_or<int64_t>(raw, "decode", "block", p.block_size);
    p.steps = get_or<int64_t>(raw, "decode", "steps", p.block_size);
    p.tau = get_or<double>(raw, "decode", "tau", p.tau);
    p.min_per_step = get_or<int64_t>(raw, "decode", "min_per_step", p.min_per_step);
    const std::string sampler = get_or<std::string>(raw, "decode", "sampler", "greedy");
    if (sampler == "greedy") p.sampler = SamplerKind::greedy;
    else if (sampler == "sample") p.sampler = SamplerKind::sample;
    else throw ConfigError("config error at decode.sampler: expected \"greedy\" or \"sample\"");
    p.temperature = get_or<double>(raw, "decode", "temperature", p.temperature);
    p.top_p = get_or<double>(raw, "decode", "top_p", p.top_p);
    p.top_k = get_or<int64_t>(raw, "decode", "top_k", p.top_k);
    p.max_blocks = get_or<int64_t>(raw, "decode", "max_blocks", p.max_blocks);
    p.seed = uint64_t(get_or<int64_t>(raw, "decode", "seed", int64_t(p.seed)));
    p.stop_on_eos = get_or<bool>(raw, "decode", "stop_on_eos", p.stop_on_eos);
    p.pad_prompt_to_block = get_or<bool>(raw, "decode", "pad_prompt", p.pad_prompt_to_block);
    p.fused_cache_fill = get_or<bool>(raw, "decode", "fused_cache_fill", p.fused_cache_fill);
    p.validate();
    return p;
}

std::string RunConfig::data_str(const std::string & key, const std::string & fallback) const {
    return get_or<std::string>(raw, "data", key, fallback);
}

int64_t RunConfig::data_int(const std::string & key, int64_t fallback) const {
    return get_or<int64_t>(raw, "data", key, fallback);
}

void apply_override(RunConfig & cfg, const std::string & assignment) {
    const size_t eq = assignment.find('=');
    const size_t dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("override must look like section.key=value: " + assignment);
    }
    const std::string section = assignment.substr(0, dot);
    const std::string key = assignment.substr(dot + 1, eq - dot - 1);
    const std::string value = assignment.substr(eq + 1);
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error &) {
        parsed = value;  // bare strings
    }
    nlohmann::json doc = cfg.raw;
    doc[section][key] = parsed;
    cfg = validate_run_config(doc);
}

}  // namespace sdar
