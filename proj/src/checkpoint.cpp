#include "sdar/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace sdar {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream & os, const T & v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream & is) {
    T v{};
    is.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint truncated");
    return v;
}

nlohmann::json config_to_json(const ModelConfig & c) {
    return {
        {"layers", c.layers},
        {"heads", c.heads},
        {"model_dim", c.model_dim},
        {"ff_dim", c.ff_dim},
        {"vocab", c.vocab},
        {"max_ctx", c.max_ctx},
        {"positions", c.positions == PositionKind::rotary ? "rotary" : "learned"},
        {"rope_theta", c.rope_theta},
    };
}

ModelConfig config_from_json(const nlohmann::json & j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.model_dim = j.at("model_dim").get<int64_t>();
    c.ff_dim = j.at("ff_dim").get<int64_t>();
    c.vocab = j.at("vocab").get<int64_t>();
    c.max_ctx = j.at("max_ctx").get<int64_t>();
    const std::string pos = j.at("positions").get<std::string>();
    if (pos != "rotary" && pos != "learned") throw std::runtime_error("checkpoint: bad positions kind");
    c.positions = pos == "rotary" ? PositionKind::rotary : PositionKind::learned;
    c.rope_theta = j.at("rope_theta").get<double>();
    c.validate();
    return c;
}

}  // namespace

void save_checkpoint(const std::string & path, ModelParams<float> & params, const CheckpointMeta & meta) {
    if (!(params.config == meta.config)) throw ConfigError("save_checkpoint: meta config mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    nlohmann::json header = {
        {"model", config_to_json(meta.config)},
        {"objective", meta.objective},
        {"step", meta.step},
        {"seed", meta.seed},
    };
    const std::string hj = header.dump();
    write_pod(os, uint64_t(hj.size()));
    os.write(hj.data(), std::streamsize(hj.size()));

    auto named = params.named();
    write_pod(os, uint32_t(named.size()));
    for (auto & [name, t] : named) {
        write_pod(os, uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        write_pod(os, uint32_t(t->shape.size()));
        for (int64_t d : t->shape) write_pod(os, uint32_t(d));
        os.write(reinterpret_cast<const char *>(t->data()), std::streamsize(t->numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::pair<ModelParams<float>, CheckpointMeta> load_checkpoint(const std::string & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad checkpoint magic in " + path);
    if (read_pod<uint32_t>(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");
    const uint64_t hlen = read_pod<uint64_t>(is);
    std::string hj(hlen, '\0');
    is.read(hj.data(), std::streamsize(hlen));
    if (!is) throw std::runtime_error("checkpoint truncated");
    nlohmann::json header = nlohmann::json::parse(hj);

    CheckpointMeta meta;
    meta.config = config_from_json(header.at("model"));
    meta.objective = header.at("objective").get<std::string>();
    meta.step = header.at("step").get<int64_t>();
    meta.seed = header.at("seed").get<uint64_t>();

    ModelParams<float> params = ModelParams<float>::init(meta.config, 0);
    auto named = params.named();
    const uint32_t ntensors = read_pod<uint32_t>(is);
    if (ntensors != named.size()) throw std::runtime_error("checkpoint: tensor count does not match config");
    for (auto & [name, t] : named) {
        const uint32_t nlen = read_pod<uint32_t>(is);
        std::string got(nlen, '\0');
        is.read(got.data(), std::streamsize(nlen));
        if (got != name) throw std::runtime_error("checkpoint: expected tensor '" + name + "', found '" + got + "'");
        const uint32_t rank = read_pod<uint32_t>(is);
        if (rank != t->shape.size()) throw std::runtime_error("checkpoint: rank mismatch for " + name);
        for (int64_t d : t->shape) {
            if (read_pod<uint32_t>(is) != uint32_t(d)) {
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
            }
        }
        is.read(reinterpret_cast<char *>(t->data()), std::streamsize(t->numel() * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint truncated in " + name);
    }
    return {std::move(params), std::move(meta)};
}

}  // namespace sdar
