#include "sdar/pack.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace sdar {

PackedBatch PackedBatch::row(int64_t r) const {
    PackedBatch out;
    out.rows = 1;
    out.ctx_len = ctx_len;
    out.block_size = block_size;
    out.ids.assign(ids.begin() + r * ctx_len, ids.begin() + (r + 1) * ctx_len);
    out.loss_mask.assign(loss_mask.begin() + r * ctx_len, loss_mask.begin() + (r + 1) * ctx_len);
    return out;
}

void PackedBatch::append_rows(const PackedBatch & other) {
    if (rows == 0) {
        *this = other;
        return;
    }
    if (other.ctx_len != ctx_len || other.block_size != block_size) {
        throw ConfigError("append_rows: incompatible row geometry");
    }
    ids.insert(ids.end(), other.ids.begin(), other.ids.end());
    loss_mask.insert(loss_mask.end(), other.loss_mask.begin(), other.loss_mask.end());
    rows += other.rows;
}

PackedBatch pack(const std::vector<TokenSequence> & corpus, int64_t ctx_len, int64_t block_size) {
    if (block_size < 1 || ctx_len < 1 || ctx_len % block_size != 0) {
        throw ConfigError("pack: L_ctx must be a positive multiple of B (got L_ctx=" + std::to_string(ctx_len) +
                          ", B=" + std::to_string(block_size) + ")");
    }
    std::vector<int32_t> stream;
    for (const auto & doc : corpus) {
        for (int32_t id : doc) {
            if (!Vocabulary::is_valid(id) || id == Vocabulary::MASK) {
                throw ConfigError("pack: invalid token id in clean document");
            }
            stream.push_back(id);
        }
        stream.push_back(Vocabulary::EOS);
    }

    PackedBatch out;
    out.ctx_len = ctx_len;
    out.block_size = block_size;
    const int64_t n = int64_t(stream.size());
    out.rows = (n + ctx_len - 1) / ctx_len;
    out.ids.assign(size_t(out.rows * ctx_len), Vocabulary::PAD);
    out.loss_mask.assign(size_t(out.rows * ctx_len), 0);
    for (int64_t i = 0; i < n; ++i) {
        out.ids[size_t(i)] = stream[size_t(i)];
        out.loss_mask[size_t(i)] = 1;
    }
    return out;
}

SftRow make_sft_example(const TokenSequence & prompt, const TokenSequence & response, int64_t ctx_len,
                        int64_t block_size) {
    if (block_size < 1 || ctx_len % block_size != 0) {
        throw ConfigError("make_sft_example: L_ctx must be a multiple of B");
    }
    if (response.empty()) {
        throw ConfigError("make_sft_example: empty response gives no loss positions");
    }
    const int64_t p = int64_t(prompt.size());
    const int64_t boundary = (p + block_size - 1) / block_size * block_size;
    const int64_t need = boundary + int64_t(response.size()) + 1;  // response + EOS
    if (need > ctx_len) {
        throw ConfigError("make_sft_example: prompt+response+EOS exceed L_ctx");
    }
    const int64_t resp_end = (need + block_size - 1) / block_size * block_size;

    SftRow out;
    out.response_start = boundary;
    out.row.rows = 1;
    out.row.ctx_len = ctx_len;
    out.row.block_size = block_size;
    out.row.ids.assign(size_t(ctx_len), Vocabulary::PAD);
    out.row.loss_mask.assign(size_t(ctx_len), 0);
    for (int64_t i = 0; i < p; ++i) out.row.ids[size_t(i)] = prompt[size_t(i)];
    for (int64_t i = 0; i < int64_t(response.size()); ++i) {
        out.row.ids[size_t(boundary + i)] = response[size_t(i)];
    }
    out.row.ids[size_t(boundary + int64_t(response.size()))] = Vocabulary::EOS;
    // Loss covers the response, its EOS, and the block-tail filler (trained
    // as PAD) so the corruption region stays block-aligned.
    for (int64_t i = boundary; i < resp_end; ++i) out.row.loss_mask[size_t(i)] = 1;
    return out;
}

namespace {
constexpr char kMagic[4] = {'S', 'D', 'P', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream & os, const T & v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream & is) {
    T v{};
    is.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!is) throw std::runtime_error("packed file truncated");
    return v;
}
}  // namespace

void save_packed(const PackedBatch & batch, const std::string & path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    for (int32_t id : batch.ids) write_pod(os, uint32_t(id));
    for (uint8_t m : batch.loss_mask) write_pod(os, m);
    if (!os) throw std::runtime_error("write failed: " + path);

    nlohmann::json sidecar = {
        {"V", Vocabulary::SIZE},
        {"L_ctx", batch.ctx_len},
        {"B", batch.block_size},
        {"rows", batch.rows},
    };
    std::ofstream js(path + ".json");
    if (!js) throw std::runtime_error("cannot open " + path + ".json for writing");
    js << sidecar.dump(2) << "\n";
}

PackedBatch load_packed(const std::string & path) {
    std::ifstream js(path + ".json");
    if (!js) throw std::runtime_error("missing sidecar " + path + ".json");
    nlohmann::json sidecar = nlohmann::json::parse(js);
    PackedBatch out;
    out.ctx_len = sidecar.at("L_ctx").get<int64_t>();
    out.block_size = sidecar.at("B").get<int64_t>();
    out.rows = sidecar.at("rows").get<int64_t>();
    if (sidecar.at("V").get<int32_t>() != Vocabulary::SIZE) {
        throw std::runtime_error("packed corpus vocabulary does not match this build");
    }

    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
        throw std::runtime_error("bad magic in " + path);
    }
    if (read_pod<uint32_t>(is) != kVersion) throw std::runtime_error("unsupported packed version");
    const int64_t n = out.rows * out.ctx_len;
    out.ids.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) out.ids[size_t(i)] = int32_t(read_pod<uint32_t>(is));
    out.loss_mask.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) out.loss_mask[size_t(i)] = read_pod<uint8_t>(is);
    return out;
}

}  // namespace sdar
