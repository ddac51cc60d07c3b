#include "sdar/vocab.hpp"

namespace sdar {

TokenSequence encode(std::string_view text) {
    TokenSequence ids;
    ids.reserve(text.size());
    for (unsigned char ch : text) ids.push_back(int32_t(ch));
    return ids;
}

std::string decode(const TokenSequence & ids) {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id >= 0 && id < 256) out.push_back(char(static_cast<unsigned char>(id)));
    }
    return out;
}

}  // namespace sdar
