// Byte-level vocabulary: ids 0..255 are raw bytes, 256..259 are the reserved
// specials PAD, BOS, EOS, MASK.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sdar {

struct Vocabulary {
    static constexpr int32_t PAD = 256;
    static constexpr int32_t BOS = 257;
    static constexpr int32_t EOS = 258;
    static constexpr int32_t MASK = 259;
    static constexpr int32_t SIZE = 260;

    static constexpr bool is_special(int32_t id) { return id >= 256 && id < SIZE; }
    static constexpr bool is_valid(int32_t id) { return id >= 0 && id < SIZE; }
};

using TokenSequence = std::vector<int32_t>;

TokenSequence encode(std::string_view text);

// Inverse of encode on byte tokens; special ids are skipped so generated
// sequences still map to printable text.
std::string decode(const TokenSequence & ids);

}  // namespace sdar
