#include "slotcast/tokens.hpp"

#include <sstream>

namespace slottok {

const std::array<std::string_view, kVocabSize>& token_names() {
    static const std::array<std::string_view, kVocabSize> names = {
        "EMPTY",                                               // 0
        "0", "1", "2", "3", "4", "5", "6", "7",                // 1..8
        "8", "9", "A", "B", "C", "D", "E", "F",                // 9..16
        ":", ";", ",", "/", "[", "]", "(", ")",                // 17..24
        "PDCCH", "PDSCH", "PRACH", "PUCCH", "PUSCH",           // 25..29
        "PDCCH_DCI_0_0", "PDCCH_DCI_1_0",                      // 30..31
    };
    return names;
}

std::optional<int> token_from_name(std::string_view name) {
    const auto& names = token_names();
    for (int i = 0; i < kVocabSize; ++i) {
        if (names[static_cast<std::size_t>(i)] == name) return i;
    }
    return std::nullopt;
}

std::uint64_t vocab_hash() {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](char c) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    };
    for (const auto& name : token_names()) {
        for (char c : name) mix(c);
        mix('\n');
    }
    return h;
}

std::string render_tokens(const TokenSeq& seq) {
    std::ostringstream out;
    bool first = true;
    for (int id : seq) {
        if (!first) out << ' ';
        first = false;
        if (id >= 0 && id < kVocabSize) {
            out << token_names()[static_cast<std::size_t>(id)];
        } else {
            out << "<bad:" << id << ">";
        }
    }
    return out.str();
}

}  // namespace slottok
