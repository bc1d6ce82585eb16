#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace slottok {

// Fixed 32-entry vocabulary. Ids are stable and ordered: EMPTY, the 16 hex
// digits, punctuation, then the channel tokens.
enum Token : int {
    TOK_EMPTY = 0,
    TOK_HEX_0 = 1,  // hex digit d has id 1 + d, up to TOK_HEX_F = 16
    TOK_HEX_F = 16,
    TOK_COLON = 17,
    TOK_SEMICOLON = 18,
    TOK_COMMA = 19,
    TOK_SLASH = 20,  // reserved, never emitted by the encoder
    TOK_LBRACKET = 21,
    TOK_RBRACKET = 22,
    TOK_LPAREN = 23,
    TOK_RPAREN = 24,
    TOK_CH_PDCCH = 25,  // legacy PDCCH without DCI format
    TOK_CH_PDSCH = 26,
    TOK_CH_PRACH = 27,
    TOK_CH_PUCCH = 28,
    TOK_CH_PUSCH = 29,
    TOK_CH_PDCCH_DCI_0_0 = 30,
    TOK_CH_PDCCH_DCI_1_0 = 31,
};

inline constexpr int kVocabSize = 32;

using TokenSeq = std::vector<int>;

constexpr bool is_hex_token(int id) { return id >= TOK_HEX_0 && id <= TOK_HEX_F; }
constexpr bool is_channel_token(int id) { return id >= TOK_CH_PDCCH && id <= TOK_CH_PDCCH_DCI_1_0; }

constexpr int hex_token(unsigned digit) { return TOK_HEX_0 + static_cast<int>(digit); }
constexpr unsigned hex_value(int id) { return static_cast<unsigned>(id - TOK_HEX_0); }

// Canonical token spellings used by the `.tokens` text rendering.
const std::array<std::string_view, kVocabSize>& token_names();

// Inverse of token_names(); returns nullopt for unknown spellings.
std::optional<int> token_from_name(std::string_view name);

// FNV-1a over the canonical spellings; embedded in checkpoints so a model is
// never applied to a different vocabulary.
std::uint64_t vocab_hash();

std::string render_tokens(const TokenSeq& seq);

}  // namespace slottok
