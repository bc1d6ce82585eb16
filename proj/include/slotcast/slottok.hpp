#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotcast/phylog.hpp"
#include "slotcast/tokens.hpp"

namespace slottok {

class TokenError : public std::runtime_error {
  public:
    explicit TokenError(const std::string& what) : std::runtime_error(what) {}
};

// Categories shared with the syntax checker; decode errors reuse them.
enum class SyntaxCategory {
    WrongSlotDigit,
    MissingColon,
    BadChannelStart,
    UnclosedBracket,
    BracketArity,
    MissingSeparator,
    UnexpectedToken,
    EmptyMisplaced,
};

const char* syntax_category_name(SyntaxCategory c);

class SyntaxError : public std::runtime_error {
  public:
    SyntaxError(SyntaxCategory category, std::size_t position, const std::string& what);

    SyntaxCategory category() const { return category_; }
    std::size_t position() const { return position_; }

  private:
    SyntaxCategory category_;
    std::size_t position_;
};

// Slot -> tokens, per the fixed layout: slot digit, colon, messages separated
// by commas, semicolon. RNTI renders as exactly two hex digits; interval
// bounds as minimal-width uppercase hex; frequency uses square brackets, time
// uses parentheses; an empty slot renders as digit, colon, EMPTY, semicolon.
// The SFN is dropped. Throws TokenError for RNTIs outside [0, 0xFF] or
// negative interval bounds.
TokenSeq encode_slot(const phylog::SlotRecord& rec);

// Inverse of encode_slot for a single slot. Accepts any structurally valid
// slot sequence (RNTI optional for every channel); throws SyntaxError
// otherwise. Intervals are reconstructed half-open with the hex end value.
phylog::SlotRecord decode_tokens(const TokenSeq& seq);

// Concatenation of per-slot encodings; records must be contiguous in slot
// time (the semicolon already delimits slots).
TokenSeq encode_stream(const std::vector<phylog::SlotRecord>& records);

// Token-id binary file: magic "SLTK1", then one byte per token id.
void write_token_file(const std::string& path, const TokenSeq& seq);
TokenSeq read_token_file(const std::string& path);

// Debug text rendering: one slot per line, tokens space-separated.
void write_token_text(std::ostream& out, const TokenSeq& seq);
void write_token_text_file(const std::string& path, const TokenSeq& seq);

}  // namespace slottok
