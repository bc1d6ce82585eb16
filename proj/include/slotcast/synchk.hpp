#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "slotcast/slottok.hpp"
#include "slotcast/tokens.hpp"

namespace synchk {

using TokenMask = std::array<bool, slottok::kVocabSize>;

// Incremental automaton over the single-slot grammar:
//   digit(expected) ':' body ';'
//   body   := EMPTY | channel (',' channel)*
//   channel:= channel-token rnti? freq? time?     (rnti mandatory except PRACH)
//   rnti   := two hex digits
//   freq   := '[' num ',' num ']'                 (not after PDCCH variants)
//   time   := '(' num ',' num ')'                 (not after PDCCH variants)
//   num    := one or two hex digits
// The slot digit must equal the expected digit, which counts up with 0
// following 9. Semicolon completes the slot (Done) and advances the expected
// digit.
class SlotGrammarState {
  public:
    enum class Phase {
        ExpectSlotDigit,
        ExpectColon,
        ExpectChannelOrEmpty,
        InChannelAfterName,
        InRntiDigit2,
        InFreqOpen,
        InFreqFirstNum,
        InFreqComma,
        InFreqSecondNum,
        InTimeOpen,
        InTimeFirstNum,
        InTimeComma,
        InTimeSecondNum,
        ExpectCommaOrSemicolon,
        Done,
    };

    explicit SlotGrammarState(int expected_slot_digit = 0);

    Phase phase() const { return phase_; }
    bool done() const { return phase_ == Phase::Done; }
    int expected_slot_digit() const { return expected_digit_; }

    // Token mask for the current state; never all-false on a live state.
    TokenMask allowed_next() const;

    // Advances by one token. Throws slottok::SyntaxError (IllegalToken) when
    // the token is not permitted by allowed_next(); position is the caller's
    // token index for error reporting.
    void feed(int token, std::size_t position = 0);

    // Re-arms a Done state for the next slot (the expected digit has already
    // been advanced by the semicolon).
    void begin_next_slot();

  private:
    void complete_slot();

    Phase phase_ = Phase::ExpectSlotDigit;
    int expected_digit_ = 0;
    int digits_in_number_ = 0;
    int channel_token_ = -1;  // token id of the current channel
    bool can_open_freq_ = false;
    bool can_open_time_ = false;
    bool after_empty_ = false;
    bool empty_ok_ = false;  // EMPTY permitted only directly after the colon
};

struct Violation {
    std::size_t position = 0;
    slottok::SyntaxCategory category = slottok::SyntaxCategory::UnexpectedToken;
    std::string detail;
};

// Runs the automaton over a multi-slot sequence in recovery mode: an illegal
// token is recorded and the automaton resynchronizes at the next semicolon.
// An empty result means the sequence is fully valid.
std::vector<Violation> validate(const slottok::TokenSeq& seq, int starting_slot_digit);

}  // namespace synchk
