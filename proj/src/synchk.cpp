#include "slotcast/synchk.hpp"

#include <sstream>

namespace synchk {

using slottok::SyntaxCategory;
using slottok::SyntaxError;

namespace {

using slottok::TOK_CH_PDCCH;
using slottok::TOK_CH_PDCCH_DCI_0_0;
using slottok::TOK_CH_PDCCH_DCI_1_0;
using slottok::TOK_CH_PRACH;
using slottok::TOK_COLON;
using slottok::TOK_COMMA;
using slottok::TOK_EMPTY;
using slottok::TOK_LBRACKET;
using slottok::TOK_LPAREN;
using slottok::TOK_RBRACKET;
using slottok::TOK_RPAREN;
using slottok::TOK_SEMICOLON;

bool is_pdcch_variant(int token) {
    return token == TOK_CH_PDCCH || token == TOK_CH_PDCCH_DCI_0_0 ||
           token == TOK_CH_PDCCH_DCI_1_0;
}

void allow_hex(TokenMask& mask) {
    for (int d = 0; d < 16; ++d) mask[static_cast<std::size_t>(slottok::hex_token(d))] = true;
}

[[noreturn]] void illegal(SyntaxCategory cat, std::size_t position, const std::string& msg) {
    std::ostringstream what;
    what << "illegal token at " << position << ": " << msg << " ("
         << slottok::syntax_category_name(cat) << ")";
    throw SyntaxError(cat, position, what.str());
}

}  // namespace

SlotGrammarState::SlotGrammarState(int expected_slot_digit)
    : expected_digit_(expected_slot_digit % 10) {}

TokenMask SlotGrammarState::allowed_next() const {
    TokenMask mask{};
    switch (phase_) {
        case Phase::ExpectSlotDigit:
            mask[static_cast<std::size_t>(slottok::hex_token(expected_digit_))] = true;
            break;
        case Phase::ExpectColon:
            mask[TOK_COLON] = true;
            break;
        case Phase::ExpectChannelOrEmpty:
            for (int t = TOK_CH_PDCCH; t <= TOK_CH_PDCCH_DCI_1_0; ++t) {
                mask[static_cast<std::size_t>(t)] = true;
            }
            if (empty_ok_) mask[TOK_EMPTY] = true;
            break;
        case Phase::InChannelAfterName:
            allow_hex(mask);
            if (channel_token_ == TOK_CH_PRACH) {
                // RNTI is optional only here; every other channel carries one.
                mask[TOK_LBRACKET] = true;
                mask[TOK_LPAREN] = true;
                mask[TOK_COMMA] = true;
                mask[TOK_SEMICOLON] = true;
            }
            break;
        case Phase::InRntiDigit2:
            allow_hex(mask);
            break;
        case Phase::InFreqOpen:
        case Phase::InFreqComma:
        case Phase::InTimeOpen:
        case Phase::InTimeComma:
            allow_hex(mask);
            break;
        case Phase::InFreqFirstNum:
            if (digits_in_number_ < 2) allow_hex(mask);
            mask[TOK_COMMA] = true;
            break;
        case Phase::InTimeFirstNum:
            if (digits_in_number_ < 2) allow_hex(mask);
            mask[TOK_COMMA] = true;
            break;
        case Phase::InFreqSecondNum:
            if (digits_in_number_ < 2) allow_hex(mask);
            mask[TOK_RBRACKET] = true;
            break;
        case Phase::InTimeSecondNum:
            if (digits_in_number_ < 2) allow_hex(mask);
            mask[TOK_RPAREN] = true;
            break;
        case Phase::ExpectCommaOrSemicolon:
            mask[TOK_SEMICOLON] = true;
            if (!after_empty_) {
                mask[TOK_COMMA] = true;
                if (can_open_freq_) mask[TOK_LBRACKET] = true;
                if (can_open_time_) mask[TOK_LPAREN] = true;
            }
            break;
        case Phase::Done:
            break;  // all false; re-arm with begin_next_slot()
    }
    return mask;
}

void SlotGrammarState::feed(int token, std::size_t position) {
    if (token < 0 || token >= slottok::kVocabSize) {
        illegal(SyntaxCategory::UnexpectedToken, position, "token id out of range");
    }
    const bool allowed = phase_ != Phase::Done && allowed_next()[static_cast<std::size_t>(token)];
    if (!allowed) {
        // Pick the violation category for this phase/token combination.
        switch (phase_) {
            case Phase::ExpectSlotDigit:
                if (slottok::is_hex_token(token)) {
                    illegal(SyntaxCategory::WrongSlotDigit, position,
                            "slot digit does not continue the count");
                }
                illegal(SyntaxCategory::UnexpectedToken, position, "expected the slot digit");
            case Phase::ExpectColon:
                illegal(SyntaxCategory::MissingColon, position,
                        "colon must follow the slot digit");
            case Phase::ExpectChannelOrEmpty:
                if (token == TOK_EMPTY) {
                    illegal(SyntaxCategory::EmptyMisplaced, position,
                            "EMPTY is only valid as the sole slot body");
                }
                illegal(SyntaxCategory::BadChannelStart, position,
                        "channel must start with its channel token");
            case Phase::InChannelAfterName:
            case Phase::InRntiDigit2:
                illegal(SyntaxCategory::UnexpectedToken, position, "RNTI needs two hex digits");
            case Phase::InFreqOpen:
            case Phase::InFreqComma:
                if (token == TOK_RBRACKET) {
                    illegal(SyntaxCategory::BracketArity, position,
                            "bracket group needs two numbers");
                }
                illegal(SyntaxCategory::UnclosedBracket, position,
                        "expected a number inside the bracket group");
            case Phase::InTimeOpen:
            case Phase::InTimeComma:
                if (token == TOK_RPAREN) {
                    illegal(SyntaxCategory::BracketArity, position,
                            "bracket group needs two numbers");
                }
                illegal(SyntaxCategory::UnclosedBracket, position,
                        "expected a number inside the bracket group");
            case Phase::InFreqFirstNum:
            case Phase::InTimeFirstNum:
                if (slottok::is_hex_token(token)) {
                    illegal(SyntaxCategory::BracketArity, position,
                            "interval numbers are at most two digits");
                }
                illegal(SyntaxCategory::UnclosedBracket, position,
                        "expected ',' between the interval bounds");
            case Phase::InFreqSecondNum:
            case Phase::InTimeSecondNum:
                if (slottok::is_hex_token(token)) {
                    illegal(SyntaxCategory::BracketArity, position,
                            "interval numbers are at most two digits");
                }
                illegal(SyntaxCategory::UnclosedBracket, position,
                        "bracket group closed with the wrong bracket");
            case Phase::ExpectCommaOrSemicolon:
                if (after_empty_ && token == TOK_COMMA) {
                    illegal(SyntaxCategory::EmptyMisplaced, position,
                            "EMPTY slot cannot carry further channels");
                }
                illegal(SyntaxCategory::MissingSeparator, position,
                        "expected ',' or ';' after the channel");
            case Phase::Done:
                illegal(SyntaxCategory::UnexpectedToken, position,
                        "slot already complete; reset the state first");
        }
    }

    switch (phase_) {
        case Phase::ExpectSlotDigit:
            phase_ = Phase::ExpectColon;
            break;
        case Phase::ExpectColon:
            phase_ = Phase::ExpectChannelOrEmpty;
            empty_ok_ = true;
            break;
        case Phase::ExpectChannelOrEmpty:
            if (token == TOK_EMPTY) {
                after_empty_ = true;
                phase_ = Phase::ExpectCommaOrSemicolon;
            } else {
                channel_token_ = token;
                can_open_freq_ = !is_pdcch_variant(token);
                can_open_time_ = !is_pdcch_variant(token);
                phase_ = Phase::InChannelAfterName;
            }
            break;
        case Phase::InChannelAfterName:
            if (slottok::is_hex_token(token)) {
                phase_ = Phase::InRntiDigit2;
            } else if (token == TOK_LBRACKET) {
                can_open_freq_ = false;
                digits_in_number_ = 0;
                phase_ = Phase::InFreqOpen;
            } else if (token == TOK_LPAREN) {
                can_open_freq_ = false;
                can_open_time_ = false;
                digits_in_number_ = 0;
                phase_ = Phase::InTimeOpen;
            } else if (token == TOK_COMMA) {
                empty_ok_ = false;
                phase_ = Phase::ExpectChannelOrEmpty;
            } else {  // semicolon
                complete_slot();
            }
            break;
        case Phase::InRntiDigit2:
            phase_ = Phase::ExpectCommaOrSemicolon;
            break;
        case Phase::InFreqOpen:
            digits_in_number_ = 1;
            phase_ = Phase::InFreqFirstNum;
            break;
        case Phase::InFreqFirstNum:
            if (token == TOK_COMMA) {
                phase_ = Phase::InFreqComma;
            } else {
                ++digits_in_number_;
            }
            break;
        case Phase::InFreqComma:
            digits_in_number_ = 1;
            phase_ = Phase::InFreqSecondNum;
            break;
        case Phase::InFreqSecondNum:
            if (token == TOK_RBRACKET) {
                phase_ = Phase::ExpectCommaOrSemicolon;
            } else {
                ++digits_in_number_;
            }
            break;
        case Phase::InTimeOpen:
            digits_in_number_ = 1;
            phase_ = Phase::InTimeFirstNum;
            break;
        case Phase::InTimeFirstNum:
            if (token == TOK_COMMA) {
                phase_ = Phase::InTimeComma;
            } else {
                ++digits_in_number_;
            }
            break;
        case Phase::InTimeComma:
            digits_in_number_ = 1;
            phase_ = Phase::InTimeSecondNum;
            break;
        case Phase::InTimeSecondNum:
            if (token == TOK_RPAREN) {
                can_open_freq_ = false;
                can_open_time_ = false;
                phase_ = Phase::ExpectCommaOrSemicolon;
            } else {
                ++digits_in_number_;
            }
            break;
        case Phase::ExpectCommaOrSemicolon:
            if (token == TOK_SEMICOLON) {
                complete_slot();
            } else if (token == TOK_COMMA) {
                empty_ok_ = false;
                phase_ = Phase::ExpectChannelOrEmpty;
            } else if (token == TOK_LBRACKET) {
                can_open_freq_ = false;
                digits_in_number_ = 0;
                phase_ = Phase::InFreqOpen;
            } else {  // '('
                can_open_freq_ = false;
                can_open_time_ = false;
                digits_in_number_ = 0;
                phase_ = Phase::InTimeOpen;
            }
            break;
        case Phase::Done:
            break;  // unreachable; rejected above
    }
}

void SlotGrammarState::complete_slot() {
    expected_digit_ = (expected_digit_ + 1) % 10;
    phase_ = Phase::Done;
    after_empty_ = false;
    channel_token_ = -1;
    can_open_freq_ = false;
    can_open_time_ = false;
    digits_in_number_ = 0;
}

void SlotGrammarState::begin_next_slot() {
    phase_ = Phase::ExpectSlotDigit;
    after_empty_ = false;
    empty_ok_ = false;
    channel_token_ = -1;
    can_open_freq_ = false;
    can_open_time_ = false;
    digits_in_number_ = 0;
}

std::vector<Violation> validate(const slottok::TokenSeq& seq, int starting_slot_digit) {
    std::vector<Violation> violations;
    SlotGrammarState state(starting_slot_digit);
    std::size_t i = 0;
    bool fed_any_in_slot = false;
    while (i < seq.size()) {
        if (state.done()) {
            state.begin_next_slot();
            fed_any_in_slot = false;
        }
        try {
            state.feed(seq[i], i);
            fed_any_in_slot = true;
            ++i;
        } catch (const SyntaxError& e) {
            violations.push_back({e.position(), e.category(), e.what()});
            // Resynchronize after the next semicolon and keep counting slots.
            while (i < seq.size() && seq[i] != TOK_SEMICOLON) ++i;
            if (i < seq.size()) ++i;
            state = SlotGrammarState((state.expected_slot_digit() + 1) % 10);
            fed_any_in_slot = false;
        }
    }
    if (!state.done() && fed_any_in_slot) {
        violations.push_back({seq.size(), SyntaxCategory::MissingSeparator,
                              "sequence ends inside a slot"});
    }
    return violations;
}

}  // namespace synchk
