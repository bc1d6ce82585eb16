#pragma once

#include <vector>

#include "slotcast/phylog.hpp"
#include "slotcast/rng.hpp"
#include "slotcast/tokens.hpp"

namespace testutil {

using slottok::TokenSeq;

// "8: PDCCH-DCI-1_0 01, PDSCH 01 [0,60] (1,E) ;" — 21 tokens.
inline TokenSeq reference_slot_tokens() {
    using namespace slottok;
    return {hex_token(8), TOK_COLON,
            TOK_CH_PDCCH_DCI_1_0, hex_token(0), hex_token(1), TOK_COMMA,
            TOK_CH_PDSCH, hex_token(0), hex_token(1),
            TOK_LBRACKET, hex_token(0), TOK_COMMA, hex_token(6), hex_token(0), TOK_RBRACKET,
            TOK_LPAREN, hex_token(1), TOK_COMMA, hex_token(0xE), TOK_RPAREN,
            TOK_SEMICOLON};
}

// The same slot with a spurious trailing "PUCCH 01 (0,E)" — 30 tokens.
inline TokenSeq predicted_slot_tokens() {
    using namespace slottok;
    TokenSeq seq = reference_slot_tokens();
    seq.pop_back();  // drop ';'
    const TokenSeq tail = {TOK_COMMA, TOK_CH_PUCCH, hex_token(0), hex_token(1),
                           TOK_LPAREN, hex_token(0), TOK_COMMA, hex_token(0xE), TOK_RPAREN,
                           TOK_SEMICOLON};
    seq.insert(seq.end(), tail.begin(), tail.end());
    return seq;
}

inline phylog::SlotRecord reference_slot_record() {
    phylog::SlotRecord rec;
    rec.slot_id = {265, 8};
    phylog::ChannelMessage dci;
    dci.kind = phylog::ChannelKind::PdcchDci10;
    dci.rnti_suffix = 0x01;
    phylog::ChannelMessage pdsch;
    pdsch.kind = phylog::ChannelKind::Pdsch;
    pdsch.rnti_suffix = 0x01;
    pdsch.freq = phylog::Interval{0, 96};
    pdsch.time = phylog::Interval{1, 14};
    rec.messages = {dci, pdsch};
    return rec;
}

// Randomized records. With grammar_strict, the record also satisfies the slot
// grammar (RNTI on every non-PRACH channel, no intervals on PDCCH).
inline phylog::SlotRecord random_record(rng::Stream& stream, int slot, bool grammar_strict) {
    using phylog::ChannelKind;
    phylog::SlotRecord rec;
    rec.slot_id = {static_cast<int>(stream.next_below(1024)), slot};
    const std::size_t n_msgs = stream.next_below(4);  // 0..3
    for (std::size_t m = 0; m < n_msgs; ++m) {
        static const ChannelKind kinds[] = {
            ChannelKind::PdcchDci00, ChannelKind::PdcchDci10, ChannelKind::Pdsch,
            ChannelKind::Pusch,      ChannelKind::Pucch,      ChannelKind::Prach,
        };
        phylog::ChannelMessage msg;
        msg.kind = kinds[stream.next_below(6)];
        const bool is_pdcch =
            msg.kind == ChannelKind::PdcchDci00 || msg.kind == ChannelKind::PdcchDci10;
        const bool rnti_required = grammar_strict && msg.kind != ChannelKind::Prach;
        if (rnti_required || stream.bernoulli(0.8)) {
            msg.rnti_suffix = static_cast<std::uint8_t>(stream.next_below(256));
        }
        if (!is_pdcch) {
            if (stream.bernoulli(0.7)) {
                int start = static_cast<int>(stream.next_below(200));
                int end = start + 1 + static_cast<int>(stream.next_below(
                                          static_cast<std::uint64_t>(255 - start)));
                msg.freq = phylog::Interval{start, end};
            }
            if (stream.bernoulli(0.7)) {
                int start = static_cast<int>(stream.next_below(13));
                int end = start + 1 + static_cast<int>(stream.next_below(
                                          static_cast<std::uint64_t>(14 - start)));
                msg.time = phylog::Interval{start, end};
            }
        }
        rec.messages.push_back(msg);
    }
    return rec;
}

inline std::vector<phylog::SlotRecord> random_record_stream(rng::Stream& stream, std::size_t n,
                                                            bool grammar_strict) {
    std::vector<phylog::SlotRecord> records;
    int slot = 0;
    int sfn = 0;
    for (std::size_t i = 0; i < n; ++i) {
        phylog::SlotRecord rec = random_record(stream, slot, grammar_strict);
        rec.slot_id.sfn = sfn;
        records.push_back(std::move(rec));
        if (++slot == 10) {
            slot = 0;
            sfn = (sfn + 1) % 1024;
        }
    }
    return records;
}

}  // namespace testutil
