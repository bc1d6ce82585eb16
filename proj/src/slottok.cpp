#include "slotcast/slottok.hpp"

#include <fstream>
#include <sstream>

namespace slottok {

namespace {

constexpr char kTokenFileMagic[5] = {'S', 'L', 'T', 'K', '1'};

int channel_token(phylog::ChannelKind kind) {
    using phylog::ChannelKind;
    switch (kind) {
        case ChannelKind::PdcchPlain: return TOK_CH_PDCCH;
        case ChannelKind::Pdsch: return TOK_CH_PDSCH;
        case ChannelKind::Prach: return TOK_CH_PRACH;
        case ChannelKind::Pucch: return TOK_CH_PUCCH;
        case ChannelKind::Pusch: return TOK_CH_PUSCH;
        case ChannelKind::PdcchDci00: return TOK_CH_PDCCH_DCI_0_0;
        case ChannelKind::PdcchDci10: return TOK_CH_PDCCH_DCI_1_0;
    }
    return TOK_CH_PDCCH;
}

phylog::ChannelKind kind_for_channel_token(int token) {
    using phylog::ChannelKind;
    switch (token) {
        case TOK_CH_PDCCH: return ChannelKind::PdcchPlain;
        case TOK_CH_PDSCH: return ChannelKind::Pdsch;
        case TOK_CH_PRACH: return ChannelKind::Prach;
        case TOK_CH_PUCCH: return ChannelKind::Pucch;
        case TOK_CH_PUSCH: return ChannelKind::Pusch;
        case TOK_CH_PDCCH_DCI_0_0: return ChannelKind::PdcchDci00;
        case TOK_CH_PDCCH_DCI_1_0: return ChannelKind::PdcchDci10;
    }
    return ChannelKind::PdcchPlain;
}

// Minimal-width uppercase hex, one token per digit.
void emit_hex_number(TokenSeq& out, int value) {
    if (value < 0) throw TokenError("cannot tokenize negative number");
    if (value == 0) {
        out.push_back(TOK_HEX_0);
        return;
    }
    int digits[8];
    int n = 0;
    for (int v = value; v > 0; v >>= 4) digits[n++] = v & 0xF;
    while (n > 0) out.push_back(hex_token(static_cast<unsigned>(digits[--n])));
}

void emit_interval(TokenSeq& out, const phylog::Interval& iv, int open_tok, int close_tok) {
    out.push_back(open_tok);
    emit_hex_number(out, iv.start);
    out.push_back(TOK_COMMA);
    emit_hex_number(out, iv.end);
    out.push_back(close_tok);
}

}  // namespace

const char* syntax_category_name(SyntaxCategory c) {
    switch (c) {
        case SyntaxCategory::WrongSlotDigit: return "WrongSlotDigit";
        case SyntaxCategory::MissingColon: return "MissingColon";
        case SyntaxCategory::BadChannelStart: return "BadChannelStart";
        case SyntaxCategory::UnclosedBracket: return "UnclosedBracket";
        case SyntaxCategory::BracketArity: return "BracketArity";
        case SyntaxCategory::MissingSeparator: return "MissingSeparator";
        case SyntaxCategory::UnexpectedToken: return "UnexpectedToken";
        case SyntaxCategory::EmptyMisplaced: return "EmptyMisplaced";
    }
    return "?";
}

SyntaxError::SyntaxError(SyntaxCategory category, std::size_t position, const std::string& what)
    : std::runtime_error(what), category_(category), position_(position) {}

TokenSeq encode_slot(const phylog::SlotRecord& rec) {
    TokenSeq out;
    out.push_back(hex_token(static_cast<unsigned>(rec.slot_id.slot)));
    out.push_back(TOK_COLON);
    if (rec.messages.empty()) {
        out.push_back(TOK_EMPTY);
        out.push_back(TOK_SEMICOLON);
        return out;
    }
    bool first = true;
    for (const phylog::ChannelMessage& m : rec.messages) {
        if (!first) out.push_back(TOK_COMMA);
        first = false;
        out.push_back(channel_token(m.kind));
        if (m.rnti_suffix) {
            int v = *m.rnti_suffix;
            out.push_back(hex_token(static_cast<unsigned>(v >> 4)));
            out.push_back(hex_token(static_cast<unsigned>(v & 0xF)));
        }
        if (m.freq) emit_interval(out, *m.freq, TOK_LBRACKET, TOK_RBRACKET);
        if (m.time) emit_interval(out, *m.time, TOK_LPAREN, TOK_RPAREN);
    }
    out.push_back(TOK_SEMICOLON);
    return out;
}

namespace {

// Cursor over a token sequence for the structural decoder.
struct TokenCursor {
    const TokenSeq& seq;
    std::size_t pos = 0;

    bool at_end() const { return pos >= seq.size(); }
    int peek() const { return at_end() ? -1 : seq[pos]; }
    int take() { return seq[pos++]; }

    [[noreturn]] void fail(SyntaxCategory cat, const std::string& msg) const {
        std::ostringstream what;
        what << "token " << pos << ": " << msg << " (" << syntax_category_name(cat) << ")";
        throw SyntaxError(cat, pos, what.str());
    }
};

int decode_number(TokenCursor& cur, int close_tok) {
    if (!is_hex_token(cur.peek())) {
        cur.fail(cur.peek() == close_tok || cur.at_end() ? SyntaxCategory::UnclosedBracket
                                                         : SyntaxCategory::BracketArity,
                 "interval bound must be a hex number");
    }
    int value = 0;
    int digits = 0;
    while (is_hex_token(cur.peek())) {
        value = value * 16 + static_cast<int>(hex_value(cur.take()));
        ++digits;
        if (digits > 2) cur.fail(SyntaxCategory::BracketArity, "interval bound wider than 2 digits");
    }
    return value;
}

phylog::Interval decode_interval(TokenCursor& cur, int close_tok) {
    cur.take();  // opening bracket
    phylog::Interval iv;
    iv.start = decode_number(cur, close_tok);
    if (cur.peek() != TOK_COMMA) {
        cur.fail(SyntaxCategory::UnclosedBracket, "interval missing comma");
    }
    cur.take();
    iv.end = decode_number(cur, close_tok);
    if (cur.peek() != close_tok) {
        cur.fail(SyntaxCategory::UnclosedBracket, "interval missing closing bracket");
    }
    cur.take();
    return iv;
}

}  // namespace

phylog::SlotRecord decode_tokens(const TokenSeq& seq) {
    TokenCursor cur{seq};
    phylog::SlotRecord rec;

    int digit = cur.peek();
    if (!is_hex_token(digit) || hex_value(digit) > 9) {
        cur.fail(SyntaxCategory::WrongSlotDigit, "slot must start with a decimal digit");
    }
    rec.slot_id = phylog::SlotId{0, static_cast<int>(hex_value(cur.take()))};
    if (cur.peek() != TOK_COLON) cur.fail(SyntaxCategory::MissingColon, "missing colon");
    cur.take();

    if (cur.peek() == TOK_EMPTY) {
        cur.take();
        if (cur.peek() != TOK_SEMICOLON) {
            cur.fail(SyntaxCategory::MissingSeparator, "empty slot must end after EMPTY");
        }
        cur.take();
    } else {
        while (true) {
            if (!is_channel_token(cur.peek())) {
                cur.fail(cur.peek() == TOK_EMPTY ? SyntaxCategory::EmptyMisplaced
                                                 : SyntaxCategory::BadChannelStart,
                         "expected a channel token");
            }
            phylog::ChannelMessage msg;
            msg.kind = kind_for_channel_token(cur.take());
            if (is_hex_token(cur.peek())) {
                int hi = static_cast<int>(hex_value(cur.take()));
                if (!is_hex_token(cur.peek())) {
                    cur.fail(SyntaxCategory::UnexpectedToken, "RNTI needs two hex digits");
                }
                int lo = static_cast<int>(hex_value(cur.take()));
                msg.rnti_suffix = static_cast<std::uint8_t>(hi * 16 + lo);
            }
            if (cur.peek() == TOK_LBRACKET) msg.freq = decode_interval(cur, TOK_RBRACKET);
            if (cur.peek() == TOK_LPAREN) msg.time = decode_interval(cur, TOK_RPAREN);
            rec.messages.push_back(std::move(msg));

            if (cur.peek() == TOK_COMMA) {
                cur.take();
                continue;
            }
            if (cur.peek() == TOK_SEMICOLON) {
                cur.take();
                break;
            }
            cur.fail(SyntaxCategory::MissingSeparator, "expected ',' or ';' after channel");
        }
    }
    if (!cur.at_end()) {
        cur.fail(SyntaxCategory::UnexpectedToken, "trailing tokens after semicolon");
    }
    return rec;
}

TokenSeq encode_stream(const std::vector<phylog::SlotRecord>& records) {
    TokenSeq out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (i > 0 && records[i].slot_id.slot != records[i - 1].slot_id.next().slot) {
            throw TokenError("records are not contiguous in slot time");
        }
        TokenSeq slot = encode_slot(records[i]);
        out.insert(out.end(), slot.begin(), slot.end());
    }
    return out;
}

void write_token_file(const std::string& path, const TokenSeq& seq) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open token file for writing: " + path);
    out.write(kTokenFileMagic, sizeof(kTokenFileMagic));
    for (int id : seq) {
        if (id < 0 || id >= kVocabSize) throw TokenError("token id out of range");
        char b = static_cast<char>(id);
        out.write(&b, 1);
    }
    if (!out) throw std::runtime_error("failed writing token file: " + path);
}

TokenSeq read_token_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open token file: " + path);
    char magic[sizeof(kTokenFileMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) ||
        !std::equal(magic, magic + sizeof(magic), kTokenFileMagic)) {
        throw TokenError("bad token file magic: " + path);
    }
    TokenSeq seq;
    char b;
    while (in.read(&b, 1)) {
        int id = static_cast<unsigned char>(b);
        if (id >= kVocabSize) throw TokenError("token id out of range in " + path);
        seq.push_back(id);
    }
    return seq;
}

void write_token_text(std::ostream& out, const TokenSeq& seq) {
    TokenSeq line;
    for (int id : seq) {
        line.push_back(id);
        if (id == TOK_SEMICOLON) {
            out << render_tokens(line) << "\n";
            line.clear();
        }
    }
    if (!line.empty()) out << render_tokens(line) << "\n";
}

void write_token_text_file(const std::string& path, const TokenSeq& seq) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open tokens text file for writing: " + path);
    write_token_text(out, seq);
}

}  // namespace slottok
