#include "slotcast/phylog.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace phylog {

namespace {

bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(ParseError::Kind kind, std::size_t line_no, std::string fragment,
                       const std::string& msg) {
    std::ostringstream what;
    what << "line " << line_no << ": " << msg;
    if (!fragment.empty()) what << " near '" << fragment << "'";
    throw ParseError(kind, line_no, std::move(fragment), what.str());
}

// Parses `[a, b)` / `[a,b)` style interval values (close may be ')' or ']').
Interval parse_interval_value(const std::string& value, IntervalAxis axis, std::size_t line_no,
                              const std::string& fragment) {
    const char* p = value.c_str();
    const char* end = p + value.size();
    auto skip_ws = [&] {
        while (p < end && (*p == ' ' || *p == '\t')) ++p;
    };
    auto read_int = [&]() -> long {
        long v = 0;
        auto [np, ec] = std::from_chars(p, end, v);
        if (ec != std::errc() || np == p) {
            fail(ParseError::Kind::BadInterval, line_no, fragment, "non-numeric interval bound");
        }
        p = np;
        return v;
    };

    if (p >= end || *p != '[') {
        fail(ParseError::Kind::BadInterval, line_no, fragment, "interval must start with '['");
    }
    ++p;
    skip_ws();
    long start = read_int();
    skip_ws();
    if (p >= end || *p != ',') {
        fail(ParseError::Kind::BadInterval, line_no, fragment, "interval missing ','");
    }
    ++p;
    skip_ws();
    long stop = read_int();
    skip_ws();
    if (p >= end || (*p != ')' && *p != ']')) {
        fail(ParseError::Kind::BadInterval, line_no, fragment, "interval missing closing bracket");
    }

    if (start < 0 || start >= stop) {
        fail(ParseError::Kind::BadInterval, line_no, fragment, "interval start must be < end");
    }
    long limit = axis == IntervalAxis::FrequencyPrb ? 275 : 14;
    if (stop > limit) {
        fail(ParseError::Kind::BadInterval, line_no, fragment, "interval bound out of range");
    }
    return Interval{static_cast<int>(start), static_cast<int>(stop)};
}

struct Clause {
    std::string name;
    std::string body;
    std::string text;  // name + body, for error fragments
};

// A clause starts at `NAME:` preceded by start-of-text, whitespace or '/'.
// Keys inside a clause use '=', so they never match.
std::vector<Clause> split_clauses(const std::string& tail) {
    std::vector<Clause> clauses;
    std::vector<std::pair<std::size_t, std::size_t>> starts;  // (name begin, body begin)
    std::size_t i = 0;
    while (i < tail.size()) {
        if (!std::isalpha(static_cast<unsigned char>(tail[i])) ||
            (i > 0 && tail[i - 1] != ' ' && tail[i - 1] != '\t' && tail[i - 1] != '/')) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < tail.size() && is_ident_char(tail[j])) ++j;
        if (j < tail.size() && tail[j] == ':') {
            starts.emplace_back(i, j + 1);
            i = j + 1;
        } else {
            i = j ? j : i + 1;
        }
    }
    for (std::size_t s = 0; s < starts.size(); ++s) {
        auto [name_begin, body_begin] = starts[s];
        std::size_t clause_end = s + 1 < starts.size() ? starts[s + 1].first : tail.size();
        Clause c;
        c.name = tail.substr(name_begin, body_begin - 1 - name_begin);
        c.body = tail.substr(body_begin, clause_end - body_begin);
        // Strip a trailing clause separator.
        std::size_t slash = c.body.find_last_of('/');
        if (slash != std::string::npos && trim(c.body.substr(slash + 1)).empty()) {
            c.body = c.body.substr(0, slash);
        }
        c.text = trim(tail.substr(name_begin, clause_end - name_begin));
        clauses.push_back(std::move(c));
    }
    return clauses;
}

struct ClauseFields {
    std::optional<std::uint8_t> rnti;
    std::optional<std::string> format;
    std::optional<Interval> prb;
    std::optional<Interval> symb;
};

ClauseFields parse_clause_body(const Clause& clause, std::size_t line_no) {
    ClauseFields fields;
    const std::string& body = clause.body;
    std::size_t i = 0;
    while (i < body.size()) {
        if (!std::isalpha(static_cast<unsigned char>(body[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < body.size() && is_ident_char(body[j])) ++j;
        if (j >= body.size() || body[j] != '=') {
            i = j;
            continue;
        }
        std::string key = body.substr(i, j - i);
        std::size_t v = j + 1;
        std::size_t vend;
        if (v < body.size() && body[v] == '[') {
            vend = body.find_first_of(")]", v);
            vend = vend == std::string::npos ? body.size() : vend + 1;
        } else {
            vend = v;
            while (vend < body.size() && !std::isspace(static_cast<unsigned char>(body[vend])) &&
                   body[vend] != '/') {
                ++vend;
            }
        }
        std::string value = body.substr(v, vend - v);
        std::string fragment = key + "=" + value;

        if (key == "rnti") {
            std::string hex = value;
            if (hex.rfind("0x", 0) == 0 || hex.rfind("0X", 0) == 0) hex = hex.substr(2);
            unsigned long parsed = 0;
            auto [np, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), parsed, 16);
            if (ec != std::errc() || np != hex.data() + hex.size() || hex.empty()) {
                fail(ParseError::Kind::BadRnti, line_no, fragment, "RNTI is not parseable hex");
            }
            fields.rnti = static_cast<std::uint8_t>(parsed & 0xFF);
        } else if (key == "format") {
            fields.format = value;
        } else if (key == "prb") {
            fields.prb = parse_interval_value(value, IntervalAxis::FrequencyPrb, line_no, fragment);
        } else if (key == "symb") {
            fields.symb = parse_interval_value(value, IntervalAxis::TimeSymbol, line_no, fragment);
        }
        // Anything else (mcs, tbs, cqi, ...) is outside the tokenized subset.
        i = vend;
    }
    return fields;
}

ChannelMessage build_message(const Clause& clause, const ClauseFields& fields,
                             std::size_t line_no) {
    ChannelMessage msg;
    if (clause.name == "PDCCH") {
        if (!fields.format) {
            msg.kind = ChannelKind::PdcchPlain;
        } else if (*fields.format == "0_0") {
            msg.kind = ChannelKind::PdcchDci00;
        } else if (*fields.format == "1_0") {
            msg.kind = ChannelKind::PdcchDci10;
        } else {
            msg.kind = ChannelKind::PdcchPlain;  // formats outside the vocabulary
        }
        msg.rnti_suffix = fields.rnti;
        return msg;  // PDCCH carries no resource intervals after tokenization
    }
    if (clause.name == "PDSCH") {
        msg.kind = ChannelKind::Pdsch;
    } else if (clause.name == "PUSCH") {
        msg.kind = ChannelKind::Pusch;
    } else if (clause.name == "PUCCH") {
        msg.kind = ChannelKind::Pucch;
    } else if (clause.name == "PRACH") {
        msg.kind = ChannelKind::Prach;
    } else {
        fail(ParseError::Kind::UnknownChannel, line_no, clause.name,
             "channel is not in the vocabulary");
    }
    msg.rnti_suffix = fields.rnti;
    msg.freq = fields.prb;
    msg.time = fields.symb;
    return msg;
}

}  // namespace

const char* channel_kind_name(ChannelKind k) {
    switch (k) {
        case ChannelKind::PdcchDci00: return "PDCCH_DCI_0_0";
        case ChannelKind::PdcchDci10: return "PDCCH_DCI_1_0";
        case ChannelKind::PdcchPlain: return "PDCCH";
        case ChannelKind::Pdsch: return "PDSCH";
        case ChannelKind::Pusch: return "PUSCH";
        case ChannelKind::Pucch: return "PUCCH";
        case ChannelKind::Prach: return "PRACH";
    }
    return "?";
}

std::optional<ChannelKind> channel_kind_from_name(const std::string& name) {
    if (name == "PDCCH_DCI_0_0") return ChannelKind::PdcchDci00;
    if (name == "PDCCH_DCI_1_0") return ChannelKind::PdcchDci10;
    if (name == "PDCCH") return ChannelKind::PdcchPlain;
    if (name == "PDSCH") return ChannelKind::Pdsch;
    if (name == "PUSCH") return ChannelKind::Pusch;
    if (name == "PUCCH") return ChannelKind::Pucch;
    if (name == "PRACH") return ChannelKind::Prach;
    return std::nullopt;
}

ParseError::ParseError(Kind kind, std::size_t line_no, std::string fragment,
                       const std::string& what)
    : std::runtime_error(what), kind_(kind), line_no_(line_no), fragment_(std::move(fragment)) {}

std::pair<SlotId, std::vector<ChannelMessage>> parse_line(const std::string& line,
                                                          std::size_t line_no) {
    std::size_t phy = line.find("[PHY]");
    if (phy == std::string::npos) {
        fail(ParseError::Kind::MalformedLine, line_no, trim(line).substr(0, 40),
             "missing [PHY] header");
    }
    std::size_t open = line.find('[', phy + 5);
    std::size_t dot = open == std::string::npos ? std::string::npos : line.find('.', open);
    std::size_t close = dot == std::string::npos ? std::string::npos : line.find(']', dot);
    if (close == std::string::npos) {
        fail(ParseError::Kind::MalformedLine, line_no, trim(line.substr(phy)).substr(0, 40),
             "missing [sfn.slot] header");
    }

    auto parse_int = [&](std::size_t b, std::size_t e) -> long {
        long v = -1;
        auto [np, ec] = std::from_chars(line.data() + b, line.data() + e, v);
        if (ec != std::errc() || np != line.data() + e || b == e) v = -1;
        return v;
    };
    long sfn = parse_int(open + 1, dot);
    long slot = parse_int(dot + 1, close);
    if (sfn < 0 || sfn > 1023 || slot < 0 || slot > 9) {
        fail(ParseError::Kind::MalformedLine, line_no, line.substr(open, close - open + 1),
             "slot id out of range");
    }

    std::vector<ChannelMessage> messages;
    std::string tail = line.substr(close + 1);
    for (const Clause& clause : split_clauses(tail)) {
        ClauseFields fields = parse_clause_body(clause, line_no);
        messages.push_back(build_message(clause, fields, line_no));
    }
    return {SlotId{static_cast<int>(sfn), static_cast<int>(slot)}, std::move(messages)};
}

namespace {

struct LogAccumulator {
    std::vector<SlotRecord> records;
    bool started = false;

    void add(const SlotId& id, std::vector<ChannelMessage> msgs, std::size_t line_no) {
        if (!started) {
            records.push_back({id, std::move(msgs)});
            started = true;
            return;
        }
        const SlotId prev = records.back().slot_id;
        if (id == prev) {
            auto& dst = records.back().messages;
            dst.insert(dst.end(), msgs.begin(), msgs.end());
            return;
        }
        long step;
        if (id.linear() > prev.linear()) {
            step = id.linear() - prev.linear();
        } else if (prev.sfn == 1023 && id.sfn == 0) {
            step = id.linear() + 10240 - prev.linear();
        } else {
            std::ostringstream frag;
            frag << "[" << id.sfn << "." << id.slot << "]";
            fail(ParseError::Kind::NonMonotonicSlot, line_no, frag.str(),
                 "slot ids go backward");
        }
        SlotId cursor = prev;
        for (long k = 1; k < step; ++k) {
            cursor = cursor.next();
            records.push_back({cursor, {}});
        }
        records.push_back({id, std::move(msgs)});
    }
};

}  // namespace

std::vector<SlotRecord> parse_log(std::istream& in) {
    LogAccumulator acc;
    std::string line;
    std::string pending;
    std::size_t pending_line_no = 0;
    std::size_t line_no = 0;

    auto flush = [&] {
        if (pending.empty()) return;
        auto [id, msgs] = parse_line(pending, pending_line_no);
        acc.add(id, std::move(msgs), pending_line_no);
        pending.clear();
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        if (t.empty()) continue;
        if (line.find("[PHY]") != std::string::npos) {
            flush();
            pending = line;
            pending_line_no = line_no;
        } else if (!pending.empty()) {
            pending += " / " + t;  // continuation clause of the current slot
        } else {
            fail(ParseError::Kind::MalformedLine, line_no, t.substr(0, 40),
                 "clause line before any slot header");
        }
    }
    flush();
    return acc.records;
}

std::vector<SlotRecord> parse_log_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open log file: " + path);
    return parse_log(in);
}

namespace {

void append_hex_byte(std::string& out, std::uint8_t v) {
    static const char* digits = "0123456789ABCDEF";
    out += digits[v >> 4];
    out += digits[v & 0xF];
}

std::string interval_text(const Interval& iv, char open, char close) {
    std::ostringstream s;
    s << open << iv.start << ", " << iv.end << close;
    return s.str();
}

}  // namespace

std::string render_line(const SlotRecord& rec) {
    std::ostringstream out;
    out << "0000-00-00T00:00:00.000000 [PHY] [" << rec.slot_id.sfn << "." << rec.slot_id.slot
        << "]";
    bool first = true;
    for (const ChannelMessage& m : rec.messages) {
        out << (first ? " " : " / ");
        first = false;
        switch (m.kind) {
            case ChannelKind::PdcchDci00: out << "PDCCH: format=0_0"; break;
            case ChannelKind::PdcchDci10: out << "PDCCH: format=1_0"; break;
            case ChannelKind::PdcchPlain: out << "PDCCH:"; break;
            default: out << channel_kind_name(m.kind) << ":"; break;
        }
        if (m.rnti_suffix) {
            std::string h;
            append_hex_byte(h, *m.rnti_suffix);
            out << " rnti=0x" << h;
        }
        if (m.freq) out << " prb=" << interval_text(*m.freq, '[', ')');
        if (m.time) out << " symb=" << interval_text(*m.time, '[', ')');
    }
    return out.str();
}

std::string render_corpus_line(const SlotRecord& rec) {
    std::string out = std::to_string(rec.slot_id.slot);
    for (const ChannelMessage& m : rec.messages) {
        out += '|';
        out += channel_kind_name(m.kind);
        std::string segs[3];
        if (m.rnti_suffix) append_hex_byte(segs[0], *m.rnti_suffix);
        if (m.freq) segs[1] = std::to_string(m.freq->start) + "," + std::to_string(m.freq->end);
        if (m.time) segs[2] = std::to_string(m.time->start) + "," + std::to_string(m.time->end);
        int last = 2;
        while (last >= 0 && segs[last].empty()) --last;
        for (int i = 0; i <= last; ++i) {
            out += ':';
            out += segs[i];
        }
    }
    return out;
}

namespace {

Interval parse_corpus_interval(const std::string& text, IntervalAxis axis, std::size_t line_no) {
    std::size_t comma = text.find(',');
    if (comma == std::string::npos) {
        fail(ParseError::Kind::BadInterval, line_no, text, "corpus interval missing ','");
    }
    return parse_interval_value("[" + text.substr(0, comma) + "," + text.substr(comma + 1) + ")",
                                axis, line_no, text);
}

}  // namespace

SlotRecord parse_corpus_line(const std::string& line, int sfn, std::size_t line_no) {
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
        std::size_t bar = line.find('|', pos);
        fields.push_back(line.substr(pos, bar == std::string::npos ? bar : bar - pos));
        if (bar == std::string::npos) break;
        pos = bar + 1;
    }
    if (fields[0].size() != 1 || fields[0][0] < '0' || fields[0][0] > '9') {
        fail(ParseError::Kind::MalformedLine, line_no, fields[0], "corpus slot digit invalid");
    }

    SlotRecord rec;
    rec.slot_id = SlotId{sfn, fields[0][0] - '0'};
    for (std::size_t f = 1; f < fields.size(); ++f) {
        std::vector<std::string> segs;
        std::size_t p = 0;
        while (true) {
            std::size_t c = fields[f].find(':', p);
            segs.push_back(fields[f].substr(p, c == std::string::npos ? c : c - p));
            if (c == std::string::npos) break;
            p = c + 1;
        }
        if (segs.size() > 4) {
            fail(ParseError::Kind::MalformedLine, line_no, fields[f], "too many message segments");
        }
        auto kind = channel_kind_from_name(segs[0]);
        if (!kind) {
            fail(ParseError::Kind::UnknownChannel, line_no, segs[0],
                 "channel is not in the vocabulary");
        }
        ChannelMessage msg;
        msg.kind = *kind;
        if (segs.size() > 1 && !segs[1].empty()) {
            unsigned long v = 0;
            auto [np, ec] = std::from_chars(segs[1].data(), segs[1].data() + segs[1].size(), v, 16);
            if (ec != std::errc() || np != segs[1].data() + segs[1].size() || v > 0xFF) {
                fail(ParseError::Kind::BadRnti, line_no, segs[1], "corpus RNTI invalid");
            }
            msg.rnti_suffix = static_cast<std::uint8_t>(v);
        }
        if (segs.size() > 2 && !segs[2].empty()) {
            msg.freq = parse_corpus_interval(segs[2], IntervalAxis::FrequencyPrb, line_no);
        }
        if (segs.size() > 3 && !segs[3].empty()) {
            msg.time = parse_corpus_interval(segs[3], IntervalAxis::TimeSymbol, line_no);
        }
        rec.messages.push_back(std::move(msg));
    }
    return rec;
}

void write_corpus(std::ostream& out, const std::vector<SlotRecord>& records,
                  const std::vector<std::string>& header_comments) {
    for (const std::string& c : header_comments) {
        out << "# " << c << "\n";
    }
    for (const SlotRecord& r : records) {
        out << render_corpus_line(r) << "\n";
    }
}

void write_corpus_file(const std::string& path, const std::vector<SlotRecord>& records,
                       const std::vector<std::string>& header_comments) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open corpus file for writing: " + path);
    write_corpus(out, records, header_comments);
    if (!out) throw std::runtime_error("failed writing corpus file: " + path);
}

std::vector<SlotRecord> read_corpus(std::istream& in) {
    std::vector<SlotRecord> records;
    std::string line;
    std::size_t line_no = 0;
    int sfn = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!records.empty()) {
            SlotId expect = records.back().slot_id.next();
            if (line.empty() || line[0] - '0' != expect.slot) {
                fail(ParseError::Kind::NonMonotonicSlot, line_no, line.substr(0, 20),
                     "corpus slots are not contiguous");
            }
            sfn = expect.sfn;
        } else if (!line.empty() && line[0] >= '0' && line[0] <= '9') {
            sfn = 0;
        }
        records.push_back(parse_corpus_line(line, sfn, line_no));
    }
    return records;
}

std::vector<SlotRecord> read_corpus_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    return read_corpus(in);
}

}  // namespace phylog
