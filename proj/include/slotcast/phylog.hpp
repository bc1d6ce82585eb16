#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace phylog {

// One slot position on the air interface: system frame number 0-1023 and
// slot-in-frame 0-9.
struct SlotId {
    int sfn = 0;
    int slot = 0;

    bool operator==(const SlotId&) const = default;

    // Position on the 10240-slot SFN cycle.
    int linear() const { return sfn * 10 + slot; }

    SlotId next() const {
        SlotId n{sfn, slot + 1};
        if (n.slot == 10) {
            n.slot = 0;
            n.sfn = (sfn + 1) % 1024;
        }
        return n;
    }
};

enum class ChannelKind {
    PdcchDci00,  // uplink grant
    PdcchDci10,  // downlink scheduling
    PdcchPlain,  // PDCCH logged without a format clause
    Pdsch,
    Pusch,
    Pucch,
    Prach,
};

const char* channel_kind_name(ChannelKind k);
std::optional<ChannelKind> channel_kind_from_name(const std::string& name);

enum class IntervalAxis { FrequencyPrb, TimeSymbol };

// Half-open [start, end), as written in the log ("prb=[0, 96)").
struct Interval {
    int start = 0;
    int end = 0;

    bool operator==(const Interval&) const = default;
};

struct ChannelMessage {
    ChannelKind kind = ChannelKind::PdcchPlain;
    std::optional<std::uint8_t> rnti_suffix;  // low byte of the RNTI
    std::optional<Interval> freq;             // PRB interval
    std::optional<Interval> time;             // OFDM symbol interval

    bool operator==(const ChannelMessage&) const = default;
};

struct SlotRecord {
    SlotId slot_id;
    std::vector<ChannelMessage> messages;  // in textual/scheduling order

    bool operator==(const SlotRecord&) const = default;
};

class ParseError : public std::runtime_error {
  public:
    enum class Kind {
        MalformedLine,
        UnknownChannel,
        BadInterval,
        BadRnti,
        NonMonotonicSlot,
    };

    ParseError(Kind kind, std::size_t line_no, std::string fragment, const std::string& what);

    Kind kind() const { return kind_; }
    std::size_t line_number() const { return line_no_; }
    const std::string& fragment() const { return fragment_; }

  private:
    Kind kind_;
    std::size_t line_no_;
    std::string fragment_;
};

// Parses one joined log record: `<timestamp> [PHY] [<sfn>.<slot>]` followed by
// channel clauses. Clause keys the tokenizer does not consume are ignored.
// line_no is only used for error reporting.
std::pair<SlotId, std::vector<ChannelMessage>> parse_line(const std::string& line,
                                                          std::size_t line_no = 0);

// Parses a whole log: joins continuation lines, merges repeated headers for
// the same slot, materializes empty records for unlogged slots so the result
// is contiguous in slot time. SFN wraparound 1023->0 counts as monotonic.
std::vector<SlotRecord> parse_log(std::istream& in);
std::vector<SlotRecord> parse_log_file(const std::string& path);

// Canonical single-line rendering, reparsable by parse_line.
std::string render_line(const SlotRecord& rec);

// Canonical corpus file: `#` comment lines, then one line per slot:
//   slot_digit|kind[:rnti][:prb_start,prb_end][:sym_start,sym_end]|...
// Earlier segments that are absent stay as empty strings when a later segment
// is present (e.g. `PUCCH:01::0,14`); trailing absent segments are dropped.
std::string render_corpus_line(const SlotRecord& rec);
SlotRecord parse_corpus_line(const std::string& line, int sfn, std::size_t line_no);

void write_corpus(std::ostream& out, const std::vector<SlotRecord>& records,
                  const std::vector<std::string>& header_comments = {});
void write_corpus_file(const std::string& path, const std::vector<SlotRecord>& records,
                       const std::vector<std::string>& header_comments = {});

// Reads a corpus file; records must be contiguous in slot time. SFNs are
// synthesized starting at 0 (the corpus format stores only slot digits).
std::vector<SlotRecord> read_corpus(std::istream& in);
std::vector<SlotRecord> read_corpus_file(const std::string& path);

}  // namespace phylog
