#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotcast/nanoformer.hpp"
#include "slotcast/phylog.hpp"
#include "slotcast/tokens.hpp"

namespace evalkit {

class EvalError : public std::runtime_error {
  public:
    enum class Kind { EmptyReference, InsufficientData };
    EvalError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

// Minimum insert/delete/substitute edits turning x into y (unit costs,
// two-row dynamic program).
std::size_t levenshtein(std::span<const int> x, std::span<const int> y);

struct DistanceResult {
    std::size_t levenshtein = 0;
    std::size_t reference_len = 0;  // k

    // L(x,y)/k; the two integers above carry the exact rational.
    double relative() const {
        return static_cast<double>(levenshtein) / static_cast<double>(reference_len);
    }
};

// RL(x, y) = L(x, y) / len(y); y is the reference. Throws EmptyReference for
// an empty y.
DistanceResult relative_levenshtein(std::span<const int> x, std::span<const int> y);

struct PrecisionRow {
    phylog::ChannelKind channel;
    double frequency = 0.0;   // P(c_i): share among reference channel tokens
    double channel_tp = 0.0;  // TP(c_i)
    double rnti_tp = 0.0;     // TP(r|c_i)
    std::size_t reference_occurrences = 0;
    std::size_t predicted_occurrences = 0;
    std::size_t pairs_with_prediction = 0;  // samples contributing to the TP mean
};

// Per-channel precision over (predicted, reference) token-sequence pairs.
// Within a pair, predicted occurrences of a channel are matched to reference
// occurrences of the same channel in textual order, each consumed once.
// TP(c_i) averages matched/predicted over pairs where c_i was predicted;
// TP(r|c_i) additionally requires both RNTI digit tokens to match (absent on
// both sides counts as a match). P(c_i) is the channel's share of all
// reference channel tokens.
std::vector<PrecisionRow> channel_precision(
    const std::vector<std::pair<slottok::TokenSeq, slottok::TokenSeq>>& pairs);

struct BoxStats {
    double median = 0.0;
    double lower_quartile = 0.0;
    double upper_quartile = 0.0;
    double lower_whisker = 0.0;  // max(Q1 - 1.5 IQR, data min)
    double upper_whisker = 0.0;  // min(Q3 + 1.5 IQR, data max)
};

// Quartiles use linear interpolation between order statistics.
BoxStats box_stats(std::vector<double> values);

struct SampleOutcome {
    std::size_t index = 0;
    long start_slot = 0;          // first slot of the 10-slot context
    int target_digit = 0;         // slot digit of the reference slot
    std::size_t levenshtein = 0;
    std::size_t reference_len = 0;
    double rl = 0.0;
    bool overflowed = false;      // token budget hit before the semicolon
    std::size_t violations = 0;   // grammar violations in the prediction
};

struct EvalReport {
    std::size_t n_samples = 0;
    bool checker = false;
    std::uint64_t seed = 0;
    std::size_t val_slots = 0;
    std::size_t overflow_count = 0;
    std::vector<SampleOutcome> samples;
    BoxStats box_levenshtein;
    BoxStats box_rl;
    std::vector<PrecisionRow> precision;
};

struct EvalConfig {
    std::size_t n_samples = 500;
    nanoformer::SamplerConfig sampler;
    bool use_checker = true;
    std::uint64_t seed = 0;
    double val_fraction = 0.2;  // evaluate on the contiguous tail split
    int context_slots = 10;
    int threads = 1;
};

// Predicts the slot following `context` (which ends at a slot boundary).
// expected_digit is the slot digit the prediction should start with;
// sample_seed is derived per sample so evaluation parallelizes
// deterministically. Sets overflowed when the slot was truncated.
using SlotPredictor = std::function<slottok::TokenSeq(
    std::span<const int> context, int expected_digit, std::uint64_t sample_seed, bool& overflowed)>;

// Draws n_samples random 11-consecutive-slot windows from the validation
// split, feeds the first 10 slots to the predictor and scores the prediction
// against the full token encoding of the 11th. Deterministic given cfg.seed.
EvalReport evaluate_with_predictor(const SlotPredictor& predictor,
                                   const std::vector<phylog::SlotRecord>& records,
                                   const EvalConfig& cfg);

// Model-backed evaluation; with cfg.use_checker the grammar mask constrains
// sampling and a truncated/overflowed slot is scored as-is.
EvalReport evaluate_scenario(const nanoformer::Params<float>& model,
                             const std::vector<phylog::SlotRecord>& records,
                             const EvalConfig& cfg);

void write_report_json(std::ostream& out, const EvalReport& report);
void write_report_json_file(const std::string& path, const EvalReport& report);

// Token, P(c_i), TP(c_i), TP(r|c_i) — one row per channel.
void write_precision_csv(std::ostream& out, const std::vector<PrecisionRow>& rows);

// metric, median, lower_quartile, upper_quartile, lower_whisker, upper_whisker.
void write_boxstats_csv(std::ostream& out, const EvalReport& report);

}  // namespace evalkit
