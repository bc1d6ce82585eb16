#include "slotcast/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "json.hpp"
#include "slotcast/grammar_mask.hpp"
#include "slotcast/rng.hpp"
#include "slotcast/slottok.hpp"
#include "slotcast/synchk.hpp"

namespace evalkit {

std::size_t levenshtein(std::span<const int> x, std::span<const int> y) {
    const std::size_t n = x.size();
    const std::size_t m = y.size();
    if (n == 0) return m;
    if (m == 0) return n;

    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 0; i < n; ++i) {
        cur[0] = i + 1;
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t sub = prev[j] + (x[i] == y[j] ? 0 : 1);
            cur[j + 1] = std::min({cur[j] + 1, prev[j + 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

DistanceResult relative_levenshtein(std::span<const int> x, std::span<const int> y) {
    if (y.empty()) {
        throw EvalError(EvalError::Kind::EmptyReference,
                        "relative Levenshtein needs a non-empty reference");
    }
    return DistanceResult{levenshtein(x, y), y.size()};
}

namespace {

struct Occurrence {
    phylog::ChannelKind kind;
    int rnti_hi = -1;  // token ids of the two RNTI digits, -1 when absent
    int rnti_lo = -1;
};

std::vector<Occurrence> extract_channels(const slottok::TokenSeq& seq) {
    std::vector<Occurrence> occs;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!slottok::is_channel_token(seq[i])) continue;
        Occurrence occ;
        switch (seq[i]) {
            case slottok::TOK_CH_PDCCH: occ.kind = phylog::ChannelKind::PdcchPlain; break;
            case slottok::TOK_CH_PDSCH: occ.kind = phylog::ChannelKind::Pdsch; break;
            case slottok::TOK_CH_PRACH: occ.kind = phylog::ChannelKind::Prach; break;
            case slottok::TOK_CH_PUCCH: occ.kind = phylog::ChannelKind::Pucch; break;
            case slottok::TOK_CH_PUSCH: occ.kind = phylog::ChannelKind::Pusch; break;
            case slottok::TOK_CH_PDCCH_DCI_0_0: occ.kind = phylog::ChannelKind::PdcchDci00; break;
            default: occ.kind = phylog::ChannelKind::PdcchDci10; break;
        }
        if (i + 2 < seq.size() && slottok::is_hex_token(seq[i + 1]) &&
            slottok::is_hex_token(seq[i + 2])) {
            occ.rnti_hi = seq[i + 1];
            occ.rnti_lo = seq[i + 2];
        }
        occs.push_back(occ);
    }
    return occs;
}

bool rnti_matches(const Occurrence& a, const Occurrence& b) {
    const bool a_has = a.rnti_hi >= 0;
    const bool b_has = b.rnti_hi >= 0;
    if (a_has != b_has) return false;
    if (!a_has) return true;  // both absent
    return a.rnti_hi == b.rnti_hi && a.rnti_lo == b.rnti_lo;
}

constexpr phylog::ChannelKind kAllKinds[] = {
    phylog::ChannelKind::PdcchDci00, phylog::ChannelKind::PdcchDci10,
    phylog::ChannelKind::PdcchPlain, phylog::ChannelKind::Pdsch,
    phylog::ChannelKind::Pusch,      phylog::ChannelKind::Pucch,
    phylog::ChannelKind::Prach,
};

}  // namespace

std::vector<PrecisionRow> channel_precision(
    const std::vector<std::pair<slottok::TokenSeq, slottok::TokenSeq>>& pairs) {
    struct Acc {
        double tp_sum = 0.0;
        double rnti_sum = 0.0;
        std::size_t pairs_with_pred = 0;
        std::size_t ref_count = 0;
        std::size_t pred_count = 0;
    };
    std::map<phylog::ChannelKind, Acc> acc;
    std::size_t total_ref_channels = 0;

    for (const auto& [pred_seq, ref_seq] : pairs) {
        const auto pred = extract_channels(pred_seq);
        const auto ref = extract_channels(ref_seq);
        total_ref_channels += ref.size();
        for (const auto& o : ref) acc[o.kind].ref_count++;

        for (phylog::ChannelKind kind : kAllKinds) {
            std::vector<const Occurrence*> p, r;
            for (const auto& o : pred) {
                if (o.kind == kind) p.push_back(&o);
            }
            for (const auto& o : ref) {
                if (o.kind == kind) r.push_back(&o);
            }
            if (p.empty()) continue;
            Acc& a = acc[kind];
            a.pred_count += p.size();
            a.pairs_with_pred++;
            const std::size_t matched = std::min(p.size(), r.size());
            std::size_t rnti_matched = 0;
            for (std::size_t i = 0; i < matched; ++i) {
                if (rnti_matches(*p[i], *r[i])) ++rnti_matched;
            }
            a.tp_sum += static_cast<double>(matched) / static_cast<double>(p.size());
            a.rnti_sum += static_cast<double>(rnti_matched) / static_cast<double>(p.size());
        }
    }

    std::vector<PrecisionRow> rows;
    for (phylog::ChannelKind kind : kAllKinds) {
        auto it = acc.find(kind);
        if (it == acc.end()) continue;
        const Acc& a = it->second;
        if (a.ref_count == 0 && a.pred_count == 0) continue;
        PrecisionRow row;
        row.channel = kind;
        row.frequency = total_ref_channels == 0
                            ? 0.0
                            : static_cast<double>(a.ref_count) / static_cast<double>(total_ref_channels);
        row.channel_tp = a.pairs_with_pred == 0
                             ? 0.0
                             : a.tp_sum / static_cast<double>(a.pairs_with_pred);
        row.rnti_tp = a.pairs_with_pred == 0
                          ? 0.0
                          : a.rnti_sum / static_cast<double>(a.pairs_with_pred);
        row.reference_occurrences = a.ref_count;
        row.predicted_occurrences = a.pred_count;
        row.pairs_with_prediction = a.pairs_with_pred;
        rows.push_back(row);
    }
    return rows;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    if (sorted.size() == 1) return sorted[0];
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
    BoxStats bs;
    if (values.empty()) return bs;
    std::sort(values.begin(), values.end());
    bs.median = quantile_sorted(values, 0.5);
    bs.lower_quartile = quantile_sorted(values, 0.25);
    bs.upper_quartile = quantile_sorted(values, 0.75);
    const double iqr = bs.upper_quartile - bs.lower_quartile;
    bs.lower_whisker = std::max(bs.lower_quartile - 1.5 * iqr, values.front());
    bs.upper_whisker = std::min(bs.upper_quartile + 1.5 * iqr, values.back());
    return bs;
}

EvalReport evaluate_with_predictor(const SlotPredictor& predictor,
                                   const std::vector<phylog::SlotRecord>& records,
                                   const EvalConfig& cfg) {
    const long n = static_cast<long>(records.size());
    const long val_start =
        static_cast<long>(static_cast<double>(n) * (1.0 - cfg.val_fraction));
    const long val_slots = n - val_start;
    const long window = cfg.context_slots + 1;
    if (val_slots < window) {
        throw EvalError(EvalError::Kind::InsufficientData,
                        "validation split has fewer than " + std::to_string(window) + " slots");
    }

    std::vector<slottok::TokenSeq> slot_tokens(static_cast<std::size_t>(val_slots));
    for (long i = 0; i < val_slots; ++i) {
        slot_tokens[static_cast<std::size_t>(i)] =
            slottok::encode_slot(records[static_cast<std::size_t>(val_start + i)]);
    }

    // Window starts drawn up front so checker-on/off runs stay paired.
    rng::Stream stream(cfg.seed);
    std::vector<long> starts(cfg.n_samples);
    const std::uint64_t bound = static_cast<std::uint64_t>(val_slots - window + 1);
    for (auto& s : starts) s = static_cast<long>(stream.next_below(bound));

    EvalReport report;
    report.n_samples = cfg.n_samples;
    report.checker = cfg.use_checker;
    report.seed = cfg.seed;
    report.val_slots = static_cast<std::size_t>(val_slots);
    report.samples.resize(cfg.n_samples);

    std::vector<std::pair<slottok::TokenSeq, slottok::TokenSeq>> pairs(cfg.n_samples);

    auto run_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const long start = starts[idx];
            slottok::TokenSeq context;
            for (long j = 0; j < cfg.context_slots; ++j) {
                const auto& st = slot_tokens[static_cast<std::size_t>(start + j)];
                context.insert(context.end(), st.begin(), st.end());
            }
            const auto& reference = slot_tokens[static_cast<std::size_t>(start + cfg.context_slots)];
            const int expected_digit =
                records[static_cast<std::size_t>(val_start + start + cfg.context_slots)]
                    .slot_id.slot;

            bool overflowed = false;
            slottok::TokenSeq pred = predictor(context, expected_digit,
                                               rng::derive_seed(cfg.seed, 0xe7a1ull + idx),
                                               overflowed);

            SampleOutcome& out = report.samples[idx];
            out.index = idx;
            out.start_slot = val_start + start;
            out.target_digit = expected_digit;
            out.levenshtein = levenshtein(pred, reference);
            out.reference_len = reference.size();
            out.rl = static_cast<double>(out.levenshtein) / static_cast<double>(reference.size());
            out.overflowed = overflowed;
            out.violations = synchk::validate(pred, expected_digit).size();
            pairs[idx] = {std::move(pred), reference};
        }
    };

    const int threads = std::clamp<int>(cfg.threads, 1, static_cast<int>(cfg.n_samples ? cfg.n_samples : 1));
    if (threads <= 1) {
        run_range(0, cfg.n_samples);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (cfg.n_samples + threads - 1) / static_cast<std::size_t>(threads);
        for (int t = 0; t < threads; ++t) {
            const std::size_t begin = static_cast<std::size_t>(t) * chunk;
            const std::size_t end = std::min(cfg.n_samples, begin + chunk);
            if (begin < end) pool.emplace_back([&, begin, end] { run_range(begin, end); });
        }
        for (auto& th : pool) th.join();
    }

    std::vector<double> levs, rls;
    levs.reserve(cfg.n_samples);
    rls.reserve(cfg.n_samples);
    for (const auto& s : report.samples) {
        levs.push_back(static_cast<double>(s.levenshtein));
        rls.push_back(s.rl);
        if (s.overflowed) ++report.overflow_count;
    }
    report.box_levenshtein = box_stats(std::move(levs));
    report.box_rl = box_stats(std::move(rls));
    report.precision = channel_precision(pairs);
    return report;
}

EvalReport evaluate_scenario(const nanoformer::Params<float>& model,
                             const std::vector<phylog::SlotRecord>& records,
                             const EvalConfig& cfg) {
    SlotPredictor predictor = [&](std::span<const int> context, int expected_digit,
                                  std::uint64_t sample_seed, bool& overflowed) {
        nanoformer::SamplerConfig sc = cfg.sampler;
        sc.seed = sample_seed;
        synchk::GrammarMask mask(expected_digit);
        try {
            auto result = nanoformer::sample_slot(model, context, sc,
                                                  cfg.use_checker ? &mask : nullptr);
            return result.tokens;
        } catch (const nanoformer::SlotOverflow& e) {
            overflowed = true;
            return e.partial();
        }
    };
    return evaluate_with_predictor(predictor, records, cfg);
}

namespace {

nlohmann::json precision_json(const std::vector<PrecisionRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        arr.push_back({{"channel", phylog::channel_kind_name(r.channel)},
                       {"frequency", r.frequency},
                       {"channel_tp", r.channel_tp},
                       {"rnti_tp", r.rnti_tp},
                       {"reference_occurrences", r.reference_occurrences},
                       {"predicted_occurrences", r.predicted_occurrences},
                       {"pairs_with_prediction", r.pairs_with_prediction}});
    }
    return arr;
}

nlohmann::json box_json(const BoxStats& b) {
    return {{"median", b.median},
            {"lower_quartile", b.lower_quartile},
            {"upper_quartile", b.upper_quartile},
            {"lower_whisker", b.lower_whisker},
            {"upper_whisker", b.upper_whisker}};
}

}  // namespace

void write_report_json(std::ostream& out, const EvalReport& report) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : report.samples) {
        samples.push_back({{"index", s.index},
                           {"start_slot", s.start_slot},
                           {"target_digit", s.target_digit},
                           {"levenshtein", s.levenshtein},
                           {"reference_len", s.reference_len},
                           {"rl", s.rl},
                           {"overflowed", s.overflowed},
                           {"violations", s.violations}});
    }
    nlohmann::json j{{"n_samples", report.n_samples},
                     {"checker", report.checker},
                     {"seed", report.seed},
                     {"val_slots", report.val_slots},
                     {"overflow_count", report.overflow_count},
                     {"box_levenshtein", box_json(report.box_levenshtein)},
                     {"box_rl", box_json(report.box_rl)},
                     {"precision", precision_json(report.precision)},
                     {"samples", samples}};
    out << j.dump(2) << "\n";
}

void write_report_json_file(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open report file for writing: " + path);
    write_report_json(out, report);
}

namespace {

void write_double(std::ostream& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    out << buf;
}

}  // namespace

void write_precision_csv(std::ostream& out, const std::vector<PrecisionRow>& rows) {
    out << "token,p_ci,tp_ci,tp_rnti_ci\n";
    for (const auto& r : rows) {
        out << phylog::channel_kind_name(r.channel) << ",";
        write_double(out, r.frequency);
        out << ",";
        write_double(out, r.channel_tp);
        out << ",";
        write_double(out, r.rnti_tp);
        out << "\n";
    }
}

void write_boxstats_csv(std::ostream& out, const EvalReport& report) {
    out << "metric,median,lower_quartile,upper_quartile,lower_whisker,upper_whisker\n";
    const std::pair<const char*, const BoxStats*> rows[] = {
        {"levenshtein", &report.box_levenshtein},
        {"relative_levenshtein", &report.box_rl},
    };
    for (const auto& [name, b] : rows) {
        out << name << ",";
        write_double(out, b->median);
        out << ",";
        write_double(out, b->lower_quartile);
        out << ",";
        write_double(out, b->upper_quartile);
        out << ",";
        write_double(out, b->lower_whisker);
        out << ",";
        write_double(out, b->upper_whisker);
        out << "\n";
    }
}

}  // namespace evalkit
