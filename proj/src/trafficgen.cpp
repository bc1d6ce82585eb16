#include "slotcast/trafficgen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "slotcast/rng.hpp"
#include "slotcast/slottok.hpp"

namespace trafficgen {

const char* traffic_name(Traffic t) {
    switch (t) {
        case Traffic::Downlink: return "downlink";
        case Traffic::Uplink: return "uplink";
        case Traffic::Bidirectional: return "bidirectional";
    }
    return "?";
}

std::optional<Traffic> traffic_from_name(const std::string& name) {
    if (name == "dl" || name == "downlink") return Traffic::Downlink;
    if (name == "ul" || name == "uplink") return Traffic::Uplink;
    if (name == "bi" || name == "bidir" || name == "bidirectional") return Traffic::Bidirectional;
    return std::nullopt;
}

void ScenarioConfig::validate() const {
    if (n_ues < 1) throw ConfigError("n_ues must be >= 1");
    if (n_ues > 255) throw ConfigError("n_ues must fit in one RNTI byte");
    if (static_cast<int>(traffic.size()) != n_ues) {
        std::ostringstream err;
        err << "traffic list has " << traffic.size() << " entries for " << n_ues << " UEs";
        throw ConfigError(err.str());
    }
    if (duration_slots < 11) {
        throw ConfigError("duration_slots must be >= 11 (one input window plus target)");
    }
    if (bandwidth_prbs < 16 || bandwidth_prbs > 275) {
        throw ConfigError("bandwidth_prbs out of range");
    }
    if (!(load > 0.0 && load <= 1.0)) throw ConfigError("load must be in (0, 1]");
    if (harq_delay < 1 || ul_grant_delay < 1) throw ConfigError("grant delays must be >= 1");
    if (pusch_width_prbs < 1 || pusch_width_prbs > data_prbs()) {
        throw ConfigError("pusch_width_prbs must fit the data region");
    }
    if (prach_period_slots && *prach_period_slots < 1) {
        throw ConfigError("prach_period_slots must be >= 1");
    }
}

std::vector<phylog::SlotRecord> generate_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    using phylog::ChannelKind;
    using phylog::ChannelMessage;
    using phylog::Interval;
    using phylog::SlotRecord;

    rng::Stream stream(cfg.seed);
    const int data = cfg.data_prbs();
    const int w_ul = cfg.pusch_width_prbs;

    struct Ue {
        std::uint8_t rnti;
        bool dl, ul;
        long pending_dl = 0, pending_ul = 0;
    };
    std::vector<Ue> ues;
    for (int i = 0; i < cfg.n_ues; ++i) {
        const Traffic t = cfg.traffic[static_cast<std::size_t>(i)];
        ues.push_back({static_cast<std::uint8_t>(i + 1),
                       t == Traffic::Downlink || t == Traffic::Bidirectional,
                       t == Traffic::Uplink || t == Traffic::Bidirectional});
    }

    struct PuschDue {
        std::uint8_t rnti;
        Interval prb;
    };
    std::map<long, std::vector<PuschDue>> pusch_due;
    std::map<long, std::vector<std::uint8_t>> pucch_due;
    std::map<long, int> pusch_reserved;  // count of PUSCH blocks per slot

    std::vector<SlotRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.duration_slots));

    for (long t = 0; t < cfg.duration_slots; ++t) {
        // Backlog arrivals, fixed UE order.
        for (Ue& ue : ues) {
            if (ue.dl && stream.bernoulli(cfg.load)) ++ue.pending_dl;
            if (ue.ul && stream.bernoulli(cfg.load)) ++ue.pending_ul;
        }

        std::vector<ChannelMessage> dl_pairs, ul_grants, puschs, pucchs, prach;

        // Uplink grants reserve a PUSCH block ul_grant_delay slots ahead,
        // packed from the top of the data region downwards.
        for (Ue& ue : ues) {
            if (ue.pending_ul <= 0) continue;
            const long target = t + cfg.ul_grant_delay;
            if (target >= cfg.duration_slots) continue;
            int& reserved = pusch_reserved[target];
            const int start = data - (reserved + 1) * w_ul;
            if (start < 0) continue;  // no capacity, retry next slot
            ++reserved;
            --ue.pending_ul;
            ChannelMessage dci;
            dci.kind = ChannelKind::PdcchDci00;
            dci.rnti_suffix = ue.rnti;
            ul_grants.push_back(dci);
            pusch_due[target].push_back({ue.rnti, Interval{start, start + w_ul}});
        }

        // Downlink: split the bottom of the data region evenly across every
        // backlogged UE.
        std::vector<Ue*> dl_users;
        for (Ue& ue : ues) {
            if (ue.pending_dl > 0) dl_users.push_back(&ue);
        }
        if (!dl_users.empty()) {
            const auto res_it = pusch_reserved.find(t);
            const int free_prbs = data - (res_it == pusch_reserved.end() ? 0 : res_it->second) * w_ul;
            int m = static_cast<int>(dl_users.size());
            int share = m > 0 ? free_prbs / m : 0;
            if (share < 1) {
                m = std::max(0, free_prbs);
                share = m > 0 ? 1 : 0;
            }
            for (int j = 0; j < m && j < static_cast<int>(dl_users.size()); ++j) {
                Ue& ue = *dl_users[static_cast<std::size_t>(j)];
                ChannelMessage dci;
                dci.kind = ChannelKind::PdcchDci10;
                dci.rnti_suffix = ue.rnti;
                dl_pairs.push_back(dci);
                ChannelMessage pdsch;
                pdsch.kind = ChannelKind::Pdsch;
                pdsch.rnti_suffix = ue.rnti;
                pdsch.freq = Interval{j * share, (j + 1) * share};
                pdsch.time = Interval{1, 14};
                dl_pairs.push_back(pdsch);
                --ue.pending_dl;
                const long fb = t + cfg.harq_delay;
                if (fb < cfg.duration_slots) pucch_due[fb].push_back(ue.rnti);
            }
        }

        if (auto it = pusch_due.find(t); it != pusch_due.end()) {
            for (const PuschDue& due : it->second) {
                ChannelMessage pusch;
                pusch.kind = ChannelKind::Pusch;
                pusch.rnti_suffix = due.rnti;
                pusch.freq = due.prb;
                pusch.time = Interval{0, 14};
                puschs.push_back(pusch);
            }
            pusch_due.erase(it);
        }
        if (auto it = pucch_due.find(t); it != pucch_due.end()) {
            for (std::uint8_t rnti : it->second) {
                ChannelMessage pucch;
                pucch.kind = ChannelKind::Pucch;
                pucch.rnti_suffix = rnti;
                pucch.time = Interval{0, 14};
                pucchs.push_back(pucch);
            }
            pucch_due.erase(it);
        }
        if (cfg.prach_period_slots && t % *cfg.prach_period_slots == 0) {
            ChannelMessage msg;
            msg.kind = ChannelKind::Prach;
            msg.freq = Interval{data, data + 6};
            msg.time = Interval{0, 14};
            prach.push_back(msg);
        }

        SlotRecord rec;
        rec.slot_id = phylog::SlotId{static_cast<int>((t / 10) % 1024), static_cast<int>(t % 10)};
        auto append = [&rec](std::vector<ChannelMessage>& v) {
            rec.messages.insert(rec.messages.end(), v.begin(), v.end());
        };
        append(dl_pairs);
        append(ul_grants);
        append(puschs);
        append(pucchs);
        append(prach);
        records.push_back(std::move(rec));
    }
    return records;
}

CorpusStats corpus_stats(const std::vector<phylog::SlotRecord>& records) {
    if (records.empty()) throw ConfigError("corpus_stats needs a non-empty record list");
    CorpusStats stats;
    stats.token_count = slottok::encode_stream(records).size();
    for (const auto& rec : records) {
        for (const auto& msg : rec.messages) {
            stats.channel_count[msg.kind]++;
            stats.channel_occurrences++;
        }
    }
    for (const auto& [kind, count] : stats.channel_count) {
        stats.channel_frequency[kind] =
            static_cast<double>(count) / static_cast<double>(stats.channel_occurrences);
    }
    return stats;
}

ScenarioConfig parse_scenario_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario config: " + path);

    ScenarioConfig cfg;
    std::string traffic_spec = "dl";
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto strip = [](std::string s) {
            std::size_t b = s.find_first_not_of(" \t\r");
            std::size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty()) continue;
        try {
            if (key == "ues") {
                cfg.n_ues = std::stoi(value);
            } else if (key == "traffic") {
                traffic_spec = value;
            } else if (key == "slots") {
                cfg.duration_slots = std::stol(value);
            } else if (key == "seed") {
                cfg.seed = std::stoull(value);
            } else if (key == "bandwidth_prbs") {
                cfg.bandwidth_prbs = std::stoi(value);
            } else if (key == "prach_period") {
                cfg.prach_period_slots = std::stoi(value);
            } else if (key == "load") {
                cfg.load = std::stod(value);
            } else if (key == "harq_delay") {
                cfg.harq_delay = std::stoi(value);
            } else if (key == "ul_grant_delay") {
                cfg.ul_grant_delay = std::stoi(value);
            } else if (key == "pusch_width") {
                cfg.pusch_width_prbs = std::stoi(value);
            } else {
                throw ConfigError("unknown scenario key '" + key + "' at line " +
                                  std::to_string(line_no));
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for '" + key + "' at line " + std::to_string(line_no));
        } catch (const std::out_of_range&) {
            throw ConfigError("bad value for '" + key + "' at line " + std::to_string(line_no));
        }
    }
    cfg.traffic = parse_traffic_list(traffic_spec, cfg.n_ues);
    return cfg;
}

std::vector<Traffic> parse_traffic_list(const std::string& spec, int n_ues) {
    std::vector<Traffic> list;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        std::size_t comma = spec.find(',', pos);
        const std::string item =
            spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        auto t = traffic_from_name(item);
        if (!t) throw ConfigError("unknown traffic direction '" + item + "'");
        list.push_back(*t);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (static_cast<int>(list.size()) == 1 && n_ues > 1) {
        list.assign(static_cast<std::size_t>(n_ues), list[0]);
    }
    if (static_cast<int>(list.size()) != n_ues) {
        std::ostringstream err;
        err << "traffic list has " << list.size() << " entries for " << n_ues << " UEs";
        throw ConfigError(err.str());
    }
    return list;
}

}  // namespace trafficgen
