#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotcast/phylog.hpp"

namespace trafficgen {

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class Traffic { Downlink, Uplink, Bidirectional };

const char* traffic_name(Traffic t);
std::optional<Traffic> traffic_from_name(const std::string& name);

// Deterministic gNB scheduler emulation. The policy, in slot order:
//   1. Per slot, each UE independently gets new DL/UL backlog with
//      probability `load` per eligible direction.
//   2. UL: each backlogged UE (ascending RNTI) gets a PDCCH DCI 0_0 grant if a
//      fixed-width PUSCH block can be reserved in slot t + ul_grant_delay;
//      PUSCH blocks are taken from the top of the data region downwards.
//   3. DL: the free PRBs of the data region [0, data_prbs) remaining in slot t
//      are split evenly across all backlogged UEs (ascending RNTI); each UE
//      served emits PDCCH DCI 1_0 + PDSCH in slot t and queues a PUCCH
//      harq_delay slots later.
//   4. Optional PRACH every prach_period_slots, above the data region.
// Message order within a slot: DL pairs, UL grants, due PUSCH, due PUCCH,
// PRACH. PDSCH occupies symbols [1, 14); PUSCH and PUCCH occupy [0, 14).
struct ScenarioConfig {
    int n_ues = 1;
    std::vector<Traffic> traffic;  // one entry per UE
    long duration_slots = 0;
    std::uint64_t seed = 0;
    int bandwidth_prbs = 106;  // 20 MHz carrier
    std::optional<int> prach_period_slots;
    double load = 0.01;     // per-UE, per-direction arrival probability per slot
    int harq_delay = 4;     // PDSCH -> PUCCH feedback offset (k)
    int ul_grant_delay = 4; // DCI 0_0 -> PUSCH offset (k2)
    int pusch_width_prbs = 24;

    // Data region: PRBs [0, data_prbs()); PRACH sits above it.
    int data_prbs() const { return bandwidth_prbs - 10; }

    void validate() const;  // throws ConfigError
};

std::vector<phylog::SlotRecord> generate_scenario(const ScenarioConfig& cfg);

struct CorpusStats {
    std::size_t token_count = 0;
    std::size_t channel_occurrences = 0;
    std::map<phylog::ChannelKind, double> channel_frequency;  // P(c_i)
    std::map<phylog::ChannelKind, std::size_t> channel_count;
};

CorpusStats corpus_stats(const std::vector<phylog::SlotRecord>& records);

// Key=value scenario file (`#` comments): ues, traffic, slots, seed,
// bandwidth_prbs, prach_period, load, harq_delay, ul_grant_delay.
ScenarioConfig parse_scenario_config(const std::string& path);

// "dl" | "dl,ul,bi" | ... one entry per UE; a single entry broadcasts to all.
std::vector<Traffic> parse_traffic_list(const std::string& spec, int n_ues);

}  // namespace trafficgen
