#pragma once

#include <string>

#include "manetpay/sim.hpp"

namespace mpay {

// Scenario files are "key = value" lines; '#' starts a comment. Keys match
// the ScenarioConfig field names; amounts are given in dollars as in the
// parameter table (tx_amount, endorse_amount, coin_total).
ScenarioConfig parse_scenario(const std::string& text);
ScenarioConfig load_scenario(const std::string& path);

// Applies one key=value pair (sweep machinery reuses this).
void apply_config_key(ScenarioConfig& cfg, const std::string& key, const std::string& value);

// Sweep files: same dialect, with keys
//   parameter = <config key>, values = <v1 v2 ...>, seeds = <n>,
//   scenario = <path, optional>.
struct SweepSpec {
    std::string parameter;
    std::vector<std::string> values;
    size_t seeds_per_point = 20;
    std::string scenario_path;
};
SweepSpec parse_sweep(const std::string& text);
SweepSpec load_sweep(const std::string& path);

// Attack scripts: keys kind, trigger_s, colluding_parties and optional actor
// ids (customer, endorser, merchant, second_merchant).
AttackScript parse_attack(const std::string& text);
AttackScript load_attack(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// One row per (value, seed) plus a mean summary row per value.
CsvTable run_sweep(const ScenarioConfig& base, const SweepSpec& spec);

}  // namespace mpay
