#pragma once

#include <string>

#include "manetpay/adversary.hpp"
#include "manetpay/metrics.hpp"
#include "manetpay/mobility.hpp"
#include "manetpay/protocol.hpp"

namespace mpay {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

enum class EndorseMode : uint8_t { Single, Multilevel, LevelSearch };
const char* endorse_mode_name(EndorseMode m);

// Scenario parameters; keys in scenario files use these names.
struct ScenarioConfig {
    double area_m = 3000.0;
    size_t nodes = 100;
    size_t merchants = 1;
    double speed_min = 1.0;
    double speed_max = 1.4;
    double pause_s = 10.0;
    double range_m = 100.0;
    double bandwidth_bps = 1e6;
    double buffer_kb = 300.0;
    size_t message_size_b = 5 * 1024;
    size_t hello_size_b = 5;
    double hello_interval_s = 10.0;
    double endorser_ratio = 0.04;
    size_t monitor_quorum = 3;
    Cents tx_amount = 200;       // cents
    Cents endorse_amount = 200;  // cents
    Cents coin_total = 300000;   // cents per endorser
    uint64_t seed = 1;
    double duration_s = 14400.0;
    double time_scale = 1.0;  // divides truck period and dispute window

    double staleness_s = 60.0;
    double order_mean_s = 300.0;
    double tx_timeout_s = 30.0;
    double billing_ttl_s = 3.0;  // store-carry horizon for billing unicasts
    double level_timeout_s = 5.0;
    double truck_period_s = 172800.0;
    double dispute_window_s = 172800.0;
    int incentive_pct = 3;
    Cents customer_balance = 10000;
    double insolvent_ratio = 0.1;
    double market_bias = 0.25;
    double market_linger = 0.9;
    double endorser_market_bias = 0.85;
    double similarity_eps_m = 10.0;
    double similarity_frac = 0.9;
    double similarity_window_s = 1800.0;
    size_t similarity_min_shared = 12;
    double gps_noise_min_m = 4.9;
    double gps_noise_max_m = 10.0;
    size_t bloom_n = 3000;
    double bloom_fpr = 0.01;
    double coin_lifetime_cycles = 4.0;  // coin expiry in truck periods
    EndorseMode endorse_mode = EndorseMode::Multilevel;
    std::string road_file;

    double truck_period_eff() const { return truck_period_s / time_scale; }
    double dispute_window_eff() const { return dispute_window_s / time_scale; }
    // Chain payload encoding follows the endorsement mode: the level-search
    // baseline predates the lightweight scheme and ships whole chains.
    SizeMode chain_mode() const {
        return endorse_mode == EndorseMode::LevelSearch ? SizeMode::Full
                                                        : SizeMode::Lightweight;
    }
    void validate() const;  // ConfigError
};

struct RunResult {
    MetricsRecord metrics;
    std::string transcript;  // empty unless requested
    std::vector<std::string> violations;
    ConservationReport conservation;
    std::vector<AttackAttempt> attack_attempts;
};

// Runs one deterministic scenario. The seed overrides cfg.seed.
RunResult run_scenario(const ScenarioConfig& cfg, uint64_t seed, bool with_transcript,
                       const AttackScript* attack = nullptr);

// Rebuilds the metrics record from a transcript produced by run_scenario.
MetricsRecord metrics_from_transcript(const std::string& transcript);

}  // namespace mpay
