#include "manetpay/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mpay {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
}

namespace {

std::vector<std::pair<std::string, std::string>> key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!key.empty()) out.push_back({key, value});
    }
    return out;
}

double num(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": " + v);
    }
}

Cents dollars_to_cents(double d) { return static_cast<Cents>(std::llround(d * 100.0)); }

}  // namespace

void apply_config_key(ScenarioConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "area_m") cfg.area_m = num(value, key);
    else if (key == "nodes") cfg.nodes = static_cast<size_t>(num(value, key));
    else if (key == "merchants") cfg.merchants = static_cast<size_t>(num(value, key));
    else if (key == "speed_min") cfg.speed_min = num(value, key);
    else if (key == "speed_max") cfg.speed_max = num(value, key);
    else if (key == "speed") { cfg.speed_min = num(value, key); cfg.speed_max = cfg.speed_min; }
    else if (key == "pause_s") cfg.pause_s = num(value, key);
    else if (key == "range_m") cfg.range_m = num(value, key);
    else if (key == "bandwidth_bps") cfg.bandwidth_bps = num(value, key);
    else if (key == "buffer_kb") cfg.buffer_kb = num(value, key);
    else if (key == "message_size_b") cfg.message_size_b = static_cast<size_t>(num(value, key));
    else if (key == "hello_size_b") cfg.hello_size_b = static_cast<size_t>(num(value, key));
    else if (key == "hello_interval_s") cfg.hello_interval_s = num(value, key);
    else if (key == "endorser_ratio") cfg.endorser_ratio = num(value, key);
    else if (key == "monitor_quorum") cfg.monitor_quorum = static_cast<size_t>(num(value, key));
    else if (key == "tx_amount") cfg.tx_amount = dollars_to_cents(num(value, key));
    else if (key == "endorse_amount") cfg.endorse_amount = dollars_to_cents(num(value, key));
    else if (key == "coin_total") cfg.coin_total = dollars_to_cents(num(value, key));
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(num(value, key));
    else if (key == "duration_s") cfg.duration_s = num(value, key);
    else if (key == "time_scale") cfg.time_scale = num(value, key);
    else if (key == "staleness_s") cfg.staleness_s = num(value, key);
    else if (key == "order_mean_s") cfg.order_mean_s = num(value, key);
    else if (key == "tx_timeout_s") cfg.tx_timeout_s = num(value, key);
    else if (key == "billing_ttl_s") cfg.billing_ttl_s = num(value, key);
    else if (key == "level_timeout_s") cfg.level_timeout_s = num(value, key);
    else if (key == "truck_period_s") cfg.truck_period_s = num(value, key);
    else if (key == "dispute_window_s") cfg.dispute_window_s = num(value, key);
    else if (key == "incentive_pct") cfg.incentive_pct = static_cast<int>(num(value, key));
    else if (key == "customer_balance") cfg.customer_balance = dollars_to_cents(num(value, key));
    else if (key == "insolvent_ratio") cfg.insolvent_ratio = num(value, key);
    else if (key == "market_bias") cfg.market_bias = num(value, key);
    else if (key == "market_linger") cfg.market_linger = num(value, key);
    else if (key == "endorser_market_bias") cfg.endorser_market_bias = num(value, key);
    else if (key == "similarity_eps_m") cfg.similarity_eps_m = num(value, key);
    else if (key == "similarity_frac") cfg.similarity_frac = num(value, key);
    else if (key == "similarity_window_s") cfg.similarity_window_s = num(value, key);
    else if (key == "similarity_min_shared")
        cfg.similarity_min_shared = static_cast<size_t>(num(value, key));
    else if (key == "gps_noise_min_m") cfg.gps_noise_min_m = num(value, key);
    else if (key == "gps_noise_max_m") cfg.gps_noise_max_m = num(value, key);
    else if (key == "bloom_n") cfg.bloom_n = static_cast<size_t>(num(value, key));
    else if (key == "bloom_fpr") cfg.bloom_fpr = num(value, key);
    else if (key == "coin_lifetime_cycles") cfg.coin_lifetime_cycles = num(value, key);
    else if (key == "road_file") cfg.road_file = value;
    else if (key == "endorse_mode") {
        if (value == "single") cfg.endorse_mode = EndorseMode::Single;
        else if (value == "multilevel") cfg.endorse_mode = EndorseMode::Multilevel;
        else if (value == "levelsearch") cfg.endorse_mode = EndorseMode::LevelSearch;
        else throw ConfigError("endorse_mode must be single|multilevel|levelsearch");
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

ScenarioConfig parse_scenario(const std::string& text) {
    ScenarioConfig cfg;
    for (auto& [k, v] : key_values(text)) apply_config_key(cfg, k, v);
    cfg.validate();
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path) { return parse_scenario(read_file(path)); }

SweepSpec parse_sweep(const std::string& text) {
    SweepSpec spec;
    for (auto& [k, v] : key_values(text)) {
        if (k == "parameter") spec.parameter = v;
        else if (k == "seeds") spec.seeds_per_point = static_cast<size_t>(num(v, k));
        else if (k == "scenario") spec.scenario_path = v;
        else if (k == "values") {
            std::istringstream in(v);
            std::string tok;
            while (in >> tok) spec.values.push_back(tok);
        } else {
            throw ConfigError("unknown sweep key: " + k);
        }
    }
    if (spec.parameter.empty() || spec.values.empty())
        throw ConfigError("sweep needs 'parameter' and 'values'");
    {
        // reject unknown parameter names up front
        ScenarioConfig probe;
        apply_config_key(probe, spec.parameter, spec.values.front());
    }
    return spec;
}

SweepSpec load_sweep(const std::string& path) { return parse_sweep(read_file(path)); }

AttackScript parse_attack(const std::string& text) {
    AttackScript script;
    bool have_kind = false;
    for (auto& [k, v] : key_values(text)) {
        if (k == "kind") {
            auto kind = attack_kind_from_name(v);
            if (!kind.has_value()) throw ConfigError("unknown attack kind: " + v);
            script.kind = *kind;
            have_kind = true;
        } else if (k == "trigger_s") script.trigger_s = num(v, k);
        else if (k == "colluding_parties")
            script.colluding_parties = static_cast<size_t>(num(v, k));
        else if (k == "customer") script.customer = static_cast<EntityId>(num(v, k));
        else if (k == "endorser") script.endorser = static_cast<EntityId>(num(v, k));
        else if (k == "merchant") script.merchant = static_cast<EntityId>(num(v, k));
        else if (k == "second_merchant")
            script.second_merchant = static_cast<EntityId>(num(v, k));
        else throw ConfigError("unknown attack key: " + k);
    }
    if (!have_kind) throw ConfigError("attack script needs 'kind'");
    return script;
}

AttackScript load_attack(const std::string& path) { return parse_attack(read_file(path)); }

CsvTable run_sweep(const ScenarioConfig& base, const SweepSpec& spec) {
    CsvTable table;
    table.header = {"parameter", "value",        "seed",        "tcr",
                    "vr",        "completion_s", "merchant_kb", "orders_received",
                    "completions"};
    char buf[64];
    auto fmt = [&](double v) {
        snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    for (const std::string& value : spec.values) {
        ScenarioConfig cfg = base;
        apply_config_key(cfg, spec.parameter, value);
        cfg.validate();
        double tcr_sum = 0, vr_sum = 0, comp_sum = 0, mkb_sum = 0;
        uint64_t orders_sum = 0, completions_sum = 0;
        size_t comp_points = 0;
        for (size_t s = 1; s <= spec.seeds_per_point; ++s) {
            RunResult r = run_scenario(cfg, s, false);
            double tcr = r.metrics.orders_received > 0 ? compute_tcr(r.metrics) : 0.0;
            double vr = compute_vr(r.metrics);
            double comp = 0.0;
            if (!r.metrics.completion_times.empty()) {
                comp = completion_time_stats(r.metrics).mean;
                comp_sum += comp;
                ++comp_points;
            }
            double mkb = static_cast<double>(merchant_message_size(r.metrics)) / 1024.0;
            tcr_sum += tcr;
            vr_sum += vr;
            mkb_sum += mkb;
            orders_sum += r.metrics.orders_received;
            completions_sum += r.metrics.completions;
            table.rows.push_back({spec.parameter, value, std::to_string(s), fmt(tcr), fmt(vr),
                                  fmt(comp), fmt(mkb),
                                  std::to_string(r.metrics.orders_received),
                                  std::to_string(r.metrics.completions)});
        }
        double n = static_cast<double>(spec.seeds_per_point);
        table.rows.push_back({spec.parameter, value, "mean", fmt(tcr_sum / n), fmt(vr_sum / n),
                              fmt(comp_points > 0 ? comp_sum / comp_points : 0.0),
                              fmt(mkb_sum / n), std::to_string(orders_sum),
                              std::to_string(completions_sum)});
    }
    return table;
}

}  // namespace mpay
