#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <iostream>

#include "manetpay/config.hpp"

using namespace mpay;

namespace {

void print_summary(const RunResult& r) {
    const MetricsRecord& m = r.metrics;
    printf("orders initiated/received: %" PRIu64 "/%" PRIu64 "\n", m.orders_initiated,
           m.orders_received);
    printf("completions:               %" PRIu64 "\n", m.completions);
    printf("rejected tx / expired:     %" PRIu64 " / %" PRIu64 "\n", m.rejected_transactions,
           m.expired_transactions);
    printf("endorsements acc/rej/sur:  %" PRIu64 "/%" PRIu64 "/%" PRIu64 "\n",
           m.accepted_endorsements, m.rejected_endorsements, m.surplus_endorsements);
    if (m.orders_received > 0) printf("TCR: %.4f\n", compute_tcr(m));
    printf("VR:  %.4f\n", compute_vr(m));
    if (!m.completion_times.empty()) {
        CompletionStats cs = completion_time_stats(m);
        printf("completion time: mean %.3fs min %.3fs max %.3fs over %zu\n", cs.mean, cs.min,
               cs.max, cs.count);
    }
    printf("merchant validation traffic: %.1f KB\n",
           static_cast<double>(merchant_message_size(m)) / 1024.0);
    for (auto& [owner, sz] : m.chain_sizes)
        printf("chain %u: full %" PRIu64 " B, lightweight %" PRIu64 " B\n", owner, sz.first,
               sz.second);
    printf("conservation: %s\n", r.conservation.balanced ? "balanced" : "VIOLATED");
    for (const std::string& v : r.violations) printf("violation: %s\n", v.c_str());
}

CsvTable metrics_csv(const MetricsRecord& m, uint64_t seed) {
    CsvTable t;
    t.header = {"seed", "orders_received", "completions", "rejected_tx",
                "rejected_endorsements", "tcr", "vr", "completion_mean_s", "merchant_kb"};
    char buf[64];
    auto fmt = [&](double v) {
        snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    double tcr = m.orders_received > 0 ? compute_tcr(m) : 0.0;
    double comp = m.completion_times.empty() ? 0.0 : completion_time_stats(m).mean;
    t.rows.push_back({std::to_string(seed), std::to_string(m.orders_received),
                      std::to_string(m.completions), std::to_string(m.rejected_transactions),
                      std::to_string(m.rejected_endorsements), fmt(tcr), fmt(compute_vr(m)),
                      fmt(comp),
                      fmt(static_cast<double>(merchant_message_size(m)) / 1024.0)});
    return t;
}

struct ChainFixture {
    EntityId owner = 0;
    size_t bloom_n = 3000;
    double bloom_fpr = 0.01;
    size_t quorum = 3;
    double staleness_s = 60.0;
    double now = 0.0;
    std::map<EntityId, PublicKey> keys;
    Bytes chain_bytes;
};

ChainFixture parse_chain_fixture(const std::string& text) {
    ChainFixture f;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        std::string eq;
        ls >> eq;
        if (eq != "=") throw ConfigError("bad fixture line: " + line);
        if (key == "owner") ls >> f.owner;
        else if (key == "bloom_n") ls >> f.bloom_n;
        else if (key == "bloom_fpr") ls >> f.bloom_fpr;
        else if (key == "quorum") ls >> f.quorum;
        else if (key == "staleness_s") ls >> f.staleness_s;
        else if (key == "now") ls >> f.now;
        else if (key == "key") {
            EntityId id;
            std::string hex;
            if (!(ls >> id >> hex)) throw ConfigError("bad key line: " + line);
            Bytes material = from_hex(hex);
            if (material.size() != 32) throw ConfigError("key material must be 32 bytes");
            PublicKey pk;
            pk.owner_id = id;
            std::copy(material.begin(), material.end(), pk.material.begin());
            f.keys[id] = pk;
        } else if (key == "chain") {
            std::string hex;
            ls >> hex;
            f.chain_bytes = from_hex(hex);
        } else {
            throw ConfigError("unknown fixture key: " + key);
        }
    }
    if (f.chain_bytes.empty()) throw ConfigError("fixture has no chain data");
    return f;
}

std::string make_chain_fixture(bool tampered) {
    EntityId owner = 50;
    std::map<EntityId, KeyPair> monitors;
    for (EntityId id : {100u, 101u, 102u})
        monitors.emplace(id, make_keypair(id, "monitor-" + std::to_string(id)));
    EventChain chain(owner, 3000, 0.01);
    CoinId next = 1;
    for (int i = 0; i < 5; ++i) {
        Event ev;
        if (i == 2) {
            ev.kind = EventKind::Hello;
        } else {
            ev.kind = EventKind::Spend;
            ev.records.push_back({next++, 200, 10});
            ev.records.push_back({next++, 200, 10});
        }
        Block b = chain.propose_block(ev, Gps{1500.0f, 1500.0f}, 10.0 * (i + 1));
        Bytes tuple = b.signing_tuple();
        for (auto& [id, kp] : monitors)
            b.monitor_signatures.push_back({id, sign(kp.priv, tuple, b.timestamp)});
        chain.append(b, 3, 60.0);
    }
    Bytes wire = chain.serialize();
    if (tampered) wire[wire.size() / 2] ^= 1;
    std::ostringstream out;
    out << "owner = " << owner << "\n";
    out << "bloom_n = 3000\nbloom_fpr = 0.01\nquorum = 3\nstaleness_s = 60\nnow = 55\n";
    for (auto& [id, kp] : monitors)
        out << "key = " << id << " " << to_hex(kp.pub.material.data(), 32) << "\n";
    out << "chain = " << to_hex(wire) << "\n";
    return out.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"endorsement-based offline payment simulator"};
    app.require_subcommand(1);

    // run
    auto* run_cmd = app.add_subcommand("run", "run one scenario");
    std::string scenario_path, transcript_out, csv_out;
    uint64_t seed = 0;
    bool want_seed = false;
    run_cmd->add_option("scenario", scenario_path, "scenario config file")->required();
    auto* seed_opt = run_cmd->add_option("--seed", seed, "override the scenario seed");
    run_cmd->add_option("--transcript", transcript_out, "write the message transcript here");
    run_cmd->add_option("--csv", csv_out, "write a one-row metrics CSV here");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "run a parameter sweep");
    std::string sweep_path, sweep_out;
    sweep_cmd->add_option("spec", sweep_path, "sweep spec file")->required();
    sweep_cmd->add_option("--out", sweep_out, "CSV output path (default stdout)");

    // report
    auto* report_cmd = app.add_subcommand("report", "recompute metrics from a transcript");
    std::string report_path;
    report_cmd->add_option("transcript", report_path, "transcript file")->required();

    // verify-chain
    auto* verify_cmd = app.add_subcommand("verify-chain", "verify an event-chain fixture");
    std::string chain_path;
    verify_cmd->add_option("chain", chain_path, "chain fixture file")->required();

    // attack
    auto* attack_cmd = app.add_subcommand("attack", "run a scenario with an attack script");
    std::string attack_scenario, attack_script, attack_transcript;
    uint64_t attack_seed = 0;
    attack_cmd->add_option("scenario", attack_scenario, "scenario config file")->required();
    attack_cmd->add_option("script", attack_script, "attack script file")->required();
    auto* aseed_opt = attack_cmd->add_option("--seed", attack_seed, "override the seed");
    attack_cmd->add_option("--transcript", attack_transcript, "transcript output path");

    // make-chain (fixture helper for verify-chain)
    auto* make_cmd = app.add_subcommand("make-chain", "write a demo chain fixture");
    std::string make_out;
    bool make_tampered = false;
    make_cmd->add_option("out", make_out, "fixture output path")->required();
    make_cmd->add_flag("--tampered", make_tampered, "flip one byte in the chain");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            ScenarioConfig cfg = load_scenario(scenario_path);
            want_seed = seed_opt->count() > 0;
            uint64_t s = want_seed ? seed : cfg.seed;
            RunResult r = run_scenario(cfg, s, !transcript_out.empty());
            if (!transcript_out.empty()) write_file(transcript_out, r.transcript);
            if (!csv_out.empty()) write_file(csv_out, csv_emit(metrics_csv(r.metrics, s)));
            print_summary(r);
            return r.violations.empty() ? 0 : 1;
        }
        if (*sweep_cmd) {
            SweepSpec spec = load_sweep(sweep_path);
            ScenarioConfig base =
                spec.scenario_path.empty() ? ScenarioConfig{} : load_scenario(spec.scenario_path);
            CsvTable table = run_sweep(base, spec);
            std::string csv = csv_emit(table);
            if (sweep_out.empty())
                std::cout << csv;
            else
                write_file(sweep_out, csv);
            return 0;
        }
        if (*report_cmd) {
            MetricsRecord m = metrics_from_transcript(read_file(report_path));
            printf("orders received: %" PRIu64 "\ncompletions: %" PRIu64 "\n",
                   m.orders_received, m.completions);
            if (m.orders_received > 0) printf("TCR: %.4f\n", compute_tcr(m));
            printf("VR: %.4f\n", compute_vr(m));
            printf("rejected tx: %" PRIu64 ", rejected endorsements: %" PRIu64 "\n",
                   m.rejected_transactions, m.rejected_endorsements);
            printf("merchant validation traffic: %.1f KB\n",
                   static_cast<double>(merchant_message_size(m)) / 1024.0);
            return 0;
        }
        if (*verify_cmd) {
            ChainFixture f = parse_chain_fixture(read_file(chain_path));
            EventChain chain;
            try {
                chain = EventChain::deserialize(f.chain_bytes, f.bloom_n, f.bloom_fpr);
            } catch (const std::exception& e) {
                printf("BROKEN malformed: %s\n", e.what());
                return 1;
            }
            KeyLookup keys = [&f](EntityId id) -> const PublicKey* {
                auto it = f.keys.find(id);
                return it == f.keys.end() ? nullptr : &it->second;
            };
            ChainVerdict v = chain.verify(keys, f.now, f.quorum, f.staleness_s);
            if (v.valid) {
                printf("VALID blocks=%zu owner=%u\n", chain.size(), chain.owner_id());
                return 0;
            }
            printf("BROKEN fault=%s index=%zu\n", chain_fault_name(v.fault), v.index);
            return 1;
        }
        if (*attack_cmd) {
            ScenarioConfig cfg = load_scenario(attack_scenario);
            AttackScript script = load_attack(attack_script);
            uint64_t s = aseed_opt->count() > 0 ? attack_seed : cfg.seed;
            RunResult r = run_scenario(cfg, s, !attack_transcript.empty(), &script);
            if (!attack_transcript.empty()) write_file(attack_transcript, r.transcript);
            bool all_match = !r.attack_attempts.empty();
            for (const AttackAttempt& at : r.attack_attempts) {
                ExpectedOutcome want = expected_outcome(at.kind);
                bool match = attack_outcome_matches(at);
                all_match = all_match && match;
                printf("attack %s at t=%.1f: %s (%s) expected=%s defense=%s -> %s\n",
                       attack_kind_name(at.kind), at.t,
                       at.completed ? "completed" : "rejected",
                       at.reason.has_value() ? reject_reason_name(*at.reason) : "-",
                       want.undetectable ? "undetectable-by-design"
                                         : reject_reason_name(want.reason),
                       want.defense, match ? "as expected" : "MISMATCH");
            }
            print_summary(r);
            return all_match && r.violations.empty() ? 0 : 1;
        }
        if (*make_cmd) {
            write_file(make_out, make_chain_fixture(make_tampered));
            return 0;
        }
    } catch (const std::exception& e) {
        fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
