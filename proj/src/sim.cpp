#include "manetpay/sim.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdarg>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <queue>
#include <sstream>

namespace mpay {

const char* endorse_mode_name(EndorseMode m) {
    switch (m) {
        case EndorseMode::Single: return "single";
        case EndorseMode::Multilevel: return "multilevel";
        case EndorseMode::LevelSearch: return "levelsearch";
    }
    return "unknown";
}

void ScenarioConfig::validate() const {
    if (nodes < kMinCompletionNodes)
        throw ConfigError("nodes: at least 6 nodes are needed to complete a transaction");
    if (merchants == 0 || merchants >= nodes) throw ConfigError("merchants out of range");
    if (!(speed_min > 0.0) || speed_max < speed_min) throw ConfigError("speed band invalid");
    if (range_m <= 0.0 || bandwidth_bps <= 0.0) throw ConfigError("radio parameters invalid");
    if (endorser_ratio <= 0.0 || endorser_ratio >= 1.0) throw ConfigError("endorser_ratio");
    if (monitor_quorum == 0) throw ConfigError("monitor_quorum must be positive");
    if (tx_amount <= 0 || endorse_amount <= 0 || coin_total <= 0)
        throw ConfigError("amounts must be positive");
    if (duration_s <= 0.0 || time_scale <= 0.0) throw ConfigError("duration/time_scale");
    if (!(bloom_fpr > 0.0 && bloom_fpr < 1.0)) throw ConfigError("bloom_fpr");
    if (hello_interval_s <= 0.0) throw ConfigError("hello_interval_s");
}

namespace {

// §V.F computation-time constants (seconds)
constexpr double kOrderCompute = 0.006;
constexpr double kMerchantOrderCompute = 0.07;
constexpr double kEndorseCompute = 0.5;
constexpr double kMonitorCompute = 0.1;
constexpr double kMerchantEndorseCompute = 0.03;

constexpr EntityId kBankId = 1;
constexpr EntityId kTruckId = 2;

struct PendingTx {
    TransactionOrder order;
    double t_initiated = 0.0;
    double t_received = 0.0;
    Cents covered = 0;
    std::vector<AcceptedEndorsement> accepted;
    std::set<EntityId> billed;
    bool closed = false;
    bool succeeded = false;
    bool any_evaluated = false;
    std::optional<RejectReason> last_reason;
    int level = 1;
    size_t bundle_slot = SIZE_MAX;
};

struct BufferedMsg {
    EntityId to = 0;
    size_t bytes = 0;
    double expires = 0.0;
    std::function<void(double)> deliver;  // argument: delivery time
};

struct Node {
    EntityId id = 0;
    Role role{};
    size_t idx = 0;
    MobilityState mob;
    Rng rng_mob{0};
    Rng rng_order{0};
    Rng rng_gps{0};

    std::deque<GpsSample> reported;

    // endorser state
    EventChain chain;
    EndorserWallet wallet;
    std::vector<std::pair<CoinId, Cents>> unlogged_receipts;
    bool ring_busy = false;
    std::deque<std::pair<double, Billing>> billing_queue;

    // everyone can serve as a witness
    MonitorMemory mon_memory;
    std::set<CoinId> witnessed;
    std::vector<CoinId> gossip_out;

    // merchant state
    ChainViewCache chain_cache;
    std::map<uint64_t, PendingTx> pending;
    std::vector<SettlementBundle> outbox;
    std::set<uint64_t> shipped_orders;

    // customer state
    double next_order_at = 0.0;
    bool order_pending = false;
    size_t temp_idx = 0;

    std::deque<BufferedMsg> buffer;
    size_t buffer_bytes = 0;
};

struct SimEvent {
    double t;
    uint64_t seq;
    std::function<void()> fn;
};
struct SimEventAfter {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
        if (a.t != b.t) return a.t > b.t;
        return a.seq > b.seq;
    }
};

class Engine {
public:
    Engine(const ScenarioConfig& cfg, uint64_t seed, bool with_transcript,
           AttackScript* attack)
        : cfg_(cfg), seed_(seed), with_transcript_(with_transcript), attack_(attack),
          bank_(kBankId, BankConfig{cfg.incentive_pct, cfg.endorse_amount,
                                    cfg.coin_lifetime_cycles * cfg.truck_period_eff(),
                                    cfg.dispute_window_eff(), 128}) {}

    RunResult run();

private:
    // ---- setup
    void build_world();
    void setup_attack();

    // ---- scheduling / transcript
    void schedule(double t, std::function<void()> fn) {
        queue_.push({t, next_seq_++, std::move(fn)});
    }
    void line(const char* fmt, ...) __attribute__((format(printf, 2, 3)));
    void msg_line(double t, const std::string& from, const std::string& to, const char* kind,
                  size_t bytes, size_t mbytes, const char* roles_from, const char* roles_to);

    // ---- geometry helpers
    Node& node(EntityId id) { return nodes_[by_id_.at(id)]; }
    bool in_range_ids(EntityId a, EntityId b) const {
        return in_range(nodes_[by_id_.at(a)].mob.position, nodes_[by_id_.at(b)].mob.position,
                        cfg_.range_m);
    }
    double hop_latency() const { return transmit_latency(cfg_.message_size_b, cfg_.bandwidth_bps); }

    std::span<const GpsSample> history(const Node& n) const {
        return {&*n.reported.begin(), n.reported.size()};
    }

    // ---- periodic machinery
    void tick();
    void hello_upkeep(Node& endorser);
    void flush_buffers(Node& n);
    void maybe_start_order(Node& customer);

    // ---- transaction path
    void initiate_order(Node& customer, Node& merchant, bool forced, EntityId forced_as);
    void merchant_receive_order(Node& merchant, const TransactionOrder& order, double t_init);
    void send_billing(Node& merchant, PendingTx& tx, int level);
    void endorser_take_billing(Node& endorser, const Billing& billing);
    void endorser_process_billing(Node& endorser, const Billing& billing);
    void drain_billing_queue(Node& endorser);

    struct RingCtx {
        Billing billing;
        EndorsePlan plan;
        Block proposal;
        size_t index = 0;
        std::vector<size_t> monitors;
        size_t at = 0;
        std::vector<MonitorSignature> sigs;
    };
    void start_ring(Node& endorser, const Billing& billing, EndorsePlan plan,
                    std::vector<size_t> monitors);
    void ring_hop(EntityId endorser_id, std::shared_ptr<RingCtx> ctx);
    void finish_ring(Node& endorser, const Billing& billing, EndorsePlan plan, Block block,
                     bool aborted, std::optional<RejectReason> reason);
    void merchant_receive_endorsement(Node& merchant, EndorsementMessage em);
    void close_tx(Node& merchant, PendingTx& tx, bool accepted, double t_done,
                  std::optional<RejectReason> reason);

    std::vector<size_t> monitor_candidates(const Node& endorser, const Node* merchant,
                                           EntityId tx_customer, bool* similar_excluded);

    // ---- truck
    void truck_stop(size_t region_idx);
    void truck_bank_stop();

    // ---- attack helpers
    bool is_attack_order(uint64_t oid) const {
        return attack_ != nullptr && attack_orders_.count(oid) > 0;
    }
    void attack_phase(int phase);
    void record_attack_verdict(std::optional<RejectReason> reason, bool completed);
    bool attack_phase3_started_ = false;

    // ---- metrics helpers
    void count_bytes(Role from, Role to, size_t bytes);
    void bin_at(double t, uint64_t BinCounters::*field);
    void endorsement_verdict(double t, uint64_t oid, EntityId endorser, const char* verdict,
                             std::optional<RejectReason> reason);

    const ScenarioConfig& cfg_;
    uint64_t seed_;
    bool with_transcript_;
    AttackScript* attack_;

    RoadGraph graph_;
    std::vector<int> market_;
    Bank bank_;
    std::vector<Node> nodes_;
    std::map<EntityId, size_t> by_id_;
    std::vector<EntityId> merchant_ids_, endorser_ids_, customer_ids_;

    std::priority_queue<SimEvent, std::vector<SimEvent>, SimEventAfter> queue_;
    uint64_t next_seq_ = 0;
    double now_ = 0.0;
    uint64_t next_order_id_ = 1;

    MetricsRecord metrics_;
    std::ostringstream transcript_;
    std::vector<std::string> violations_;
    std::map<CoinId, EntityId> coin_accepted_by_;
    std::map<size_t, std::vector<double>> truck_arrivals_;
    std::map<EntityId, std::vector<ECoin>> truck_coin_cargo_;
    std::vector<SettlementBundle> truck_bundles_;

    // attack state
    std::set<uint64_t> attack_orders_;
    std::vector<AttackAttempt> attack_attempts_;
    bool attack_verdict_recorded_ = false;
    EventChain attack_saved_chain_;
    EndorserWallet attack_saved_wallet_;
    ECoin attack_spent_coin_;
    std::set<EntityId> stolen_set_;
    std::set<EntityId> colluding_monitors_;
};

void Engine::line(const char* fmt, ...) {
    if (!with_transcript_) return;
    char buf[512];
    va_list ap;
    va_start(ap, fmt);
    vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    transcript_ << buf << '\n';
}

void Engine::count_bytes(Role from, Role to, size_t bytes) {
    metrics_.bytes_sent_by_role[role_name(from)] += bytes;
    metrics_.bytes_received_by_role[role_name(to)] += bytes;
}

void Engine::bin_at(double t, uint64_t BinCounters::*field) {
    size_t bin = static_cast<size_t>(t / metrics_.bin_seconds);
    if (bin >= metrics_.bins.size()) metrics_.bins.resize(bin + 1);
    metrics_.bins[bin].*field += 1;
}

void Engine::msg_line(double t, const std::string& from, const std::string& to,
                      const char* kind, size_t bytes, size_t mbytes, const char* role_from,
                      const char* role_to) {
    line("MSG t=%.6f from=%s to=%s kind=%s bytes=%zu mbytes=%zu rf=%s rt=%s", t, from.c_str(),
         to.c_str(), kind, bytes, mbytes, role_from, role_to);
}

void Engine::build_world() {
    if (!cfg_.road_file.empty()) {
        std::ifstream in(cfg_.road_file, std::ios::binary);
        if (!in) throw ConfigError("cannot open road file " + cfg_.road_file);
        std::ostringstream ss;
        ss << in.rdbuf();
        graph_ = RoadGraph::parse(ss.str(), &market_);
        if (!graph_.connected()) throw ConfigError("road graph is not connected");
    } else {
        graph_ = RoadGraph::default_scenario(cfg_.area_m, &market_);
    }

    size_t n_endorsers = std::max<size_t>(1, std::llround(cfg_.endorser_ratio *
                                                          static_cast<double>(cfg_.nodes)));
    size_t n_merchants = cfg_.merchants;
    if (n_endorsers + n_merchants + 4 > cfg_.nodes)
        throw ConfigError("not enough nodes for the requested roles");
    size_t n_customers = cfg_.nodes - n_endorsers - n_merchants;

    for (size_t i = 0; i < n_merchants; ++i) merchant_ids_.push_back(10 + i);
    for (size_t i = 0; i < n_endorsers; ++i) endorser_ids_.push_back(100 + i);
    for (size_t i = 0; i < n_customers; ++i) customer_ids_.push_back(1000 + i);

    if (attack_ != nullptr) setup_attack();

    Rng rng_setup(seed_, "setup");

    // registration (pre-disaster)
    for (EntityId id : merchant_ids_) bank_.register_merchant(id);
    size_t e = endorser_ids_.size();
    size_t secondaries = std::min<size_t>(2, e - 1);
    for (size_t i = 0; i < e; ++i) {
        std::vector<EntityId> own;
        for (size_t k = 1; k <= secondaries; ++k)
            own.push_back(endorser_ids_[(i + k) % e]);
        bank_.register_endorser(endorser_ids_[i], own, cfg_.coin_total, 0, rng_setup);
    }
    size_t primaries = std::clamp<size_t>(std::llround(e / 2.0), 1, std::min<size_t>(4, e));
    for (EntityId id : customer_ids_) {
        std::vector<EntityId> prim;
        size_t start = rng_setup.uniform_int(e);
        for (size_t k = 0; k < primaries; ++k) prim.push_back(endorser_ids_[(start + k) % e]);
        bool insolvent = rng_setup.uniform() < cfg_.insolvent_ratio;
        Cents balance = insolvent ? 0 : cfg_.customer_balance;
        if (attack_ != nullptr && id == attack_->customer) {
            // the scripted customer is guaranteed by the scripted endorser,
            // and is broke when the script needs a default at settlement
            prim = {attack_->endorser};
            balance = (attack_->kind == AttackKind::ColludeCustomerEndorser ||
                       attack_->kind == AttackKind::ColludeCustomerMerchant)
                          ? 0
                          : cfg_.customer_balance;
        }
        bank_.register_customer(id, prim, balance, rng_setup);
    }
    bank_.disaster_onset(0.0);

    // nodes and placement
    auto add_node = [&](EntityId id, Role role) {
        Node n;
        n.id = id;
        n.role = role;
        n.idx = nodes_.size();
        n.rng_mob = Rng(seed_ ^ id, "mob");
        n.rng_order = Rng(seed_ ^ id, "order");
        n.rng_gps = Rng(seed_ ^ id, "gps");
        MobilityParams mp{cfg_.speed_min, cfg_.speed_max, cfg_.pause_s};
        int start;
        if (role == Role::Merchant) {
            start = market_[nodes_.size() % market_.size()];
        } else {
            start = static_cast<int>(n.rng_mob.uniform_int(graph_.vertex_count()));
        }
        n.mob = init_mobility(graph_, start, mp, n.rng_mob);
        if (role == Role::Endorser) {
            n.chain = EventChain(id, cfg_.bloom_n, cfg_.bloom_fpr);
            for (const ECoin& c : bank_.credentials(id).coins) n.wallet.add(c);
        }
        if (role == Role::Customer) {
            n.next_order_at = n.rng_order.exponential(cfg_.order_mean_s);
        }
        by_id_[id] = n.idx;
        nodes_.push_back(std::move(n));
    };
    for (EntityId id : merchant_ids_) add_node(id, Role::Merchant);
    for (EntityId id : endorser_ids_) add_node(id, Role::Endorser);
    for (EntityId id : customer_ids_) add_node(id, Role::Customer);

    // attack actors hold still at the market so the scripted steps line up
    if (attack_ != nullptr) {
        std::vector<EntityId> pinned{attack_->customer, attack_->endorser};
        for (EntityId id : stolen_set_) pinned.push_back(id);
        for (EntityId id : colluding_monitors_) pinned.push_back(id);
        size_t slot = 0;
        for (EntityId id : pinned) {
            if (id == 0) continue;
            Node& n = node(id);
            int v = market_[1 + slot++ % (market_.size() - 1)];
            if (stolen_set_.count(id) || id == attack_->endorser) v = market_[1];
            n.mob.position = graph_.vertex(v);
            n.mob.current_vertex = v;
            n.mob.waypoint = v;
            n.mob.path.clear();
            n.mob.pause_remaining = 1e18;  // parked for the whole run
        }
    }
}

void Engine::setup_attack() {
    AttackScript& a = *attack_;
    const AttackScript& s = a;
    if (a.customer == 0) a.customer = customer_ids_.front();
    if (a.endorser == 0) a.endorser = endorser_ids_.front();
    if (a.merchant == 0) a.merchant = merchant_ids_.front();
    if (a.second_merchant == 0)
        a.second_merchant = merchant_ids_.size() > 1 ? merchant_ids_[1] : merchant_ids_[0];
    if ((s.kind == AttackKind::DoubleSpend || s.kind == AttackKind::ResetRecovery) &&
        merchant_ids_.size() < 2)
        throw InvalidScriptError("two merchants required for this script");
    if (s.kind == AttackKind::StolenPhoneColocation && s.stolen_phones.empty()) {
        for (size_t i = 0; i < cfg_.monitor_quorum; ++i)
            a.stolen_phones.push_back(customer_ids_[customer_ids_.size() - 1 - i]);
    }
    if (s.kind == AttackKind::ColludeMonitors && s.monitors.empty()) {
        for (size_t i = 0; i < s.colluding_parties; ++i)
            a.monitors.push_back(customer_ids_[customer_ids_.size() - 1 - i]);
    }
    stolen_set_ = {a.stolen_phones.begin(), a.stolen_phones.end()};
    colluding_monitors_ = {a.monitors.begin(), a.monitors.end()};
    for (EntityId id : {a.customer, a.endorser, a.merchant, a.second_merchant}) {
        bool known = false;
        for (EntityId m : merchant_ids_) known |= m == id;
        for (EntityId e : endorser_ids_) known |= e == id;
        for (EntityId c : customer_ids_) known |= c == id;
        if (!known) throw InvalidScriptError("script actor is not in the population");
    }
}

RunResult Engine::run() {
    cfg_.validate();
    build_world();

    line("RUN seed=%" PRIu64 " nodes=%zu mode=%s duration=%.0f", seed_, cfg_.nodes,
         endorse_mode_name(cfg_.endorse_mode), cfg_.duration_s);
    for (const Node& n : nodes_) line("NODE id=%u role=%s", n.id, role_name(n.role));

    schedule(0.0, [this] { tick(); });

    // truck: five region stops then a bank stop, repeated every period
    const size_t regions = 5;
    const double slice = cfg_.truck_period_eff() / static_cast<double>(regions + 1);
    size_t stop_idx = 0;
    for (double t0 = slice; t0 <= cfg_.duration_s; t0 += slice, ++stop_idx) {
        size_t stop = stop_idx % (regions + 1);
        schedule(t0, [this, stop, regions] {
            if (stop == regions)
                truck_bank_stop();
            else
                truck_stop(stop);
        });
    }

    if (attack_ != nullptr)
        schedule(attack_->trigger_s, [this] { attack_phase(1); });

    while (!queue_.empty()) {
        SimEvent ev = queue_.top();
        queue_.pop();
        if (ev.t > cfg_.duration_s) break;
        now_ = ev.t;
        ev.fn();
    }
    now_ = cfg_.duration_s;

    // close out metrics
    for (EntityId id : endorser_ids_) {
        Node& n = node(id);
        uint64_t full = n.chain.total_size_bytes(SizeMode::Full);
        uint64_t light = n.chain.total_size_bytes(SizeMode::Lightweight);
        metrics_.chain_sizes[id] = {full, light};
        line("CHAIN owner=%u blocks=%zu full=%" PRIu64 " light=%" PRIu64, id, n.chain.size(),
             full, light);
    }
    // cumulative bins
    size_t needed = static_cast<size_t>(cfg_.duration_s / metrics_.bin_seconds);
    if (metrics_.bins.size() < needed) metrics_.bins.resize(needed);
    for (size_t i = 1; i < metrics_.bins.size(); ++i) {
        metrics_.bins[i].orders_received += metrics_.bins[i - 1].orders_received;
        metrics_.bins[i].completions += metrics_.bins[i - 1].completions;
        metrics_.bins[i].rejected_transactions += metrics_.bins[i - 1].rejected_transactions;
        metrics_.bins[i].rejected_endorsements += metrics_.bins[i - 1].rejected_endorsements;
    }

    // post-run invariant scans
    ConservationReport cons = bank_.conservation();
    if (!cons.balanced) violations_.push_back("conservation violated");
    for (auto& [region, times] : truck_arrivals_) {
        double period_eff = cfg_.truck_period_eff();
        for (size_t i = 1; i < times.size(); ++i)
            if (std::abs(times[i] - times[i - 1] - period_eff) > cfg_.hello_interval_s)
                violations_.push_back("truck period drift at region " + std::to_string(region));
    }
    for (const std::string& v : violations_) line("VIOLATION %s", v.c_str());
    line("END t=%.6f", now_);

    if (attack_ != nullptr && !attack_verdict_recorded_) {
        // nothing terminal was observed; report as an unresolved rejection
        AttackAttempt at;
        at.kind = attack_->kind;
        at.t = attack_->trigger_s;
        at.completed = false;
        attack_attempts_.push_back(at);
    }

    RunResult result;
    result.metrics = std::move(metrics_);
    result.transcript = transcript_.str();
    result.violations = std::move(violations_);
    result.conservation = cons;
    result.attack_attempts = std::move(attack_attempts_);
    return result;
}

// ------------------------------------------------------------------ ticks

void Engine::tick() {
    double dt = cfg_.hello_interval_s;

    // mobility
    MobilityParams mp{cfg_.speed_min, cfg_.speed_max, cfg_.pause_s};
    for (Node& n : nodes_) {
        bool endorser = n.role == Role::Endorser;
        bool merchant = n.role == Role::Merchant;
        auto choose = [&](Rng& r) -> uint64_t {
            if (merchant) return static_cast<uint64_t>(market_[r.uniform_int(market_.size())]);
            bool at_market = false;
            for (int v : market_) at_market |= v == n.mob.current_vertex;
            double linger = cfg_.market_linger;
            double bias = endorser ? cfg_.endorser_market_bias : cfg_.market_bias;
            if (at_market ? r.uniform() < linger : r.uniform() < bias)
                return static_cast<uint64_t>(market_[r.uniform_int(market_.size())]);
            return r.uniform_int(graph_.vertex_count());
        };
        step_mobility(n.mob, dt, graph_, mp, n.rng_mob, choose);
        if (n.mob.speed < cfg_.speed_min - 1e-9 || n.mob.speed > cfg_.speed_max + 1e-9)
            violations_.push_back("speed out of band");
    }

    // reported GPS samples (uniform disc noise); stolen phones share draws
    double stolen_r = 0.0, stolen_a = 0.0;
    bool stolen_drawn = false;
    for (Node& n : nodes_) {
        double r, a;
        if (stolen_set_.count(n.id) > 0 || (attack_ != nullptr && n.id == attack_->endorser &&
                                            attack_->kind == AttackKind::StolenPhoneColocation)) {
            if (!stolen_drawn) {
                Rng& src = node(attack_->endorser).rng_gps;
                stolen_r = src.uniform(cfg_.gps_noise_min_m, cfg_.gps_noise_max_m);
                stolen_a = src.uniform(0.0, 6.283185307179586);
                stolen_drawn = true;
            }
            r = stolen_r;
            a = stolen_a;
        } else {
            r = n.rng_gps.uniform(cfg_.gps_noise_min_m, cfg_.gps_noise_max_m);
            a = n.rng_gps.uniform(0.0, 6.283185307179586);
        }
        Vec2 rep{n.mob.position.x + r * std::cos(a), n.mob.position.y + r * std::sin(a)};
        n.reported.push_back({now_, rep});
        while (!n.reported.empty() && n.reported.front().t < now_ - cfg_.similarity_window_s)
            n.reported.pop_front();
    }

    // beacons: one aggregate accounting line per role
    std::map<Role, size_t> beacons;
    for (Node& n : nodes_) beacons[n.role] += 1;
    for (auto [role, cnt] : beacons) {
        size_t bytes = cnt * cfg_.hello_size_b;
        metrics_.bytes_sent_by_role[role_name(role)] += bytes;
        line("MSG t=%.6f from=role:%s to=* kind=beacon bytes=%zu mbytes=0 rf=%s rt=-", now_,
             role_name(role), bytes, role_name(role));
    }

    // coin gossip spreads one hop per tick
    std::vector<std::vector<CoinId>> incoming(nodes_.size());
    for (Node& n : nodes_) {
        if (n.gossip_out.empty()) continue;
        for (Node& other : nodes_) {
            if (other.id == n.id) continue;
            if (!in_range(n.mob.position, other.mob.position, cfg_.range_m)) continue;
            incoming[other.idx].insert(incoming[other.idx].end(), n.gossip_out.begin(),
                                       n.gossip_out.end());
        }
        n.gossip_out.clear();
    }
    for (Node& n : nodes_)
        for (CoinId c : incoming[n.idx])
            if (n.witnessed.insert(c).second) n.gossip_out.push_back(c);

    // endorser chain upkeep
    for (EntityId id : endorser_ids_) hello_upkeep(node(id));

    // store-carry-forward buffers
    for (Node& n : nodes_) flush_buffers(n);

    // customer purchases
    for (EntityId id : customer_ids_) maybe_start_order(node(id));

    double next = now_ + dt;
    if (next <= cfg_.duration_s) schedule(next, [this] { tick(); });
}

void Engine::hello_upkeep(Node& endorser) {
    if (endorser.ring_busy) return;
    bool similar_excluded = false;
    std::vector<size_t> mons = monitor_candidates(endorser, nullptr, 0, &similar_excluded);
    if (mons.size() < cfg_.monitor_quorum) return;  // chain ages until a crowd is near

    Event ev;
    if (!endorser.unlogged_receipts.empty()) {
        ev.kind = EventKind::Receipt;
        for (auto [coin, value] : endorser.unlogged_receipts)
            ev.records.push_back({coin, value, kTruckId});
        endorser.unlogged_receipts.clear();
    } else {
        ev.kind = EventKind::Hello;
    }
    Gps gps{static_cast<float>(endorser.reported.back().pos.x),
            static_cast<float>(endorser.reported.back().pos.y)};
    Block proposal = endorser.chain.propose_block(ev, gps, now_);
    size_t index = endorser.chain.size();

    std::vector<MonitorSignature> sigs;
    for (size_t midx : mons) {
        Node& m = nodes_[midx];
        MonitorDecision d = monitor_countersign(
            bank_.credentials(m.id).keys.priv, m.id, proposal, index, endorser.id, 0, 0,
            history(m), history(endorser), m.mon_memory, cfg_.similarity_eps_m,
            cfg_.similarity_frac, cfg_.similarity_min_shared, now_);
        if (d.refusal.has_value()) continue;
        sigs.push_back({m.id, d.signature});
        if (sigs.size() == cfg_.monitor_quorum) break;
    }
    if (sigs.size() < cfg_.monitor_quorum) return;
    proposal.monitor_signatures = std::move(sigs);
    try {
        endorser.chain.append(proposal, cfg_.monitor_quorum, cfg_.staleness_s);
    } catch (const std::exception&) {
        return;
    }
    size_t view = monitor_view_bytes(proposal, SizeMode::Lightweight);
    size_t bytes = (cfg_.monitor_quorum + 1) * view;
    metrics_.bytes_sent_by_role[role_name(Role::Endorser)] += bytes;
    metrics_.bytes_received_by_role[role_name(Role::Customer)] += bytes;
    line("MSG t=%.6f from=%u to=* kind=hello-ring bytes=%zu mbytes=0 rf=endorser rt=customer",
         now_, endorser.id, bytes);
}

void Engine::flush_buffers(Node& n) {
    std::deque<BufferedMsg> keep;
    for (BufferedMsg& bm : n.buffer) {
        if (bm.expires < now_) {
            n.buffer_bytes -= bm.bytes;
            continue;
        }
        if (in_range_ids(n.id, bm.to)) {
            double t = now_ + transmit_latency(bm.bytes, cfg_.bandwidth_bps);
            n.buffer_bytes -= bm.bytes;
            auto deliver = std::move(bm.deliver);
            schedule(t, [deliver, t] { deliver(t); });
        } else {
            keep.push_back(std::move(bm));
        }
    }
    n.buffer = std::move(keep);
}

void Engine::maybe_start_order(Node& customer) {
    if (attack_ != nullptr && attack_->customer == customer.id) return;  // scripted separately
    if (!customer.order_pending && now_ >= customer.next_order_at) {
        customer.order_pending = true;
        customer.next_order_at =
            now_ + customer.rng_order.exponential(cfg_.order_mean_s);
        metrics_.orders_initiated += 1;
    }
    if (!customer.order_pending) return;
    // shop at the nearest merchant in radio range
    Node* best = nullptr;
    double best_d = cfg_.range_m;
    for (EntityId mid : merchant_ids_) {
        Node& m = node(mid);
        double d = dist(customer.mob.position, m.mob.position);
        if (d <= best_d + 1e-12) {
            if (best == nullptr || d < best_d || m.id < best->id) {
                best = &m;
                best_d = d;
            }
        }
    }
    if (best == nullptr) return;
    customer.order_pending = false;
    initiate_order(customer, *best, false, 0);
}

// --------------------------------------------------------------- tx path

void Engine::initiate_order(Node& customer, Node& merchant, bool forced, EntityId forced_as) {
    uint64_t oid = next_order_id_++;
    EntityId claimed = forced_as != 0 ? forced_as : customer.id;
    const Credentials& creds = bank_.credentials(customer.id);
    const EndorsementTree& tree = bank_.tree_for(claimed);
    if (tree.all_endorsers().empty()) return;  // cannot even form the order

    size_t tix = customer.temp_idx++ % creds.temp_ids.size();
    double t0 = now_;
    // for an impersonation attempt the attacker signs with its own keys and
    // presents its own photo while claiming the victim's identity and tree
    TransactionOrder order =
        customer_order(oid, creds, claimed, merchant.id, kBankId, 7, 1, cfg_.tx_amount, tree,
                       creds.temp_ids[tix], now_);
    if (forced) attack_orders_.insert(oid);

    line("TX id=%" PRIu64 " t=%.6f ev=initiated customer=%u merchant=%u amount=%" PRId64, oid,
         now_, customer.id, merchant.id, order.amount);
    double t_send = now_ + kOrderCompute;
    double t_arrive = t_send + hop_latency();
    EntityId mid = merchant.id;
    schedule(t_arrive, [this, order, mid, t0, t_arrive] {
        Node& m = node(mid);
        msg_line(t_arrive, std::to_string(order.customer_id), std::to_string(mid), "order",
                 cfg_.message_size_b, 0, "customer", "merchant");
        count_bytes(Role::Customer, Role::Merchant, cfg_.message_size_b);
        merchant_receive_order(m, order, t0);
    });
}

void Engine::merchant_receive_order(Node& merchant, const TransactionOrder& order,
                                    double t_init) {
    metrics_.orders_received += 1;
    bin_at(now_, &BinCounters::orders_received);
    line("TX id=%" PRIu64 " t=%.6f ev=received", order.order_id, now_);

    PendingTx tx;
    tx.order = order;
    tx.t_initiated = t_init;
    tx.t_received = now_;
    auto [it, ok] = merchant.pending.emplace(order.order_id, std::move(tx));
    if (!ok) return;

    uint64_t oid = order.order_id;
    EntityId mid = merchant.id;
    schedule(now_ + kMerchantOrderCompute, [this, mid, oid] {
        Node& m = node(mid);
        auto pit = m.pending.find(oid);
        if (pit == m.pending.end() || pit->second.closed) return;
        PendingTx& tx = pit->second;
        const PublicKey* cust_pub = bank_.lookup_key(tx.order.customer_id);
        std::optional<RejectReason> verdict =
            cust_pub == nullptr
                ? std::optional<RejectReason>(RejectReason::BadCredential)
                : check_order(tx.order, bank_.pub(), bank_.blind_params(), *cust_pub, now_);
        if (verdict.has_value()) {
            close_tx(m, tx, false, now_, verdict);
            return;
        }
        int level = cfg_.endorse_mode == EndorseMode::LevelSearch ? 1 : 0;
        send_billing(m, tx, level);
        if (cfg_.endorse_mode == EndorseMode::LevelSearch) {
            schedule(now_ + cfg_.level_timeout_s, [this, mid, oid] {
                Node& m2 = node(mid);
                auto it2 = m2.pending.find(oid);
                if (it2 == m2.pending.end() || it2->second.closed) return;
                if (it2->second.covered < it2->second.order.amount)
                    send_billing(m2, it2->second, 2);
            });
        }
        schedule(now_ + cfg_.tx_timeout_s, [this, mid, oid] {
            Node& m2 = node(mid);
            auto it2 = m2.pending.find(oid);
            if (it2 == m2.pending.end() || it2->second.closed) return;
            PendingTx& tx2 = it2->second;
            if (tx2.any_evaluated) {
                std::optional<RejectReason> r = tx2.last_reason;
                if (!r.has_value()) r = RejectReason::InsufficientCover;
                close_tx(m2, tx2, false, now_, r);
            } else {
                tx2.closed = true;
                metrics_.expired_transactions += 1;
                line("TX id=%" PRIu64 " t=%.6f ev=expired", tx2.order.order_id, now_);
            }
        });
    });
}

void Engine::send_billing(Node& merchant, PendingTx& tx, int level) {
    // level 0: everyone at once; 1: primaries; 2: secondaries
    std::vector<EndorserEntry> targets;
    std::set<EntityId> secondaries_set;
    for (const EndorserEntry& e : tx.order.tree.secondary_entries())
        secondaries_set.insert(e.endorser_id);
    if (cfg_.endorse_mode == EndorseMode::Single) {
        targets = tx.order.tree.primaries;
    } else if (level == 0) {
        targets = tx.order.tree.primaries;
        for (const EndorserEntry& e : tx.order.tree.secondary_entries()) targets.push_back(e);
    } else if (level == 1) {
        targets = tx.order.tree.primaries;
    } else {
        for (const EndorserEntry& e : tx.order.tree.secondary_entries()) targets.push_back(e);
        tx.level = 2;
    }

    for (const EndorserEntry& entry : targets) {
        if (tx.billed.count(entry.endorser_id) > 0) continue;
        tx.billed.insert(entry.endorser_id);
        Billing billing;
        billing.order_id = tx.order.order_id;
        billing.order_digest = tx.order.digest();
        billing.merchant_id = merchant.id;
        billing.customer_id = tx.order.customer_id;
        billing.endorser_id = entry.endorser_id;
        billing.amount = tx.order.amount;
        billing.merchant_sig =
            sign(bank_.credentials(merchant.id).keys.priv, billing.signed_payload(), now_);

        bool secondary = secondaries_set.count(entry.endorser_id) > 0;
        size_t mbytes = secondary ? cfg_.message_size_b : 0;
        EntityId target = entry.endorser_id;
        EntityId mid = merchant.id;
        auto deliver = [this, billing, target, mbytes, secondary](double t_arrive) {
            (void)secondary;
            msg_line(t_arrive, std::to_string(billing.merchant_id), std::to_string(target),
                     "billing", cfg_.message_size_b, mbytes, "merchant", "endorser");
            count_bytes(Role::Merchant, Role::Endorser, cfg_.message_size_b);
            metrics_.merchant_validation_bytes += mbytes;
            endorser_take_billing(node(target), billing);
        };
        if (in_range_ids(mid, target)) {
            double t_arrive = now_ + hop_latency();
            schedule(t_arrive, [deliver, t_arrive] { deliver(t_arrive); });
        } else {
            // store-carry-forward with a short horizon; oldest dropped on overflow
            Node& m = merchant;
            size_t cap = static_cast<size_t>(cfg_.buffer_kb * 1024.0);
            while (m.buffer_bytes + cfg_.message_size_b > cap && !m.buffer.empty()) {
                m.buffer_bytes -= m.buffer.front().bytes;
                m.buffer.pop_front();
                line("MSG t=%.6f from=%u to=- kind=buffer-drop bytes=0 mbytes=0 rf=merchant rt=-",
                     now_, m.id);
            }
            m.buffer.push_back(
                {target, cfg_.message_size_b, now_ + cfg_.billing_ttl_s, deliver});
            m.buffer_bytes += cfg_.message_size_b;
        }
    }
}

void Engine::endorser_take_billing(Node& endorser, const Billing& billing) {
    if (endorser.ring_busy) {
        endorser.billing_queue.push_back({now_, billing});
        return;
    }
    endorser_process_billing(endorser, billing);
}

void Engine::endorser_process_billing(Node& endorser, const Billing& billing) {
    endorser.ring_busy = true;
    EntityId eid = endorser.id;
    schedule(now_ + kEndorseCompute, [this, eid, billing] {
        Node& e = node(eid);
        bool attack_here = attack_ != nullptr && is_attack_order(billing.order_id) &&
                           attack_->endorser == eid;
        EndorsePlan plan = plan_endorsement(e.wallet, e.chain, cfg_.endorse_amount,
                                            billing.amount, now_, cfg_.staleness_s, bank_.pub());
        if (attack_here) attack_phase(2);  // may rewrite the plan below via scripted state

        if (attack_here && attack_->kind == AttackKind::DoubleSpend) {
            plan.refusal.reset();
            plan.endorse_value = std::min(cfg_.endorse_amount, billing.amount);
            plan.coins = {attack_spent_coin_};
        }
        if (attack_here && attack_->kind == AttackKind::ForgedCoin) {
            plan.refusal.reset();
            plan.endorse_value = std::min(cfg_.endorse_amount, billing.amount);
            ECoin forged;
            forged.coin_id = 0xf043ed00 + seed_;
            forged.endorser_id = eid;
            forged.value = plan.endorse_value;
            forged.expiry = kNeverExpires;
            forged.issued_at = 0.0;
            for (auto& b : forged.bank_signature.bytes) b = 0x5a;
            forged.bank_signature.signer_id = kBankId;
            plan.coins = {forged};
        }
        if (attack_here && attack_->kind == AttackKind::ColludeCustomerEndorser) {
            // endorse with no coins at all; the merchant's e-coin check decides
            plan.refusal.reset();
            plan.endorse_value = std::min(cfg_.endorse_amount, billing.amount);
            plan.coins.clear();
            EndorsementMessage em;
            em.endorser_id = eid;
            em.order_id = billing.order_id;
            em.order_digest = billing.order_digest;
            em.endorse_value = plan.endorse_value;
            em.segment.owner = eid;
            em.segment.from_genesis = false;
            em.segment.start_index = e.chain.size() > 0 ? e.chain.size() - 1 : 0;
            if (!e.chain.blocks().empty()) em.segment.blocks = {e.chain.blocks().back()};
            em.segment.filter_pre = e.chain.filter().to_bytes();
            em.endorser_sig =
                sign(bank_.credentials(eid).keys.priv, em.signed_payload(), now_);
            e.ring_busy = false;
            double t_arrive = now_ + hop_latency();
            schedule(t_arrive, [this, em, billing, t_arrive] {
                size_t payload = em.segment.payload_bytes(cfg_.chain_mode());
                msg_line(t_arrive, std::to_string(em.endorser_id),
                         std::to_string(billing.merchant_id), "endorsement",
                         cfg_.message_size_b + payload, payload, "endorser", "merchant");
                count_bytes(Role::Endorser, Role::Merchant, cfg_.message_size_b + payload);
                metrics_.merchant_validation_bytes += payload;
                merchant_receive_endorsement(node(billing.merchant_id), em);
            });
            return;
        }

        if (plan.refusal.has_value()) {
            e.ring_busy = false;
            endorsement_verdict(now_, billing.order_id, eid, "refused", plan.refusal);
            if (is_attack_order(billing.order_id) && attack_->endorser == eid)
                record_attack_verdict(plan.refusal, false);
            drain_billing_queue(e);
            return;
        }

        Node* merchant = &node(billing.merchant_id);
        bool similar_excluded = false;
        std::vector<size_t> mons =
            monitor_candidates(e, merchant, billing.customer_id, &similar_excluded);
        if (attack_here && (attack_->kind == AttackKind::StolenPhoneColocation ||
                            attack_->kind == AttackKind::ColludeMonitors)) {
            // a dishonest endorser picks its accomplices first
            std::vector<size_t> forced;
            const auto& set = attack_->kind == AttackKind::StolenPhoneColocation
                                  ? stolen_set_
                                  : colluding_monitors_;
            for (EntityId id : set) forced.push_back(by_id_.at(id));
            for (size_t idx : mons)
                if (forced.size() < cfg_.monitor_quorum) forced.push_back(idx);
            mons = std::move(forced);
        }
        if (mons.size() < cfg_.monitor_quorum) {
            e.ring_busy = false;
            RejectReason why = similar_excluded ? RejectReason::SimilarLocation
                                                : RejectReason::InsufficientQuorum;
            endorsement_verdict(now_, billing.order_id, eid, "refused", why);
            if (is_attack_order(billing.order_id) && attack_->endorser == eid)
                record_attack_verdict(why, false);
            drain_billing_queue(e);
            return;
        }
        mons.resize(cfg_.monitor_quorum);
        start_ring(e, billing, std::move(plan), std::move(mons));
    });
}

void Engine::drain_billing_queue(Node& endorser) {
    while (!endorser.billing_queue.empty()) {
        auto [queued_at, next] = endorser.billing_queue.front();
        endorser.billing_queue.pop_front();
        if (now_ - queued_at > cfg_.tx_timeout_s) continue;  // transaction long closed
        endorser_take_billing(endorser, next);
        return;
    }
}

std::vector<size_t> Engine::monitor_candidates(const Node& endorser, const Node* merchant,
                                               EntityId tx_customer, bool* similar_excluded) {
    *similar_excluded = false;
    std::vector<size_t> out;
    std::vector<std::span<const GpsSample>> chosen_hist;
    for (const Node& c : nodes_) {
        if (c.role != Role::Customer) continue;
        if (c.id == tx_customer || c.id == endorser.id) continue;
        if (merchant != nullptr && c.id == merchant->id) continue;
        if (!in_range(c.mob.position, endorser.mob.position, cfg_.range_m)) continue;
        if (merchant != nullptr &&
            !in_range(c.mob.position, merchant->mob.position, cfg_.range_m))
            continue;
        if (location_similar(history(c), history(endorser), cfg_.similarity_eps_m,
                             cfg_.similarity_frac, cfg_.similarity_min_shared)) {
            *similar_excluded = true;
            continue;
        }
        bool similar_to_chosen = false;
        for (auto& h : chosen_hist)
            similar_to_chosen |= location_similar(history(c), h, cfg_.similarity_eps_m,
                                                  cfg_.similarity_frac,
                                                  cfg_.similarity_min_shared);
        if (similar_to_chosen) {
            *similar_excluded = true;
            continue;
        }
        out.push_back(c.idx);
        chosen_hist.push_back(history(c));
        if (out.size() >= cfg_.monitor_quorum + 2) break;  // a couple of spares
    }
    return out;
}

void Engine::start_ring(Node& endorser, const Billing& billing, EndorsePlan plan,
                        std::vector<size_t> monitors) {
    Event ev;
    ev.kind = EventKind::Spend;
    for (const ECoin& c : plan.coins)
        ev.records.push_back({c.coin_id, c.value, billing.merchant_id});
    Gps gps{static_cast<float>(endorser.reported.back().pos.x),
            static_cast<float>(endorser.reported.back().pos.y)};
    Block proposal = endorser.chain.propose_block(ev, gps, now_);

    bool attack_here = attack_ != nullptr && is_attack_order(billing.order_id) &&
                       attack_->endorser == endorser.id;
    if (attack_here && attack_->kind == AttackKind::ColludeMonitors) {
        // tamper after building: the recorded amount no longer matches the
        // merkle root the monitors are asked to sign
        proposal.event.records.front().amount += 100;
    }

    auto ctx = std::make_shared<RingCtx>();
    ctx->billing = billing;
    ctx->plan = std::move(plan);
    ctx->proposal = std::move(proposal);
    ctx->index = endorser.chain.size();
    ctx->monitors = std::move(monitors);
    ring_hop(endorser.id, std::move(ctx));
}

void Engine::ring_hop(EntityId endorser_id, std::shared_ptr<RingCtx> ctx) {
    if (ctx->at == ctx->monitors.size()) {
        // full circle: signatures return to the endorser
        double t_back = now_ + hop_latency();
        schedule(t_back, [this, endorser_id, ctx, t_back] {
            EntityId from = ctx->monitors.empty() ? endorser_id : nodes_[ctx->monitors.back()].id;
            msg_line(t_back, std::to_string(from), std::to_string(endorser_id), "block-sigs",
                     cfg_.message_size_b, 0, "customer", "endorser");
            count_bytes(Role::Customer, Role::Endorser, cfg_.message_size_b);
            ctx->proposal.monitor_signatures = ctx->sigs;
            finish_ring(node(endorser_id), ctx->billing, ctx->plan, ctx->proposal, false,
                        std::nullopt);
        });
        return;
    }
    EntityId mon_id = nodes_[ctx->monitors[ctx->at]].id;
    EntityId prev = ctx->at == 0 ? endorser_id : nodes_[ctx->monitors[ctx->at - 1]].id;
    double t_arrive = now_ + hop_latency();
    schedule(t_arrive, [this, endorser_id, ctx, mon_id, prev, t_arrive] {
        msg_line(t_arrive, std::to_string(prev), std::to_string(mon_id), "block-proposal",
                 cfg_.message_size_b, 0, ctx->at == 0 ? "endorser" : "customer", "customer");
        count_bytes(ctx->at == 0 ? Role::Endorser : Role::Customer, Role::Customer,
                    cfg_.message_size_b);
        schedule(now_ + kMonitorCompute, [this, endorser_id, ctx, mon_id] {
            Node& endorser = node(endorser_id);
            Node& mon = node(mon_id);
            bool scripted_signer =
                attack_ != nullptr && is_attack_order(ctx->billing.order_id) &&
                (colluding_monitors_.count(mon_id) > 0 || stolen_set_.count(mon_id) > 0);
            MonitorDecision d;
            if (scripted_signer) {
                d.signature = sign(bank_.credentials(mon_id).keys.priv,
                                   ctx->proposal.signing_tuple(), now_);
            } else {
                d = monitor_countersign(bank_.credentials(mon_id).keys.priv, mon_id,
                                        ctx->proposal, ctx->index, endorser_id,
                                        ctx->billing.customer_id, ctx->billing.merchant_id,
                                        history(mon), history(endorser), mon.mon_memory,
                                        cfg_.similarity_eps_m, cfg_.similarity_frac,
                                        cfg_.similarity_min_shared, now_);
            }
            if (d.refusal.has_value()) {
                finish_ring(endorser, ctx->billing, ctx->plan, ctx->proposal, true, d.refusal);
                return;
            }
            ctx->sigs.push_back({mon_id, d.signature});
            ctx->at += 1;
            ring_hop(endorser_id, ctx);
        });
    });
}

void Engine::finish_ring(Node& endorser, const Billing& billing, EndorsePlan plan, Block block,
                         bool aborted, std::optional<RejectReason> reason) {
    endorser.ring_busy = false;
    uint64_t oid = billing.order_id;
    if (aborted) {
        // monitors have seen these coins in a proposal; reusing them would
        // read as a double spend, so they sit out until the bank replaces them
        std::vector<CoinId> burned;
        for (const ECoin& c : plan.coins) burned.push_back(c.coin_id);
        endorser.wallet.remove(burned);
        // collapse per-monitor refusals into the endorsement-level verdict
        RejectReason why = RejectReason::InsufficientQuorum;
        if (reason.has_value() &&
            (*reason == RejectReason::DoubleSpend || *reason == RejectReason::StaleChain ||
             *reason == RejectReason::SimilarLocation))
            why = *reason;
        endorsement_verdict(now_, oid, endorser.id, "refused", why);
        if (is_attack_order(oid) && attack_->endorser == endorser.id)
            record_attack_verdict(why, false);
    } else {
        Bytes filter_pre = endorser.chain.filter().to_bytes();
        bool appended = true;
        try {
            endorser.chain.append(block, cfg_.monitor_quorum, cfg_.staleness_s);
        } catch (const std::exception&) {
            appended = false;
        }
        if (!appended) {
            endorsement_verdict(now_, oid, endorser.id, "refused", RejectReason::StaleChain);
            if (is_attack_order(oid) && attack_->endorser == endorser.id)
                record_attack_verdict(RejectReason::StaleChain, false);
        } else {
            std::vector<CoinId> spent_ids;
            for (const ECoin& c : plan.coins) spent_ids.push_back(c.coin_id);
            endorser.wallet.remove(spent_ids);

            EndorsementMessage em;
            em.endorser_id = endorser.id;
            em.order_id = oid;
            em.order_digest = billing.order_digest;
            em.endorse_value = plan.endorse_value;
            em.coins = plan.coins;
            em.segment.owner = endorser.id;
            if (cfg_.chain_mode() == SizeMode::Full) {
                em.segment.from_genesis = true;
                em.segment.start_index = 0;
                em.segment.blocks = endorser.chain.blocks();
            } else {
                double oldest_issue = kNeverExpires;
                for (const ECoin& c : plan.coins)
                    oldest_issue = std::min(oldest_issue, c.issued_at);
                const auto& blocks = endorser.chain.blocks();
                size_t first = 0;
                while (first < blocks.size() && blocks[first].timestamp < oldest_issue)
                    ++first;
                size_t start = first > 0 ? first - 1 : 0;
                if (start + 1 >= blocks.size() && blocks.size() >= 2)
                    start = blocks.size() - 2;  // always ship the anchor base
                em.segment.start_index = start;
                em.segment.blocks.assign(blocks.begin() + static_cast<long>(start),
                                         blocks.end());
                em.segment.filter_pre = std::move(filter_pre);
            }
            em.endorser_sig =
                sign(bank_.credentials(endorser.id).keys.priv, em.signed_payload(), now_);

            double t_arrive = now_ + hop_latency();
            EntityId mid = billing.merchant_id;
            schedule(t_arrive, [this, em, mid, t_arrive] {
                size_t payload = em.segment.payload_bytes(cfg_.chain_mode());
                msg_line(t_arrive, std::to_string(em.endorser_id), std::to_string(mid),
                         "endorsement", cfg_.message_size_b + payload, payload, "endorser",
                         "merchant");
                count_bytes(Role::Endorser, Role::Merchant, cfg_.message_size_b + payload);
                metrics_.merchant_validation_bytes += payload;
                merchant_receive_endorsement(node(mid), em);
            });
        }
    }
    drain_billing_queue(endorser);
}

void Engine::merchant_receive_endorsement(Node& merchant, EndorsementMessage em) {
    EntityId mid = merchant.id;
    schedule(now_ + kMerchantEndorseCompute, [this, mid, em] {
        Node& m = node(mid);
        auto it = m.pending.find(em.order_id);
        if (it == m.pending.end()) return;
        PendingTx& tx = it->second;
        if (tx.closed) {
            metrics_.surplus_endorsements += 1;
            endorsement_verdict(now_, em.order_id, em.endorser_id, "surplus", std::nullopt);
            if (tx.succeeded && tx.bundle_slot != SIZE_MAX &&
                m.shipped_orders.count(em.order_id) == 0) {
                AcceptedEndorsement ae;
                ae.message = em;
                ae.covering = false;
                m.outbox[tx.bundle_slot].endorsements.push_back(std::move(ae));
            }
            return;
        }

        EndorsementCheckContext ctx;
        const PublicKey& bank_pub = bank_.pub();
        ctx.bank_pub = &bank_pub;
        ctx.keys = bank_.key_lookup();
        ctx.quorum = cfg_.monitor_quorum;
        ctx.staleness_window = cfg_.staleness_s;
        ctx.bloom_n = cfg_.bloom_n;
        ctx.bloom_fpr = cfg_.bloom_fpr;
        ctx.coins_witnessed_spent = &m.witnessed;

        const PublicKey* epub = bank_.lookup_key(em.endorser_id);
        std::optional<RejectReason> verdict =
            epub == nullptr ? std::optional<RejectReason>(RejectReason::BadCredential)
                            : check_endorsement(em, *epub, ctx, m.chain_cache, now_);
        if (!verdict.has_value() && !em.segment.blocks.empty()) {
            // audit the countersigning monitors' location histories against
            // the endorser's, from the beacons this merchant has heard
            const Node& endorser_node = node(em.endorser_id);
            for (const MonitorSignature& ms : em.segment.blocks.back().monitor_signatures) {
                auto nit = by_id_.find(ms.monitor_id);
                if (nit == by_id_.end()) continue;
                if (location_similar(history(nodes_[nit->second]), history(endorser_node),
                                     cfg_.similarity_eps_m, cfg_.similarity_frac,
                                     cfg_.similarity_min_shared)) {
                    verdict = RejectReason::SimilarLocation;
                    break;
                }
            }
        }

        tx.any_evaluated = true;
        if (verdict.has_value()) {
            tx.last_reason = verdict;
            endorsement_verdict(now_, em.order_id, em.endorser_id, "rejected", verdict);
            if (is_attack_order(em.order_id) && attack_->endorser == em.endorser_id)
                record_attack_verdict(verdict, false);
            return;
        }

        metrics_.accepted_endorsements += 1;
        endorsement_verdict(now_, em.order_id, em.endorser_id, "accepted", std::nullopt);
        for (const ECoin& c : em.coins) {
            m.witnessed.insert(c.coin_id);
            m.gossip_out.push_back(c.coin_id);
            auto [cit, fresh] = coin_accepted_by_.try_emplace(c.coin_id, m.id);
            if (!fresh && cit->second != m.id)
                violations_.push_back("coin accepted by two merchants: " +
                                      std::to_string(c.coin_id));
        }
        AcceptedEndorsement ae;
        ae.message = em;
        ae.covering = true;
        tx.accepted.push_back(std::move(ae));
        tx.covered += em.endorse_value;
        if (tx.covered >= tx.order.amount) close_tx(m, tx, true, now_, std::nullopt);
    });
}

void Engine::close_tx(Node& merchant, PendingTx& tx, bool accepted, double t_done,
                      std::optional<RejectReason> reason) {
    if (tx.closed) return;
    tx.closed = true;
    if (!accepted) {
        metrics_.rejected_transactions += 1;
        bin_at(t_done, &BinCounters::rejected_transactions);
        const char* rn = reason.has_value() ? reject_reason_name(*reason) : "unknown";
        metrics_.transaction_reject_reasons[rn] += 1;
        line("TX id=%" PRIu64 " t=%.6f ev=rejected reason=%s", tx.order.order_id, t_done, rn);
        if (is_attack_order(tx.order.order_id)) record_attack_verdict(reason, false);
        return;
    }
    tx.succeeded = true;
    metrics_.completions += 1;
    bin_at(t_done, &BinCounters::completions);
    double completion = t_done - tx.t_initiated;
    metrics_.completion_times.push_back(completion);
    line("TX id=%" PRIu64 " t=%.6f ev=accepted dt=%.6f t0=%.6f", tx.order.order_id, t_done,
         completion, tx.t_initiated);
    if (is_attack_order(tx.order.order_id)) record_attack_verdict(std::nullopt, true);

    // the customer signs a delivery receipt on the spot
    DeliveryReceipt receipt;
    receipt.order_id = tx.order.order_id;
    receipt.order_digest = tx.order.digest();
    receipt.customer_id = tx.order.customer_id;
    auto signer = tx.order.customer_id;
    if (attack_ != nullptr && is_attack_order(tx.order.order_id) &&
        attack_->kind == AttackKind::Impersonation)
        signer = attack_->customer;
    receipt.customer_sig =
        sign(bank_.credentials(signer).keys.priv, receipt.signed_payload(), t_done);
    msg_line(t_done, std::to_string(tx.order.customer_id), std::to_string(merchant.id),
             "delivery-receipt", cfg_.message_size_b, 0, "customer", "merchant");
    count_bytes(Role::Customer, Role::Merchant, cfg_.message_size_b);

    SettlementBundle bundle;
    bundle.order = tx.order;
    bundle.endorsements = tx.accepted;
    bundle.receipt = receipt;
    bundle.accepted_at = t_done;
    tx.bundle_slot = merchant.outbox.size();
    merchant.outbox.push_back(std::move(bundle));

    if (attack_ != nullptr && is_attack_order(tx.order.order_id) &&
        (attack_->kind == AttackKind::DoubleSpend ||
         attack_->kind == AttackKind::ResetRecovery) &&
        !attack_phase3_started_) {
        attack_phase3_started_ = true;
        schedule(now_ + 2.0 * cfg_.hello_interval_s + 1.0, [this] { attack_phase(3); });
    }
}

// --------------------------------------------------------------- attacks

void Engine::attack_phase(int phase) {
    const AttackScript& a = *attack_;
    if (phase == 1) {
        // force the first (or only) scripted order
        Node& customer = node(a.customer);
        Node& merchant = node(a.merchant);
        switch (a.kind) {
            case AttackKind::Impersonation: {
                // attacker claims another customer's identity
                EntityId victim = 0;
                for (EntityId c : customer_ids_)
                    if (c != a.customer) {
                        victim = c;
                        break;
                    }
                initiate_order(customer, merchant, true, victim);
                break;
            }
            case AttackKind::DoubleSpend:
            case AttackKind::ResetRecovery: {
                // phase 1 is an honest transaction; the manipulation follows
                Node& e = node(a.endorser);
                attack_saved_chain_ = e.chain;
                attack_saved_wallet_ = e.wallet;
                initiate_order(customer, merchant, true, 0);
                break;
            }
            default:
                initiate_order(customer, merchant, true, 0);
                break;
        }
        return;
    }
    if (phase == 2) {
        // called from the endorser path on attack orders; state capture for
        // the double-spend script happens here (the coin about to be spent)
        Node& e = node(a.endorser);
        if ((a.kind == AttackKind::DoubleSpend) && attack_spent_coin_.coin_id == 0) {
            EndorsePlan probe = plan_endorsement(e.wallet, e.chain, cfg_.endorse_amount,
                                                 cfg_.tx_amount, now_, cfg_.staleness_s,
                                                 bank_.pub());
            if (!probe.refusal.has_value() && !probe.coins.empty())
                attack_spent_coin_ = probe.coins.front();
        }
        return;
    }
    if (phase == 3) {
        // state rollback and the second, dishonest order
        Node& e = node(a.endorser);
        Node& customer = node(a.customer);
        Node& m2 = node(a.second_merchant);
        if (a.kind == AttackKind::DoubleSpend) {
            e.chain = attack_saved_chain_;
            e.wallet = attack_saved_wallet_;
        } else if (a.kind == AttackKind::ResetRecovery) {
            e.chain = attack_saved_chain_;
            e.wallet = attack_saved_wallet_;
            if (attack_spent_coin_.coin_id != 0) {
                std::vector<CoinId> drop{attack_spent_coin_.coin_id};
                e.wallet.remove(drop);
            }
        }
        e.ring_busy = false;
        e.billing_queue.clear();
        initiate_order(customer, m2, true, 0);
        return;
    }
}

void Engine::record_attack_verdict(std::optional<RejectReason> reason, bool completed) {
    if (attack_ == nullptr) return;
    // phase-1 transactions of two-phase scripts complete legitimately and do
    // not settle the verdict
    if ((attack_->kind == AttackKind::DoubleSpend ||
         attack_->kind == AttackKind::ResetRecovery) &&
        completed && !attack_phase3_started_) {
        return;
    }
    if (attack_verdict_recorded_) return;
    attack_verdict_recorded_ = true;
    AttackAttempt at;
    at.kind = attack_->kind;
    at.t = now_;
    at.completed = completed;
    at.reason = reason;
    attack_attempts_.push_back(at);
    line("ATTACK t=%.6f kind=%s outcome=%s reason=%s", now_, attack_kind_name(attack_->kind),
         completed ? "completed" : "rejected",
         reason.has_value() ? reject_reason_name(*reason) : "-");
}

// ----------------------------------------------------------------- truck

void Engine::truck_stop(size_t region_idx) {
    // regions: market centre plus the four quadrant anchors
    static const double anchors[5][2] = {
        {0.5, 0.5}, {0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
    Vec2 centre{anchors[region_idx][0] * cfg_.area_m, anchors[region_idx][1] * cfg_.area_m};
    truck_arrivals_[region_idx].push_back(now_);
    line("TRUCK t=%.6f ev=region region=%zu", now_, region_idx);

    auto region_of = [&](const Vec2& p) {
        size_t best = 0;
        double bd = 1e30;
        for (size_t i = 0; i < 5; ++i) {
            Vec2 c{anchors[i][0] * cfg_.area_m, anchors[i][1] * cfg_.area_m};
            double d = dist(p, c);
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return best;
    };

    // coin deliveries to endorsers currently in this region
    for (auto& [eid, coins] : truck_coin_cargo_) {
        if (coins.empty()) continue;
        Node& e = node(eid);
        if (region_of(e.mob.position) != region_idx) continue;
        size_t bytes = cfg_.message_size_b;
        msg_line(now_, "truck", std::to_string(eid), "coin-delivery", bytes, 0, "truck",
                 "endorser");
        count_bytes(Role::Truck, Role::Endorser, bytes);
        for (const ECoin& c : coins) {
            e.wallet.add(c);
            e.unlogged_receipts.push_back({c.coin_id, c.value});
        }
        coins.clear();
    }

    // settlement bundle pickup from merchants in this region
    for (EntityId mid : merchant_ids_) {
        Node& m = node(mid);
        if (region_of(m.mob.position) != region_idx) continue;
        for (SettlementBundle& b : m.outbox) {
            msg_line(now_, std::to_string(mid), "truck", "settlement-bundle",
                     cfg_.message_size_b, 0, "merchant", "truck");
            count_bytes(Role::Merchant, Role::Truck, cfg_.message_size_b);
            m.shipped_orders.insert(b.order.order_id);
            truck_bundles_.push_back(std::move(b));
        }
        m.outbox.clear();
    }
}

void Engine::truck_bank_stop() {
    line("TRUCK t=%.6f ev=bank", now_);
    for (SettlementBundle& b : truck_bundles_) {
        SettlementResult res = bank_.settle(b, now_);
        line("SETTLE t=%.6f order=%" PRIu64 " collected=%" PRId64 " customer_paid=%d", now_,
             res.order_id, res.collected, res.customer_paid ? 1 : 0);
        for (const Posting& p : res.postings)
            line("POST t=%.6f account=%u delta=%" PRId64 " cat=%s", now_, p.account, p.delta,
                 posting_category_name(p.category));
        for (const ECoin& c : res.reissued_coins) truck_coin_cargo_[c.endorser_id].push_back(c);
    }
    truck_bundles_.clear();
    for (EntityId eid : endorser_ids_) {
        std::vector<ECoin> fresh = bank_.replenish_coins(eid, now_);
        for (const ECoin& c : fresh) truck_coin_cargo_[eid].push_back(c);
    }
    for (const Posting& p : bank_.release_due_escrows(now_))
        line("POST t=%.6f account=%u delta=%" PRId64 " cat=%s", now_, p.account, p.delta,
             posting_category_name(p.category));
}

void Engine::endorsement_verdict(double t, uint64_t oid, EntityId endorser,
                                 const char* verdict, std::optional<RejectReason> reason) {
    const char* rn = reason.has_value() ? reject_reason_name(*reason) : "-";
    line("ENDORSE id=%" PRIu64 " t=%.6f endorser=%u ev=%s reason=%s", oid, t, endorser,
         verdict, rn);
    std::string v = verdict;
    if (v == "refused" || v == "rejected") {
        metrics_.rejected_endorsements += 1;
        bin_at(t, &BinCounters::rejected_endorsements);
        metrics_.endorsement_reject_reasons[rn] += 1;
    }
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& cfg, uint64_t seed, bool with_transcript,
                       const AttackScript* attack) {
    AttackScript local;
    if (attack != nullptr) local = *attack;  // the engine resolves actor defaults in place
    Engine engine(cfg, seed, with_transcript, attack != nullptr ? &local : nullptr);
    return engine.run();
}

}  // namespace mpay
