#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "manetpay/ledger.hpp"
#include "manetpay/mobility.hpp"

namespace mpay {

enum class Role : uint8_t { Customer, Merchant, Endorser, Bank, Truck };
const char* role_name(Role r);

// Every reject or refusal carries one of these; the validity-ratio metric
// counts them.
enum class RejectReason : uint8_t {
    BadCredential,
    StaleChain,
    DoubleSpend,
    InsufficientQuorum,
    InsufficientCover,
    SimilarLocation,
};
const char* reject_reason_name(RejectReason r);

class LateClaimError : public std::runtime_error {
public:
    LateClaimError() : std::runtime_error("dispute filed after the deadline") {}
};
class InsufficientBalanceError : public std::runtime_error {
public:
    InsufficientBalanceError() : std::runtime_error("account balance too low") {}
};
class DuplicateRegistrationError : public std::runtime_error {
public:
    DuplicateRegistrationError() : std::runtime_error("entity already registered") {}
};
class NoEndorsersError : public std::runtime_error {
public:
    NoEndorsersError() : std::runtime_error("customer has no endorsers") {}
};
class AccountLockedError : public std::runtime_error {
public:
    AccountLockedError() : std::runtime_error("endorsement account locked in MANET mode") {}
};

// Blind-signed one-shot customer identifier.
struct TempId {
    uint64_t nonce = 0;
    BlindSignature bank_sig;
};

struct EndorserEntry {
    EntityId endorser_id = 0;
    Cents limit = 0;  // per-transaction pledge
    bool operator==(const EndorserEntry&) const = default;
};

// Bank-signed endorser lists: the customer's primaries plus each primary's
// own endorsers as secondaries.
struct EndorsementTree {
    EntityId customer_id = 0;
    std::vector<EndorserEntry> primaries;
    std::vector<std::pair<EntityId, std::vector<EndorserEntry>>> secondaries;
    Signature bank_signature;

    Bytes signed_payload() const;
    std::vector<EndorserEntry> secondary_entries() const;  // deduped, primary order
    std::vector<EntityId> all_endorsers() const;           // primaries then secondaries
    bool lists_endorser(EntityId id) const;
};

struct TransactionOrder {
    uint64_t order_id = 0;
    TempId temp_customer_id;
    EntityId customer_id = 0;
    EntityId merchant_id = 0;
    EntityId bank_id = 0;
    uint32_t item_number = 0;
    uint32_t quantity = 1;
    Cents amount = 0;
    SignedPhoto photo;
    Bytes photo_blob;  // presented in person alongside the order
    EndorsementTree tree;
    Signature customer_sig;

    Bytes signed_payload() const;
    Digest digest() const;
};

struct Billing {
    uint64_t order_id = 0;
    Digest order_digest{};
    EntityId merchant_id = 0;
    EntityId customer_id = 0;
    EntityId endorser_id = 0;  // target
    Cents amount = 0;
    Signature merchant_sig;

    Bytes signed_payload() const;
};

// Suffix (or whole chain) shipped with an endorsement so the merchant can
// validate the event chain and the spent-coin filter.
struct ChainSegment {
    EntityId owner = 0;
    size_t start_index = 0;      // position of blocks.front() in the full chain
    std::vector<Block> blocks;   // last block is the endorsement's spend block
    Bytes filter_pre;            // serialized filter state before that spend
    bool from_genesis = false;

    size_t payload_bytes(SizeMode mode) const;
};

struct EndorsementMessage {
    EntityId endorser_id = 0;
    uint64_t order_id = 0;
    Digest order_digest{};
    Cents endorse_value = 0;
    std::vector<ECoin> coins;
    ChainSegment segment;
    Signature endorser_sig;

    Bytes signed_payload() const;
};

struct DeliveryReceipt {
    uint64_t order_id = 0;
    Digest order_digest{};
    EntityId customer_id = 0;
    Signature customer_sig;

    Bytes signed_payload() const;
    bool valid(const PublicKey& customer_pub, SimTime now) const;
};

struct AcceptedEndorsement {
    EndorsementMessage message;
    bool covering = false;  // part of the set that reached the order amount
};

struct SettlementBundle {
    TransactionOrder order;
    std::vector<AcceptedEndorsement> endorsements;
    DeliveryReceipt receipt;
    SimTime accepted_at = 0.0;
};

// ------------------------------------------------------------ bank side

enum class PostingCategory : uint8_t {
    CustomerDebit,
    EndorserDebit,
    MerchantCredit,  // escrowed at settlement, released or refunded later
    Incentive,
    Refund,
};
const char* posting_category_name(PostingCategory c);

struct Posting {
    EntityId account = 0;
    Cents delta = 0;  // signed change to that account
    PostingCategory category{};
    bool operator==(const Posting&) const = default;
};

struct SettlementResult {
    uint64_t order_id = 0;
    std::vector<Posting> postings;
    std::vector<CoinId> consumed_coins;
    std::vector<ECoin> reissued_coins;  // replacements, deliverable by truck
    bool customer_paid = false;
    Cents collected = 0;
};

struct ConservationReport {
    Cents customer_debits = 0;
    Cents endorser_debits = 0;
    Cents merchant_credits = 0;
    Cents incentives = 0;
    Cents refunds = 0;
    Cents escrow_outstanding = 0;
    bool balanced = false;
};

struct Credentials {
    KeyPair keys;
    SignedPhoto photo;
    Bytes photo_blob;
    std::vector<TempId> temp_ids;   // customers
    std::vector<ECoin> coins;       // endorsers
};

struct BankConfig {
    int incentive_pct = 3;
    Cents endorse_amount = 200;  // per-transaction pledge and coin denomination
    SimTime coin_lifetime = kNeverExpires;
    SimTime dispute_window = 172800.0;
    size_t temp_ids_per_customer = 64;
};

class Bank {
public:
    explicit Bank(EntityId id, BankConfig cfg = {});

    EntityId id() const { return id_; }
    const PublicKey& pub() const { return keys_.pub; }
    const PrivateKey& priv() const { return keys_.priv; }
    const BlindParams& blind_params() const { return blind_.params; }
    const BankConfig& config() const { return cfg_; }

    // Pre-disaster registration. Endorser deposits convert to e-coins of the
    // configured denomination; customer balances fund later settlements.
    const Credentials& register_merchant(EntityId id);
    const Credentials& register_customer(EntityId id, std::vector<EntityId> primaries,
                                         Cents balance, Rng& rng);
    const Credentials& register_endorser(EntityId id, std::vector<EntityId> own_endorsers,
                                         Cents deposit, Cents balance, Rng& rng);

    // Locks endorsement deposits, signs per-customer trees, switches modes.
    void disaster_onset(SimTime now);
    bool manet_mode() const { return manet_mode_; }

    const EndorsementTree& tree_for(EntityId customer) const;
    const Credentials& credentials(EntityId id) const;
    const PublicKey* lookup_key(EntityId id) const;
    KeyLookup key_lookup() const;
    std::vector<EntityId> endorsers() const;

    Cents balance(EntityId id) const;
    Cents locked_balance(EntityId id) const;
    void deposit(EntityId id, Cents amount);
    void withdraw(EntityId id, Cents amount, SimTime now);  // AccountLockedError in MANET mode

    // STEP 5: settles a truck-delivered bundle. Total: always posts.
    SettlementResult settle(const SettlementBundle& bundle, SimTime now);

    // Reference settlement for the no-disaster flow; independent arithmetic
    // used to cross-check `settle`. Takes the accepted pledges so the
    // incentive shares are attributable. Throws InsufficientBalanceError.
    std::vector<Posting> online_settlement_oracle(
        const TransactionOrder& order,
        std::span<const std::pair<EntityId, Cents>> accepted_pledges) const;

    // Dispute handling within the escrow window.
    enum class DisputeOutcome { Refund, Release };
    DisputeOutcome dispute(uint64_t order_id, const std::optional<DeliveryReceipt>& proof,
                           SimTime now);

    // Releases escrows whose window elapsed without dispute.
    std::vector<Posting> release_due_escrows(SimTime now);

    // Coins expired and unspent are replaced so live coin value matches the
    // locked deposit.
    std::vector<ECoin> replenish_coins(EntityId endorser, SimTime now);

    ConservationReport conservation() const;
    const std::vector<Posting>& all_postings() const { return postings_; }

    ECoin issue_coin_for(EntityId endorser, Cents value, SimTime now);

private:
    struct Account {
        Role role{};
        Cents balance = 0;
        Cents locked = 0;
        Credentials creds;
        std::vector<EntityId> chosen_endorsers;
    };
    struct CoinStatus {
        EntityId endorser = 0;
        Cents value = 0;
        SimTime expiry = kNeverExpires;
        bool spent = false;
    };
    struct Escrow {
        uint64_t order_id = 0;
        EntityId merchant = 0;
        Cents amount = 0;
        SimTime deadline = 0.0;
        std::vector<std::pair<EntityId, PostingCategory>> payers;
        std::vector<Cents> payer_amounts;
        bool settled_out = false;  // released or refunded
        bool disputed_refund = false;
    };

    Account& require_new(EntityId id, Role role);
    void post(Posting p);
    std::vector<Posting> split_incentive(Cents incentive,
                                         std::span<const std::pair<EntityId, Cents>> weights) const;

    EntityId id_;
    BankConfig cfg_;
    KeyPair keys_;
    BlindKeyPair blind_;
    bool manet_mode_ = false;
    uint64_t next_coin_id_ = 1;
    std::map<EntityId, Account> accounts_;
    std::map<EntityId, EndorsementTree> trees_;
    std::map<CoinId, CoinStatus> coin_registry_;
    std::map<uint64_t, Escrow> escrows_;
    std::vector<Posting> postings_;
};

// --------------------------------------------------- node-side decisions

// STEP 1: build and sign a transaction order. Throws NoEndorsersError when
// the tree lists nobody.
TransactionOrder customer_order(uint64_t order_id, const Credentials& customer,
                                EntityId customer_id, EntityId merchant_id, EntityId bank_id,
                                uint32_t item, uint32_t quantity, Cents amount,
                                const EndorsementTree& tree, const TempId& temp_id,
                                SimTime now);

// STEP 2 screening: photo, signatures, temp id, tree signature.
std::optional<RejectReason> check_order(const TransactionOrder& order, const PublicKey& bank_pub,
                                        const BlindParams& blind_params,
                                        const PublicKey& customer_pub, SimTime now);

// Endorser-side wallet.
struct EndorserWallet {
    std::vector<ECoin> coins;

    void add(const ECoin& c) { coins.push_back(c); }
    void remove(std::span<const CoinId> ids);
};

struct EndorsePlan {
    std::optional<RejectReason> refusal;
    Cents endorse_value = 0;
    std::vector<ECoin> coins;
};

// STEP 3 decision: checks chain freshness and picks unexpired, unspent coins
// covering min(limit, billed amount). Newest coins first, so the shipped
// chain suffix stays anchored at recent issue times.
EndorsePlan plan_endorsement(const EndorserWallet& wallet, const EventChain& chain,
                             Cents limit, Cents amount, SimTime now, SimTime staleness_window,
                             const PublicKey& bank_pub);

// GPS history sample as recorded at hello cadence.
struct GpsSample {
    SimTime t = 0.0;
    Vec2 pos;
};

// Histories are similar when at least `frac` of their shared timestamps lie
// within eps meters. Fewer than min_shared shared samples count as distinct.
bool location_similar(std::span<const GpsSample> a, std::span<const GpsSample> b, double eps,
                      double frac, size_t min_shared);

struct MonitorDecision {
    std::optional<RejectReason> refusal;
    Signature signature;  // set when refusal is empty
};

// Countersigning check run by one monitor: not a participant, location
// history distinct from the endorser's, proposal consistent with what this
// monitor has already signed for that chain (fork and rollback detection).
struct MonitorMemory {
    std::map<EntityId, std::pair<size_t, Digest>> heads;  // owner -> (next index, last hash)
    std::set<CoinId> coins_seen;
};

MonitorDecision monitor_countersign(const PrivateKey& monitor_key, EntityId monitor_id,
                                    const Block& proposal, size_t proposal_index,
                                    EntityId endorser_id, EntityId customer_id,
                                    EntityId merchant_id,
                                    std::span<const GpsSample> monitor_history,
                                    std::span<const GpsSample> endorser_history,
                                    MonitorMemory& memory, double similarity_eps,
                                    double similarity_frac, size_t similarity_min_shared,
                                    SimTime now);

// Merchant-side verified-prefix cache: skips re-verifying blocks this
// merchant has already checked, detects forked chains, and keeps the
// incremental spent-coin replay used by whole-chain (legacy) transfers.
struct ChainViewCache {
    struct LegacyReplay {
        SpentCoinFilter filter;
        std::set<CoinId> spent;
        size_t upto = 0;
        bool init = false;
    };
    std::map<EntityId, std::map<size_t, Digest>> block_hashes;
    std::map<EntityId, size_t> verified_upto;
    std::map<EntityId, LegacyReplay> legacy;
};

struct EndorsementCheckContext {
    const PublicKey* bank_pub = nullptr;
    KeyLookup keys;
    size_t quorum = 3;
    SimTime staleness_window = 60.0;
    size_t bloom_n = 3000;
    double bloom_fpr = 0.01;
    const std::set<CoinId>* coins_witnessed_spent = nullptr;  // gossip table
};

// STEP 4 endorsement validation: signatures, chain segment, filter anchors,
// double-spend screening, coin authenticity.
std::optional<RejectReason> check_endorsement(const EndorsementMessage& em,
                                              const PublicKey& endorser_pub,
                                              const EndorsementCheckContext& ctx,
                                              ChainViewCache& cache, SimTime now);

// Spec'd minimum population for a completable transaction.
inline constexpr size_t kMinCompletionNodes = 6;  // 1C + 1E + 3 monitors + 1M

}  // namespace mpay
