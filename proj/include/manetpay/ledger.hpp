#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "manetpay/crypto.hpp"

namespace mpay {

using CoinId = uint64_t;
using Cents = int64_t;

// Bank-issued endorsement token. The bank signature covers
// (coin_id, endorser_id, value, expiry, issued_at).
struct ECoin {
    CoinId coin_id = 0;
    EntityId endorser_id = 0;
    Cents value = 0;
    SimTime expiry = kNeverExpires;
    SimTime issued_at = 0.0;
    Signature bank_signature;

    Bytes signed_payload() const;
};

ECoin issue_coin(const PrivateKey& bank_key, CoinId id, EntityId endorser, Cents value,
                 SimTime issued_at, SimTime expiry);
bool verify_coin(const ECoin& coin, const PublicKey& bank_pub, SimTime now);

// ------------------------------------------------------------ Bloom filter

class InvalidParameterError : public std::runtime_error {
public:
    explicit InvalidParameterError(const std::string& m) : std::runtime_error(m) {}
};

// Spent-coin set. m = ceil(-n ln p / (ln 2)^2), k = round((m/n) ln 2).
class SpentCoinFilter {
public:
    SpentCoinFilter() = default;
    SpentCoinFilter(size_t n_expected, double target_fpr);

    void insert(CoinId id);
    bool query(CoinId id) const;

    size_t bit_count() const { return m_; }
    size_t hash_count() const { return k_; }
    size_t inserted_count() const { return inserted_; }
    size_t byte_size() const { return (m_ + 7) / 8; }

    Bytes to_bytes() const;
    static SpentCoinFilter from_bytes(const Bytes& b);
    Digest anchor() const;  // digest over the canonical byte form

    bool operator==(const SpentCoinFilter&) const = default;

private:
    size_t m_ = 0;
    size_t k_ = 0;
    size_t inserted_ = 0;
    std::vector<uint8_t> bits_;
};

// ------------------------------------------------------------- Merkle tree

class EmptyLeavesError : public std::runtime_error {
public:
    EmptyLeavesError() : std::runtime_error("merkle tree needs at least one leaf") {}
};

// Odd node counts duplicate the last node at each level; a single leaf
// therefore hashes with itself.
Digest merkle_root(std::span<const Digest> leaves);

struct MerkleStep {
    Digest sibling;
    bool sibling_is_right;
};
using MerkleProof = std::vector<MerkleStep>;

MerkleProof merkle_prove(std::span<const Digest> leaves, size_t index);
bool merkle_verify(const Digest& leaf, const MerkleProof& proof, const Digest& root);

// -------------------------------------------------------------- event chain

// Spend and receipt records are 20 bytes each: coin id, amount, counterparty.
struct CoinRecord {
    CoinId coin_id = 0;
    Cents amount = 0;
    EntityId counterparty = 0;

    bool operator==(const CoinRecord&) const = default;
};

enum class EventKind : uint8_t { Spend = 1, Receipt = 2, Hello = 3 };

struct Event {
    EventKind kind = EventKind::Hello;
    std::vector<CoinRecord> records;  // empty for hello beacons

    bool empty() const { return records.empty(); }
    std::vector<Digest> leaves() const;
    bool operator==(const Event&) const = default;
};

struct Gps {
    float x = 0.0f;
    float y = 0.0f;
    bool operator==(const Gps&) const = default;
};

struct MonitorSignature {
    EntityId monitor_id = 0;
    Signature signature;
    bool operator==(const MonitorSignature&) const = default;
};

struct Block {
    EntityId owner = 0;      // chain owner; bound into the signing tuple
    Digest prev_hash{};
    Event event;
    Gps gps;
    SimTime timestamp = 0.0;
    Digest merkle_root_{};   // zero digest for empty events
    Digest bloom_anchor{};   // filter state after this block's inserts
    std::vector<MonitorSignature> monitor_signatures;

    // Canonical byte tuple the monitors sign.
    Bytes signing_tuple() const;
    // Digest linking this block into the chain (contents, not signatures).
    Digest link_hash() const;
};

enum class SizeMode { Full, Lightweight };

// Chain-record size of a block under the declared layout. Full mode carries
// the raw event records; lightweight mode carries merkle root + bloom anchor
// in their place. Empty events serialize no payload in either mode. Monitor
// signatures are not part of the chain record; the per-monitor view adds one
// signature record on top.
size_t block_size_bytes(const Block& b, SizeMode mode);
size_t monitor_view_bytes(const Block& b, SizeMode mode);

enum class ChainFault {
    None,
    BadLink,
    BadGenesis,
    BadMerkleRoot,
    BadBloomAnchor,
    BadSignature,
    InsufficientQuorum,
    OwnerAsMonitor,
    NonMonotonicTime,
    Stale,
    Malformed,
};

struct ChainVerdict {
    bool valid = true;
    ChainFault fault = ChainFault::None;
    size_t index = 0;  // block at which verification failed

    static ChainVerdict ok() { return {}; }
    static ChainVerdict broken(ChainFault f, size_t i) { return {false, f, i}; }
};

const char* chain_fault_name(ChainFault f);

class StaleChainError : public std::runtime_error {
public:
    StaleChainError() : std::runtime_error("event chain stale") {}
};
class InsufficientQuorumError : public std::runtime_error {
public:
    InsufficientQuorumError() : std::runtime_error("monitor quorum not met") {}
};
class NonMonotonicTimeError : public std::runtime_error {
public:
    NonMonotonicTimeError() : std::runtime_error("block timestamp not increasing") {}
};
class OwnerAsMonitorError : public std::runtime_error {
public:
    OwnerAsMonitorError() : std::runtime_error("chain owner cannot countersign") {}
};
class InvalidChainError : public std::runtime_error {
public:
    InvalidChainError() : std::runtime_error("event chain failed verification") {}
};

using KeyLookup = std::function<const PublicKey*(EntityId)>;

class EventChain {
public:
    EventChain() = default;
    EventChain(EntityId owner, size_t bloom_n, double bloom_fpr);

    EntityId owner_id() const { return owner_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    size_t size() const { return blocks_.size(); }
    const SpentCoinFilter& filter() const { return filter_; }
    Digest last_hash() const;

    // Builds the block the monitors are asked to sign: fills prev hash,
    // merkle root and the post-insert bloom anchor for the given event.
    Block propose_block(const Event& event, Gps gps, SimTime timestamp) const;

    // Appends a countersigned block. Spend appends on a stale chain are
    // refused; hello appends are the re-validation path and are allowed.
    // Throws StaleChainError, InsufficientQuorumError, NonMonotonicTimeError,
    // OwnerAsMonitorError, or InvalidChainError (bad proposal contents).
    void append(const Block& block, size_t quorum, SimTime staleness_window);

    bool is_stale(SimTime now, SimTime staleness_window) const;
    bool is_fresh(SimTime now, SimTime staleness_window) const {
        return !blocks_.empty() && !is_stale(now, staleness_window);
    }

    ChainVerdict verify(const KeyLookup& keys, SimTime now, size_t quorum,
                        SimTime staleness_window) const;

    size_t total_size_bytes(SizeMode mode) const;

    Bytes serialize() const;  // full-mode records plus signature sections
    static EventChain deserialize(const Bytes& b, size_t bloom_n, double bloom_fpr);

private:
    static ChainVerdict verify_blocks(const std::vector<Block>& blocks, EntityId owner,
                                      size_t bloom_n, double bloom_fpr,
                                      const KeyLookup& keys, SimTime now, size_t quorum,
                                      SimTime staleness_window);

    EntityId owner_ = 0;
    size_t bloom_n_ = 3000;
    double bloom_fpr_ = 0.01;
    std::vector<Block> blocks_;
    SpentCoinFilter filter_;
};

// True iff the coin id is flagged spent. Requires a valid chain; throws
// InvalidChainError when the verdict is broken.
bool is_double_spent(CoinId coin, const SpentCoinFilter& filter, const EventChain& chain,
                     const KeyLookup& keys, SimTime now, size_t quorum,
                     SimTime staleness_window);

}  // namespace mpay
