#include "manetpay/ledger.hpp"

#include <cmath>

namespace mpay {

// ---------------------------------------------------------------- e-coins

Bytes ECoin::signed_payload() const {
    ByteWriter w;
    w.u64(coin_id);
    w.u32(endorser_id);
    w.u64(static_cast<uint64_t>(value));
    w.u64(expiry == kNeverExpires ? UINT64_MAX : static_cast<uint64_t>(expiry * 1e6));
    w.u64(static_cast<uint64_t>(issued_at * 1e6));
    return w.take();
}

ECoin issue_coin(const PrivateKey& bank_key, CoinId id, EntityId endorser, Cents value,
                 SimTime issued_at, SimTime expiry) {
    ECoin c;
    c.coin_id = id;
    c.endorser_id = endorser;
    c.value = value;
    c.expiry = expiry;
    c.issued_at = issued_at;
    c.bank_signature = sign(bank_key, c.signed_payload(), issued_at);
    return c;
}

bool verify_coin(const ECoin& coin, const PublicKey& bank_pub, SimTime now) {
    if (coin.value <= 0) return false;
    if (now > coin.expiry) return false;
    return verify(bank_pub, coin.signed_payload(), coin.bank_signature, now);
}

// ------------------------------------------------------------ Bloom filter

SpentCoinFilter::SpentCoinFilter(size_t n_expected, double target_fpr) {
    if (n_expected == 0) throw InvalidParameterError("bloom: n_expected must be > 0");
    if (!(target_fpr > 0.0 && target_fpr < 1.0))
        throw InvalidParameterError("bloom: target_fpr must be in (0, 1)");
    const double ln2 = std::log(2.0);
    double m_raw = -static_cast<double>(n_expected) * std::log(target_fpr) / (ln2 * ln2);
    m_ = static_cast<size_t>(std::ceil(m_raw));
    long k = std::lround(static_cast<double>(m_) / static_cast<double>(n_expected) * ln2);
    k_ = static_cast<size_t>(std::max(1L, k));
    bits_.assign((m_ + 7) / 8, 0);
}

// Double hashing over the two halves of sha256(coin id).
static void coin_hashes(CoinId id, uint64_t& h1, uint64_t& h2) {
    ByteWriter w;
    w.u64(id);
    Digest d = sha256(w.bytes());
    h1 = 0;
    h2 = 0;
    for (int i = 0; i < 8; ++i) h1 = h1 << 8 | d[i];
    for (int i = 8; i < 16; ++i) h2 = h2 << 8 | d[i];
    if (h2 == 0) h2 = 0x9e3779b97f4a7c15ull;
}

void SpentCoinFilter::insert(CoinId id) {
    uint64_t h1, h2;
    coin_hashes(id, h1, h2);
    for (size_t i = 0; i < k_; ++i) {
        size_t bit = static_cast<size_t>((h1 + i * h2) % m_);
        bits_[bit / 8] |= static_cast<uint8_t>(1u << (bit % 8));
    }
    ++inserted_;
}

bool SpentCoinFilter::query(CoinId id) const {
    if (m_ == 0) return false;
    uint64_t h1, h2;
    coin_hashes(id, h1, h2);
    for (size_t i = 0; i < k_; ++i) {
        size_t bit = static_cast<size_t>((h1 + i * h2) % m_);
        if (!(bits_[bit / 8] & (1u << (bit % 8)))) return false;
    }
    return true;
}

Bytes SpentCoinFilter::to_bytes() const {
    ByteWriter w;
    w.u64(m_);
    w.u64(k_);
    w.u64(inserted_);
    w.raw(bits_.data(), bits_.size());
    return w.take();
}

SpentCoinFilter SpentCoinFilter::from_bytes(const Bytes& b) {
    ByteReader r(b);
    SpentCoinFilter f;
    f.m_ = r.u64();
    f.k_ = r.u64();
    f.inserted_ = r.u64();
    f.bits_.resize((f.m_ + 7) / 8);
    r.raw(f.bits_.data(), f.bits_.size());
    return f;
}

Digest SpentCoinFilter::anchor() const { return sha256(to_bytes()); }

// ------------------------------------------------------------- Merkle tree

Digest merkle_root(std::span<const Digest> leaves) {
    if (leaves.empty()) throw EmptyLeavesError();
    std::vector<Digest> level(leaves.begin(), leaves.end());
    do {
        if (level.size() % 2 != 0) level.push_back(level.back());
        std::vector<Digest> next;
        next.reserve(level.size() / 2);
        for (size_t i = 0; i < level.size(); i += 2)
            next.push_back(sha256_concat(level[i], level[i + 1]));
        level = std::move(next);
    } while (level.size() > 1);
    return level[0];
}

MerkleProof merkle_prove(std::span<const Digest> leaves, size_t index) {
    if (leaves.empty()) throw EmptyLeavesError();
    if (index >= leaves.size()) throw std::out_of_range("merkle leaf index");
    MerkleProof proof;
    std::vector<Digest> level(leaves.begin(), leaves.end());
    size_t pos = index;
    do {
        if (level.size() % 2 != 0) level.push_back(level.back());
        size_t sibling = pos ^ 1;
        proof.push_back({level[sibling], (sibling & 1) != 0});
        std::vector<Digest> next;
        next.reserve(level.size() / 2);
        for (size_t i = 0; i < level.size(); i += 2)
            next.push_back(sha256_concat(level[i], level[i + 1]));
        level = std::move(next);
        pos /= 2;
    } while (level.size() > 1);
    return proof;
}

bool merkle_verify(const Digest& leaf, const MerkleProof& proof, const Digest& root) {
    Digest acc = leaf;
    for (const MerkleStep& step : proof)
        acc = step.sibling_is_right ? sha256_concat(acc, step.sibling)
                                    : sha256_concat(step.sibling, acc);
    return acc == root;
}

// -------------------------------------------------------------- event chain

std::vector<Digest> Event::leaves() const {
    std::vector<Digest> out;
    out.reserve(records.size());
    for (const CoinRecord& rec : records) {
        ByteWriter w;
        w.u64(rec.coin_id);
        w.u64(static_cast<uint64_t>(rec.amount));
        w.u32(rec.counterparty);
        out.push_back(sha256(w.bytes()));
    }
    return out;
}

static Digest event_merkle_root(const Event& e) {
    if (e.empty()) return kZeroDigest;
    std::vector<Digest> leaves = e.leaves();
    return merkle_root(leaves);
}

Bytes Block::signing_tuple() const {
    ByteWriter w;
    w.u32(owner);
    w.digest(prev_hash);
    w.digest(merkle_root_);
    w.digest(bloom_anchor);
    w.f32(gps.x);
    w.f32(gps.y);
    w.u64(static_cast<uint64_t>(timestamp * 1e6));
    return w.take();
}

Digest Block::link_hash() const {
    ByteWriter w;
    w.digest(prev_hash);
    w.u8(static_cast<uint8_t>(event.kind));
    w.u16(static_cast<uint16_t>(event.records.size()));
    for (const CoinRecord& rec : event.records) {
        w.u64(rec.coin_id);
        w.u64(static_cast<uint64_t>(rec.amount));
        w.u32(rec.counterparty);
    }
    w.f32(gps.x);
    w.f32(gps.y);
    w.u64(static_cast<uint64_t>(timestamp * 1e6));
    w.digest(merkle_root_);
    w.digest(bloom_anchor);
    return sha256(w.bytes());
}

size_t block_size_bytes(const Block& b, SizeMode mode) {
    using namespace wire;
    size_t base = kDigestBytes + kTagBytes + kGpsBytes + kTimestampBytes;
    if (b.event.empty()) return base;
    const size_t record = kCoinIdBytes + kAmountBytes + kEntityIdBytes;
    if (mode == SizeMode::Full) return base + kCountBytes + b.event.records.size() * record;
    return base + 2 * kDigestBytes;  // merkle root + bloom anchor
}

size_t monitor_view_bytes(const Block& b, SizeMode mode) {
    return block_size_bytes(b, mode) + wire::kEntityIdBytes + wire::kSignatureBytes;
}

const char* chain_fault_name(ChainFault f) {
    switch (f) {
        case ChainFault::None: return "none";
        case ChainFault::BadLink: return "bad-link";
        case ChainFault::BadGenesis: return "bad-genesis";
        case ChainFault::BadMerkleRoot: return "bad-merkle-root";
        case ChainFault::BadBloomAnchor: return "bad-bloom-anchor";
        case ChainFault::BadSignature: return "bad-signature";
        case ChainFault::InsufficientQuorum: return "insufficient-quorum";
        case ChainFault::OwnerAsMonitor: return "owner-as-monitor";
        case ChainFault::NonMonotonicTime: return "non-monotonic-time";
        case ChainFault::Stale: return "stale";
        case ChainFault::Malformed: return "malformed";
    }
    return "unknown";
}

EventChain::EventChain(EntityId owner, size_t bloom_n, double bloom_fpr)
    : owner_(owner), bloom_n_(bloom_n), bloom_fpr_(bloom_fpr),
      filter_(bloom_n, bloom_fpr) {}

Digest EventChain::last_hash() const {
    return blocks_.empty() ? kZeroDigest : blocks_.back().link_hash();
}

Block EventChain::propose_block(const Event& event, Gps gps, SimTime timestamp) const {
    Block b;
    b.owner = owner_;
    b.prev_hash = last_hash();
    b.event = event;
    b.gps = gps;
    b.timestamp = timestamp;
    b.merkle_root_ = event_merkle_root(event);
    if (event.kind == EventKind::Spend && !event.records.empty()) {
        SpentCoinFilter next = filter_;
        for (const CoinRecord& rec : event.records) next.insert(rec.coin_id);
        b.bloom_anchor = next.anchor();
    } else {
        b.bloom_anchor = filter_.anchor();
    }
    return b;
}

bool EventChain::is_stale(SimTime now, SimTime staleness_window) const {
    if (blocks_.empty()) return false;  // nothing recorded yet, nothing to invalidate
    return now - blocks_.back().timestamp > staleness_window;
}

static bool quorum_ok(const std::vector<MonitorSignature>& sigs, EntityId owner,
                      size_t quorum, bool* owner_signed) {
    *owner_signed = false;
    std::vector<EntityId> seen;
    for (const MonitorSignature& ms : sigs) {
        if (ms.monitor_id == owner) {
            *owner_signed = true;
            return false;
        }
        bool dup = false;
        for (EntityId id : seen) dup |= (id == ms.monitor_id);
        if (!dup) seen.push_back(ms.monitor_id);
    }
    return seen.size() >= quorum;
}

void EventChain::append(const Block& block, size_t quorum, SimTime staleness_window) {
    if (!blocks_.empty() && block.timestamp <= blocks_.back().timestamp)
        throw NonMonotonicTimeError();
    if (block.event.kind == EventKind::Spend && is_stale(block.timestamp, staleness_window))
        throw StaleChainError();
    bool owner_signed = false;
    if (!quorum_ok(block.monitor_signatures, owner_, quorum, &owner_signed)) {
        if (owner_signed) throw OwnerAsMonitorError();
        throw InsufficientQuorumError();
    }
    if (block.owner != owner_) throw InvalidChainError();
    if (block.prev_hash != last_hash()) throw InvalidChainError();
    if (block.merkle_root_ != event_merkle_root(block.event)) throw InvalidChainError();

    SpentCoinFilter next = filter_;
    if (block.event.kind == EventKind::Spend)
        for (const CoinRecord& rec : block.event.records) next.insert(rec.coin_id);
    if (block.bloom_anchor != next.anchor()) throw InvalidChainError();

    filter_ = std::move(next);
    blocks_.push_back(block);
}

ChainVerdict EventChain::verify_blocks(const std::vector<Block>& blocks, EntityId owner,
                                       size_t bloom_n, double bloom_fpr,
                                       const KeyLookup& keys, SimTime now, size_t quorum,
                                       SimTime staleness_window) {
    SpentCoinFilter replay(bloom_n, bloom_fpr);
    Digest prev = kZeroDigest;
    SimTime prev_ts = -kNeverExpires;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const Block& b = blocks[i];
        if (b.owner != owner) return ChainVerdict::broken(ChainFault::Malformed, i);
        if (b.prev_hash != prev)
            return ChainVerdict::broken(i == 0 ? ChainFault::BadGenesis : ChainFault::BadLink, i);
        if (b.timestamp <= prev_ts)
            return ChainVerdict::broken(ChainFault::NonMonotonicTime, i);
        if (b.merkle_root_ != event_merkle_root(b.event))
            return ChainVerdict::broken(ChainFault::BadMerkleRoot, i);
        if (b.event.kind == EventKind::Spend)
            for (const CoinRecord& rec : b.event.records) replay.insert(rec.coin_id);
        if (b.bloom_anchor != replay.anchor())
            return ChainVerdict::broken(ChainFault::BadBloomAnchor, i);
        bool owner_signed = false;
        if (!quorum_ok(b.monitor_signatures, owner, quorum, &owner_signed))
            return ChainVerdict::broken(
                owner_signed ? ChainFault::OwnerAsMonitor : ChainFault::InsufficientQuorum, i);
        Bytes tuple = b.signing_tuple();
        for (const MonitorSignature& ms : b.monitor_signatures) {
            const PublicKey* pk = keys(ms.monitor_id);
            if (pk == nullptr || !mpay::verify(*pk, tuple, ms.signature, now))
                return ChainVerdict::broken(ChainFault::BadSignature, i);
        }
        prev = b.link_hash();
        prev_ts = b.timestamp;
    }
    if (!blocks.empty() && now - blocks.back().timestamp > staleness_window)
        return ChainVerdict::broken(ChainFault::Stale, blocks.size() - 1);
    return ChainVerdict::ok();
}

ChainVerdict EventChain::verify(const KeyLookup& keys, SimTime now, size_t quorum,
                                SimTime staleness_window) const {
    return verify_blocks(blocks_, owner_, bloom_n_, bloom_fpr_, keys, now, quorum,
                         staleness_window);
}

size_t EventChain::total_size_bytes(SizeMode mode) const {
    size_t total = 0;
    for (const Block& b : blocks_) total += block_size_bytes(b, mode);
    return total;
}

Bytes EventChain::serialize() const {
    ByteWriter w;
    w.u32(owner_);
    w.u32(static_cast<uint32_t>(blocks_.size()));
    for (const Block& b : blocks_) {
        w.digest(b.prev_hash);
        w.u8(static_cast<uint8_t>(b.event.kind));
        w.u16(static_cast<uint16_t>(b.event.records.size()));
        for (const CoinRecord& rec : b.event.records) {
            w.u64(rec.coin_id);
            w.u64(static_cast<uint64_t>(rec.amount));
            w.u32(rec.counterparty);
        }
        w.f32(b.gps.x);
        w.f32(b.gps.y);
        w.u64(static_cast<uint64_t>(b.timestamp * 1e6));
        w.u16(static_cast<uint16_t>(b.monitor_signatures.size()));
        for (const MonitorSignature& ms : b.monitor_signatures) {
            w.u32(ms.monitor_id);
            w.raw(ms.signature.bytes.data(), ms.signature.bytes.size());
        }
    }
    return w.take();
}

EventChain EventChain::deserialize(const Bytes& bytes, size_t bloom_n, double bloom_fpr) {
    ByteReader r(bytes);
    EventChain chain(r.u32(), bloom_n, bloom_fpr);
    uint32_t count = r.u32();
    SpentCoinFilter replay(bloom_n, bloom_fpr);
    for (uint32_t i = 0; i < count; ++i) {
        Block b;
        b.owner = chain.owner_;
        b.prev_hash = r.digest();
        uint8_t kind = r.u8();
        if (kind < 1 || kind > 3) throw std::runtime_error("bad event kind");
        b.event.kind = static_cast<EventKind>(kind);
        uint16_t nrec = r.u16();
        if ((b.event.kind == EventKind::Hello) != (nrec == 0))
            throw std::runtime_error("bad record count for event kind");
        b.event.records.resize(nrec);
        for (CoinRecord& rec : b.event.records) {
            rec.coin_id = r.u64();
            rec.amount = static_cast<Cents>(r.u64());
            rec.counterparty = r.u32();
        }
        b.gps.x = r.f32();
        b.gps.y = r.f32();
        b.timestamp = static_cast<double>(r.u64()) / 1e6;
        uint16_t nsig = r.u16();
        b.monitor_signatures.resize(nsig);
        for (MonitorSignature& ms : b.monitor_signatures) {
            ms.monitor_id = r.u32();
            r.raw(ms.signature.bytes.data(), ms.signature.bytes.size());
            ms.signature.signer_id = ms.monitor_id;
        }
        // merkle root and bloom anchor are recomputed, not transmitted
        b.merkle_root_ = event_merkle_root(b.event);
        if (b.event.kind == EventKind::Spend)
            for (const CoinRecord& rec : b.event.records) replay.insert(rec.coin_id);
        b.bloom_anchor = replay.anchor();
        chain.blocks_.push_back(std::move(b));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes in chain");
    chain.filter_ = std::move(replay);
    return chain;
}

bool is_double_spent(CoinId coin, const SpentCoinFilter& filter, const EventChain& chain,
                     const KeyLookup& keys, SimTime now, size_t quorum,
                     SimTime staleness_window) {
    ChainVerdict v = chain.verify(keys, now, quorum, staleness_window);
    if (!v.valid) throw InvalidChainError();
    return filter.query(coin);
}

}  // namespace mpay
