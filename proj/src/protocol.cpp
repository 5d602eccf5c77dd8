#include "manetpay/protocol.hpp"

#include <algorithm>
#include <cmath>

namespace mpay {

const char* role_name(Role r) {
    switch (r) {
        case Role::Customer: return "customer";
        case Role::Merchant: return "merchant";
        case Role::Endorser: return "endorser";
        case Role::Bank: return "bank";
        case Role::Truck: return "truck";
    }
    return "unknown";
}

const char* reject_reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::BadCredential: return "bad-credential";
        case RejectReason::StaleChain: return "stale-chain";
        case RejectReason::DoubleSpend: return "double-spend";
        case RejectReason::InsufficientQuorum: return "insufficient-quorum";
        case RejectReason::InsufficientCover: return "insufficient-cover";
        case RejectReason::SimilarLocation: return "similar-location";
    }
    return "unknown";
}

const char* posting_category_name(PostingCategory c) {
    switch (c) {
        case PostingCategory::CustomerDebit: return "customer-debit";
        case PostingCategory::EndorserDebit: return "endorser-debit";
        case PostingCategory::MerchantCredit: return "merchant-credit";
        case PostingCategory::Incentive: return "incentive";
        case PostingCategory::Refund: return "refund";
    }
    return "unknown";
}

// --------------------------------------------------------------- payloads

Bytes EndorsementTree::signed_payload() const {
    ByteWriter w;
    w.u32(customer_id);
    w.u16(static_cast<uint16_t>(primaries.size()));
    for (const EndorserEntry& e : primaries) {
        w.u32(e.endorser_id);
        w.u64(static_cast<uint64_t>(e.limit));
    }
    w.u16(static_cast<uint16_t>(secondaries.size()));
    for (const auto& [primary, list] : secondaries) {
        w.u32(primary);
        w.u16(static_cast<uint16_t>(list.size()));
        for (const EndorserEntry& e : list) {
            w.u32(e.endorser_id);
            w.u64(static_cast<uint64_t>(e.limit));
        }
    }
    return w.take();
}

std::vector<EndorserEntry> EndorsementTree::secondary_entries() const {
    std::vector<EndorserEntry> out;
    for (const auto& [primary, list] : secondaries)
        for (const EndorserEntry& e : list) {
            bool dup = false;
            for (const EndorserEntry& have : out) dup |= have.endorser_id == e.endorser_id;
            for (const EndorserEntry& p : primaries) dup |= p.endorser_id == e.endorser_id;
            if (!dup) out.push_back(e);
        }
    return out;
}

std::vector<EntityId> EndorsementTree::all_endorsers() const {
    std::vector<EntityId> out;
    for (const EndorserEntry& e : primaries) out.push_back(e.endorser_id);
    for (const EndorserEntry& e : secondary_entries()) out.push_back(e.endorser_id);
    return out;
}

bool EndorsementTree::lists_endorser(EntityId id) const {
    for (EntityId e : all_endorsers())
        if (e == id) return true;
    return false;
}

Bytes TransactionOrder::signed_payload() const {
    ByteWriter w;
    w.u64(order_id);
    w.u64(temp_customer_id.nonce);
    w.u64(temp_customer_id.bank_sig.value);
    w.u32(customer_id);
    w.u32(merchant_id);
    w.u32(bank_id);
    w.u32(item_number);
    w.u32(quantity);
    w.u64(static_cast<uint64_t>(amount));
    w.digest(photo.photo_digest);
    w.raw(tree.signed_payload());
    return w.take();
}

Digest TransactionOrder::digest() const { return sha256(signed_payload()); }

Bytes Billing::signed_payload() const {
    ByteWriter w;
    w.u64(order_id);
    w.digest(order_digest);
    w.u32(merchant_id);
    w.u32(customer_id);
    w.u32(endorser_id);
    w.u64(static_cast<uint64_t>(amount));
    return w.take();
}

size_t ChainSegment::payload_bytes(SizeMode mode) const {
    size_t total = 0;
    for (const Block& b : blocks) {
        total += block_size_bytes(b, mode);
        total += wire::kCountBytes +
                 b.monitor_signatures.size() * (wire::kEntityIdBytes + wire::kSignatureBytes);
    }
    if (!from_genesis) total += filter_pre.size();
    return total;
}

Bytes EndorsementMessage::signed_payload() const {
    ByteWriter w;
    w.u32(endorser_id);
    w.u64(order_id);
    w.digest(order_digest);
    w.u64(static_cast<uint64_t>(endorse_value));
    w.u16(static_cast<uint16_t>(coins.size()));
    for (const ECoin& c : coins) w.raw(c.signed_payload());
    if (!segment.blocks.empty()) w.digest(segment.blocks.back().link_hash());
    return w.take();
}

Bytes DeliveryReceipt::signed_payload() const {
    ByteWriter w;
    w.u64(order_id);
    w.digest(order_digest);
    w.u32(customer_id);
    return w.take();
}

bool DeliveryReceipt::valid(const PublicKey& customer_pub, SimTime now) const {
    return verify(customer_pub, signed_payload(), customer_sig, now);
}

// ------------------------------------------------------------------- bank

Bank::Bank(EntityId id, BankConfig cfg)
    : id_(id), cfg_(cfg), keys_(make_keypair(id, "bank-signing")),
      blind_(make_blind_keypair(id)) {}

Bank::Account& Bank::require_new(EntityId id, Role role) {
    if (manet_mode_) throw std::logic_error("registration is a pre-disaster step");
    auto [it, inserted] = accounts_.try_emplace(id);
    if (!inserted) throw DuplicateRegistrationError();
    it->second.role = role;
    return it->second;
}

const Credentials& Bank::register_merchant(EntityId id) {
    Account& acct = require_new(id, Role::Merchant);
    acct.creds.keys = make_keypair(id, "merchant-" + std::to_string(id));
    acct.creds.photo_blob = str_bytes("photo-" + std::to_string(id));
    acct.creds.photo = issue_signed_photo(keys_.priv, acct.creds.keys.priv,
                                          acct.creds.photo_blob, 0.0);
    return acct.creds;
}

const Credentials& Bank::register_customer(EntityId id, std::vector<EntityId> primaries,
                                           Cents balance, Rng& rng) {
    Account& acct = require_new(id, Role::Customer);
    acct.balance = balance;
    acct.chosen_endorsers = std::move(primaries);
    acct.creds.keys = make_keypair(id, "customer-" + std::to_string(id));
    acct.creds.photo_blob = str_bytes("photo-" + std::to_string(id));
    acct.creds.photo = issue_signed_photo(keys_.priv, acct.creds.keys.priv,
                                          acct.creds.photo_blob, 0.0);
    // Pre-issued blind-signed temporary ids: the bank signs only blinded
    // nonces, so it cannot link a temp id back to this registration.
    for (size_t i = 0; i < cfg_.temp_ids_per_customer; ++i) {
        uint64_t nonce = 1 + rng.uniform_int(blind_.params.p - 1);
        BlindingFactor r{1 + rng.uniform_int(blind_.params.p - 1)};
        uint64_t blinded = blind(nonce, r, blind_.params);
        BlindSignature sig = unblind(sign_blinded(blind_, blinded), r, blind_.params);
        acct.creds.temp_ids.push_back(TempId{nonce, sig});
    }
    return acct.creds;
}

ECoin Bank::issue_coin_for(EntityId endorser, Cents value, SimTime now) {
    SimTime expiry = cfg_.coin_lifetime == kNeverExpires ? kNeverExpires
                                                         : now + cfg_.coin_lifetime;
    ECoin c = issue_coin(keys_.priv, next_coin_id_++, endorser, value, now, expiry);
    coin_registry_[c.coin_id] = CoinStatus{endorser, value, expiry, false};
    return c;
}

const Credentials& Bank::register_endorser(EntityId id, std::vector<EntityId> own_endorsers,
                                           Cents deposit, Cents balance, Rng& rng) {
    (void)rng;
    Account& acct = require_new(id, Role::Endorser);
    acct.balance = balance;
    acct.locked = deposit;  // locked once MANET mode starts; tracked here from day one
    acct.chosen_endorsers = std::move(own_endorsers);
    acct.creds.keys = make_keypair(id, "endorser-" + std::to_string(id));
    acct.creds.photo_blob = str_bytes("photo-" + std::to_string(id));
    acct.creds.photo = issue_signed_photo(keys_.priv, acct.creds.keys.priv,
                                          acct.creds.photo_blob, 0.0);
    Cents remaining = deposit;
    while (remaining > 0) {
        Cents value = std::min(remaining, cfg_.endorse_amount);
        acct.creds.coins.push_back(issue_coin_for(id, value, 0.0));
        remaining -= value;
    }
    return acct.creds;
}

void Bank::disaster_onset(SimTime now) {
    (void)now;
    if (manet_mode_) return;
    for (auto& [cid, acct] : accounts_) {
        if (acct.role != Role::Customer) continue;
        EndorsementTree tree;
        tree.customer_id = cid;
        for (EntityId primary : acct.chosen_endorsers) {
            auto it = accounts_.find(primary);
            if (it == accounts_.end() || it->second.role != Role::Endorser)
                throw std::runtime_error("customer chose an unregistered endorser");
            tree.primaries.push_back({primary, cfg_.endorse_amount});
            std::vector<EndorserEntry> secs;
            for (EntityId sec : it->second.chosen_endorsers) {
                auto sit = accounts_.find(sec);
                if (sit == accounts_.end() || sit->second.role != Role::Endorser)
                    throw std::runtime_error("endorser chose an unregistered endorser");
                secs.push_back({sec, cfg_.endorse_amount});
            }
            tree.secondaries.emplace_back(primary, std::move(secs));
        }
        tree.bank_signature = sign(keys_.priv, tree.signed_payload());
        trees_[cid] = std::move(tree);
    }
    manet_mode_ = true;
}

const EndorsementTree& Bank::tree_for(EntityId customer) const {
    auto it = trees_.find(customer);
    if (it == trees_.end()) throw std::out_of_range("no endorsement tree for customer");
    return it->second;
}

const Credentials& Bank::credentials(EntityId id) const {
    auto it = accounts_.find(id);
    if (it == accounts_.end()) throw std::out_of_range("unknown entity");
    return it->second.creds;
}

const PublicKey* Bank::lookup_key(EntityId id) const {
    if (id == id_) return &keys_.pub;
    auto it = accounts_.find(id);
    return it == accounts_.end() ? nullptr : &it->second.creds.keys.pub;
}

KeyLookup Bank::key_lookup() const {
    return [this](EntityId id) { return lookup_key(id); };
}

std::vector<EntityId> Bank::endorsers() const {
    std::vector<EntityId> out;
    for (const auto& [id, acct] : accounts_)
        if (acct.role == Role::Endorser) out.push_back(id);
    return out;
}

Cents Bank::balance(EntityId id) const {
    auto it = accounts_.find(id);
    return it == accounts_.end() ? 0 : it->second.balance;
}

Cents Bank::locked_balance(EntityId id) const {
    auto it = accounts_.find(id);
    return it == accounts_.end() ? 0 : it->second.locked;
}

void Bank::deposit(EntityId id, Cents amount) { accounts_.at(id).balance += amount; }

void Bank::withdraw(EntityId id, Cents amount, SimTime now) {
    (void)now;
    Account& acct = accounts_.at(id);
    if (acct.role == Role::Endorser && manet_mode_)
        throw AccountLockedError();
    if (acct.balance < amount) throw InsufficientBalanceError();
    acct.balance -= amount;
}

void Bank::post(Posting p) { postings_.push_back(p); }

std::vector<Posting> Bank::split_incentive(
    Cents incentive, std::span<const std::pair<EntityId, Cents>> weights) const {
    std::vector<Posting> out;
    if (incentive <= 0 || weights.empty()) return out;
    Cents total = 0;
    for (const auto& [id, w] : weights) total += w;
    if (total <= 0) return out;
    // proportional shares, largest remainder, ties to the lower entity id
    std::vector<Cents> share(weights.size());
    std::vector<std::pair<Cents, size_t>> rema;
    Cents assigned = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        Cents numer = incentive * weights[i].second;
        share[i] = numer / total;
        assigned += share[i];
        rema.push_back({numer % total, i});
    }
    std::sort(rema.begin(), rema.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return weights[a.second].first < weights[b.second].first;
    });
    Cents leftover = incentive - assigned;
    for (Cents i = 0; i < leftover; ++i) share[rema[static_cast<size_t>(i)].second] += 1;
    for (size_t i = 0; i < weights.size(); ++i)
        if (share[i] > 0)
            out.push_back({weights[i].first, share[i], PostingCategory::Incentive});
    return out;
}

SettlementResult Bank::settle(const SettlementBundle& bundle, SimTime now) {
    SettlementResult result;
    result.order_id = bundle.order.order_id;
    const size_t postings_mark = postings_.size();
    const TransactionOrder& order = bundle.order;
    Account& customer = accounts_.at(order.customer_id);

    std::vector<std::pair<EntityId, PostingCategory>> payers;
    std::vector<Cents> payer_amounts;

    Cents amount = order.amount;
    if (customer.balance >= amount) {
        customer.balance -= amount;
        post({order.customer_id, -amount, PostingCategory::CustomerDebit});
        payers.push_back({order.customer_id, PostingCategory::CustomerDebit});
        payer_amounts.push_back(amount);
        result.customer_paid = true;
        result.collected = amount;
    } else {
        // Default ladder: primaries pay first, then secondaries, each capped
        // by its per-transaction pledge and the locked deposit.
        Cents remaining = amount;
        auto find_pledge = [&](EntityId id) -> const AcceptedEndorsement* {
            for (const AcceptedEndorsement& ae : bundle.endorsements)
                if (ae.message.endorser_id == id) return &ae;
            return nullptr;
        };
        auto charge_entries = [&](const std::vector<EndorserEntry>& entries) {
            for (const EndorserEntry& entry : entries) {
                if (remaining <= 0) break;
                const AcceptedEndorsement* ae = find_pledge(entry.endorser_id);
                if (ae == nullptr) continue;
                Account& end_acct = accounts_.at(entry.endorser_id);
                Cents cap = std::min(entry.limit, ae->message.endorse_value);
                Cents charge = std::min({cap, end_acct.locked, remaining});
                if (charge <= 0) continue;
                end_acct.locked -= charge;
                post({entry.endorser_id, -charge, PostingCategory::EndorserDebit});
                payers.push_back({entry.endorser_id, PostingCategory::EndorserDebit});
                payer_amounts.push_back(charge);
                remaining -= charge;
            }
        };
        const EndorsementTree& tree = order.tree;
        charge_entries(tree.primaries);
        charge_entries(tree.secondary_entries());
        result.collected = amount - remaining;
    }

    // Incentive shares over the covering endorsements, proportional to value.
    Cents incentive = result.collected * cfg_.incentive_pct / 100;
    std::vector<std::pair<EntityId, Cents>> weights;
    for (const AcceptedEndorsement& ae : bundle.endorsements)
        if (ae.covering) weights.push_back({ae.message.endorser_id, ae.message.endorse_value});
    std::vector<Posting> shares = split_incentive(incentive, weights);
    Cents paid_incentive = 0;
    for (const Posting& p : shares) {
        accounts_.at(p.account).balance += p.delta;
        paid_incentive += p.delta;
        post(p);
    }

    Cents escrowed = result.collected - paid_incentive;
    if (escrowed > 0) {
        post({order.merchant_id, escrowed, PostingCategory::MerchantCredit});
        Escrow es;
        es.order_id = order.order_id;
        es.merchant = order.merchant_id;
        es.amount = escrowed;
        es.deadline = now + cfg_.dispute_window;
        es.payers = payers;
        es.payer_amounts = payer_amounts;
        escrows_[order.order_id] = std::move(es);
    }

    // Coins attached to the bundle were spent on-chain; charged value is
    // consumed, the rest comes back as freshly issued replacements.
    std::map<EntityId, Cents> charged;
    for (size_t i = 0; i < payers.size(); ++i)
        if (payers[i].second == PostingCategory::EndorserDebit)
            charged[payers[i].first] += payer_amounts[i];
    std::map<EntityId, Cents> attached;
    for (const AcceptedEndorsement& ae : bundle.endorsements) {
        for (const ECoin& c : ae.message.coins) {
            auto it = coin_registry_.find(c.coin_id);
            if (it == coin_registry_.end() || it->second.spent) continue;  // bank backstop
            it->second.spent = true;
            result.consumed_coins.push_back(c.coin_id);
            attached[ae.message.endorser_id] += c.value;
        }
    }
    for (auto& [endorser, value] : attached) {
        Cents back = value - charged[endorser];
        while (back > 0) {
            Cents v = std::min(back, cfg_.endorse_amount);
            result.reissued_coins.push_back(issue_coin_for(endorser, v, now));
            back -= v;
        }
    }
    result.postings.assign(postings_.begin() + static_cast<long>(postings_mark),
                           postings_.end());
    return result;
}

std::vector<Posting> Bank::online_settlement_oracle(
    const TransactionOrder& order,
    std::span<const std::pair<EntityId, Cents>> accepted_pledges) const {
    // Straight-line reference arithmetic, kept independent of settle().
    auto it = accounts_.find(order.customer_id);
    if (it == accounts_.end() || it->second.balance < order.amount)
        throw InsufficientBalanceError();
    std::vector<Posting> out;
    out.push_back({order.customer_id, -order.amount, PostingCategory::CustomerDebit});

    Cents pool = (order.amount * cfg_.incentive_pct) / 100;
    Cents weight_sum = 0;
    for (const auto& [id, w] : accepted_pledges) weight_sum += w;
    Cents handed = 0;
    if (pool > 0 && weight_sum > 0) {
        // floor shares first
        std::vector<Cents> base(accepted_pledges.size());
        for (size_t i = 0; i < accepted_pledges.size(); ++i) {
            base[i] = pool * accepted_pledges[i].second / weight_sum;
            handed += base[i];
        }
        // hand out the leftover cents by descending remainder, low id first
        Cents leftover = pool - handed;
        std::vector<size_t> order_idx(accepted_pledges.size());
        for (size_t i = 0; i < order_idx.size(); ++i) order_idx[i] = i;
        std::stable_sort(order_idx.begin(), order_idx.end(), [&](size_t a, size_t b) {
            Cents ra = pool * accepted_pledges[a].second % weight_sum;
            Cents rb = pool * accepted_pledges[b].second % weight_sum;
            if (ra != rb) return ra > rb;
            return accepted_pledges[a].first < accepted_pledges[b].first;
        });
        for (Cents i = 0; i < leftover; ++i) base[order_idx[static_cast<size_t>(i)]] += 1;
        for (size_t i = 0; i < accepted_pledges.size(); ++i)
            if (base[i] > 0)
                out.push_back({accepted_pledges[i].first, base[i], PostingCategory::Incentive});
        handed = pool;
    }
    out.push_back({order.merchant_id, order.amount - handed, PostingCategory::MerchantCredit});
    return out;
}

Bank::DisputeOutcome Bank::dispute(uint64_t order_id,
                                   const std::optional<DeliveryReceipt>& proof, SimTime now) {
    auto it = escrows_.find(order_id);
    if (it == escrows_.end()) throw std::out_of_range("no escrow for order");
    Escrow& es = it->second;
    if (now > es.deadline || es.settled_out) throw LateClaimError();

    bool merchant_wins = false;
    if (proof.has_value()) {
        const PublicKey* cpk = lookup_key(proof->customer_id);
        merchant_wins = cpk != nullptr && proof->valid(*cpk, now);
    }
    if (merchant_wins) return DisputeOutcome::Release;  // released when the window closes

    // refund the payers and reverse the pending merchant credit
    es.settled_out = true;
    es.disputed_refund = true;
    post({es.merchant, -es.amount, PostingCategory::MerchantCredit});
    Cents collected = 0;
    for (Cents amt : es.payer_amounts) collected += amt;
    for (size_t i = 0; i < es.payers.size(); ++i) {
        // refunds scale with contribution; the incentive stays paid
        Cents refund = es.payers.size() == 1
                           ? es.amount
                           : es.amount * es.payer_amounts[i] / std::max<Cents>(collected, 1);
        if (i + 1 == es.payers.size()) {
            Cents already = 0;
            for (size_t j = 0; j + 1 < es.payers.size(); ++j)
                already += es.amount * es.payer_amounts[j] / std::max<Cents>(collected, 1);
            refund = es.amount - already;
        }
        auto& acct = accounts_.at(es.payers[i].first);
        if (es.payers[i].second == PostingCategory::EndorserDebit)
            acct.locked += refund;
        else
            acct.balance += refund;
        post({es.payers[i].first, refund, PostingCategory::Refund});
    }
    return DisputeOutcome::Refund;
}

std::vector<Posting> Bank::release_due_escrows(SimTime now) {
    std::vector<Posting> released;
    for (auto& [oid, es] : escrows_) {
        if (es.settled_out || es.deadline > now) continue;
        es.settled_out = true;
        accounts_.at(es.merchant).balance += es.amount;
        released.push_back({es.merchant, es.amount, PostingCategory::MerchantCredit});
    }
    return released;
}

std::vector<ECoin> Bank::replenish_coins(EntityId endorser, SimTime now) {
    Account& acct = accounts_.at(endorser);
    Cents live = 0;
    for (auto& [cid, st] : coin_registry_) {
        if (st.endorser != endorser || st.spent) continue;
        if (now > st.expiry) {
            st.spent = true;  // expired; replacement issued below
            continue;
        }
        live += st.value;
    }
    std::vector<ECoin> fresh;
    Cents gap = acct.locked - live;
    while (gap > 0) {
        Cents v = std::min(gap, cfg_.endorse_amount);
        fresh.push_back(issue_coin_for(endorser, v, now));
        gap -= v;
    }
    return fresh;
}

ConservationReport Bank::conservation() const {
    ConservationReport r;
    for (const Posting& p : postings_) {
        switch (p.category) {
            case PostingCategory::CustomerDebit: r.customer_debits += -p.delta; break;
            case PostingCategory::EndorserDebit: r.endorser_debits += -p.delta; break;
            case PostingCategory::MerchantCredit: r.merchant_credits += p.delta; break;
            case PostingCategory::Incentive: r.incentives += p.delta; break;
            case PostingCategory::Refund: r.refunds += p.delta; break;
        }
    }
    for (const auto& [oid, es] : escrows_)
        if (!es.settled_out) r.escrow_outstanding += es.amount;
    r.balanced = r.customer_debits + r.endorser_debits ==
                 r.merchant_credits + r.incentives + r.refunds;
    return r;
}

// --------------------------------------------------- node-side decisions

TransactionOrder customer_order(uint64_t order_id, const Credentials& customer,
                                EntityId customer_id, EntityId merchant_id, EntityId bank_id,
                                uint32_t item, uint32_t quantity, Cents amount,
                                const EndorsementTree& tree, const TempId& temp_id,
                                SimTime now) {
    if (tree.all_endorsers().empty()) throw NoEndorsersError();
    TransactionOrder order;
    order.order_id = order_id;
    order.temp_customer_id = temp_id;
    order.customer_id = customer_id;
    order.merchant_id = merchant_id;
    order.bank_id = bank_id;
    order.item_number = item;
    order.quantity = quantity;
    order.amount = amount;
    order.photo = customer.photo;
    order.photo_blob = customer.photo_blob;
    order.tree = tree;
    order.customer_sig = sign(customer.keys.priv, order.signed_payload(), now);
    return order;
}

std::optional<RejectReason> check_order(const TransactionOrder& order, const PublicKey& bank_pub,
                                        const BlindParams& blind_params,
                                        const PublicKey& customer_pub, SimTime now) {
    if (order.amount <= 0) return RejectReason::BadCredential;
    if (!verify_signed_photo(order.photo, bank_pub, customer_pub, order.photo_blob, now))
        return RejectReason::BadCredential;
    if (!verify(customer_pub, order.signed_payload(), order.customer_sig, now))
        return RejectReason::BadCredential;
    if (!verify_blind(blind_params, order.temp_customer_id.nonce, order.temp_customer_id.bank_sig))
        return RejectReason::BadCredential;
    if (!verify(bank_pub, order.tree.signed_payload(), order.tree.bank_signature, now) ||
        order.tree.customer_id != order.customer_id)
        return RejectReason::BadCredential;
    if (order.tree.all_endorsers().empty()) return RejectReason::InsufficientCover;
    return std::nullopt;
}

void EndorserWallet::remove(std::span<const CoinId> ids) {
    coins.erase(std::remove_if(coins.begin(), coins.end(),
                               [&](const ECoin& c) {
                                   for (CoinId id : ids)
                                       if (id == c.coin_id) return true;
                                   return false;
                               }),
                coins.end());
}

EndorsePlan plan_endorsement(const EndorserWallet& wallet, const EventChain& chain,
                             Cents limit, Cents amount, SimTime now, SimTime staleness_window,
                             const PublicKey& bank_pub) {
    EndorsePlan plan;
    if (!chain.is_fresh(now, staleness_window)) {
        plan.refusal = RejectReason::StaleChain;
        return plan;
    }
    plan.endorse_value = std::min(limit, amount);
    // newest coins first keeps the shipped chain suffix short
    std::vector<const ECoin*> usable;
    for (const ECoin& c : wallet.coins) {
        if (now > c.expiry) continue;
        if (!verify_coin(c, bank_pub, now)) continue;
        if (chain.filter().query(c.coin_id)) continue;  // spent, or a bloom false positive
        usable.push_back(&c);
    }
    std::stable_sort(usable.begin(), usable.end(), [](const ECoin* a, const ECoin* b) {
        if (a->issued_at != b->issued_at) return a->issued_at > b->issued_at;
        return a->coin_id < b->coin_id;
    });
    Cents sum = 0;
    for (const ECoin* c : usable) {
        if (sum >= plan.endorse_value) break;
        plan.coins.push_back(*c);
        sum += c->value;
    }
    if (sum < plan.endorse_value) {
        plan.refusal = RejectReason::InsufficientCover;
        plan.coins.clear();
    }
    return plan;
}

bool location_similar(std::span<const GpsSample> a, std::span<const GpsSample> b, double eps,
                      double frac, size_t min_shared) {
    // histories are time-sorted; a two-pointer walk matches shared timestamps
    size_t shared = 0, close = 0;
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        int64_t ta = std::llround(a[i].t * 1000.0);
        int64_t tb = std::llround(b[j].t * 1000.0);
        if (ta < tb) {
            ++i;
        } else if (tb < ta) {
            ++j;
        } else {
            ++shared;
            if (dist(a[i].pos, b[j].pos) <= eps) ++close;
            ++i;
            ++j;
        }
    }
    if (shared < min_shared) return false;
    return static_cast<double>(close) >= frac * static_cast<double>(shared);
}

MonitorDecision monitor_countersign(const PrivateKey& monitor_key, EntityId monitor_id,
                                    const Block& proposal, size_t proposal_index,
                                    EntityId endorser_id, EntityId customer_id,
                                    EntityId merchant_id,
                                    std::span<const GpsSample> monitor_history,
                                    std::span<const GpsSample> endorser_history,
                                    MonitorMemory& memory, double similarity_eps,
                                    double similarity_frac, size_t similarity_min_shared,
                                    SimTime now) {
    MonitorDecision d;
    if (monitor_id == endorser_id || monitor_id == customer_id || monitor_id == merchant_id) {
        d.refusal = RejectReason::InsufficientQuorum;
        return d;
    }
    if (location_similar(monitor_history, endorser_history, similarity_eps, similarity_frac,
                         similarity_min_shared)) {
        d.refusal = RejectReason::SimilarLocation;
        return d;
    }
    // the proposal must be internally consistent before it earns a signature
    Digest expect_root = kZeroDigest;
    if (!proposal.event.empty()) {
        std::vector<Digest> ls = proposal.event.leaves();
        expect_root = merkle_root(ls);
    }
    if (proposal.merkle_root_ != expect_root || proposal.owner != endorser_id) {
        d.refusal = RejectReason::BadCredential;
        return d;
    }
    // fork / rollback / replay detection against what this monitor has seen;
    // only spend records mark coins as seen (receipts merely log arrival)
    const bool is_spend = proposal.event.kind == EventKind::Spend;
    if (is_spend) {
        for (const CoinRecord& rec : proposal.event.records)
            if (memory.coins_seen.count(rec.coin_id) > 0) {
                d.refusal = RejectReason::DoubleSpend;
                return d;
            }
    }
    auto it = memory.heads.find(proposal.owner);
    if (it != memory.heads.end()) {
        auto [next_index, last_hash] = it->second;
        if (proposal_index < next_index ||
            (proposal_index == next_index && proposal.prev_hash != last_hash)) {
            d.refusal = RejectReason::StaleChain;  // rolled-back or forked chain
            return d;
        }
    }
    d.signature = sign(monitor_key, proposal.signing_tuple(), now);
    memory.heads[proposal.owner] = {proposal_index + 1, proposal.link_hash()};
    if (is_spend)
        for (const CoinRecord& rec : proposal.event.records)
            memory.coins_seen.insert(rec.coin_id);
    return d;
}

std::optional<RejectReason> check_endorsement(const EndorsementMessage& em,
                                              const PublicKey& endorser_pub,
                                              const EndorsementCheckContext& ctx,
                                              ChainViewCache& cache, SimTime now) {
    if (!verify(endorser_pub, em.signed_payload(), em.endorser_sig, now))
        return RejectReason::BadCredential;
    if (em.endorse_value <= 0 || em.coins.empty()) return RejectReason::InsufficientCover;

    Cents coin_sum = 0;
    for (const ECoin& c : em.coins) {
        if (c.endorser_id != em.endorser_id) return RejectReason::BadCredential;
        if (!verify_coin(c, *ctx.bank_pub, now)) return RejectReason::BadCredential;
        coin_sum += c.value;
        if (ctx.coins_witnessed_spent != nullptr &&
            ctx.coins_witnessed_spent->count(c.coin_id) > 0)
            return RejectReason::DoubleSpend;
    }
    if (coin_sum < em.endorse_value) return RejectReason::InsufficientCover;

    const ChainSegment& seg = em.segment;
    if (seg.blocks.empty() || seg.owner != em.endorser_id) return RejectReason::BadCredential;
    if (seg.from_genesis && seg.start_index != 0) return RejectReason::BadCredential;
    if (!seg.from_genesis && seg.start_index > 0 && seg.blocks.size() < 2)
        return RejectReason::StaleChain;  // no anchor base to join against

    const Block& last = seg.blocks.back();
    if (last.event.kind != EventKind::Spend) return RejectReason::BadCredential;
    // the attached coins must be exactly the spend records of the new block
    if (last.event.records.size() != em.coins.size()) return RejectReason::BadCredential;
    for (const ECoin& c : em.coins) {
        bool found = false;
        for (const CoinRecord& rec : last.event.records)
            found |= rec.coin_id == c.coin_id && rec.amount == c.value;
        if (!found) return RejectReason::BadCredential;
    }

    // Blocks this merchant verified before (by index, hash-matched where it
    // matters) are trusted; the last two blocks are always re-checked since
    // the filter anchors hang off them.
    const size_t n = seg.blocks.size();
    const size_t base = seg.start_index;
    auto& seen = cache.block_hashes[seg.owner];
    size_t verified_upto = 0;
    if (auto it = cache.verified_upto.find(seg.owner); it != cache.verified_upto.end())
        verified_upto = it->second;
    ChainViewCache::LegacyReplay* lr = nullptr;
    if (seg.from_genesis) {
        lr = &cache.legacy[seg.owner];
        if (!lr->init) {
            lr->filter = SpentCoinFilter(ctx.bloom_n, ctx.bloom_fpr);
            lr->init = true;
        }
        if (base + n < lr->upto) return RejectReason::DoubleSpend;  // rolled-back view
        verified_upto = std::min(verified_upto, lr->upto);
    }
    size_t fresh_from = 0;
    if (verified_upto > base) fresh_from = verified_upto - base;
    if (n >= 2) fresh_from = std::min(fresh_from, n - 2);
    else fresh_from = 0;

    std::vector<Digest> hashes(n);
    for (size_t i = fresh_from; i < n; ++i) {
        const Block& b = seg.blocks[i];
        if (b.owner != seg.owner) return RejectReason::BadCredential;
        if (i > fresh_from) {
            if (b.prev_hash != hashes[i - 1]) return RejectReason::StaleChain;
            if (b.timestamp <= seg.blocks[i - 1].timestamp) return RejectReason::StaleChain;
        } else if (i > 0) {
            // join against the trusted prefix
            auto it = seen.find(base + i - 1);
            if (it != seen.end() && b.prev_hash != it->second) return RejectReason::DoubleSpend;
        } else if (seg.from_genesis && b.prev_hash != kZeroDigest) {
            return RejectReason::StaleChain;
        }
        Digest expect_root = kZeroDigest;
        if (!b.event.empty()) {
            std::vector<Digest> ls = b.event.leaves();
            expect_root = merkle_root(ls);
        }
        if (b.merkle_root_ != expect_root) return RejectReason::StaleChain;

        std::set<EntityId> distinct;
        Bytes tuple = b.signing_tuple();
        for (const MonitorSignature& ms : b.monitor_signatures) {
            if (ms.monitor_id == seg.owner) return RejectReason::InsufficientQuorum;
            const PublicKey* pk = ctx.keys(ms.monitor_id);
            if (pk == nullptr || !verify(*pk, tuple, ms.signature, now))
                return RejectReason::InsufficientQuorum;
            distinct.insert(ms.monitor_id);
        }
        if (distinct.size() < ctx.quorum) return RejectReason::InsufficientQuorum;

        hashes[i] = b.link_hash();
        auto it = seen.find(base + i);
        if (it != seen.end() && it->second != hashes[i]) return RejectReason::DoubleSpend;
    }
    if (now - last.timestamp > ctx.staleness_window) return RejectReason::StaleChain;

    // spent-coin screening
    if (seg.from_genesis) {
        // full-scan semantics over the whole log, replayed incrementally
        SpentCoinFilter replay = lr->filter;
        std::set<CoinId> fresh_spent;
        for (size_t i = lr->upto > base ? lr->upto - base : 0; i < n; ++i) {
            const Block& b = seg.blocks[i];
            if (b.event.kind != EventKind::Spend) continue;
            for (const CoinRecord& rec : b.event.records) {
                if (lr->spent.count(rec.coin_id) > 0 || fresh_spent.count(rec.coin_id) > 0)
                    return RejectReason::DoubleSpend;
                fresh_spent.insert(rec.coin_id);
                replay.insert(rec.coin_id);
            }
            if (b.bloom_anchor != replay.anchor()) return RejectReason::StaleChain;
        }
        lr->filter = std::move(replay);
        lr->spent.insert(fresh_spent.begin(), fresh_spent.end());
        lr->upto = std::max(lr->upto, base + n);
    } else {
        SpentCoinFilter pre;
        try {
            pre = SpentCoinFilter::from_bytes(seg.filter_pre);
        } catch (const std::exception&) {
            return RejectReason::StaleChain;
        }
        if (n >= 2) {
            if (pre.anchor() != seg.blocks[n - 2].bloom_anchor)
                return RejectReason::StaleChain;
        } else {
            // first block of the chain: the pre-state must be the empty filter
            if (pre.anchor() != SpentCoinFilter(ctx.bloom_n, ctx.bloom_fpr).anchor())
                return RejectReason::StaleChain;
        }
        SpentCoinFilter post = pre;
        for (const ECoin& c : em.coins) {
            if (pre.query(c.coin_id)) return RejectReason::DoubleSpend;
            post.insert(c.coin_id);
        }
        if (post.anchor() != last.bloom_anchor) return RejectReason::StaleChain;
    }

    for (size_t i = fresh_from; i < n; ++i)
        if (!(hashes[i] == Digest{})) seen[base + i] = hashes[i];
    auto& upto = cache.verified_upto[seg.owner];
    upto = std::max(upto, base + n);
    return std::nullopt;
}

}  // namespace mpay
