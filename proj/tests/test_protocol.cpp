#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "manetpay/protocol.hpp"

using namespace mpay;

namespace {

// One bank, two merchants, three endorsers, two customers; trees signed at
// disaster onset. Endorser 60 backs customer 20 with endorsers 61/62 as its
// own endorsers (customer 20's secondaries).
struct Rig {
    Bank bank{1};
    Rng rng{77, "rig"};

    Rig() {
        bank.register_merchant(10);
        bank.register_merchant(11);
        bank.register_endorser(60, {61, 62}, 300000, 0, rng);
        bank.register_endorser(61, {62}, 300000, 0, rng);
        bank.register_endorser(62, {}, 300000, 0, rng);
        bank.register_customer(20, {60}, 10000, rng);
        bank.register_customer(21, {60, 61}, 0, rng);
        bank.disaster_onset(0.0);
    }

    TransactionOrder order_for(EntityId customer, EntityId merchant, Cents amount,
                               uint64_t oid = 1, SimTime now = 100.0) {
        const Credentials& creds = bank.credentials(customer);
        return customer_order(oid, creds, customer, merchant, bank.id(), 7, 1, amount,
                              bank.tree_for(customer), creds.temp_ids.at(oid % 64), now);
    }

    EndorsementMessage pledge(EntityId endorser, const TransactionOrder& order, Cents value,
                              int ncoins = 1) {
        EndorsementMessage em;
        em.endorser_id = endorser;
        em.order_id = order.order_id;
        em.order_digest = order.digest();
        em.endorse_value = value;
        const Credentials& creds = bank.credentials(endorser);
        for (int i = 0; i < ncoins; ++i) em.coins.push_back(creds.coins.at(i));
        em.endorser_sig = sign(creds.keys.priv, em.signed_payload(), 100.0);
        return em;
    }

    SettlementBundle bundle_for(const TransactionOrder& order,
                                std::vector<std::pair<EntityId, Cents>> pledges) {
        SettlementBundle b;
        b.order = order;
        int coin_offset = 0;
        for (auto [endorser, value] : pledges) {
            AcceptedEndorsement ae;
            ae.message = pledge(endorser, order, value, 1 + coin_offset++ % 1);
            ae.covering = true;
            b.endorsements.push_back(ae);
        }
        const Credentials& cust = bank.credentials(order.customer_id);
        b.receipt.order_id = order.order_id;
        b.receipt.order_digest = order.digest();
        b.receipt.customer_id = order.customer_id;
        b.receipt.customer_sig = sign(cust.keys.priv, b.receipt.signed_payload(), 100.0);
        b.accepted_at = 100.0;
        return b;
    }
};

}  // namespace

TEST_CASE("registration issues coins matching the deposit") {
    Bank bank(1);
    Rng rng(5, "reg");
    const Credentials& creds = bank.register_endorser(60, {}, 300000, 0, rng);
    CHECK(creds.coins.size() == 1500);  // $3000 at $2 per coin
    Cents total = 0;
    for (const ECoin& c : creds.coins) {
        CHECK(c.value == 200);
        CHECK(verify_coin(c, bank.pub(), 1.0));
        total += c.value;
    }
    CHECK(total == 300000);
    CHECK(bank.locked_balance(60) == 300000);
}

TEST_CASE("duplicate registration and post-onset registration are refused") {
    Bank bank(1);
    Rng rng(5, "reg");
    bank.register_merchant(10);
    CHECK_THROWS_AS(bank.register_merchant(10), DuplicateRegistrationError);
    bank.disaster_onset(0.0);
    CHECK_THROWS_AS(bank.register_merchant(12), std::logic_error);
}

TEST_CASE("customer with no endorsers cannot build an order") {
    Bank bank(1);
    Rng rng(5, "noend");
    const Credentials& creds = bank.register_customer(20, {}, 10000, rng);
    bank.disaster_onset(0.0);
    CHECK_THROWS_AS(customer_order(1, creds, 20, 10, 1, 7, 1, 200, bank.tree_for(20),
                                   creds.temp_ids.front(), 1.0),
                    NoEndorsersError);
}

TEST_CASE("mutual endorsement is allowed") {
    Bank bank(1);
    Rng rng(5, "mutual");
    bank.register_endorser(60, {61}, 300000, 0, rng);
    bank.register_endorser(61, {60}, 300000, 0, rng);
    bank.register_customer(20, {60}, 0, rng);
    bank.register_customer(21, {61}, 0, rng);
    bank.disaster_onset(0.0);
    const EndorsementTree& t20 = bank.tree_for(20);
    const EndorsementTree& t21 = bank.tree_for(21);
    CHECK(t20.lists_endorser(60));
    CHECK(t20.lists_endorser(61));
    CHECK(t21.lists_endorser(61));
    CHECK(t21.lists_endorser(60));
    CHECK(verify(bank.pub(), t20.signed_payload(), t20.bank_signature));
}

TEST_CASE("order screening accepts honest orders and rejects forgeries") {
    Rig rig;
    TransactionOrder order = rig.order_for(20, 10, 200);
    const PublicKey& cust_pub = rig.bank.credentials(20).keys.pub;

    CHECK_FALSE(check_order(order, rig.bank.pub(), rig.bank.blind_params(), cust_pub, 101.0)
                    .has_value());

    TransactionOrder bad_photo = order;
    bad_photo.photo_blob[2] ^= 1;
    CHECK(check_order(bad_photo, rig.bank.pub(), rig.bank.blind_params(), cust_pub, 101.0) ==
          RejectReason::BadCredential);

    TransactionOrder bad_temp = order;
    bad_temp.temp_customer_id.bank_sig.value ^= 5;
    // the temp id rides inside the signed payload, so either check may fire
    CHECK(check_order(bad_temp, rig.bank.pub(), rig.bank.blind_params(), cust_pub, 101.0) ==
          RejectReason::BadCredential);

    TransactionOrder bad_amount = order;
    bad_amount.amount = 0;
    CHECK(check_order(bad_amount, rig.bank.pub(), rig.bank.blind_params(), cust_pub, 101.0) ==
          RejectReason::BadCredential);
}

TEST_CASE("solvent settlement: customer pays, merchant escrowed, coins reissued") {
    Rig rig;
    TransactionOrder order = rig.order_for(20, 10, 4000);  // $40 on a $100 balance
    SettlementBundle b = rig.bundle_for(order, {{60, 200}, {61, 200}});
    SettlementResult res = rig.bank.settle(b, 200.0);

    CHECK(res.customer_paid);
    CHECK(res.collected == 4000);
    CHECK(rig.bank.balance(20) == 6000);

    // incentive: 3% of $40 = 120 cents, split evenly across equal pledges
    Cents incentive = 0, customer_debit = 0, merchant_credit = 0;
    for (const Posting& p : res.postings) (void)p;
    for (const Posting& p : rig.bank.all_postings()) {
        if (p.category == PostingCategory::Incentive) incentive += p.delta;
        if (p.category == PostingCategory::CustomerDebit) customer_debit -= p.delta;
        if (p.category == PostingCategory::MerchantCredit) merchant_credit += p.delta;
    }
    CHECK(incentive == 120);
    CHECK(customer_debit == 4000);
    CHECK(merchant_credit == 3880);
    CHECK(rig.bank.balance(60) == 60);
    CHECK(rig.bank.balance(61) == 60);

    // two attached coins consumed, two replacements issued (customer paid)
    CHECK(res.consumed_coins.size() == 2);
    Cents reissued = 0;
    for (const ECoin& c : res.reissued_coins) reissued += c.value;
    CHECK(reissued == 400);

    // merchant money arrives when the dispute window closes
    CHECK(rig.bank.balance(10) == 0);
    rig.bank.release_due_escrows(200.0 + rig.bank.config().dispute_window);
    CHECK(rig.bank.balance(10) == 3880);
    CHECK(rig.bank.conservation().balanced);
}

TEST_CASE("default scenario 1: primary endorser charged up to its pledge") {
    Rig rig;
    TransactionOrder order = rig.order_for(21, 10, 200);  // customer 21 is broke
    SettlementBundle b = rig.bundle_for(order, {{60, 200}});
    SettlementResult res = rig.bank.settle(b, 200.0);

    CHECK_FALSE(res.customer_paid);
    CHECK(res.collected == 200);
    CHECK(rig.bank.locked_balance(60) == 300000 - 200);
    // the endorser paid, so its coin is consumed without replacement
    Cents reissued = 0;
    for (const ECoin& c : res.reissued_coins) reissued += c.value;
    CHECK(reissued == 0);
    CHECK(rig.bank.conservation().balanced);
}

TEST_CASE("default scenario 2: broke primaries fall through to secondaries") {
    Bank bank(1);
    Rng rng(9, "ds2");
    bank.register_merchant(10);
    bank.register_endorser(60, {61, 62}, 200, 0, rng);  // deposit just one coin
    bank.register_endorser(61, {}, 300000, 0, rng);
    bank.register_endorser(62, {}, 300000, 0, rng);
    bank.register_customer(21, {60}, 0, rng);
    bank.disaster_onset(0.0);

    // drain the primary's locked deposit with an earlier default
    TransactionOrder first = [&] {
        const Credentials& creds = bank.credentials(21);
        return customer_order(1, creds, 21, 10, 1, 7, 1, 200, bank.tree_for(21),
                              creds.temp_ids.at(1), 50.0);
    }();
    SettlementBundle b1;
    b1.order = first;
    AcceptedEndorsement ae;
    ae.covering = true;
    ae.message.endorser_id = 60;
    ae.message.order_id = 1;
    ae.message.order_digest = first.digest();
    ae.message.endorse_value = 200;
    ae.message.coins = {bank.credentials(60).coins.at(0)};
    ae.message.endorser_sig =
        sign(bank.credentials(60).keys.priv, ae.message.signed_payload(), 50.0);
    b1.endorsements.push_back(ae);
    bank.settle(b1, 60.0);
    CHECK(bank.locked_balance(60) == 0);

    // second default: primary has nothing left; secondaries 61 and 62 pay
    const Credentials& creds = bank.credentials(21);
    TransactionOrder second = customer_order(2, creds, 21, 10, 1, 7, 1, 400,
                                             bank.tree_for(21), creds.temp_ids.at(2), 70.0);
    SettlementBundle b2;
    b2.order = second;
    for (EntityId endorser : {61u, 62u}) {
        AcceptedEndorsement a;
        a.covering = true;
        a.message.endorser_id = endorser;
        a.message.order_id = 2;
        a.message.order_digest = second.digest();
        a.message.endorse_value = 200;
        a.message.coins = {bank.credentials(endorser).coins.at(0)};
        a.message.endorser_sig =
            sign(bank.credentials(endorser).keys.priv, a.message.signed_payload(), 70.0);
        b2.endorsements.push_back(a);
    }
    SettlementResult res = bank.settle(b2, 80.0);
    CHECK(res.collected == 400);
    CHECK(bank.locked_balance(61) == 300000 - 200);
    CHECK(bank.locked_balance(62) == 300000 - 200);
    CHECK(bank.conservation().balanced);
}

TEST_CASE("endorser charge never exceeds its per-transaction pledge") {
    Rig rig;
    TransactionOrder order = rig.order_for(21, 10, 1000);  // $10, pledges only cover $4
    SettlementBundle b = rig.bundle_for(order, {{60, 200}, {61, 200}});
    SettlementResult res = rig.bank.settle(b, 200.0);
    CHECK(res.collected == 400);  // the rest is uncollectable, postings stay total
    for (const Posting& p : rig.bank.all_postings())
        if (p.category == PostingCategory::EndorserDebit) CHECK(-p.delta <= 200);
    CHECK(rig.bank.conservation().balanced);
}

TEST_CASE("withdrawals from locked endorsement accounts fail in MANET mode") {
    Rig rig;
    rig.bank.deposit(60, 500);
    CHECK_THROWS_AS(rig.bank.withdraw(60, 100, 10.0), AccountLockedError);
    rig.bank.withdraw(20, 100, 10.0);  // customers may withdraw
    CHECK(rig.bank.balance(20) == 9900);
}

TEST_CASE("dispute: refund on missing proof, release on valid receipt, late claims fail") {
    Rig rig;

    TransactionOrder o1 = rig.order_for(20, 10, 4000, 1);
    SettlementBundle b1 = rig.bundle_for(o1, {{60, 200}});
    rig.bank.settle(b1, 200.0);

    // claim without proof: refund to the customer, merchant credit reversed
    CHECK(rig.bank.dispute(1, std::nullopt, 300.0) == Bank::DisputeOutcome::Refund);
    CHECK(rig.bank.balance(20) == 6000 + 3880);
    ConservationReport r = rig.bank.conservation();
    CHECK(r.balanced);
    CHECK(r.refunds == 3880);
    CHECK(r.merchant_credits == 0);

    // valid receipt: merchant keeps the money at release time
    TransactionOrder o2 = rig.order_for(20, 10, 2000, 2);
    SettlementBundle b2 = rig.bundle_for(o2, {{60, 200}});
    rig.bank.settle(b2, 400.0);
    CHECK(rig.bank.dispute(2, b2.receipt, 500.0) == Bank::DisputeOutcome::Release);
    rig.bank.release_due_escrows(400.0 + rig.bank.config().dispute_window);
    CHECK(rig.bank.balance(10) > 0);

    // forged receipt does not count as proof
    TransactionOrder o3 = rig.order_for(20, 11, 1000, 3);
    SettlementBundle b3 = rig.bundle_for(o3, {{60, 200}});
    rig.bank.settle(b3, 600.0);
    DeliveryReceipt forged = b3.receipt;
    forged.customer_sig.bytes[0] ^= 1;
    CHECK(rig.bank.dispute(3, forged, 700.0) == Bank::DisputeOutcome::Refund);

    // late claim
    TransactionOrder o4 = rig.order_for(20, 11, 500, 4);
    SettlementBundle b4 = rig.bundle_for(o4, {{60, 200}});
    rig.bank.settle(b4, 800.0);
    CHECK_THROWS_AS(
        rig.bank.dispute(4, std::nullopt, 800.0 + rig.bank.config().dispute_window + 1.0),
        LateClaimError);
    CHECK(rig.bank.conservation().balanced);
}

TEST_CASE("oracle equivalence over 1000 random honest solvent transactions") {
    Bank bank(1);
    Rng rng(123, "oracle");
    bank.register_merchant(10);
    std::vector<EntityId> endorsers{60, 61, 62, 63};
    for (EntityId e : endorsers) bank.register_endorser(e, {}, 3000000, 0, rng);
    std::vector<EntityId> customers;
    for (EntityId c = 20; c < 40; ++c) {
        customers.push_back(c);
        bank.register_customer(c, {endorsers[c % endorsers.size()]}, 100000000, rng);
    }
    bank.disaster_onset(0.0);

    for (int trial = 0; trial < 1000; ++trial) {
        EntityId cust = customers[rng.uniform_int(customers.size())];
        Cents amount = 100 * (1 + static_cast<Cents>(rng.uniform_int(50)));
        const Credentials& creds = bank.credentials(cust);
        TransactionOrder order =
            customer_order(1000 + trial, creds, cust, 10, 1, 7, 1, amount, bank.tree_for(cust),
                           creds.temp_ids.at(trial % 64), 10.0 + trial);

        size_t npledge = 1 + rng.uniform_int(3);
        std::vector<std::pair<EntityId, Cents>> pledges;
        SettlementBundle b;
        b.order = order;
        for (size_t i = 0; i < npledge; ++i) {
            EntityId endorser = endorsers[(trial + i) % endorsers.size()];
            Cents value = 200;
            pledges.push_back({endorser, value});
            AcceptedEndorsement ae;
            ae.covering = true;
            ae.message.endorser_id = endorser;
            ae.message.order_id = order.order_id;
            ae.message.order_digest = order.digest();
            ae.message.endorse_value = value;
            ae.message.endorser_sig = sign(bank.credentials(endorser).keys.priv,
                                           ae.message.signed_payload(), 10.0 + trial);
            b.endorsements.push_back(ae);
        }

        std::vector<Posting> expect = bank.online_settlement_oracle(order, pledges);
        SettlementResult res = bank.settle(b, 10.0 + trial);

        // same postings, order-insensitive
        auto norm = [](std::vector<Posting> v) {
            std::sort(v.begin(), v.end(), [](const Posting& a, const Posting& b) {
                if (a.account != b.account) return a.account < b.account;
                if (a.category != b.category) return a.category < b.category;
                return a.delta < b.delta;
            });
            return v;
        };
        CHECK(norm(expect) == norm(res.postings));
    }
    CHECK(bank.conservation().balanced);
}

TEST_CASE("oracle refuses insolvent customers") {
    Rig rig;
    TransactionOrder order = rig.order_for(21, 10, 200);
    std::vector<std::pair<EntityId, Cents>> pledges{{60, 200}};
    CHECK_THROWS_AS(rig.bank.online_settlement_oracle(order, pledges),
                    InsufficientBalanceError);
}

TEST_CASE("plan_endorsement: fresh chain and clean coins required") {
    Rig rig;
    ChainViewCache cache;
    (void)cache;
    KeyPair m1 = make_keypair(100, "m-100"), m2 = make_keypair(101, "m-101"),
            m3 = make_keypair(102, "m-102");
    auto countersign = [&](EventChain& chain, const Event& ev, SimTime ts) {
        Block b = chain.propose_block(ev, Gps{1, 2}, ts);
        Bytes tuple = b.signing_tuple();
        for (KeyPair* kp : {&m1, &m2, &m3})
            b.monitor_signatures.push_back({kp->pub.owner_id, sign(kp->priv, tuple, ts)});
        chain.append(b, 3, 60.0);
    };

    EndorserWallet wallet;
    for (const ECoin& c : rig.bank.credentials(60).coins) wallet.add(c);

    EventChain chain(60, 3000, 0.01);
    // empty chain has no hello yet: stale
    EndorsePlan p0 = plan_endorsement(wallet, chain, 200, 200, 5.0, 60.0, rig.bank.pub());
    CHECK(p0.refusal == RejectReason::StaleChain);

    Event hello;
    hello.kind = EventKind::Hello;
    countersign(chain, hello, 10.0);
    EndorsePlan p1 = plan_endorsement(wallet, chain, 200, 200, 15.0, 60.0, rig.bank.pub());
    CHECK_FALSE(p1.refusal.has_value());
    CHECK(p1.endorse_value == 200);
    CHECK(p1.coins.size() == 1);

    // chain stale after the window passes
    EndorsePlan p2 = plan_endorsement(wallet, chain, 200, 200, 80.0, 60.0, rig.bank.pub());
    CHECK(p2.refusal == RejectReason::StaleChain);

    // a coin flagged in the spent filter is skipped; wallet with only that
    // coin cannot cover
    Event spend;
    spend.kind = EventKind::Spend;
    spend.records.push_back({wallet.coins.front().coin_id, 200, 10});
    countersign(chain, spend, 70.0);
    EndorserWallet only_spent;
    only_spent.add(wallet.coins.front());
    EndorsePlan p3 = plan_endorsement(only_spent, chain, 200, 200, 75.0, 60.0, rig.bank.pub());
    CHECK(p3.refusal == RejectReason::InsufficientCover);
}

TEST_CASE("location similarity thresholds") {
    std::vector<GpsSample> a, b, far, sparse;
    for (int i = 0; i < 30; ++i) {
        double t = 10.0 * i;
        a.push_back({t, {100.0, 100.0}});
        b.push_back({t, {104.0, 103.0}});   // 5 m away: similar
        far.push_back({t, {100.0 + (i % 10 < 3 ? 2.0 : 50.0), 100.0}});  // 30% close
    }
    sparse = {a[0], a[1]};
    CHECK(location_similar(a, b, 10.0, 0.9, 12));
    CHECK_FALSE(location_similar(a, far, 10.0, 0.9, 12));
    CHECK_FALSE(location_similar(a, sparse, 10.0, 0.9, 12));  // too few shared samples
}

TEST_CASE("monitor countersigning: participants, similarity, forks, replays") {
    Rig rig;
    KeyPair mon = make_keypair(100, "m-100");
    std::vector<GpsSample> mon_hist, end_hist;
    for (int i = 0; i < 30; ++i) {
        mon_hist.push_back({10.0 * i, {50.0, 50.0}});
        end_hist.push_back({10.0 * i, {500.0, 700.0}});
    }
    MonitorMemory memory;

    EventChain chain(60, 3000, 0.01);
    Event spend;
    spend.kind = EventKind::Spend;
    spend.records.push_back({7001, 200, 10});
    Block proposal = chain.propose_block(spend, Gps{1, 2}, 50.0);

    // participant in the transaction cannot countersign
    MonitorDecision self = monitor_countersign(mon.priv, 100, proposal, 0, 100, 20, 10,
                                               mon_hist, end_hist, memory, 10.0, 0.9, 12, 50.0);
    CHECK(self.refusal == RejectReason::InsufficientQuorum);

    // similar location history is disqualifying
    MonitorDecision sim = monitor_countersign(mon.priv, 100, proposal, 0, 60, 20, 10, end_hist,
                                              end_hist, memory, 10.0, 0.9, 12, 50.0);
    CHECK(sim.refusal == RejectReason::SimilarLocation);

    // honest countersign updates the memory
    MonitorDecision ok = monitor_countersign(mon.priv, 100, proposal, 0, 60, 20, 10, mon_hist,
                                             end_hist, memory, 10.0, 0.9, 12, 50.0);
    CHECK_FALSE(ok.refusal.has_value());
    CHECK(verify(mon.pub, proposal.signing_tuple(), ok.signature, 50.0));

    // replaying the same coin in a fresh proposal is a double spend
    Block replay = chain.propose_block(spend, Gps{1, 2}, 60.0);
    MonitorDecision ds = monitor_countersign(mon.priv, 100, replay, 0, 60, 20, 10, mon_hist,
                                             end_hist, memory, 10.0, 0.9, 12, 60.0);
    CHECK(ds.refusal == RejectReason::DoubleSpend);

    // a rolled-back chain (same index, different prev hash) is refused
    Event other;
    other.kind = EventKind::Spend;
    other.records.push_back({7002, 200, 10});
    Block fork = chain.propose_block(other, Gps{1, 2}, 61.0);
    fork.prev_hash[3] ^= 9;
    MonitorDecision rb = monitor_countersign(mon.priv, 100, fork, 0, 60, 20, 10, mon_hist,
                                             end_hist, memory, 10.0, 0.9, 12, 61.0);
    CHECK(rb.refusal == RejectReason::StaleChain);
}
