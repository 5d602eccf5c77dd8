#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>

#include "manetpay/crypto.hpp"

using namespace mpay;

TEST_CASE("sha256 known vectors") {
    CHECK(to_hex(sha256(Bytes{})) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(to_hex(sha256(str_bytes("abc"))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    // multi-block input
    CHECK(to_hex(sha256(str_bytes(
              "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"))) ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("sha256 deterministic and avalanche") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        Bytes data(1 + trial % 97);
        for (auto& b : data) b = static_cast<uint8_t>(rng());
        Digest d1 = sha256(data);
        CHECK(sha256(data) == d1);
        Bytes flipped = data;
        size_t bit = rng() % (data.size() * 8);
        flipped[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
        CHECK(sha256(flipped) != d1);
    }
}

TEST_CASE("sign and verify round trip") {
    KeyPair kp = make_keypair(1, "alice");
    Bytes msg = str_bytes("pay 40 to merchant 9");
    Signature sig = sign(kp.priv, msg);
    CHECK(sig.bytes.size() == wire::kSignatureBytes);
    CHECK(verify(kp.pub, msg, sig));

    KeyPair other = make_keypair(2, "bob");
    CHECK_FALSE(verify(other.pub, msg, sig));
}

TEST_CASE("verify fails on mutated messages") {
    KeyPair kp = make_keypair(3, "carol");
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        Bytes msg(16 + trial % 32);
        for (auto& b : msg) b = static_cast<uint8_t>(rng());
        Signature sig = sign(kp.priv, msg);
        Bytes mutated = msg;
        mutated[rng() % mutated.size()] ^= 0x40;
        CHECK_FALSE(verify(kp.pub, mutated, sig));
    }
}

TEST_CASE("expired keys refuse to sign and verify") {
    KeyPair kp = make_keypair(4, "dave", 100.0);
    Bytes msg = str_bytes("x");
    Signature sig = sign(kp.priv, msg, 50.0);
    CHECK(verify(kp.pub, msg, sig, 99.0));
    CHECK_FALSE(verify(kp.pub, msg, sig, 101.0));
    CHECK_THROWS_AS(sign(kp.priv, msg, 101.0), ExpiredKeyError);
}

TEST_CASE("unforgeability proxy: random signatures never verify") {
    KeyPair kp = make_keypair(5, "eve-target");
    Bytes msg = str_bytes("coin transfer");
    std::mt19937_64 rng(13);
    int hits = 0;
    for (int i = 0; i < 10000; ++i) {
        Signature guess;
        guess.signer_id = kp.pub.owner_id;
        for (auto& b : guess.bytes) b = static_cast<uint8_t>(rng());
        if (verify(kp.pub, msg, guess)) ++hits;
    }
    CHECK(hits == 0);
}

TEST_CASE("blind signature round trip, default parameters") {
    BlindKeyPair bank = make_blind_keypair(1);
    uint64_t msg = 998877;  // e.g. hash of "tempID-1" reduced into the group
    BlindingFactor r{123456789};
    uint64_t blinded = blind(msg, r, bank.params);
    BlindSignature s = unblind(sign_blinded(bank, blinded), r, bank.params);
    CHECK(verify_blind(bank.params, msg, s));

    BlindingFactor wrong{987654321};
    BlindSignature bad = unblind(sign_blinded(bank, blinded), wrong, bank.params);
    CHECK_FALSE(verify_blind(bank.params, msg, bad));
}

TEST_CASE("blind signature toy transcript") {
    // p=101, e=7, d=43, m=11, r=2; worked out by hand with modular arithmetic.
    BlindParams params{101, 7};
    BlindKeyPair key = make_blind_keypair(9, params);
    CHECK(key.d == 43);
    BlindingFactor r{2};
    uint64_t blinded = blind(11, r, params);
    CHECK(blinded == 95);
    BlindSignature sb = sign_blinded(key, blinded);
    CHECK(sb.value == 87);
    BlindSignature sig = unblind(sb, r, params);
    CHECK(sig.value == 94);
    CHECK(verify_blind(params, 11, sig));
    CHECK(sign_blinded(key, 11).value == 94);  // direct signature matches
}

TEST_CASE("blindness: blinded values of any two messages cover the same set") {
    // Exhaustive over all blinding factors at toy size: for fixed m the map
    // r -> blind(m, r) is a bijection onto Z_p^*, independent of m.
    BlindParams params{101, 7};
    for (uint64_t m : {3ull, 42ull, 99ull}) {
        std::map<uint64_t, int> seen;
        for (uint64_t r = 1; r < params.p; ++r)
            seen[blind(m, BlindingFactor{r}, params)]++;
        CHECK(seen.size() == params.p - 1);
        for (auto& [v, count] : seen) CHECK(count == 1);
    }
}

TEST_CASE("blinding factor must be invertible") {
    BlindParams params{101, 7};
    CHECK_THROWS_AS(blind(5, BlindingFactor{0}, params), InvalidBlindingFactorError);
    CHECK_THROWS_AS(blind(5, BlindingFactor{202}, params), InvalidBlindingFactorError);
}

TEST_CASE("signed photo verifies and rejects tampering") {
    KeyPair bank = make_keypair(1, "bank");
    KeyPair cust = make_keypair(20, "customer-20");
    Bytes photo = str_bytes("jpeg-bytes-of-customer-20");
    SignedPhoto p = issue_signed_photo(bank.priv, cust.priv, photo, 5.0);

    CHECK(verify_signed_photo(p, bank.pub, cust.pub, photo, 10.0));

    Bytes altered = photo;
    altered[3] ^= 1;
    CHECK_FALSE(verify_signed_photo(p, bank.pub, cust.pub, altered, 10.0));

    KeyPair other_bank = make_keypair(2, "other-bank");
    SignedPhoto forged = issue_signed_photo(other_bank.priv, cust.priv, photo, 5.0);
    CHECK_FALSE(verify_signed_photo(forged, bank.pub, cust.pub, photo, 10.0));

    // issuance timestamp in the future is refused
    SignedPhoto early = issue_signed_photo(bank.priv, cust.priv, photo, 50.0);
    CHECK_FALSE(verify_signed_photo(early, bank.pub, cust.pub, photo, 10.0));
}
