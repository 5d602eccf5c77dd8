#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "manetpay/bytes.hpp"

namespace mpay {

using EntityId = uint32_t;
using SimTime = double;  // seconds of simulated time

inline constexpr SimTime kNeverExpires = std::numeric_limits<double>::infinity();

Digest sha256(const uint8_t* data, size_t n);
Digest sha256(const Bytes& b);
Digest sha256(const Digest& d);
Digest sha256_concat(const Digest& a, const Digest& b);

// Desk-scale signature scheme: signatures are keyed hashes over the message,
// expanded to a fixed 64-byte width. The verification key carries the same
// keying material as the signing key; the simulator's threat model never
// hands one node another node's keys. Not cryptography, by construction.

struct Signature {
    std::array<uint8_t, wire::kSignatureBytes> bytes{};
    EntityId signer_id = 0;

    bool operator==(const Signature&) const = default;
};

struct PublicKey {
    EntityId owner_id = 0;
    SimTime expiry = kNeverExpires;
    Digest material{};
};

struct PrivateKey {
    EntityId owner_id = 0;
    SimTime expiry = kNeverExpires;
    Digest material{};
};

struct KeyPair {
    PublicKey pub;
    PrivateKey priv;
};

class ExpiredKeyError : public std::runtime_error {
public:
    ExpiredKeyError() : std::runtime_error("signing key expired") {}
};

// Deterministic keygen from a seed label; distinct labels give distinct keys.
KeyPair make_keypair(EntityId owner, const std::string& seed_label,
                     SimTime expiry = kNeverExpires);

Signature sign(const PrivateKey& key, const uint8_t* msg, size_t n, SimTime now = 0.0);
Signature sign(const PrivateKey& key, const Bytes& msg, SimTime now = 0.0);
bool verify(const PublicKey& key, const uint8_t* msg, size_t n, const Signature& sig,
            SimTime now = 0.0);
bool verify(const PublicKey& key, const Bytes& msg, const Signature& sig, SimTime now = 0.0);

// Blind signature over a prime modulus p with public exponent e and private
// exponent d = e^-1 mod (p-1). Blinding multiplies by r^e, so for any fixed
// message the blinded value is uniform over the group when r is uniform.

struct BlindParams {
    uint64_t p = 2147483647;  // 2^31 - 1
    uint64_t e = 65537;
};

struct BlindKeyPair {
    BlindParams params;
    uint64_t d = 0;  // private exponent
    EntityId owner_id = 0;
};

struct BlindingFactor {
    uint64_t value = 0;
};

struct BlindSignature {
    uint64_t value = 0;
    EntityId signer_id = 0;
    bool operator==(const BlindSignature&) const = default;
};

class InvalidBlindingFactorError : public std::runtime_error {
public:
    InvalidBlindingFactorError() : std::runtime_error("blinding factor not invertible") {}
};

BlindKeyPair make_blind_keypair(EntityId owner, BlindParams params = {});

uint64_t mod_pow(uint64_t base, uint64_t exp, uint64_t mod);
uint64_t mod_inverse(uint64_t a, uint64_t mod);

uint64_t blind(uint64_t msg, const BlindingFactor& r, const BlindParams& params);
BlindSignature sign_blinded(const BlindKeyPair& key, uint64_t blinded_msg);
BlindSignature unblind(const BlindSignature& s, const BlindingFactor& r,
                       const BlindParams& params);
bool verify_blind(const BlindParams& params, uint64_t msg, const BlindSignature& sig);

// Bank-countersigned credential photo. Both parties sign over the photo
// digest and the issuance timestamp.

struct SignedPhoto {
    Digest photo_digest{};
    Signature bank_signature;
    Signature customer_signature;
    SimTime timestamp = 0.0;
};

SignedPhoto issue_signed_photo(const PrivateKey& bank_key, const PrivateKey& customer_key,
                               const Bytes& photo, SimTime now);
bool verify_signed_photo(const SignedPhoto& p, const PublicKey& bank_pub,
                         const PublicKey& customer_pub, const Bytes& presented_photo,
                         SimTime now);

}  // namespace mpay
