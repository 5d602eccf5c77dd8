#include "manetpay/crypto.hpp"

namespace mpay {

// ---------------------------------------------------------------- SHA-256

namespace {

constexpr uint32_t kSha256K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline uint32_t rotr(uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

struct Sha256Ctx {
    uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    uint64_t total = 0;
    uint8_t block[64];
    size_t fill = 0;

    void compress(const uint8_t* p) {
        uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = uint32_t(p[4 * i]) << 24 | uint32_t(p[4 * i + 1]) << 16 |
                   uint32_t(p[4 * i + 2]) << 8 | uint32_t(p[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
        uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int i = 0; i < 64; ++i) {
            uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            uint32_t ch = (e & f) ^ (~e & g);
            uint32_t t1 = hh + s1 + ch + kSha256K[i] + w[i];
            uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            uint32_t t2 = s0 + maj;
            hh = g; g = f; f = e; e = d + t1;
            d = c; c = b; b = a; a = t1 + t2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }

    void update(const uint8_t* data, size_t n) {
        total += n;
        while (n > 0) {
            size_t take = std::min(n, 64 - fill);
            std::memcpy(block + fill, data, take);
            fill += take;
            data += take;
            n -= take;
            if (fill == 64) {
                compress(block);
                fill = 0;
            }
        }
    }

    Digest finish() {
        uint64_t bits = total * 8;
        uint8_t pad = 0x80;
        update(&pad, 1);
        uint8_t zero = 0;
        while (fill != 56) update(&zero, 1);
        uint8_t len[8];
        for (int i = 0; i < 8; ++i) len[i] = static_cast<uint8_t>(bits >> (56 - 8 * i));
        update(len, 8);
        Digest out;
        for (int i = 0; i < 8; ++i) {
            out[4 * i] = static_cast<uint8_t>(h[i] >> 24);
            out[4 * i + 1] = static_cast<uint8_t>(h[i] >> 16);
            out[4 * i + 2] = static_cast<uint8_t>(h[i] >> 8);
            out[4 * i + 3] = static_cast<uint8_t>(h[i]);
        }
        return out;
    }
};

}  // namespace

Digest sha256(const uint8_t* data, size_t n) {
    Sha256Ctx ctx;
    ctx.update(data, n);
    return ctx.finish();
}

Digest sha256(const Bytes& b) { return sha256(b.data(), b.size()); }
Digest sha256(const Digest& d) { return sha256(d.data(), d.size()); }

Digest sha256_concat(const Digest& a, const Digest& b) {
    Sha256Ctx ctx;
    ctx.update(a.data(), a.size());
    ctx.update(b.data(), b.size());
    return ctx.finish();
}

// ------------------------------------------------------------- signatures

KeyPair make_keypair(EntityId owner, const std::string& seed_label, SimTime expiry) {
    ByteWriter w;
    w.u32(owner);
    w.str(seed_label);
    Digest material = sha256(w.bytes());
    KeyPair kp;
    kp.priv = PrivateKey{owner, expiry, material};
    kp.pub = PublicKey{owner, expiry, material};
    return kp;
}

static Signature keyed_signature(const Digest& material, EntityId signer,
                                 const uint8_t* msg, size_t n) {
    Sha256Ctx a;
    uint8_t tag_a = 0x01;
    a.update(material.data(), material.size());
    a.update(&tag_a, 1);
    a.update(msg, n);
    Digest half_a = a.finish();

    Sha256Ctx b;
    uint8_t tag_b = 0x02;
    b.update(material.data(), material.size());
    b.update(&tag_b, 1);
    b.update(msg, n);
    Digest half_b = b.finish();

    Signature sig;
    sig.signer_id = signer;
    std::memcpy(sig.bytes.data(), half_a.data(), 32);
    std::memcpy(sig.bytes.data() + 32, half_b.data(), 32);
    return sig;
}

Signature sign(const PrivateKey& key, const uint8_t* msg, size_t n, SimTime now) {
    if (now > key.expiry) throw ExpiredKeyError();
    return keyed_signature(key.material, key.owner_id, msg, n);
}

Signature sign(const PrivateKey& key, const Bytes& msg, SimTime now) {
    return sign(key, msg.data(), msg.size(), now);
}

bool verify(const PublicKey& key, const uint8_t* msg, size_t n, const Signature& sig,
            SimTime now) {
    if (now > key.expiry) return false;
    if (sig.signer_id != key.owner_id) return false;
    Signature expect = keyed_signature(key.material, key.owner_id, msg, n);
    return expect.bytes == sig.bytes;
}

bool verify(const PublicKey& key, const Bytes& msg, const Signature& sig, SimTime now) {
    return verify(key, msg.data(), msg.size(), sig, now);
}

// -------------------------------------------------------- blind signature

uint64_t mod_pow(uint64_t base, uint64_t exp, uint64_t mod) {
    unsigned __int128 acc = 1;
    unsigned __int128 b = base % mod;
    while (exp > 0) {
        if (exp & 1) acc = acc * b % mod;
        b = b * b % mod;
        exp >>= 1;
    }
    return static_cast<uint64_t>(acc);
}

uint64_t mod_inverse(uint64_t a, uint64_t mod) {
    // extended euclid; throws if gcd != 1
    int64_t t = 0, new_t = 1;
    int64_t r = static_cast<int64_t>(mod), new_r = static_cast<int64_t>(a % mod);
    while (new_r != 0) {
        int64_t q = r / new_r;
        int64_t tmp = t - q * new_t;
        t = new_t; new_t = tmp;
        tmp = r - q * new_r;
        r = new_r; new_r = tmp;
    }
    if (r != 1) throw std::runtime_error("no modular inverse");
    if (t < 0) t += static_cast<int64_t>(mod);
    return static_cast<uint64_t>(t);
}

BlindKeyPair make_blind_keypair(EntityId owner, BlindParams params) {
    BlindKeyPair kp;
    kp.params = params;
    kp.owner_id = owner;
    kp.d = mod_inverse(params.e, params.p - 1);
    return kp;
}

static void check_factor(uint64_t r, const BlindParams& params) {
    if (r % params.p == 0) throw InvalidBlindingFactorError();
}

uint64_t blind(uint64_t msg, const BlindingFactor& r, const BlindParams& params) {
    check_factor(r.value, params);
    unsigned __int128 m = msg % params.p;
    return static_cast<uint64_t>(m * mod_pow(r.value, params.e, params.p) % params.p);
}

BlindSignature sign_blinded(const BlindKeyPair& key, uint64_t blinded_msg) {
    return BlindSignature{mod_pow(blinded_msg, key.d, key.params.p), key.owner_id};
}

BlindSignature unblind(const BlindSignature& s, const BlindingFactor& r,
                       const BlindParams& params) {
    check_factor(r.value, params);
    unsigned __int128 v = s.value % params.p;
    uint64_t inv = mod_inverse(r.value % params.p, params.p);
    return BlindSignature{static_cast<uint64_t>(v * inv % params.p), s.signer_id};
}

bool verify_blind(const BlindParams& params, uint64_t msg, const BlindSignature& sig) {
    return mod_pow(sig.value, params.e, params.p) == msg % params.p;
}

// ------------------------------------------------------------ signed photo

static Bytes photo_message(const Digest& digest, SimTime ts) {
    ByteWriter w;
    w.digest(digest);
    w.u64(static_cast<uint64_t>(ts * 1e6));
    return w.take();
}

SignedPhoto issue_signed_photo(const PrivateKey& bank_key, const PrivateKey& customer_key,
                               const Bytes& photo, SimTime now) {
    SignedPhoto p;
    p.photo_digest = sha256(photo);
    p.timestamp = now;
    Bytes msg = photo_message(p.photo_digest, now);
    p.bank_signature = sign(bank_key, msg, now);
    p.customer_signature = sign(customer_key, msg, now);
    return p;
}

bool verify_signed_photo(const SignedPhoto& p, const PublicKey& bank_pub,
                         const PublicKey& customer_pub, const Bytes& presented_photo,
                         SimTime now) {
    if (p.timestamp > now) return false;
    if (sha256(presented_photo) != p.photo_digest) return false;
    Bytes msg = photo_message(p.photo_digest, p.timestamp);
    return verify(bank_pub, msg, p.bank_signature, now) &&
           verify(customer_pub, msg, p.customer_signature, now);
}

}  // namespace mpay
