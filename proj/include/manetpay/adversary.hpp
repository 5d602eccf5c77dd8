#pragma once

#include <optional>
#include <string>
#include <vector>

#include "manetpay/protocol.hpp"

namespace mpay {

enum class AttackKind : uint8_t {
    DoubleSpend,
    ResetRecovery,
    Impersonation,
    StolenPhoneColocation,
    ColludeCustomerEndorser,
    ColludeCustomerMerchant,
    ColludeMonitors,
    ForgedCoin,
};
const char* attack_kind_name(AttackKind k);
std::optional<AttackKind> attack_kind_from_name(const std::string& name);

class InvalidScriptError : public std::runtime_error {
public:
    explicit InvalidScriptError(const std::string& m) : std::runtime_error(m) {}
};

// Deterministic misbehavior script. Actors left at zero are resolved against
// the scenario's population when the simulation is set up.
struct AttackScript {
    AttackKind kind = AttackKind::DoubleSpend;
    SimTime trigger_s = 600.0;
    size_t colluding_parties = 2;  // ColludeMonitors: compromised monitor count
    EntityId customer = 0;
    EntityId endorser = 0;
    EntityId merchant = 0;
    EntityId second_merchant = 0;          // DoubleSpend
    std::vector<EntityId> stolen_phones;   // StolenPhoneColocation
    std::vector<EntityId> monitors;        // ColludeMonitors
};

struct ExpectedOutcome {
    bool undetectable = false;
    RejectReason reason = RejectReason::BadCredential;  // unset when undetectable
    const char* defense = "";
};

// The defense each attack is expected to run into.
ExpectedOutcome expected_outcome(AttackKind kind);

// What actually happened to a scripted attack in one run.
struct AttackAttempt {
    AttackKind kind{};
    SimTime t = 0.0;
    bool completed = false;
    std::optional<RejectReason> reason;
};

// True iff the attempt matches the expected mapping for its kind.
bool attack_outcome_matches(const AttackAttempt& attempt);

}  // namespace mpay
