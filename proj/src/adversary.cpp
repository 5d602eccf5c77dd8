#include "manetpay/adversary.hpp"

namespace mpay {

const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::DoubleSpend: return "double-spend";
        case AttackKind::ResetRecovery: return "reset-recovery";
        case AttackKind::Impersonation: return "impersonation";
        case AttackKind::StolenPhoneColocation: return "stolen-phone-colocation";
        case AttackKind::ColludeCustomerEndorser: return "collude-customer-endorser";
        case AttackKind::ColludeCustomerMerchant: return "collude-customer-merchant";
        case AttackKind::ColludeMonitors: return "collude-monitors";
        case AttackKind::ForgedCoin: return "forged-coin";
    }
    return "unknown";
}

std::optional<AttackKind> attack_kind_from_name(const std::string& name) {
    for (AttackKind k :
         {AttackKind::DoubleSpend, AttackKind::ResetRecovery, AttackKind::Impersonation,
          AttackKind::StolenPhoneColocation, AttackKind::ColludeCustomerEndorser,
          AttackKind::ColludeCustomerMerchant, AttackKind::ColludeMonitors,
          AttackKind::ForgedCoin})
        if (name == attack_kind_name(k)) return k;
    return std::nullopt;
}

ExpectedOutcome expected_outcome(AttackKind kind) {
    switch (kind) {
        case AttackKind::DoubleSpend:
            return {false, RejectReason::DoubleSpend, "event chain + spent-coin filter"};
        case AttackKind::ResetRecovery:
            return {false, RejectReason::StaleChain, "chain staleness / head hash mismatch"};
        case AttackKind::Impersonation:
            return {false, RejectReason::BadCredential, "signed-photo verification"};
        case AttackKind::StolenPhoneColocation:
            return {false, RejectReason::SimilarLocation, "location-history monitoring"};
        case AttackKind::ColludeCustomerEndorser:
            return {false, RejectReason::InsufficientCover, "e-coin balance check"};
        case AttackKind::ColludeCustomerMerchant:
            return {true, RejectReason::BadCredential, "none: undetectable by design"};
        case AttackKind::ColludeMonitors:
            return {false, RejectReason::InsufficientQuorum, "distinct-monitor quorum"};
        case AttackKind::ForgedCoin:
            return {false, RejectReason::BadCredential, "bank signature on the coin"};
    }
    return {};
}

bool attack_outcome_matches(const AttackAttempt& attempt) {
    ExpectedOutcome want = expected_outcome(attempt.kind);
    if (want.undetectable) return attempt.completed;
    if (attempt.completed) return false;
    return attempt.reason.has_value() && *attempt.reason == want.reason;
}

}  // namespace mpay
