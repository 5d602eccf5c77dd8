#pragma once

#include <map>
#include <string>
#include <vector>

#include "manetpay/protocol.hpp"

namespace mpay {

class NoTransactionsError : public std::runtime_error {
public:
    NoTransactionsError() : std::runtime_error("no transactions to compute metric over") {}
};

struct BinCounters {
    uint64_t orders_received = 0;
    uint64_t completions = 0;
    uint64_t rejected_transactions = 0;
    uint64_t rejected_endorsements = 0;
    bool operator==(const BinCounters&) const = default;
};

// Per-run counters. Everything here is recomputable from the transcript.
struct MetricsRecord {
    uint64_t orders_initiated = 0;
    uint64_t orders_received = 0;
    uint64_t completions = 0;
    uint64_t rejected_transactions = 0;
    uint64_t expired_transactions = 0;
    uint64_t accepted_endorsements = 0;
    uint64_t rejected_endorsements = 0;
    uint64_t surplus_endorsements = 0;
    std::map<std::string, uint64_t> transaction_reject_reasons;
    std::map<std::string, uint64_t> endorsement_reject_reasons;

    std::map<std::string, uint64_t> bytes_sent_by_role;
    std::map<std::string, uint64_t> bytes_received_by_role;
    uint64_t merchant_validation_bytes = 0;  // chain payloads + secondary billing

    std::vector<double> completion_times;

    std::map<EntityId, std::pair<uint64_t, uint64_t>> chain_sizes;  // owner -> full, light

    double bin_seconds = 1800.0;
    std::vector<BinCounters> bins;  // cumulative counters at each bin close

    bool operator==(const MetricsRecord&) const = default;
};

double compute_tcr(const MetricsRecord& m);  // NoTransactionsError when nothing received
double compute_vr(const MetricsRecord& m);   // 1.0 when nothing was rejected
uint64_t merchant_message_size(const MetricsRecord& m);

struct CompletionStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    size_t count = 0;
};
CompletionStats completion_time_stats(const MetricsRecord& m);  // NoTransactionsError

// ----------------------------------------------------------------- CSV

class CsvError : public std::runtime_error {
public:
    explicit CsvError(const std::string& m) : std::runtime_error(m) {}
};

// Cells must not contain commas, quotes or newlines; parse(emit(t)) == t.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    bool operator==(const CsvTable&) const = default;
};

std::string csv_emit(const CsvTable& t);
CsvTable csv_parse(const std::string& text);

}  // namespace mpay
