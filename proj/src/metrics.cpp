#include "manetpay/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "manetpay/sim.hpp"

namespace mpay {

double compute_tcr(const MetricsRecord& m) {
    if (m.orders_received == 0) throw NoTransactionsError();
    return static_cast<double>(m.completions) / static_cast<double>(m.orders_received);
}

double compute_vr(const MetricsRecord& m) {
    if (m.rejected_endorsements == 0) return 1.0;
    return 1.0 - static_cast<double>(m.rejected_transactions) /
                     static_cast<double>(m.rejected_endorsements);
}

uint64_t merchant_message_size(const MetricsRecord& m) { return m.merchant_validation_bytes; }

CompletionStats completion_time_stats(const MetricsRecord& m) {
    if (m.completion_times.empty()) throw NoTransactionsError();
    CompletionStats s;
    s.count = m.completion_times.size();
    s.min = m.completion_times.front();
    s.max = m.completion_times.front();
    double sum = 0.0;
    for (double t : m.completion_times) {
        sum += t;
        s.min = std::min(s.min, t);
        s.max = std::max(s.max, t);
    }
    s.mean = sum / static_cast<double>(s.count);
    return s;
}

// --------------------------------------------------------------------- CSV

static void check_cell(const std::string& cell) {
    for (char c : cell)
        if (c == ',' || c == '"' || c == '\n' || c == '\r')
            throw CsvError("cell contains a reserved character: " + cell);
}

std::string csv_emit(const CsvTable& t) {
    std::ostringstream out;
    auto row_out = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            check_cell(row[i]);
            if (i > 0) out << ',';
            out << row[i];
        }
        out << '\n';
    };
    row_out(t.header);
    for (const auto& row : t.rows) {
        if (row.size() != t.header.size()) throw CsvError("row width mismatch");
        row_out(row);
    }
    return out.str();
}

CsvTable csv_parse(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (line.empty()) cells.clear();
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (first) {
            t.header = cells;
            first = false;
        } else {
            if (cells.size() != t.header.size()) throw CsvError("row width mismatch");
            t.rows.push_back(cells);
        }
    }
    if (first) throw CsvError("empty csv");
    return t;
}

// ------------------------------------------------- transcript -> metrics

namespace {

// minimal token scanner for "key=value" fields on transcript lines
std::map<std::string, std::string> fields(const std::string& line) {
    std::map<std::string, std::string> out;
    std::istringstream in(line);
    std::string tok;
    in >> tok;  // line kind
    while (in >> tok) {
        size_t eq = tok.find('=');
        if (eq == std::string::npos) continue;
        out[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return out;
}

}  // namespace

MetricsRecord metrics_from_transcript(const std::string& transcript) {
    MetricsRecord m;
    std::istringstream in(transcript);
    std::string line;
    std::map<EntityId, std::string> role_of;
    auto bin_bump = [&](double t, uint64_t BinCounters::*field) {
        size_t bin = static_cast<size_t>(t / m.bin_seconds);
        if (bin >= m.bins.size()) m.bins.resize(bin + 1);
        m.bins[bin].*field += 1;
    };
    double end_t = 0.0;
    while (std::getline(in, line)) {
        if (line.rfind("NODE ", 0) == 0) {
            auto f = fields(line);
            role_of[static_cast<EntityId>(std::stoul(f["id"]))] = f["role"];
        } else if (line.rfind("MSG ", 0) == 0) {
            auto f = fields(line);
            uint64_t bytes = std::stoull(f["bytes"]);
            uint64_t mbytes = std::stoull(f["mbytes"]);
            if (f["rf"] != "-") m.bytes_sent_by_role[f["rf"]] += bytes;
            if (f.count("rt") && f["rt"] != "-" && f["to"] != "*")
                m.bytes_received_by_role[f["rt"]] += bytes;
            else if (f.count("rt") && f["rt"] != "-" && f["kind"] == "hello-ring")
                m.bytes_received_by_role[f["rt"]] += bytes;
            m.merchant_validation_bytes += mbytes;
        } else if (line.rfind("TX ", 0) == 0) {
            auto f = fields(line);
            double t = std::stod(f["t"]);
            const std::string& ev = f["ev"];
            if (ev == "initiated") {
                m.orders_initiated += 1;
            } else if (ev == "received") {
                m.orders_received += 1;
                bin_bump(t, &BinCounters::orders_received);
            } else if (ev == "accepted") {
                m.completions += 1;
                bin_bump(t, &BinCounters::completions);
                m.completion_times.push_back(std::stod(f["dt"]));
            } else if (ev == "rejected") {
                m.rejected_transactions += 1;
                bin_bump(t, &BinCounters::rejected_transactions);
                m.transaction_reject_reasons[f["reason"]] += 1;
            } else if (ev == "expired") {
                m.expired_transactions += 1;
            }
        } else if (line.rfind("ENDORSE ", 0) == 0) {
            auto f = fields(line);
            double t = std::stod(f["t"]);
            const std::string& ev = f["ev"];
            if (ev == "refused" || ev == "rejected") {
                m.rejected_endorsements += 1;
                bin_bump(t, &BinCounters::rejected_endorsements);
                m.endorsement_reject_reasons[f["reason"]] += 1;
            } else if (ev == "accepted") {
                m.accepted_endorsements += 1;
            } else if (ev == "surplus") {
                m.surplus_endorsements += 1;
            }
        } else if (line.rfind("CHAIN ", 0) == 0) {
            auto f = fields(line);
            m.chain_sizes[static_cast<EntityId>(std::stoul(f["owner"]))] = {
                std::stoull(f["full"]), std::stoull(f["light"])};
        } else if (line.rfind("END ", 0) == 0) {
            auto f = fields(line);
            end_t = std::stod(f["t"]);
        }
    }
    size_t needed = static_cast<size_t>(end_t / m.bin_seconds);
    if (m.bins.size() < needed) m.bins.resize(needed);
    for (size_t i = 1; i < m.bins.size(); ++i) {
        m.bins[i].orders_received += m.bins[i - 1].orders_received;
        m.bins[i].completions += m.bins[i - 1].completions;
        m.bins[i].rejected_transactions += m.bins[i - 1].rejected_transactions;
        m.bins[i].rejected_endorsements += m.bins[i - 1].rejected_endorsements;
    }
    return m;
}

}  // namespace mpay
