#pragma once

#include "gkm/auditor.hpp"
#include "gkm/costmodel.hpp"
#include "gkm/trace.hpp"
#include "gkm/transport.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gkm {

struct RunChecks {
    bool bounds = true;
    bool agreement = true;
    bool secrecy = true;
    bool collusion = true;
    bool access = true;
    bool keep_transcript = false; // record the transcript even when no audit check needs it

    static RunChecks parse(const std::string& csv); // "bounds,secrecy,..." or "all" / "none"
};

struct EventRecord {
    Seq seq = 0;
    EventType type = EventType::Setup;
    MessageCounts counts;
    std::optional<CommCost> bound;
    bool bounds_ok = true;
    bool agreement_ok = true;
    std::string detail;
};

struct RunReport {
    std::vector<EventRecord> events;
    std::vector<Verdict> verdicts;
    std::vector<std::string> failures;
    double wall_ms = 0;
    TranscriptLog transcript;

    bool ok() const { return failures.empty(); }
    std::string to_text() const;
};

// Empty when `c` respects the bound: per kind, with unicasts allowed to use spare multicast budget.
std::string check_bounds(const MessageCounts& c, const CommCost& bound);

// Empty when every live endpoint matches the KDC projection and respects the storage bounds.
std::string check_agreement(const Kdc& kdc, const Bus& bus);

RunReport run_trace(const TraceFile& trace, const RunChecks& checks, const AuditOptions& audit = {});

// Re-checks an exported transcript: replay must succeed, then the auditor runs.
RunReport audit_transcript(const TranscriptLog& log, const RunChecks& checks, const AuditOptions& audit = {});

} // namespace gkm
