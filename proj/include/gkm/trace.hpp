#pragma once

#include "gkm/kdc.hpp"

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gkm {

struct TraceEvent {
    EventType type = EventType::UserJoin;
    UserId user = 0;
    SgId sg = 0;
    DeviceId device = 0;
    DgId dg = 0;
    std::vector<DeviceId> devices;                 // dg_join
    std::optional<std::set<DgId>> subs;            // user_join_empty_sg into an unregistered SG
    std::map<SgId, std::set<UserId>> opt_in;       // dg_join: users that subscribe
    std::vector<std::pair<SgId, SgId>> merges;     // dg_leave
};

struct TraceFile {
    std::uint64_t seed = 1;
    Faults faults;
    Topology topology;
    std::vector<TraceEvent> events;
};

class TraceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string trace_to_text(const TraceFile& t);
TraceFile trace_from_text(const std::string& text);
TraceFile read_trace(const std::string& path);
void write_trace(const TraceFile& t, const std::string& path);

// Applies one trace event to the KDC.
EventOutcome apply_event(Kdc& kdc, const TraceEvent& e);

// Event kinds in generator order (everything but setup).
inline constexpr std::array<EventType, 8> kGenEventTypes = {
    EventType::UserJoin,        EventType::UserLeave,         EventType::DeviceJoin, EventType::DeviceLeave,
    EventType::UserJoinEmptySg, EventType::UserLeaveLastSpot, EventType::DgJoin,     EventType::DgLeave,
};

struct GenConfig {
    std::uint64_t seed = 1;
    std::size_t length = 200;
    std::size_t dgs = 3;          // initial P
    std::size_t max_dgs = 6;      // P never exceeds this
    std::size_t max_users = 32;   // per SG
    std::size_t max_devices = 16; // per DG
    std::size_t initial_sgs = 0;  // 0: random
    std::array<double, 8> weights{1, 1, 1, 1, 1, 1, 1, 1};
    Faults faults;
};

class GenError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Deterministic for a fixed config. Stops early once no weighted event is
// feasible; throws GenError when none is feasible from the start.
TraceFile gen_trace(const GenConfig& cfg);
Topology random_topology(std::uint64_t seed, std::size_t dgs, std::size_t max_users, std::size_t max_devices,
                         std::size_t sgs = 0);

// P = 10, all 1023 SGs populated, one user leave from a 100-user SG subscribed to 3 of 20-device DGs.
TraceFile fig15_trace(std::uint64_t seed = 1);

} // namespace gkm
