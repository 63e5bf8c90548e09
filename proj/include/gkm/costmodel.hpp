#pragma once

#include "gkm/messages.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gkm {

enum class Scheme { Proposed, GroupIt };
std::string_view to_string(Scheme s);

class UnsupportedEvent : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ScenarioParams {
    std::uint64_t P = 0;    // DGs
    std::uint64_t Q = 0;    // SGs
    std::uint64_t N = 0;    // users in the SG concerned
    std::uint64_t M = 0;    // devices in the DG concerned
    std::uint64_t Mmax = 0; // largest DG
    std::uint64_t Y = 0;    // DGs the SG subscribes to
    std::uint64_t L = 0;    // SGs subscribing to the DG
    std::uint64_t split_users = 0;
    std::uint64_t merges = 0;
};

// Section-VII setting: P = 10, Q = 1023, L = 512.
ScenarioParams numerical_setting(std::uint64_t N, std::uint64_t M, std::uint64_t Y);

struct TimeConstants {
    double T0 = 460.0;    // hash
    double T1 = 800.0;    // symmetric enc/dec
    double T2 = 114000.0; // asymmetric dec
};

struct CommCost {
    std::uint64_t broadcasts = 0;
    std::uint64_t multicasts = 0;
    std::uint64_t unicasts = 0;
    std::uint64_t establishments = 0;

    std::uint64_t total() const { return broadcasts + multicasts + unicasts; }
    bool operator==(const CommCost&) const = default;
};

struct CompCost {
    double device_time = 0; // ns, summed over all devices
    double user_time = 0;   // ns, summed over all users
};

struct CostBreakdown {
    CommCost comm;
    CompCost comp;
};

std::uint64_t ceil_log2(std::uint64_t x); // 0 for x <= 1
double log2_or_zero(double x);

// Worst-case per-event counts, one clause per message purpose.
CommCost comm_bound(Scheme s, EventType e, const ScenarioParams& p);
// The user-leave count as plotted (2P uKEK/device-key multicasts for the proposed scheme).
CommCost comm_figure(Scheme s, EventType e, const ScenarioParams& p);
CostBreakdown comm_cost(Scheme s, EventType e, const ScenarioParams& p, bool figure_form = false);

// Operation counts weighted by T0/T1/T2.
CompCost comp_cost(Scheme s, EventType e, const ScenarioParams& p, const TimeConstants& t);
// Printed closed forms (Y = 3, L = 512, P = 10), user join and user leave only.
CompCost comp_figure(Scheme s, EventType e, std::uint64_t N, std::uint64_t M, const TimeConstants& t);

std::uint64_t storage_cost(Scheme s, Role r, const ScenarioParams& p);

struct FigureRow {
    std::uint64_t x = 0;
    double proposed = 0;
    double groupit = 0;
};

struct FigureData {
    int figure = 0;
    std::string x_name;
    std::string constants;
    bool integer_valued = false;
    std::vector<FigureRow> rows;
};

std::vector<std::uint64_t> default_sweep(int figure);
FigureData emit_figure_data(int figure, const std::vector<std::uint64_t>& sweep, const TimeConstants& t);
FigureData emit_figure_data(int figure, const TimeConstants& t);
std::string to_csv(const FigureData& f);

// Smallest M (from `from`) where the proposed user-leave total is strictly below GroupIt's.
std::optional<std::uint64_t> fig17_crossover(std::uint64_t from = 1, std::uint64_t to = 1000);

} // namespace gkm
