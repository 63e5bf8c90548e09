#include "gkm/costmodel.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace gkm {

std::string_view to_string(Scheme s) { return s == Scheme::Proposed ? "proposed" : "groupit"; }

ScenarioParams numerical_setting(std::uint64_t N, std::uint64_t M, std::uint64_t Y)
{
    ScenarioParams p;
    p.P = 10;
    p.Q = 1023;
    p.L = 512;
    p.N = N;
    p.M = M;
    p.Mmax = M;
    p.Y = Y;
    return p;
}

std::uint64_t ceil_log2(std::uint64_t x)
{
    std::uint64_t r = 0;
    while ((std::uint64_t{1} << r) < x)
        ++r;
    return r;
}

double log2_or_zero(double x) { return x <= 1.0 ? 0.0 : std::log2(x); }

namespace {

[[noreturn]] void unsupported(Scheme s, EventType e)
{
    throw UnsupportedEvent(std::string(to_string(s)) + " does not handle " + std::string(to_string(e)));
}

bool groupit_handles(EventType e)
{
    return e == EventType::UserJoin || e == EventType::UserLeave || e == EventType::DeviceJoin ||
           e == EventType::DeviceLeave;
}

} // namespace

CommCost comm_bound(Scheme s, EventType e, const ScenarioParams& p)
{
    const auto lN = ceil_log2(p.N);
    const auto lM = ceil_log2(p.M);
    CommCost c;
    if (s == Scheme::GroupIt) {
        if (!groupit_handles(e))
            unsupported(s, e);
        switch (e) {
        case EventType::UserJoin:
            c = {1, lN, 1, 1};
            break;
        case EventType::UserLeave:
            c = {p.Y, lN + p.Y * p.Mmax + p.Y * ceil_log2(p.Mmax), 0, 0};
            break;
        case EventType::DeviceJoin:
            c = {1, 1 + lM, 1, 1};
            break;
        default:
            c = {1, lM, 0, 0};
            break;
        }
        return c;
    }
    switch (e) {
    case EventType::Setup:
        unsupported(s, e);
    case EventType::UserJoin:
        c = {1, lN + p.P, 1, 1};
        break;
    case EventType::UserLeave:
        c = {1, lN + p.P + p.Y * p.P, 0, 0};
        break;
    case EventType::DeviceJoin:
        c = {0, 1 + lM + p.L, 1, 1};
        break;
    case EventType::DeviceLeave:
        c = {1, lM, 0, 0};
        break;
    case EventType::UserJoinEmptySg:
        c = {1, p.P, 1, 1};
        break;
    case EventType::UserLeaveLastSpot:
        c = {1, p.P + p.Y * p.P, 0, 0};
        break;
    case EventType::DgJoin:
        c = {0, p.Q, p.split_users + p.M, p.M};
        break;
    case EventType::DgLeave:
        c = {1, 2 * p.merges + p.Q, 0, 0};
        break;
    }
    return c;
}

CommCost comm_figure(Scheme s, EventType e, const ScenarioParams& p)
{
    if (e != EventType::UserLeave)
        throw UnsupportedEvent("figure forms exist for user_leave only");
    if (s == Scheme::Proposed)
        return {1, ceil_log2(p.N) + 2 * p.P, 0, 0};
    return {p.Y, ceil_log2(p.N) + p.Y * ceil_log2(p.M), p.M * p.Y, 0};
}

CostBreakdown comm_cost(Scheme s, EventType e, const ScenarioParams& p, bool figure_form)
{
    CostBreakdown b;
    b.comm = figure_form ? comm_figure(s, e, p) : comm_bound(s, e, p);
    return b;
}

CompCost comp_cost(Scheme s, EventType e, const ScenarioParams& p, const TimeConstants& t)
{
    const double N = static_cast<double>(p.N), M = static_cast<double>(p.M), Y = static_cast<double>(p.Y);
    const double L = static_cast<double>(p.L), P = static_cast<double>(p.P), Q = static_cast<double>(p.Q);
    const double Mmax = static_cast<double>(p.Mmax);
    const double lN = log2_or_zero(N), lM = log2_or_zero(M), lQ = log2_or_zero(Q);
    if (s == Scheme::GroupIt && !groupit_handles(e))
        unsupported(s, e);
    CompCost c;
    switch (e) {
    case EventType::Setup:
        unsupported(s, e);
    case EventType::UserJoin:
        if (s == Scheme::Proposed) {
            c.device_time = M * Y * t.T0;
            c.user_time = (L * N + N) * t.T0 + (lN + P) * t.T1;
        } else {
            c.device_time = 2 * M * Y * t.T0;
            c.user_time = 2 * L * N * t.T0 + lN * t.T1;
        }
        break;
    case EventType::UserLeave:
        if (s == Scheme::Proposed) {
            c.device_time = M * Y * t.T0;
            c.user_time = (lN + lQ + M * Y * L) * t.T1;
        } else {
            c.device_time = (M * Y + Y * lM) * t.T1 + 2 * M * Y * t.T0;
            c.user_time = (lN + M * Y * L) * t.T1 + M * Y * L * t.T2;
        }
        break;
    case EventType::DeviceJoin:
        c.device_time = M * (t.T0 + t.T1);
        c.user_time = L * N * (s == Scheme::Proposed ? t.T1 : t.T1 + t.T0);
        break;
    case EventType::DeviceLeave:
        c.device_time = M > 1 ? (M - 1) * t.T1 : 0.0;
        break;
    case EventType::UserJoinEmptySg:
        c.device_time = M * Y * t.T0;
        c.user_time = Q * N * (Y * Mmax * t.T0 + t.T1) + t.T1;
        break;
    case EventType::UserLeaveLastSpot:
        c.device_time = M * Y * t.T0;
        c.user_time = Q * N * (1 + Y) * t.T1;
        break;
    case EventType::DgJoin:
        c.device_time = M * (t.T0 + t.T1);
        c.user_time = static_cast<double>(p.split_users) * t.T1;
        break;
    case EventType::DgLeave:
        c.user_time = static_cast<double>(p.merges) * N * (t.T0 + t.T1) + Q * N * t.T1;
        break;
    }
    return c;
}

CompCost comp_figure(Scheme s, EventType e, std::uint64_t N_, std::uint64_t M_, const TimeConstants& t)
{
    const double N = static_cast<double>(N_), M = static_cast<double>(M_), T0 = t.T0;
    CompCost c;
    if (e == EventType::UserJoin) {
        if (s == Scheme::Proposed) {
            c.device_time = 3 * T0 * M;
            c.user_time = (513 * N + 1.74 * log2_or_zero(N) + 17.4) * T0;
        } else {
            c.device_time = 6 * T0 * M;
            c.user_time = (1024 * N + 1.74 * log2_or_zero(N)) * T0;
        }
    } else if (e == EventType::UserLeave) {
        if (s == Scheme::Proposed) {
            c.device_time = 3 * T0 * M;
            c.user_time = (28.95 + 2672.64 * M) * T0;
        } else {
            c.device_time = (11.22 * M + 5.22 * log2_or_zero(M)) * T0;
            c.user_time = (11.55 + 383339.52 * M) * T0;
        }
    } else {
        throw UnsupportedEvent("figure forms exist for user_join and user_leave only");
    }
    return c;
}

std::uint64_t storage_cost(Scheme s, Role r, const ScenarioParams& p)
{
    if (r == Role::Device)
        return ceil_log2(p.M) + 4;
    if (s == Scheme::Proposed)
        return p.Y * p.Mmax + ceil_log2(p.N) + 2 + p.P;
    return p.Y * p.Mmax + p.Y + ceil_log2(p.N) + 2;
}

std::vector<std::uint64_t> default_sweep(int figure)
{
    std::uint64_t lo = 0, hi = 0;
    switch (figure) {
    case 15:
        lo = 1, hi = 10;
        break;
    case 16:
    case 19:
        lo = 10, hi = 1000;
        break;
    case 17:
        lo = 5, hi = 100;
        break;
    case 18:
    case 20:
    case 21:
        lo = 1, hi = 50;
        break;
    default:
        throw std::invalid_argument("unknown figure " + std::to_string(figure));
    }
    std::vector<std::uint64_t> v;
    for (auto x = lo; x <= hi; ++x)
        v.push_back(x);
    return v;
}

FigureData emit_figure_data(int figure, const std::vector<std::uint64_t>& sweep, const TimeConstants& t)
{
    FigureData f;
    f.figure = figure;
    auto comm_row = [&](std::uint64_t x, const ScenarioParams& p) {
        return FigureRow{x, static_cast<double>(comm_figure(Scheme::Proposed, EventType::UserLeave, p).total()),
                         static_cast<double>(comm_figure(Scheme::GroupIt, EventType::UserLeave, p).total())};
    };
    char buf[160];
    switch (figure) {
    case 15:
        f.x_name = "Y";
        f.constants = "messages per user leave; N=100 M=20 P=10";
        f.integer_valued = true;
        for (auto y : sweep)
            f.rows.push_back(comm_row(y, numerical_setting(100, 20, y)));
        break;
    case 16:
        f.x_name = "N";
        f.constants = "messages per user leave; Y=3 M=20 P=10";
        f.integer_valued = true;
        for (auto n : sweep)
            f.rows.push_back(comm_row(n, numerical_setting(n, 20, 3)));
        break;
    case 17:
        f.x_name = "M";
        f.constants = "messages per user leave; Y=3 N=100 P=10";
        f.integer_valued = true;
        for (auto m : sweep)
            f.rows.push_back(comm_row(m, numerical_setting(100, m, 3)));
        break;
    case 18:
    case 19:
    case 20:
    case 21: {
        EventType e = figure <= 19 ? EventType::UserJoin : EventType::UserLeave;
        bool devices = figure == 18 || figure == 20;
        std::snprintf(buf, sizeof buf, "total %s time (ns) per user %s; Y=3 L=512 P=10%s T0=%g", devices ? "device" : "user",
                      e == EventType::UserJoin ? "join" : "leave", figure == 21 ? " N=100" : "", t.T0);
        f.constants = buf;
        f.x_name = figure == 19 ? "N" : "M";
        for (auto x : sweep) {
            std::uint64_t N = figure == 19 ? x : 100;
            std::uint64_t M = figure == 19 ? 20 : x;
            auto a = comp_figure(Scheme::Proposed, e, N, M, t);
            auto b = comp_figure(Scheme::GroupIt, e, N, M, t);
            f.rows.push_back({x, devices ? a.device_time : a.user_time, devices ? b.device_time : b.user_time});
        }
        break;
    }
    default:
        throw std::invalid_argument("unknown figure " + std::to_string(figure));
    }
    return f;
}

FigureData emit_figure_data(int figure, const TimeConstants& t)
{
    return emit_figure_data(figure, default_sweep(figure), t);
}

std::string to_csv(const FigureData& f)
{
    std::ostringstream os;
    os << "# figure " << f.figure << ": x=" << f.x_name << "; " << f.constants << '\n';
    os << "x,proposed,groupit\n";
    char buf[96];
    for (auto& r : f.rows) {
        if (f.integer_valued)
            std::snprintf(buf, sizeof buf, "%llu,%.0f,%.0f", static_cast<unsigned long long>(r.x), r.proposed,
                          r.groupit);
        else
            std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g", static_cast<unsigned long long>(r.x), r.proposed,
                          r.groupit);
        os << buf << '\n';
    }
    return os.str();
}

std::optional<std::uint64_t> fig17_crossover(std::uint64_t from, std::uint64_t to)
{
    for (auto m = from; m <= to; ++m) {
        auto p = numerical_setting(100, m, 3);
        if (comm_figure(Scheme::Proposed, EventType::UserLeave, p).total() <
            comm_figure(Scheme::GroupIt, EventType::UserLeave, p).total())
            return m;
    }
    return std::nullopt;
}

} // namespace gkm
