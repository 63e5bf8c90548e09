#include "gkm/costmodel.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gkm;

namespace {

std::uint64_t clog(std::uint64_t x)
{
    std::uint64_t r = 0;
    while ((1ull << r) < x)
        ++r;
    return r;
}

void expect_rel(double got, double want, double tol = 1e-9)
{
    EXPECT_LE(std::abs(got - want), tol * std::abs(want)) << got << " vs " << want;
}

} // namespace

TEST(CostModel, CeilLog)
{
    EXPECT_EQ(ceil_log2(0), 0u);
    EXPECT_EQ(ceil_log2(1), 0u);
    EXPECT_EQ(ceil_log2(2), 1u);
    EXPECT_EQ(ceil_log2(100), 7u);
    EXPECT_EQ(ceil_log2(1024), 10u);
    EXPECT_EQ(ceil_log2(1025), 11u);
    EXPECT_DOUBLE_EQ(log2_or_zero(1), 0.0);
    EXPECT_NEAR(log2_or_zero(100), 6.64, 0.01);
}

TEST(CostModel, UserLeaveFigureForm)
{
    auto p = numerical_setting(100, 20, 3);
    EXPECT_EQ(comm_figure(Scheme::Proposed, EventType::UserLeave, p), (CommCost{1, 27, 0, 0}));
    EXPECT_EQ(comm_figure(Scheme::GroupIt, EventType::UserLeave, p), (CommCost{3, 7 + 15, 60, 0}));
    EXPECT_EQ(comm_cost(Scheme::Proposed, EventType::UserLeave, p, true).comm.total(), 28u);
    EXPECT_THROW(comm_figure(Scheme::Proposed, EventType::UserJoin, p), UnsupportedEvent);
}

TEST(CostModel, Fig15Rows)
{
    auto f = emit_figure_data(15, {});
    ASSERT_EQ(f.rows.size(), 10u);
    for (auto& r : f.rows) {
        EXPECT_EQ(r.proposed, 28.0);
        EXPECT_EQ(r.groupit, 26.0 * static_cast<double>(r.x) + 7);
    }
    EXPECT_EQ(f.rows[2].groupit, 85.0);
}

TEST(CostModel, Fig16And17Rows)
{
    auto f16 = emit_figure_data(16, {});
    ASSERT_EQ(f16.rows.size(), 991u);
    for (auto& r : f16.rows) {
        EXPECT_EQ(r.proposed, static_cast<double>(1 + clog(r.x) + 20));
        EXPECT_EQ(r.groupit, static_cast<double>(3 + clog(r.x) + 15 + 60));
        EXPECT_LT(r.proposed, r.groupit);
    }
    auto f17 = emit_figure_data(17, {});
    ASSERT_EQ(f17.rows.size(), 96u);
    for (auto& r : f17.rows) {
        EXPECT_EQ(r.proposed, 28.0);
        EXPECT_EQ(r.groupit, static_cast<double>(3 + 7 + 3 * clog(r.x) + 3 * r.x));
    }
}

// The crossover is found by walking the two printed totals.
TEST(CostModel, Fig17Crossover)
{
    std::uint64_t want = 0;
    for (std::uint64_t m = 1; m <= 100 && want == 0; ++m)
        if (28 < 3 + 7 + 3 * clog(m) + 3 * m)
            want = m;
    EXPECT_EQ(fig17_crossover(), want);
    EXPECT_EQ(want, 5u);
    EXPECT_EQ(fig17_crossover(1, 4), std::nullopt);
}

TEST(CostModel, ComputationFiguresMatchClosedForms)
{
    TimeConstants t;
    const double T0 = 460;
    for (auto& r : emit_figure_data(18, t).rows) {
        double M = static_cast<double>(r.x);
        expect_rel(r.proposed, 3 * T0 * M);
        expect_rel(r.groupit, 6 * T0 * M);
        EXPECT_EQ(r.groupit / r.proposed, 2.0);
    }
    for (auto& r : emit_figure_data(19, t).rows) {
        double N = static_cast<double>(r.x);
        expect_rel(r.proposed, (513 * N + 1.74 * std::log2(N) + 17.4) * T0);
        expect_rel(r.groupit, (1024 * N + 1.74 * std::log2(N)) * T0);
    }
    for (auto& r : emit_figure_data(20, t).rows) {
        double M = static_cast<double>(r.x);
        expect_rel(r.proposed, 3 * T0 * M);
        expect_rel(r.groupit, (11.22 * M + 5.22 * (M > 1 ? std::log2(M) : 0.0)) * T0);
    }
    for (auto& r : emit_figure_data(21, t).rows) {
        double M = static_cast<double>(r.x);
        expect_rel(r.proposed, (28.95 + 2672.64 * M) * T0);
        expect_rel(r.groupit, (11.55 + 383339.52 * M) * T0);
        EXPECT_GT(r.groupit / r.proposed, 100.0);
    }
}

TEST(CostModel, TimeConstantsScaleOnlyComputation)
{
    TimeConstants twice{920, 1600, 228000};
    for (int fig = 15; fig <= 17; ++fig) {
        auto a = emit_figure_data(fig, {});
        auto b = emit_figure_data(fig, twice);
        for (std::size_t i = 0; i < a.rows.size(); ++i)
            EXPECT_EQ(a.rows[i].groupit, b.rows[i].groupit);
    }
    for (int fig = 18; fig <= 21; ++fig) {
        auto a = emit_figure_data(fig, {});
        auto b = emit_figure_data(fig, twice);
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            expect_rel(b.rows[i].proposed, 2 * a.rows[i].proposed);
            expect_rel(b.rows[i].groupit, 2 * a.rows[i].groupit);
        }
    }
    EXPECT_THROW(emit_figure_data(14, {}), std::invalid_argument);
}

// Operation counts weighted by the exact constants stay within the rounding of the printed factors.
TEST(CostModel, OperationCountsAgreeWithFigures)
{
    TimeConstants t;
    for (std::uint64_t M : {1, 5, 20, 50}) {
        auto p = numerical_setting(100, M, 3);
        auto op = comp_cost(Scheme::Proposed, EventType::UserLeave, p, t);
        auto fig = comp_figure(Scheme::Proposed, EventType::UserLeave, 100, M, t);
        expect_rel(op.user_time, fig.user_time, 2e-3);
        expect_rel(op.device_time, fig.device_time);
        auto gop = comp_cost(Scheme::GroupIt, EventType::UserLeave, p, t);
        auto gfig = comp_figure(Scheme::GroupIt, EventType::UserLeave, 100, M, t);
        expect_rel(gop.user_time, gfig.user_time, 2e-3);
        auto jop = comp_cost(Scheme::Proposed, EventType::UserJoin, p, t);
        EXPECT_DOUBLE_EQ(jop.device_time, 3 * t.T0 * static_cast<double>(M));
        EXPECT_DOUBLE_EQ(comp_cost(Scheme::GroupIt, EventType::UserJoin, p, t).device_time,
                         6 * t.T0 * static_cast<double>(M));
    }
    auto zero = numerical_setting(100, 0, 3);
    EXPECT_EQ(comp_cost(Scheme::Proposed, EventType::UserJoin, zero, t).device_time, 0.0);
    EXPECT_EQ(comp_cost(Scheme::GroupIt, EventType::UserJoin, zero, t).device_time, 0.0);
}

TEST(CostModel, DominanceClaims)
{
    for (std::uint64_t y = 1; y <= 10; ++y) {
        auto p = numerical_setting(100, 20, y);
        EXPECT_LT(comm_figure(Scheme::Proposed, EventType::UserLeave, p).total(),
                  comm_figure(Scheme::GroupIt, EventType::UserLeave, p).total());
    }
    for (std::uint64_t n = 10; n <= 1000; ++n) {
        auto p = numerical_setting(n, 20, 3);
        EXPECT_LT(comm_figure(Scheme::Proposed, EventType::UserLeave, p).total(),
                  comm_figure(Scheme::GroupIt, EventType::UserLeave, p).total());
    }
    TimeConstants t;
    for (std::uint64_t m = 1; m <= 1000; ++m)
        EXPECT_LT(comp_figure(Scheme::Proposed, EventType::UserLeave, 100, m, t).user_time,
                  comp_figure(Scheme::GroupIt, EventType::UserLeave, 100, m, t).user_time);
}

TEST(CostModel, SymbolicBounds)
{
    auto p = numerical_setting(100, 20, 3);
    EXPECT_EQ(comm_bound(Scheme::Proposed, EventType::UserJoin, p), (CommCost{1, 7 + 10, 1, 1}));
    EXPECT_EQ(comm_bound(Scheme::Proposed, EventType::UserLeave, p), (CommCost{1, 7 + 10 + 30, 0, 0}));
    EXPECT_EQ(comm_bound(Scheme::Proposed, EventType::DeviceLeave, p), (CommCost{1, 5, 0, 0}));
    EXPECT_EQ(comm_bound(Scheme::Proposed, EventType::DeviceJoin, p), (CommCost{0, 1 + 5 + 512, 1, 1}));
    ScenarioParams two;
    two.M = 2;
    EXPECT_EQ(comm_bound(Scheme::Proposed, EventType::DeviceLeave, two), (CommCost{1, 1, 0, 0}));
    EXPECT_THROW(comm_bound(Scheme::GroupIt, EventType::DgJoin, p), UnsupportedEvent);
    EXPECT_THROW(comm_bound(Scheme::GroupIt, EventType::UserJoinEmptySg, p), UnsupportedEvent);
    EXPECT_THROW(comp_cost(Scheme::GroupIt, EventType::DgLeave, p, {}), UnsupportedEvent);
}

TEST(CostModel, Storage)
{
    auto p = numerical_setting(100, 20, 3);
    EXPECT_EQ(storage_cost(Scheme::Proposed, Role::User, p), 79u);
    EXPECT_EQ(storage_cost(Scheme::Proposed, Role::Device, p), storage_cost(Scheme::GroupIt, Role::Device, p));
    EXPECT_EQ(storage_cost(Scheme::Proposed, Role::Device, p), 5u + 4);
    ScenarioParams one;
    one.N = one.Y = one.Mmax = one.P = one.M = 1;
    EXPECT_EQ(storage_cost(Scheme::Proposed, Role::User, one), 4u);
}

TEST(CostModel, CsvLayout)
{
    auto csv = to_csv(emit_figure_data(15, {}));
    EXPECT_EQ(csv.rfind("# figure 15", 0), 0u);
    EXPECT_NE(csv.find("\nx,proposed,groupit\n"), std::string::npos);
    EXPECT_NE(csv.find("\n3,28,85\n"), std::string::npos);
    for (int fig = 15; fig <= 21; ++fig)
        EXPECT_FALSE(emit_figure_data(fig, {}).rows.empty());
}
