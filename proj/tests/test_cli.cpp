#include "gkm/costmodel.hpp"
#include "gkm/runner.hpp"
#include "gkm/trace.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace gkm;

namespace {

GenConfig config(std::uint64_t seed, std::size_t length)
{
    GenConfig c;
    c.seed = seed;
    c.length = length;
    return c;
}

// One SG holding one user, subscribed to one DG.
GenConfig lone_user()
{
    GenConfig c;
    c.dgs = 1;
    c.max_users = 1;
    c.initial_sgs = 1;
    c.weights = {0, 0, 0, 0, 0, 0, 0, 0};
    return c;
}

} // namespace

TEST(Trace, TextRoundTrip)
{
    for (std::uint64_t seed : {1, 2, 3}) {
        auto t = gen_trace(config(seed, 150));
        auto text = trace_to_text(t);
        auto back = trace_from_text(text);
        EXPECT_EQ(trace_to_text(back), text);
        EXPECT_EQ(back.events.size(), t.events.size());
    }
    Faults f;
    f.skip_nonce_increment = true;
    auto c = config(4, 20);
    c.faults = f;
    auto back = trace_from_text(trace_to_text(gen_trace(c)));
    EXPECT_TRUE(back.faults.skip_nonce_increment);
    EXPECT_FALSE(back.faults.skip_join_hash_update);

    auto path = std::filesystem::temp_directory_path() / "gkm_cli_test.trace";
    write_trace(gen_trace(config(5, 30)), path.string());
    EXPECT_EQ(trace_to_text(read_trace(path.string())), trace_to_text(gen_trace(config(5, 30))));
    std::filesystem::remove(path);
    EXPECT_THROW(trace_from_text("not a trace\n"), std::exception);
}

TEST(Trace, GeneratorIsDeterministic)
{
    EXPECT_EQ(trace_to_text(gen_trace(config(42, 200))), trace_to_text(gen_trace(config(42, 200))));
    EXPECT_NE(trace_to_text(gen_trace(config(42, 200))), trace_to_text(gen_trace(config(43, 200))));
}

TEST(Trace, EqualWeightsReachEveryEventType)
{
    bool found = false;
    for (std::uint64_t seed = 1; seed <= 10 && !found; ++seed) {
        auto t = gen_trace(config(seed, 500));
        std::set<EventType> seen;
        for (auto& e : t.events)
            seen.insert(e.type);
        found = seen.size() == kGenEventTypes.size();
    }
    EXPECT_TRUE(found);
}

TEST(Trace, GeneratedEventsApply)
{
    auto t = gen_trace(config(12, 300));
    Kdc kdc(t.seed);
    kdc.setup(t.topology);
    for (auto& e : t.events) {
        ASSERT_NO_THROW(apply_event(kdc, e));
        kdc.check_invariants();
    }
}

TEST(Trace, LeaveOnlyOnLoneUser)
{
    auto c = lone_user();
    c.weights[1] = 1; // user_leave
    c.weights[5] = 1; // user_leave_last_spot
    auto t = gen_trace(c);
    ASSERT_EQ(t.topology.sg_users.size(), 1u);
    ASSERT_EQ(t.topology.sg_users.begin()->second.size(), 1u);
    ASSERT_EQ(t.events.size(), 1u);
    EXPECT_EQ(t.events[0].type, EventType::UserLeaveLastSpot);

    auto only_leave = lone_user();
    only_leave.weights[1] = 1;
    EXPECT_THROW(gen_trace(only_leave), GenError);
    auto none = lone_user();
    EXPECT_THROW(gen_trace(none), GenError);
    none.weights[0] = -1;
    EXPECT_THROW(gen_trace(none), GenError);
}

TEST(Run, EmptyTraceIsSetupOnly)
{
    auto t = gen_trace(config(3, 10));
    t.events.clear();
    auto r = run_trace(t, RunChecks{});
    EXPECT_TRUE(r.ok());
    ASSERT_EQ(r.events.size(), 1u);
    EXPECT_EQ(r.events[0].type, EventType::Setup);
    for (auto& v : r.verdicts)
        EXPECT_TRUE(v.pass) << v.line();
}

TEST(Run, Fig15Scenario)
{
    auto r = run_trace(fig15_trace(), RunChecks::parse("bounds,agreement"));
    EXPECT_TRUE(r.ok());
    ASSERT_EQ(r.events.size(), 2u);
    const auto& leave = r.events[1];
    EXPECT_EQ(leave.type, EventType::UserLeave);
    EXPECT_EQ(leave.counts.broadcasts, 1u);
    EXPECT_LE(leave.counts.multicasts + leave.counts.unicasts, 27u);
    EXPECT_TRUE(leave.bounds_ok);
    EXPECT_NE(r.to_text().find("summary "), std::string::npos);
}

TEST(Run, FaultIsReported)
{
    auto c = config(2, 80);
    c.faults.skip_nonce_increment = true;
    auto r = run_trace(gen_trace(c), RunChecks::parse("secrecy"));
    EXPECT_FALSE(r.ok());
    EXPECT_FALSE(r.failures.empty());
}

TEST(Run, AuditOfExportedTranscript)
{
    auto checks = RunChecks::parse("agreement");
    EXPECT_TRUE(run_trace(gen_trace(config(7, 60)), checks).transcript.empty());
    checks.keep_transcript = true;
    auto r = run_trace(gen_trace(config(7, 60)), checks);
    ASSERT_FALSE(r.transcript.empty());
    auto again = audit_transcript(r.transcript, RunChecks::parse("secrecy,access"));
    EXPECT_TRUE(again.ok());
    EXPECT_FALSE(again.verdicts.empty());
}

TEST(Run, ChecksParse)
{
    auto all = RunChecks::parse("all");
    EXPECT_TRUE(all.bounds && all.agreement && all.secrecy && all.collusion && all.access);
    auto none = RunChecks::parse("none");
    EXPECT_FALSE(none.bounds || none.agreement || none.secrecy || none.collusion || none.access);
    auto some = RunChecks::parse("bounds,collusion");
    EXPECT_TRUE(some.bounds && some.collusion);
    EXPECT_FALSE(some.agreement || some.secrecy || some.access);
    EXPECT_THROW(RunChecks::parse("bounds,speed"), std::invalid_argument);
}

TEST(Figures, SevenFilesWithRowForY3)
{
    std::size_t files = 0;
    for (int fig = 15; fig <= 21; ++fig) {
        auto csv = to_csv(emit_figure_data(fig, {}));
        EXPECT_EQ(csv.rfind("# figure " + std::to_string(fig), 0), 0u);
        ++files;
    }
    EXPECT_EQ(files, 7u);
    auto f15 = to_csv(emit_figure_data(15, {}));
    EXPECT_NE(f15.find("\n3,28,85\n"), std::string::npos);
    EXPECT_EQ(fig17_crossover(), std::optional<std::uint64_t>{5});
}
