#include "gkm/costmodel.hpp"
#include "gkm/kdc.hpp"
#include "gkm/runner.hpp"
#include "gkm/trace.hpp"
#include "gkm/transport.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace gkm;

namespace {

MessageCounts tally(const EventOutcome& out)
{
    MessageCounts c;
    for (auto& m : out.messages)
        c.add(m);
    return c;
}

// KDC plus live endpoints; every event is delivered and checked against the projection.
struct Net {
    Kdc kdc;
    Bus bus;

    explicit Net(const Topology& topo, std::uint64_t seed = 1, Faults f = {}) : kdc(seed, f)
    {
        deliver(kdc.setup(topo));
    }

    const EventOutcome& deliver(const EventOutcome& out)
    {
        bus.dispatch(out.marker, out.messages);
        EXPECT_EQ(check_agreement(kdc, bus), "") << "after seq " << out.seq;
        last = out;
        return last;
    }

    EventOutcome last;
};

std::vector<UserId> range_ids(UserId from, std::size_t n)
{
    std::vector<UserId> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = from + static_cast<UserId>(i);
    return v;
}

bool all_users(const RekeyMessage& m)
{
    auto to = m.addressed_to();
    return !to.empty() && std::all_of(to.begin(), to.end(), [](const Principal& p) { return p.role == Role::User; });
}

bool all_devices(const RekeyMessage& m)
{
    auto to = m.addressed_to();
    return !to.empty() &&
           std::all_of(to.begin(), to.end(), [](const Principal& p) { return p.role == Role::Device; });
}

bool holds_material(const UserState& s, const Bytes32& material)
{
    for (auto& [_, k] : s.keys)
        if (k.material == material)
            return true;
    return false;
}

// 4 DGs, 8 SGs with distinct subscription sets, two users each.
Topology fig6_topology()
{
    Topology t;
    for (DgId y = 1; y <= 4; ++y)
        t.dg_devices[y] = {y * 10 + 1, y * 10 + 2};
    std::vector<std::set<DgId>> sets = {{1}, {2}, {3}, {4}, {1, 2}, {1, 3}, {2, 4}, {3, 4}};
    UserId u = 1;
    for (SgId x = 1; x <= 8; ++x) {
        t.subs[x] = sets[x - 1];
        t.sg_users[x] = {u, u + 1};
        u += 2;
    }
    return t;
}

Topology single(std::size_t users, std::size_t devices)
{
    Topology t;
    std::vector<DeviceId> ds;
    for (std::size_t i = 0; i < devices; ++i)
        ds.push_back(static_cast<DeviceId>(100 + i));
    t.dg_devices[1] = ds;
    t.subs[1] = {1};
    t.sg_users[1] = range_ids(1, users);
    return t;
}

} // namespace

// Fig 6: users hold their SG's path in a three-level outer tree.
TEST(Kdc, OuterPathOfFig6)
{
    Net net(fig6_topology());
    const auto& st = net.kdc.state();
    EXPECT_EQ(st.outer.size(), 8u);
    EXPECT_EQ(st.outer.height(), 3u);
    for (auto& [u, x] : st.user_sg) {
        auto path = st.outer.path_nodes(x);
        ASSERT_EQ(path.size(), 3u);
        auto s = net.kdc.project_user(u);
        for (NodeId n : path)
            EXPECT_EQ(s.keys.at(st.outer.key(n).id), st.outer.key(n));
        EXPECT_EQ(s.keys.at(st.sgs.at(x).tree.group_key().id), st.outer.key(st.outer.leaf_of(x)));
    }
    // SGs that share the lowest outer node share its key
    std::map<NodeId, std::set<SgId>> by_parent;
    for (SgId x = 1; x <= 8; ++x)
        by_parent[st.outer.node(st.outer.leaf_of(x)).parent].insert(x);
    EXPECT_EQ(by_parent.size(), 4u);
    net.kdc.check_invariants();
}

TEST(Kdc, DegenerateTopology)
{
    Net net(single(1, 1));
    auto s = net.kdc.project_user(1);
    const auto& st = net.kdc.state();
    const auto& sk = st.secret_keys.at(Principal::user(1));
    EXPECT_EQ(s.device_keys.size(), 1u);
    EXPECT_EQ(s.keys.at(sk.id), sk);
    EXPECT_TRUE(s.keys.count(st.sgs.at(1).tree.group_key().id));
    EXPECT_TRUE(s.keys.count(st.outer.group_key().id));
    std::size_t keks = 0;
    for (auto& [id, n] : st.sgs.at(1).tree.nodes())
        if (!n.is_leaf() && id != st.sgs.at(1).tree.root())
            ++keks;
    EXPECT_EQ(keks, 0u);
    ScenarioParams one;
    one.N = one.Y = one.Mmax = one.P = one.M = 1;
    EXPECT_LE(s.inventory(), storage_cost(Scheme::Proposed, Role::User, one));
    auto d = net.kdc.project_device(100);
    EXPECT_EQ(d.device_key, st.device_keys.at(100));
}

TEST(Kdc, StorageBoundOnRandomTopologies)
{
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Kdc kdc(seed);
        kdc.setup(random_topology(seed, 5, 32, 16));
        const auto& st = kdc.state();
        std::size_t mmax = kdc.max_dg_size();
        for (auto& [u, x] : st.user_sg) {
            std::size_t n = kdc.sg_size(x);
            std::size_t y = st.sgs.at(x).subs.size();
            EXPECT_LE(kdc.project_user(u).inventory(), y * mmax + ceil_log2(n) + 2 + kdc.P()) << "u" << u;
        }
    }
}

// User join at N = 100 users, P = 10.
TEST(Kdc, UserJoinTally)
{
    auto tr = fig15_trace();
    Kdc kdc;
    kdc.setup(tr.topology);
    ASSERT_EQ(kdc.P(), 10u);
    SgId x = kdc.state().user_sg.at(tr.events.at(0).user);
    ASSERT_EQ(kdc.sg_size(x), 100u);
    auto out = kdc.user_join(100000, x);
    auto c = tally(out);
    EXPECT_EQ(c.establishments, 1u);
    EXPECT_EQ(c.broadcasts, 1u);
    // a rekey for a lone sibling leaf goes out as a unicast and uses multicast budget
    EXPECT_GE(c.unicasts, 1u);
    EXPECT_LE(c.multicasts + c.unicasts, 7u + 10u + 1u);
    auto bound = comm_bound(Scheme::Proposed, EventType::UserJoin, params_for(out.info, kdc.max_dg_size()));
    EXPECT_EQ(check_bounds(c, bound), "");
    EXPECT_EQ(out.info.N, 101u);
    EXPECT_EQ(out.info.P, 10u);
    kdc.check_invariants();
}

// A one-member SG keeps a root above its single leaf, so the joiner becomes the second child and
// the group key is hashed; only the outer key of the lone old member needs a rekey message.
TEST(Kdc, JoinIntoOneMemberSg)
{
    Net net(single(1, 2));
    auto sk = net.kdc.state().sgs.at(1).tree.group_key();
    auto& out = net.deliver(net.kdc.user_join(2, 1));
    const auto& t = net.kdc.state().sgs.at(1).tree;
    EXPECT_EQ(t.height(), 1u);
    EXPECT_EQ(t.group_key(), hash_update(sk));
    EXPECT_EQ(t.path_keys(1), std::vector<VersionedKey>{t.group_key()});
    EXPECT_EQ(t.path_keys(2), std::vector<VersionedKey>{t.group_key()});
    std::size_t to_old = 0;
    for (auto& m : out.messages)
        if (m.addressed_to() == std::vector<Principal>{Principal::user(1)})
            ++to_old;
    EXPECT_EQ(to_old, 1u);
    auto c = tally(out);
    EXPECT_EQ(c.broadcasts, 1u);
    EXPECT_EQ(c.multicasts + c.unicasts, 2u);
}

TEST(Kdc, LeaveFromTwoMemberSg)
{
    Net net(single(2, 2));
    auto before = net.kdc.state().sgs.at(1).tree.group_key();
    auto& out = net.deliver(net.kdc.user_leave(2));
    auto sk1 = net.kdc.state().secret_keys.at(Principal::user(1));
    auto now = net.kdc.state().sgs.at(1).tree.group_key();
    EXPECT_NE(now.material, before.material);
    bool unicast = false;
    for (auto& m : out.messages) {
        if (m.kind != MsgKind::Unicast || m.envelopes.size() != 1 || m.envelopes[0].protection != sk1.ref())
            continue;
        for (auto& k : m.payload.keys)
            unicast = unicast || k == now;
    }
    EXPECT_TRUE(unicast);
}

TEST(Kdc, DeviceJoinIntoDgOfFour)
{
    Net net(single(3, 4));
    auto& out = net.deliver(net.kdc.device_join(200, 1));
    auto c = tally(out);
    std::size_t kek = 0, dk = 0;
    for (auto& m : out.messages) {
        auto to = m.addressed_to();
        bool joiner = std::find(to.begin(), to.end(), Principal::device(200)) != to.end();
        if (all_devices(m) && !joiner && !m.payload.keys.empty())
            ++kek;
        if (m.kind == MsgKind::Multicast && all_users(m) && !m.payload.device_keys.empty())
            ++dk;
    }
    EXPECT_LE(kek, 2u);
    EXPECT_EQ(dk, 1u); // one subscribed SG
    EXPECT_EQ(c.broadcasts, 0u);
    EXPECT_EQ(c.establishments, 1u);
    EXPECT_EQ(net.kdc.project_user(1).device_keys.size(), 5u);
}

TEST(Kdc, DeviceLeaveTally)
{
    Net net(single(4, 20));
    auto& out = net.deliver(net.kdc.device_leave(107));
    auto c = tally(out);
    EXPECT_EQ(c.broadcasts, 1u);
    EXPECT_LE(c.multicasts, 5u);
    EXPECT_EQ(c.unicasts, 0u);
    EXPECT_FALSE(net.kdc.project_user(1).device_keys.count(107));

    Net two(single(1, 2));
    auto c2 = tally(two.deliver(two.kdc.device_leave(101)));
    EXPECT_EQ(c2.broadcasts, 1u);
    EXPECT_EQ(c2.unicasts, 1u);
    EXPECT_EQ(c2.multicasts, 0u);
}

TEST(Kdc, FirstAndLastSg)
{
    Topology t;
    t.dg_devices[1] = {100, 101};
    Net net(t);
    EXPECT_TRUE(net.kdc.state().outer.empty());
    auto c = tally(net.deliver(net.kdc.user_join_empty_sg(1, 1, std::set<DgId>{1})));
    EXPECT_EQ(c.multicasts, 0u);
    EXPECT_EQ(net.kdc.state().outer.size(), 1u);
    EXPECT_EQ(net.kdc.project_user(1).device_keys.size(), 2u);

    auto& out = net.deliver(net.kdc.user_leave_last_spot(1));
    auto c2 = tally(out);
    EXPECT_TRUE(net.kdc.state().outer.empty());
    EXPECT_EQ(c2.total(), 1u);
    ASSERT_EQ(out.messages.size(), 1u);
    const auto& dirs = out.messages[0].payload.directives;
    ASSERT_EQ(dirs.size(), 1u);
    EXPECT_EQ(dirs[0].kind, DirectiveKind::NonceIncrement);
}

TEST(Kdc, DgJoinUnanimous)
{
    Net net(single(4, 2));
    auto& none = net.deliver(net.kdc.dg_join(2, {300, 301}, {}));
    for (auto& m : none.messages)
        EXPECT_TRUE(all_devices(m)) << m.note;
    EXPECT_EQ(net.kdc.state().sgs.at(1).subs, (std::set<DgId>{1}));

    std::map<UserId, bool> yes;
    for (UserId u = 1; u <= 4; ++u)
        yes[u] = true;
    auto sk = net.kdc.state().sgs.at(1).tree.group_key();
    auto& all = net.deliver(net.kdc.dg_join(3, {400}, {{1, yes}}));
    std::size_t to_users = 0;
    for (auto& m : all.messages) {
        if (!all_users(m))
            continue;
        ++to_users;
        EXPECT_EQ(m.kind, MsgKind::Multicast);
        EXPECT_EQ(m.envelopes.at(0).protection, sk.ref());
    }
    EXPECT_EQ(to_users, 1u);
    EXPECT_EQ(net.kdc.state().sgs.at(1).subs, (std::set<DgId>{1, 3}));
    EXPECT_EQ(net.kdc.project_user(1).device_keys.size(), 3u);
}

TEST(Kdc, DgJoinAlternatingSplits)
{
    Net net(single(8, 2));
    std::map<UserId, bool> alt;
    for (UserId u = 1; u <= 8; ++u)
        alt[u] = u % 2 == 0;
    auto& out = net.deliver(net.kdc.dg_join(2, {300}, {{1, alt}}));
    std::size_t uc = 0;
    for (auto& m : out.messages)
        if (m.kind == MsgKind::Unicast && all_users(m))
            ++uc;
    EXPECT_EQ(uc, 8u);
    EXPECT_EQ(out.info.split_users, 8u);
    const auto& st = net.kdc.state();
    EXPECT_FALSE(st.sgs.count(1));
    EXPECT_EQ(st.sgs.size(), 2u);
    for (UserId u = 1; u <= 8; ++u) {
        auto subs = st.sgs.at(st.user_sg.at(u)).subs;
        EXPECT_EQ(subs.count(2), u % 2 == 0 ? 1u : 0u);
    }
    net.kdc.check_invariants();
}

namespace {

// SG 1 (4 users) on DGs {1, 2}, SG 2 (8 users) on DG {1}; DG 2 leaves.
Topology fig13_topology(std::size_t nx, std::size_t ny)
{
    Topology t;
    t.dg_devices[1] = {100, 101, 102};
    t.dg_devices[2] = {200, 201};
    t.subs[1] = {1, 2};
    t.subs[2] = {1};
    t.sg_users[1] = range_ids(1, nx);
    t.sg_users[2] = range_ids(100, ny);
    return t;
}

} // namespace

TEST(Kdc, MergeOfFigs13And14)
{
    Net net(fig13_topology(4, 8));
    auto sk_x = net.kdc.state().sgs.at(1).tree.group_key();
    auto sk_y = net.kdc.state().sgs.at(2).tree.group_key();
    auto plan = net.kdc.merge_plan_for(2);
    ASSERT_EQ(plan, (std::vector<std::pair<SgId, SgId>>{{1, 2}}));
    auto& out = net.deliver(net.kdc.dg_leave(2, plan));

    const auto& st = net.kdc.state();
    ASSERT_EQ(st.sgs.size(), 1u);
    const auto& merged = st.sgs.begin()->second;
    EXPECT_EQ(merged.tree.size(), 12u);
    EXPECT_EQ(merged.tree.group_key().material, h(sk_y.material));
    for (auto& [p, s] : net.bus.users())
        EXPECT_TRUE(holds_material(s, h(sk_y.material))) << p;
    EXPECT_EQ(net.bus.users().size(), 12u);

    std::size_t under_x = 0;
    for (auto& m : out.messages) {
        for (auto& e : m.envelopes) {
            if (e.protection != sk_x.ref())
                continue;
            ++under_x;
            EXPECT_EQ(m.kind, MsgKind::Multicast);
            std::set<Principal> to(e.recipients.begin(), e.recipients.end());
            std::set<Principal> want;
            for (UserId u = 1; u <= 4; ++u)
                want.insert(Principal::user(u));
            EXPECT_EQ(to, want);
        }
    }
    EXPECT_EQ(under_x, 1u);
    EXPECT_LE(merged.tree.height(), ceil_log2(12));
    net.kdc.check_invariants();
}

TEST(Kdc, MergeTieGoesToSmallerId)
{
    Net net(fig13_topology(3, 3));
    auto sk1 = net.kdc.state().sgs.at(1).tree.group_key();
    net.deliver(net.kdc.dg_leave(2, net.kdc.merge_plan_for(2)));
    const auto& st = net.kdc.state();
    ASSERT_EQ(st.sgs.size(), 1u);
    EXPECT_EQ(st.sgs.begin()->first, 1u);
    EXPECT_EQ(st.sgs.at(1).tree.group_key().material, h(sk1.material));
}

TEST(Kdc, PreconditionErrors)
{
    Kdc kdc;
    kdc.setup(fig13_topology(4, 8));
    EXPECT_THROW(kdc.user_join(1, 2), ProtocolError);
    EXPECT_THROW(kdc.user_join(500, 99), ProtocolError);
    EXPECT_THROW(kdc.user_leave(500), ProtocolError);
    EXPECT_THROW(kdc.device_join(100, 1), ProtocolError);
    EXPECT_THROW(kdc.device_join(900, 9), ProtocolError);
    EXPECT_THROW(kdc.device_leave(900), ProtocolError);
    EXPECT_THROW(kdc.dg_join(1, {900}, {}), ProtocolError);
    EXPECT_THROW(kdc.dg_join(7, {}, {}), ProtocolError);
    EXPECT_THROW(kdc.dg_join(7, {100}, {}), ProtocolError);
    EXPECT_THROW(kdc.dg_join(7, {900}, {{1, {{100, true}}}}), ProtocolError);
    EXPECT_THROW(kdc.dg_leave(2, {}), ProtocolError);
    EXPECT_THROW(kdc.dg_leave(9, {}), ProtocolError);
    EXPECT_THROW(kdc.user_leave_last_spot(1), ProtocolError);
    // failed calls leave the state untouched
    EXPECT_EQ(kdc.state().event_seq, 1u);
    kdc.check_invariants();
}

TEST(Kdc, SnapshotContinuesIdentically)
{
    GenConfig cfg;
    cfg.seed = 5;
    cfg.length = 160;
    auto tr = gen_trace(cfg);
    Kdc a(tr.seed, tr.faults);
    a.setup(tr.topology);
    std::size_t half = tr.events.size() / 2;
    for (std::size_t i = 0; i < half; ++i)
        apply_event(a, tr.events[i]);
    Kdc b = Kdc::from_snapshot(a.snapshot());
    EXPECT_EQ(b.snapshot(), a.snapshot());
    for (std::size_t i = half; i < tr.events.size(); ++i) {
        auto oa = apply_event(a, tr.events[i]);
        auto ob = apply_event(b, tr.events[i]);
        ASSERT_EQ(oa.messages.size(), ob.messages.size()) << i;
        for (std::size_t j = 0; j < oa.messages.size(); ++j)
            EXPECT_EQ(to_line(oa.messages[j]), to_line(ob.messages[j]));
        EXPECT_EQ(to_line(oa.marker), to_line(ob.marker));
    }
    EXPECT_EQ(b.snapshot(), a.snapshot());
}

TEST(Kdc, DeviceKeyEvolution)
{
    Net net(single(3, 3));
    auto id = net.kdc.state().identities.at(100);
    auto dk = net.kdc.state().device_keys.at(100);

    net.deliver(net.kdc.user_join(50, 1));
    auto joined = net.kdc.state().device_keys.at(100);
    EXPECT_EQ(joined.material, h(dk.material));
    EXPECT_EQ(joined.lineage, dk.lineage + 1);
    EXPECT_EQ(net.kdc.state().identities.at(100).nonce, id.nonce);

    net.deliver(net.kdc.user_leave(2));
    auto left = net.kdc.state().device_keys.at(100);
    EXPECT_EQ(net.kdc.state().identities.at(100).nonce, id.nonce + 1);
    EXPECT_EQ(left.material, derive_device_key(increment_nonce(id)).material);
    EXPECT_EQ(left.lineage, 0u);
}

// Device IDs and nonces reach only the device they belong to.
TEST(Kdc, IdentityConfinement)
{
    GenConfig cfg;
    cfg.seed = 11;
    cfg.length = 200;
    auto tr = gen_trace(cfg);
    Kdc kdc(tr.seed);
    std::vector<EventOutcome> outs{kdc.setup(tr.topology)};
    for (auto& e : tr.events)
        outs.push_back(apply_event(kdc, e));
    std::size_t seen = 0;
    for (auto& o : outs) {
        for (auto& m : o.messages) {
            for (auto& it : m.payload.identities) {
                ++seen;
                for (auto& p : m.addressed_to())
                    EXPECT_EQ(p, Principal::device(it.device)) << m.note;
            }
            EXPECT_TRUE(m.payload.nonces.empty());
        }
    }
    EXPECT_GT(seen, 0u);
}
