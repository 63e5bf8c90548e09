#include "gkm/kdc.hpp"

#include <algorithm>

namespace gkm {

namespace {

std::size_t log2_ceil(std::size_t n)
{
    std::size_t r = 0;
    while ((std::size_t{1} << r) < n)
        ++r;
    return r;
}

template <typename T>
bool has(const std::vector<T>& v, const T& x)
{
    return std::find(v.begin(), v.end(), x) != v.end();
}

std::vector<Principal> as_principals(const std::vector<LkhTree::Member>& ms, Role r)
{
    std::vector<Principal> out;
    out.reserve(ms.size());
    for (auto m : ms)
        out.push_back({r, static_cast<std::uint32_t>(m)});
    return out;
}

} // namespace

ScenarioParams params_for(const EventInfo& info, std::size_t mmax)
{
    ScenarioParams p;
    p.P = info.P;
    p.Q = info.Q;
    p.N = info.N;
    p.M = info.M;
    p.Mmax = mmax;
    p.Y = info.Y;
    p.L = info.L;
    p.split_users = info.split_users;
    p.merges = info.merges;
    return p;
}

Kdc::Kdc(std::uint64_t seed, Faults faults) : faults_(faults) { st_.ks = KeySource(seed); }

// ---------------------------------------------------------------- helpers

std::size_t Kdc::sg_size(SgId x) const
{
    auto it = st_.sgs.find(x);
    if (it == st_.sgs.end())
        throw ProtocolError("unknown SG " + std::to_string(x));
    return it->second.tree.size();
}

std::vector<DeviceId> Kdc::subscribed_devices(SgId x) const
{
    std::vector<DeviceId> out;
    for (DgId y : st_.sgs.at(x).subs)
        for (auto m : st_.dgs.at(y).tree.members())
            out.push_back(static_cast<DeviceId>(m));
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<SgId> Kdc::populated_subscribers(DgId y) const
{
    std::vector<SgId> out;
    for (auto& [id, sg] : st_.sgs)
        if (!sg.tree.empty() && sg.subs.count(y))
            out.push_back(id);
    return out;
}

std::size_t Kdc::max_dg_size() const
{
    std::size_t m = 0;
    for (auto& [_, dg] : st_.dgs)
        m = std::max(m, dg.tree.size());
    return m;
}

std::vector<Principal> Kdc::users_of_sg(SgId x) const
{
    return as_principals(st_.sgs.at(x).tree.members(), Role::User);
}

std::vector<Principal> Kdc::users_under_outer(NodeId n) const
{
    std::vector<Principal> out;
    for (auto sg : st_.outer.members_under(n)) {
        auto us = users_of_sg(static_cast<SgId>(sg));
        out.insert(out.end(), us.begin(), us.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Principal> Kdc::all_users() const
{
    std::vector<Principal> out;
    for (auto& [u, _] : st_.user_sg)
        out.push_back(Principal::user(u));
    return out;
}

std::vector<Principal> Kdc::devices_of_dg(DgId y) const
{
    return as_principals(st_.dgs.at(y).tree.members(), Role::Device);
}

std::vector<VersionedKey> Kdc::outer_path_keys(SgId x) const { return st_.outer.path_keys(x); }

std::vector<Envelope> Kdc::outer_cover(const std::set<SgId>& sgs) const
{
    std::set<LkhTree::Member> targets(sgs.begin(), sgs.end());
    std::vector<Envelope> envs;
    for (NodeId n : st_.outer.min_cover(targets))
        envs.push_back({st_.outer.key(n).ref(), users_under_outer(n)});
    return envs;
}

std::vector<NodeId> Kdc::refresh_outer_path(SgId x)
{
    auto path = st_.outer.path_nodes(x);
    for (NodeId n : path)
        st_.outer.set_key(n, st_.ks.refresh(st_.outer.key(n)));
    return path;
}

void Kdc::emit(MsgKind kind, std::vector<Envelope> envs, Payload payload, std::string note)
{
    RekeyMessage m;
    m.seq = cur_.seq;
    m.index = static_cast<std::uint32_t>(cur_.messages.size());
    m.kind = kind;
    m.envelopes = std::move(envs);
    m.payload = std::move(payload);
    m.note = std::move(note);
    cur_.messages.push_back(std::move(m));
}

VersionedKey Kdc::establish(Principal p)
{
    if (st_.secret_keys.count(p))
        throw ProtocolError("principal already established: " + p.str());
    VersionedKey k = st_.ks.fresh_key();
    st_.secret_keys[p] = k;
    Payload pl;
    pl.keys = {k};
    emit(MsgKind::Establishment, {Envelope{std::nullopt, {p}}}, pl, "establish " + p.str());
    return k;
}

// One message per refreshed node, with an envelope for each off-path child.
void Kdc::emit_outer_offpath(const std::vector<NodeId>& path, NodeId exclude, const std::vector<KeyId>& retire,
                             const LkhTree::RemoveResult* rem)
{
    const LkhTree& t = st_.outer;
    for (std::size_t i = 0; i < path.size(); ++i) {
        std::vector<Envelope> envs;
        for (NodeId c : t.children(path[i]))
            if (c != exclude && !has(path, c))
                envs.push_back({t.key(c).ref(), users_under_outer(c)});
        if (envs.empty())
            continue;
        Payload p;
        for (std::size_t j = i; j < path.size(); ++j)
            p.keys.push_back(t.key(path[j]));
        p.retire = retire;
        if (rem)
            p.retire.insert(p.retire.end(), rem->moved_stale.begin(), rem->moved_stale.end());
        emit(MsgKind::Multicast, std::move(envs), p, "outer rekey");
    }
}

void Kdc::emit_inner_offpath(const LkhTree& t, Role role, const std::vector<NodeId>& path, NodeId exclude,
                             bool skip_root_key, const std::vector<VersionedKey>& extra,
                             const std::vector<KeyId>& retire, const std::string& note,
                             const LkhTree::RemoveResult* rem)
{
    for (std::size_t i = 0; i < path.size(); ++i) {
        std::vector<Envelope> envs;
        bool single_leaf = false;
        for (NodeId c : t.children(path[i])) {
            if (c == exclude || has(path, c))
                continue;
            envs.push_back({t.key(c).ref(), as_principals(t.members_under(c), role)});
            single_leaf = t.node(c).is_leaf();
        }
        if (envs.empty())
            continue;
        Payload p;
        for (std::size_t j = i; j < path.size(); ++j)
            if (!(skip_root_key && path[j] == t.root()))
                p.keys.push_back(t.key(path[j]));
        p.keys.insert(p.keys.end(), extra.begin(), extra.end());
        p.retire = retire;
        if (rem)
            p.retire.insert(p.retire.end(), rem->moved_stale.begin(), rem->moved_stale.end());
        if (p.keys.empty() && p.retire.empty())
            continue;
        MsgKind kind = envs.size() == 1 && single_leaf ? MsgKind::Unicast : MsgKind::Multicast;
        emit(kind, std::move(envs), p, note);
    }
}

void Kdc::rebalance(LkhTree& t, InnerRekey& rk, std::size_t max_messages)
{
    std::map<LkhTree::Member, std::vector<NodeId>> first_path;
    while (t.height() > log2_ceil(t.size())) {
        bool moved = false;
        for (auto [from, to] : t.relocation_candidates(8)) {
            LkhTree trial = t;
            KeySource ks = st_.ks;
            auto mv = trial.relocate(from, to, ks);
            std::set<NodeId> f = rk.fresh;
            f.insert(mv.refreshed.begin(), mv.refreshed.end());
            for (NodeId n : mv.removed)
                f.erase(n);
            if (trial.rekey_messages(f) > max_messages)
                continue;
            for (auto m : mv.movers)
                first_path.try_emplace(m, t.path_nodes(m));
            t = std::move(trial);
            st_.ks = ks;
            rk.fresh = std::move(f);
            rk.retire.insert(rk.retire.end(), mv.removed.begin(), mv.removed.end());
            moved = true;
            break;
        }
        if (!moved)
            break;
    }
    for (auto& [m, before] : first_path) {
        auto now = t.path_nodes(m);
        for (NodeId n : before)
            if (!has(now, n))
                rk.stale[m].push_back(n);
    }
}

void Kdc::emit_inner_refresh(const LkhTree& t, Role role, const InnerRekey& rk, NodeId exclude, bool skip_root_key,
                             const std::vector<VersionedKey>& root_extra, const std::string& note)
{
    // Shallowest first: a stale-key retire aimed at a moved member may reach neighbours that get
    // the refreshed key from a deeper message, which then has to come later.
    std::vector<std::pair<std::size_t, NodeId>> order;
    for (NodeId n : rk.fresh)
        order.emplace_back(t.node_depth(n), n);
    std::sort(order.begin(), order.end());

    for (auto [d, r] : order) {
        std::vector<Envelope> envs;
        bool single_leaf = false;
        Payload p;
        p.retire = rk.retire;
        for (NodeId c : t.children(r)) {
            if (c == exclude || rk.fresh.count(c))
                continue;
            auto ms = t.members_under(c);
            for (auto m : ms)
                if (auto it = rk.stale.find(m); it != rk.stale.end())
                    p.retire.insert(p.retire.end(), it->second.begin(), it->second.end());
            envs.push_back({t.key(c).ref(), as_principals(ms, role)});
            single_leaf = t.node(c).is_leaf();
        }
        if (envs.empty())
            continue;
        NodeId n = r;
        for (; n != 0 && rk.fresh.count(n); n = t.node(n).parent)
            if (!(skip_root_key && n == t.root()))
                p.keys.push_back(t.key(n));
        if (n == 0)
            p.keys.insert(p.keys.end(), root_extra.begin(), root_extra.end());
        if (p.keys.empty() && p.retire.empty())
            continue;
        MsgKind kind = envs.size() == 1 && single_leaf ? MsgKind::Unicast : MsgKind::Multicast;
        emit(kind, std::move(envs), p, note);
    }
}

void Kdc::add_identities_for_users(Payload& p, const std::vector<DeviceId>& devs) const
{
    if (!faults_.groupit_shared_secret)
        return;
    for (DeviceId d : devs)
        p.identities.push_back({d, st_.identities.at(d).id, std::nullopt});
}

void Kdc::add_dg_nonces(Payload& p, const std::vector<DgId>& dgs) const
{
    if (!faults_.groupit_shared_secret)
        return;
    for (DgId y : dgs)
        for (auto m : st_.dgs.at(y).tree.members())
            p.nonces.push_back({static_cast<DeviceId>(m), st_.identities.at(static_cast<DeviceId>(m)).nonce});
}

void Kdc::broadcast_hash_update(SgId x, const std::vector<DeviceId>& devs)
{
    std::vector<Envelope> envs;
    if (!st_.outer.empty()) {
        auto us = all_users();
        if (!us.empty())
            envs.push_back({st_.outer.group_key().ref(), us});
    }
    for (DgId y : st_.sgs.at(x).subs)
        envs.push_back({st_.dgs.at(y).tree.group_key().ref(), devices_of_dg(y)});
    Payload p;
    p.directives.push_back({DirectiveKind::HashDeviceKeys, {}, 0, devs});
    const auto& tree = st_.sgs.at(x).tree;
    if (!tree.empty())
        p.directives.push_back({DirectiveKind::HashKey, tree.group_key().ref(), 0, {}});
    emit(MsgKind::Broadcast, envs, p, "hash-update directive");
    for (DeviceId d : devs)
        st_.device_keys[d] = hash_update(st_.device_keys.at(d));
}

void Kdc::broadcast_nonce_increment(SgId x, const std::vector<DeviceId>& devs)
{
    for (DeviceId d : devs) {
        st_.identities[d] = increment_nonce(st_.identities.at(d));
        st_.device_keys[d] = derive_device_key(st_.identities[d]);
    }
    std::vector<Envelope> envs;
    std::vector<DgId> dgs(st_.sgs.at(x).subs.begin(), st_.sgs.at(x).subs.end());
    for (DgId y : dgs)
        envs.push_back({st_.dgs.at(y).tree.group_key().ref(), devices_of_dg(y)});
    Payload p;
    p.directives.push_back({DirectiveKind::NonceIncrement, {}, 0, devs});
    add_dg_nonces(p, dgs);
    emit(MsgKind::Broadcast, envs, p, "nonce-increment directive");
}

void Kdc::distribute_device_keys(DgId y, const std::string& note)
{
    auto subs = populated_subscribers(y);
    if (subs.empty())
        return;
    Payload p;
    std::vector<DeviceId> devs;
    for (auto m : st_.dgs.at(y).tree.members()) {
        auto d = static_cast<DeviceId>(m);
        devs.push_back(d);
        p.device_keys.push_back({d, st_.device_keys.at(d)});
    }
    add_identities_for_users(p, devs);
    emit(MsgKind::Multicast, outer_cover({subs.begin(), subs.end()}), p, note);
}

std::map<KeyId, std::uint32_t> Kdc::current_key_versions() const
{
    std::map<KeyId, std::uint32_t> out;
    auto add_tree = [&](const LkhTree& t) {
        for (auto& [_, n] : t.nodes())
            out[n.key.id] = n.key.version;
    };
    for (auto& [_, k] : st_.secret_keys)
        out[k.id] = k.version;
    for (auto& [_, sg] : st_.sgs)
        add_tree(sg.tree);
    for (auto& [_, dg] : st_.dgs)
        add_tree(dg.tree);
    add_tree(st_.outer);
    return out;
}

std::map<DeviceId, DkRef> Kdc::current_dks() const
{
    std::map<DeviceId, DkRef> out;
    for (auto& [d, k] : st_.device_keys)
        out[d] = DkRef{d, k.nonce, k.lineage};
    return out;
}

void Kdc::begin(EventType t)
{
    cur_ = EventOutcome{};
    cur_.seq = ++st_.event_seq;
    cur_.marker.seq = cur_.seq;
    cur_.marker.type = t;
    cur_.info.type = t;
    cur_.info.P = P();
    before_keys_ = current_key_versions();
    before_dks_ = current_dks();
    derivations_.clear();
    paired_derivations_.clear();
}

void Kdc::maintain_sg_trees()
{
    auto b = comm_bound(Scheme::Proposed, cur_.marker.type, params_for(cur_.info, max_dg_size()));
    std::size_t mc = 0, uc = 0;
    for (auto& m : cur_.messages) {
        mc += m.kind == MsgKind::Multicast;
        uc += m.kind == MsgKind::Unicast;
    }
    if (mc > b.multicasts || mc + uc > b.multicasts + b.unicasts)
        return;
    std::size_t spare = std::min(b.multicasts - mc, b.multicasts + b.unicasts - mc - uc);
    for (auto& [x, sg] : st_.sgs) {
        if (spare == 0)
            break;
        if (sg.tree.empty() || sg.tree.height() <= log2_ceil(sg.tree.size()))
            continue;
        InnerRekey rk;
        rebalance(sg.tree, rk, spare);
        if (rk.fresh.empty())
            continue;
        std::size_t before = cur_.messages.size();
        emit_inner_refresh(sg.tree, Role::User, rk, 0, false, {}, "rebalance");
        spare -= std::min(spare, cur_.messages.size() - before);
    }
}

EventOutcome Kdc::finish()
{
    cur_.info.Q = populated_sgs();
    if (cur_.marker.type != EventType::Setup)
        maintain_sg_trees();
    auto after = current_key_versions();
    auto& mk = cur_.marker;
    for (auto& [id, v] : before_keys_) {
        auto it = after.find(id);
        if (it == after.end() || it->second != v)
            mk.retired.push_back({id, v});
    }
    for (auto& [id, v] : after) {
        auto it = before_keys_.find(id);
        if (it == before_keys_.end() || it->second != v) {
            KeyCreation kc{{id, v}, std::nullopt};
            auto d = derivations_.find({id, v});
            if (d != derivations_.end()) {
                kc.hashed_from = d->second;
                kc.paired = paired_derivations_.count({id, v}) != 0;
            }
            mk.created.push_back(kc);
        }
    }
    auto dks = current_dks();
    for (auto& [d, r] : before_dks_) {
        auto it = dks.find(d);
        if (it == dks.end() || !(it->second == r))
            mk.dk_retired.push_back(r);
    }
    for (auto& [d, r] : dks) {
        auto it = before_dks_.find(d);
        if (it == before_dks_.end() || !(it->second == r))
            mk.dk_created.push_back(r);
    }
    for (auto& [d, y] : st_.device_dg) {
        std::vector<UserId> us;
        for (SgId x : populated_subscribers(y))
            for (auto m : st_.sgs.at(x).tree.members())
                us.push_back(static_cast<UserId>(m));
        std::sort(us.begin(), us.end());
        mk.authorized.emplace_back(d, std::move(us));
    }
    cur_.info.Q = populated_sgs();
    return std::move(cur_);
}

// ---------------------------------------------------------------- setup

EventOutcome Kdc::setup(const Topology& topo)
{
    if (st_.event_seq != 0)
        throw ProtocolError("setup already done");
    std::set<Principal> seen;
    std::set<std::set<DgId>> sets;
    for (auto& [y, devs] : topo.dg_devices) {
        if (devs.empty())
            throw ProtocolError("DG " + std::to_string(y) + " has no devices");
        for (DeviceId d : devs)
            if (!seen.insert(Principal::device(d)).second)
                throw ProtocolError("duplicate device " + std::to_string(d));
    }
    for (auto& [x, subs] : topo.subs) {
        if (subs.empty())
            throw ProtocolError("SG " + std::to_string(x) + " subscribes to nothing");
        for (DgId y : subs)
            if (!topo.dg_devices.count(y))
                throw ProtocolError("SG " + std::to_string(x) + " subscribes to unknown DG " + std::to_string(y));
        if (!sets.insert(subs).second)
            throw ProtocolError("two SGs share a subscription set");
    }
    for (auto& [x, users] : topo.sg_users) {
        if (!topo.subs.count(x))
            throw ProtocolError("users given for unknown SG " + std::to_string(x));
        for (UserId u : users)
            if (!seen.insert(Principal::user(u)).second)
                throw ProtocolError("duplicate user " + std::to_string(u));
    }

    begin(EventType::Setup);
    auto& ks = st_.ks;

    for (auto& [y, devs] : topo.dg_devices) {
        std::vector<DeviceId> sorted = devs;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::pair<LkhTree::Member, VersionedKey>> leaves;
        for (DeviceId d : sorted) {
            auto sk = establish(Principal::device(d));
            DeviceIdentity id{ks.fresh(), ks.next_u64() >> 32};
            st_.identities[d] = id;
            st_.device_keys[d] = derive_device_key(id);
            st_.device_dg[d] = y;
            leaves.emplace_back(d, sk);
            cur_.marker.joined.push_back(Principal::device(d));
        }
        st_.dgs[y] = DgRecord{y, LkhTree::build(leaves, ks)};
    }

    for (auto& [x, subs] : topo.subs) {
        SgRecord rec{x, subs, {}};
        auto it = topo.sg_users.find(x);
        if (it != topo.sg_users.end() && !it->second.empty()) {
            std::vector<UserId> sorted = it->second;
            std::sort(sorted.begin(), sorted.end());
            std::vector<std::pair<LkhTree::Member, VersionedKey>> leaves;
            for (UserId u : sorted) {
                leaves.emplace_back(u, establish(Principal::user(u)));
                st_.user_sg[u] = x;
                cur_.marker.joined.push_back(Principal::user(u));
            }
            rec.tree = LkhTree::build(leaves, ks);
        }
        st_.sgs[x] = std::move(rec);
        st_.next_sg_id = std::max(st_.next_sg_id, x + 1);
    }

    std::vector<std::pair<LkhTree::Member, VersionedKey>> outer_leaves;
    for (auto& [x, sg] : st_.sgs)
        if (!sg.tree.empty())
            outer_leaves.emplace_back(x, sg.tree.group_key());
    st_.outer = LkhTree::build(outer_leaves, ks);

    for (auto& [y, dg] : st_.dgs) {
        for (auto m : dg.tree.members()) {
            auto d = static_cast<DeviceId>(m);
            Payload p;
            p.keys = dg.tree.path_keys(d);
            p.identities.push_back({d, st_.identities[d].id, st_.identities[d].nonce});
            add_dg_nonces(p, {y});
            emit(MsgKind::Unicast, {Envelope{st_.secret_keys[Principal::device(d)].ref(), {Principal::device(d)}}}, p,
                 "setup key material");
        }
    }
    for (auto& [u, x] : st_.user_sg) {
        Payload p;
        p.keys = st_.sgs[x].tree.path_keys(u);
        auto op = outer_path_keys(x);
        p.keys.insert(p.keys.end(), op.begin(), op.end());
        auto devs = subscribed_devices(x);
        for (DeviceId d : devs)
            p.device_keys.push_back({d, st_.device_keys[d]});
        add_identities_for_users(p, devs);
        emit(MsgKind::Unicast, {Envelope{st_.secret_keys[Principal::user(u)].ref(), {Principal::user(u)}}}, p,
             "setup key material");
    }
    return finish();
}

// ---------------------------------------------------------------- user join / leave

EventOutcome Kdc::user_join(UserId u, SgId x)
{
    auto sit = st_.sgs.find(x);
    if (sit == st_.sgs.end())
        throw ProtocolError("unknown SG " + std::to_string(x));
    if (sit->second.tree.empty())
        throw ProtocolError("SG " + std::to_string(x) + " is empty; use user_join_empty_sg");
    if (st_.user_sg.count(u) || st_.secret_keys.count(Principal::user(u)))
        throw ProtocolError("user " + std::to_string(u) + " already present");

    begin(EventType::UserJoin);
    auto& tree = sit->second.tree;
    cur_.info.N = tree.size() + 1;
    cur_.info.Y = sit->second.subs.size();

    auto sk = establish(Principal::user(u));
    auto devs = subscribed_devices(x);
    auto policy = LkhTree::RootUpdate::Keep;
    if (!faults_.skip_join_hash_update) {
        broadcast_hash_update(x, devs);
        policy = LkhTree::RootUpdate::Hash;
    }
    KeyRef old_root = tree.group_key().ref();
    auto ins = tree.insert_leaf(u, sk, st_.ks, policy);
    if (policy == LkhTree::RootUpdate::Hash)
        derivations_[tree.group_key().ref()] = old_root;
    st_.user_sg[u] = x;
    st_.outer.set_leaf_key(x, tree.group_key());
    auto opath = refresh_outer_path(x);
    auto okeys = outer_path_keys(x);

    std::size_t mark = cur_.messages.size();
    emit_outer_offpath(opath, st_.outer.leaf_of(x), {});
    std::vector<RekeyMessage> tail(std::make_move_iterator(cur_.messages.begin() + mark),
                                   std::make_move_iterator(cur_.messages.end()));
    cur_.messages.resize(mark);

    InnerRekey rk;
    rk.fresh.insert(ins.refreshed_path.begin(), ins.refreshed_path.end());
    ScenarioParams bp;
    bp.N = cur_.info.N;
    bp.P = cur_.info.P;
    auto bound = comm_bound(Scheme::Proposed, EventType::UserJoin, bp);
    std::size_t others = tail.size() + 1; // outer rekey and the joiner's unicast
    std::size_t cap = bound.multicasts + bound.unicasts;
    rebalance(tree, rk, cap > others ? cap - others : 0);

    emit_inner_refresh(tree, Role::User, rk, tree.leaf_of(u), true, okeys, "inner rekey");
    for (auto& m : tail) {
        m.index = static_cast<std::uint32_t>(cur_.messages.size());
        cur_.messages.push_back(std::move(m));
    }

    Payload p;
    p.keys = tree.path_keys(u);
    p.keys.insert(p.keys.end(), okeys.begin(), okeys.end());
    for (DeviceId d : devs)
        p.device_keys.push_back({d, st_.device_keys[d]});
    add_identities_for_users(p, devs);
    emit(MsgKind::Unicast, {Envelope{sk.ref(), {Principal::user(u)}}}, p, "joiner key material");

    cur_.marker.joined.push_back(Principal::user(u));
    return finish();
}

EventOutcome Kdc::user_leave(UserId u)
{
    auto uit = st_.user_sg.find(u);
    if (uit == st_.user_sg.end())
        throw ProtocolError("unknown user " + std::to_string(u));
    SgId x = uit->second;
    auto& sg = st_.sgs.at(x);
    if (sg.tree.size() < 2)
        throw ProtocolError("user " + std::to_string(u) + " holds the last spot; use user_leave_last_spot");

    begin(EventType::UserLeave);
    cur_.info.N = sg.tree.size();
    cur_.info.Y = sg.subs.size();

    auto devs = subscribed_devices(x);
    if (!faults_.skip_nonce_increment)
        broadcast_nonce_increment(x, devs);

    auto rem = sg.tree.remove_leaf(u, st_.ks, log2_ceil(sg.tree.size()));
    st_.user_sg.erase(uit);
    st_.secret_keys.erase(Principal::user(u));
    st_.outer.set_leaf_key(x, sg.tree.group_key());
    auto opath = refresh_outer_path(x);
    auto okeys = outer_path_keys(x);

    // Outer and device-key traffic does not depend on the inner tree shape; it goes out after
    // the inner rekey but is counted first to know what the bound leaves over.
    std::size_t mark = cur_.messages.size();
    emit_outer_offpath(opath, st_.outer.leaf_of(x), {});
    for (DgId y : sg.subs)
        distribute_device_keys(y, "device keys for DG " + std::to_string(y));
    std::vector<RekeyMessage> tail(std::make_move_iterator(cur_.messages.begin() + mark),
                                   std::make_move_iterator(cur_.messages.end()));
    cur_.messages.resize(mark);

    InnerRekey rk;
    rk.fresh.insert(rem.refreshed_path.begin(), rem.refreshed_path.end());
    rk.retire.assign(rem.removed_nodes.begin(), rem.removed_nodes.end());
    if (rem.moved)
        rk.stale[*rem.moved] = rem.moved_stale;

    // Pull the tree back to the join-time height while the bound has room for the extra rekeys.
    ScenarioParams bp;
    bp.N = cur_.info.N;
    bp.P = cur_.info.P;
    bp.Y = cur_.info.Y;
    auto bound = comm_bound(Scheme::Proposed, EventType::UserLeave, bp);
    std::size_t others = tail.size();
    for (auto& m : cur_.messages)
        if (m.kind == MsgKind::Multicast || m.kind == MsgKind::Unicast)
            ++others;
    std::size_t cap = bound.multicasts + bound.unicasts;
    rebalance(sg.tree, rk, cap > others ? cap - others : 0);

    emit_inner_refresh(sg.tree, Role::User, rk, 0, false, okeys, "inner rekey");
    for (auto& m : tail) {
        m.index = static_cast<std::uint32_t>(cur_.messages.size());
        cur_.messages.push_back(std::move(m));
    }

    cur_.marker.departed.push_back(Principal::user(u));
    return finish();
}

// ---------------------------------------------------------------- device join / leave

EventOutcome Kdc::device_join(DeviceId k, DgId y)
{
    auto dit = st_.dgs.find(y);
    if (dit == st_.dgs.end())
        throw ProtocolError("unknown DG " + std::to_string(y));
    if (st_.device_dg.count(k) || st_.secret_keys.count(Principal::device(k)))
        throw ProtocolError("device " + std::to_string(k) + " already present");
    auto& tree = dit->second.tree;

    begin(EventType::DeviceJoin);
    cur_.info.M = tree.size() + 1;
    cur_.info.L = populated_subscribers(y).size();

    auto sk = establish(Principal::device(k));
    DeviceIdentity id{st_.ks.fresh(), st_.ks.next_u64() >> 32};
    st_.identities[k] = id;
    st_.device_keys[k] = derive_device_key(id);
    st_.device_dg[k] = y;

    {
        Payload p;
        p.directives.push_back({DirectiveKind::HashKey, tree.group_key().ref(), 0, {}});
        add_dg_nonces(p, {y});
        if (faults_.groupit_shared_secret)
            p.nonces.push_back({k, id.nonce});
        emit(MsgKind::Multicast, {Envelope{tree.group_key().ref(), devices_of_dg(y)}}, p, "group key hash directive");
    }
    KeyRef old_root = tree.group_key().ref();
    auto ins = tree.insert_leaf(k, sk, st_.ks, LkhTree::RootUpdate::Hash);
    derivations_[tree.group_key().ref()] = old_root;
    emit_inner_offpath(tree, Role::Device, ins.refreshed_path, ins.leaf, true, {}, {}, "inner rekey");

    Payload p;
    p.keys = tree.path_keys(k);
    p.identities.push_back({k, id.id, id.nonce});
    add_dg_nonces(p, {y});
    emit(MsgKind::Unicast, {Envelope{sk.ref(), {Principal::device(k)}}}, p, "device identity and keys");

    auto subs = populated_subscribers(y);
    if (!subs.empty()) {
        Payload dp;
        dp.device_keys.push_back({k, st_.device_keys[k]});
        add_identities_for_users(dp, {k});
        emit(MsgKind::Multicast, outer_cover({subs.begin(), subs.end()}), dp, "new device key");
    }
    cur_.marker.joined.push_back(Principal::device(k));
    return finish();
}

EventOutcome Kdc::device_leave(DeviceId k)
{
    auto dit = st_.device_dg.find(k);
    if (dit == st_.device_dg.end())
        throw ProtocolError("unknown device " + std::to_string(k));
    DgId y = dit->second;
    auto& tree = st_.dgs.at(y).tree;
    if (tree.size() < 2)
        throw ProtocolError("device " + std::to_string(k) + " is the last in its DG");

    begin(EventType::DeviceLeave);
    cur_.info.M = tree.size();

    if (!st_.outer.empty()) {
        Payload p;
        p.directives.push_back({DirectiveKind::DeviceUnavailable, {}, 0, {k}});
        emit(MsgKind::Broadcast, {Envelope{st_.outer.group_key().ref(), all_users()}}, p, "device unavailable");
    }
    auto rem = tree.remove_leaf(k, st_.ks, log2_ceil(tree.size()));
    emit_inner_offpath(tree, Role::Device, rem.refreshed_path, 0, false, {}, rem.removed_nodes, "inner rekey", &rem);

    st_.device_dg.erase(dit);
    st_.identities.erase(k);
    st_.device_keys.erase(k);
    st_.secret_keys.erase(Principal::device(k));
    cur_.marker.departed.push_back(Principal::device(k));
    return finish();
}

// ---------------------------------------------------------------- empty SG / last spot

EventOutcome Kdc::user_join_empty_sg(UserId u, SgId x, std::optional<std::set<DgId>> subs)
{
    if (st_.user_sg.count(u) || st_.secret_keys.count(Principal::user(u)))
        throw ProtocolError("user " + std::to_string(u) + " already present");
    auto sit = st_.sgs.find(x);
    if (sit == st_.sgs.end()) {
        if (!subs || subs->empty())
            throw ProtocolError("unknown SG " + std::to_string(x) + " and no subscription set given");
        for (DgId y : *subs)
            if (!st_.dgs.count(y))
                throw ProtocolError("subscription to unknown DG " + std::to_string(y));
        for (auto& [_, sg] : st_.sgs)
            if (sg.subs == *subs)
                throw ProtocolError("subscription set already owned by SG " + std::to_string(sg.id));
    } else {
        if (!sit->second.tree.empty())
            throw ProtocolError("SG " + std::to_string(x) + " is not empty");
        if (subs && *subs != sit->second.subs)
            throw ProtocolError("subscription set differs from the registered one");
    }

    begin(EventType::UserJoinEmptySg);
    if (sit == st_.sgs.end()) {
        st_.sgs[x] = SgRecord{x, *subs, {}};
        st_.next_sg_id = std::max(st_.next_sg_id, x + 1);
    }
    auto& sg = st_.sgs.at(x);
    cur_.info.N = 1;
    cur_.info.Y = sg.subs.size();

    auto sk = establish(Principal::user(u));
    auto devs = subscribed_devices(x);
    if (!faults_.skip_join_hash_update)
        broadcast_hash_update(x, devs);
    sg.tree.insert_leaf(u, sk, st_.ks);
    st_.user_sg[u] = x;

    auto ins = st_.outer.insert_leaf(x, sg.tree.group_key(), st_.ks);
    emit_outer_offpath(ins.refreshed_path, ins.leaf, {});

    Payload p;
    p.keys = sg.tree.path_keys(u);
    auto okeys = outer_path_keys(x);
    p.keys.insert(p.keys.end(), okeys.begin(), okeys.end());
    for (DeviceId d : devs)
        p.device_keys.push_back({d, st_.device_keys[d]});
    add_identities_for_users(p, devs);
    emit(MsgKind::Unicast, {Envelope{sk.ref(), {Principal::user(u)}}}, p, "joiner key material");

    cur_.marker.joined.push_back(Principal::user(u));
    return finish();
}

EventOutcome Kdc::user_leave_last_spot(UserId u)
{
    auto uit = st_.user_sg.find(u);
    if (uit == st_.user_sg.end())
        throw ProtocolError("unknown user " + std::to_string(u));
    SgId x = uit->second;
    auto& sg = st_.sgs.at(x);
    if (sg.tree.size() != 1)
        throw ProtocolError("SG " + std::to_string(x) + " has other members");

    begin(EventType::UserLeaveLastSpot);
    cur_.info.N = 1;
    cur_.info.Y = sg.subs.size();

    auto devs = subscribed_devices(x);
    if (!faults_.skip_nonce_increment)
        broadcast_nonce_increment(x, devs);

    // Inner keys are dropped, not refreshed: a fresh tree is built on re-population.
    sg.tree.clear();
    st_.user_sg.erase(uit);
    st_.secret_keys.erase(Principal::user(u));

    if (st_.outer.size() == 1) {
        st_.outer.clear();
    } else {
        auto rem = st_.outer.remove_leaf(x, st_.ks, log2_ceil(st_.outer.size()));
        emit_outer_offpath(rem.refreshed_path, 0, rem.removed_nodes, &rem);
    }
    for (DgId y : sg.subs)
        distribute_device_keys(y, "device keys for DG " + std::to_string(y));

    cur_.marker.departed.push_back(Principal::user(u));
    return finish();
}

// ---------------------------------------------------------------- DG join (split)

EventOutcome Kdc::dg_join(DgId y, const std::vector<DeviceId>& devices,
                          const std::map<SgId, std::map<UserId, bool>>& opt_in)
{
    if (st_.dgs.count(y))
        throw ProtocolError("DG " + std::to_string(y) + " already exists");
    if (devices.empty())
        throw ProtocolError("new DG needs devices");
    std::set<DeviceId> uniq(devices.begin(), devices.end());
    if (uniq.size() != devices.size())
        throw ProtocolError("duplicate device in new DG");
    for (DeviceId d : devices)
        if (st_.device_dg.count(d) || st_.secret_keys.count(Principal::device(d)))
            throw ProtocolError("device " + std::to_string(d) + " already present");
    for (auto& [x, m] : opt_in) {
        auto it = st_.sgs.find(x);
        if (it == st_.sgs.end())
            throw ProtocolError("opt-in for unknown SG " + std::to_string(x));
        for (auto& [u, _] : m)
            if (!it->second.tree.contains(u))
                throw ProtocolError("opt-in names user " + std::to_string(u) + " outside SG " + std::to_string(x));
    }

    begin(EventType::DgJoin);
    auto& ks = st_.ks;
    cur_.info.M = devices.size();

    std::vector<std::pair<LkhTree::Member, VersionedKey>> leaves;
    for (DeviceId d : uniq) {
        auto sk = establish(Principal::device(d));
        DeviceIdentity id{ks.fresh(), ks.next_u64() >> 32};
        st_.identities[d] = id;
        st_.device_keys[d] = derive_device_key(id);
        st_.device_dg[d] = y;
        leaves.emplace_back(d, sk);
        cur_.marker.joined.push_back(Principal::device(d));
    }
    st_.dgs[y] = DgRecord{y, LkhTree::build(leaves, ks)};
    const auto& dtree = st_.dgs[y].tree;
    for (DeviceId d : uniq) {
        Payload p;
        p.keys = dtree.path_keys(d);
        p.identities.push_back({d, st_.identities[d].id, st_.identities[d].nonce});
        add_dg_nonces(p, {y});
        emit(MsgKind::Unicast, {Envelope{st_.secret_keys[Principal::device(d)].ref(), {Principal::device(d)}}}, p,
             "device identity and keys");
    }
    std::vector<DeviceKeyItem> new_dks;
    std::vector<DeviceId> new_devs(uniq.begin(), uniq.end());
    for (DeviceId d : new_devs)
        new_dks.push_back({d, st_.device_keys[d]});

    std::vector<SgId> populated;
    for (auto& [x, sg] : st_.sgs)
        if (!sg.tree.empty())
            populated.push_back(x);

    for (SgId x : populated) {
        auto& sg = st_.sgs.at(x);
        std::vector<UserId> yes, no;
        auto oit = opt_in.find(x);
        for (auto m : sg.tree.members()) {
            auto u = static_cast<UserId>(m);
            bool want = false;
            if (oit != opt_in.end()) {
                auto it = oit->second.find(u);
                want = it != oit->second.end() && it->second;
            }
            (want ? yes : no).push_back(u);
        }
        if (yes.empty())
            continue;
        if (no.empty()) {
            sg.subs.insert(y);
            Payload p;
            p.device_keys = new_dks;
            add_identities_for_users(p, new_devs);
            emit(MsgKind::Multicast, {Envelope{sg.tree.group_key().ref(), users_of_sg(x)}}, p,
                 "new DG device keys");
            ++cur_.info.new_subscriber_sgs;
            continue;
        }

        // Split: the old group key stays as the uKEK above both halves.
        cur_.info.split_users += sg.tree.size();
        SgId a = st_.next_sg_id++;
        SgId b = st_.next_sg_id++;
        auto build_side = [&](const std::vector<UserId>& us) {
            std::vector<std::pair<LkhTree::Member, VersionedKey>> ls;
            for (UserId u : us)
                ls.emplace_back(u, st_.secret_keys.at(Principal::user(u)));
            return LkhTree::build(ls, ks);
        };
        LkhTree ta = build_side(no);
        LkhTree tb = build_side(yes);
        std::vector<KeyId> retire;
        for (auto& [id, n] : sg.tree.nodes())
            if (!n.is_leaf() && id != sg.tree.root())
                retire.push_back(id);
        std::sort(retire.begin(), retire.end());
        st_.outer.split_leaf(x, a, ta.group_key(), b, tb.group_key(), ks);

        std::set<DgId> subs_a = sg.subs, subs_b = sg.subs;
        subs_b.insert(y);
        st_.sgs.erase(x);
        st_.sgs[a] = SgRecord{a, subs_a, std::move(ta)};
        st_.sgs[b] = SgRecord{b, subs_b, std::move(tb)};
        for (SgId side : {a, b}) {
            auto& t = st_.sgs[side].tree;
            for (auto m : t.members()) {
                auto u = static_cast<UserId>(m);
                st_.user_sg[u] = side;
                Payload p;
                p.keys = t.path_keys(u);
                p.retire = retire;
                if (side == b) {
                    p.device_keys = new_dks;
                    add_identities_for_users(p, new_devs);
                }
                emit(MsgKind::Unicast, {Envelope{st_.secret_keys.at(Principal::user(u)).ref(), {Principal::user(u)}}},
                     p, "split: new SG " + std::to_string(side));
            }
        }
    }
    return finish();
}

// ---------------------------------------------------------------- DG leave (merge)

std::vector<std::pair<SgId, SgId>> Kdc::merge_plan_for(DgId y) const
{
    if (!st_.dgs.count(y))
        throw ProtocolError("unknown DG " + std::to_string(y));
    std::map<std::set<DgId>, std::vector<SgId>> groups;
    for (auto& [x, sg] : st_.sgs) {
        auto s = sg.subs;
        s.erase(y);
        if (!s.empty())
            groups[s].push_back(x);
    }
    std::vector<std::pair<SgId, SgId>> plan;
    for (auto& [_, ids] : groups)
        if (ids.size() == 2)
            plan.emplace_back(std::min(ids[0], ids[1]), std::max(ids[0], ids[1]));
    std::sort(plan.begin(), plan.end());
    return plan;
}

EventOutcome Kdc::dg_leave(DgId y, const std::vector<std::pair<SgId, SgId>>& merge_plan)
{
    auto expected = merge_plan_for(y);
    std::vector<std::pair<SgId, SgId>> given;
    for (auto [a, b] : merge_plan)
        given.emplace_back(std::min(a, b), std::max(a, b));
    std::sort(given.begin(), given.end());
    if (given != expected)
        throw ProtocolError("merge plan inconsistent with subscription sets");

    begin(EventType::DgLeave);
    cur_.info.merges = given.size();
    auto& ks = st_.ks;

    std::vector<DeviceId> gone;
    for (auto m : st_.dgs.at(y).tree.members())
        gone.push_back(static_cast<DeviceId>(m));
    cur_.info.M = gone.size();
    if (!st_.outer.empty()) {
        Payload p;
        p.directives.push_back({DirectiveKind::DeviceUnavailable, {}, 0, gone});
        emit(MsgKind::Broadcast, {Envelope{st_.outer.group_key().ref(), all_users()}}, p, "DG unavailable");
    }
    for (DeviceId d : gone) {
        st_.device_dg.erase(d);
        st_.identities.erase(d);
        st_.device_keys.erase(d);
        st_.secret_keys.erase(Principal::device(d));
        cur_.marker.departed.push_back(Principal::device(d));
    }
    st_.dgs.erase(y);

    // Old outer path of every populated SG, to be retired by its members.
    std::map<SgId, std::vector<KeyId>> old_outer;
    for (auto& [x, sg] : st_.sgs)
        if (!sg.tree.empty())
            for (NodeId n : st_.outer.path_nodes(x))
                old_outer[x].push_back(n);

    std::vector<SgId> dissolved;
    for (auto& [x, sg] : st_.sgs) {
        sg.subs.erase(y);
        if (sg.subs.empty())
            dissolved.push_back(x);
    }
    for (SgId x : dissolved) {
        for (auto m : st_.sgs[x].tree.members()) {
            auto u = static_cast<UserId>(m);
            st_.user_sg.erase(u);
            st_.secret_keys.erase(Principal::user(u));
            cur_.marker.departed.push_back(Principal::user(u));
        }
        st_.sgs.erase(x);
        old_outer.erase(x);
    }

    for (auto [p, q] : given) {
        auto& sp = st_.sgs.at(p);
        auto& sq = st_.sgs.at(q);
        // "bigger" SG: more users; ties go to the smaller id (p < q)
        bool p_big = sp.tree.size() >= sq.tree.size();
        SgId big = p_big ? p : q;
        SgId small = p_big ? q : p;
        auto& B = st_.sgs.at(big);
        auto& S = st_.sgs.at(small);
        if (!B.tree.empty() && !S.tree.empty()) {
            VersionedKey sk_big = B.tree.group_key();
            VersionedKey sk_small = S.tree.group_key();
            VersionedKey sk_xy{ks.next_id(), 0, h(sk_big.material)};
            derivations_[sk_xy.ref()] = sk_big.ref();
            auto small_users = users_of_sg(small);
            auto big_users = users_of_sg(big);

            // Old roots under a new root when the result stays balanced; otherwise the smaller
            // tree hangs beside the node of the larger one that keeps the height lowest.
            auto eff_height = [](const LkhTree& t) {
                return t.height() - (t.node(t.root()).child_count() == 1 ? 1 : 0);
            };
            std::size_t n_xy = B.tree.size() + S.tree.size();
            std::size_t hs = eff_height(S.tree);
            std::size_t splice_h = 1 + std::max(hs, eff_height(B.tree));
            NodeId at = 0;
            if (splice_h > log2_ceil(n_xy)) {
                std::size_t best = 0;
                for (auto& [id, nd] : B.tree.nodes()) {
                    if (id == B.tree.root())
                        continue;
                    std::size_t gh = B.tree.graft_height(id, hs);
                    if (at == 0 || gh < best || (gh == best && id < at)) {
                        best = gh;
                        at = id;
                    }
                }
                if (best >= splice_h)
                    at = 0;
            }

            std::vector<NodeId> dropped;
            Payload big_pl;
            big_pl.directives.push_back({DirectiveKind::DeriveKey, sk_big.ref(), sk_xy.id, {}});
            Payload small_pl;
            if (at == 0) {
                small_pl.keys = {sk_xy};
                B.tree = LkhTree::splice_as_children(sk_xy, std::move(S.tree), std::move(B.tree), &dropped);
            } else {
                // The joining subtree must not learn earlier versions of the keys above it, so the
                // graft point's ancestors move to h(k || k), a domain no other update reaches.
                VersionedKey k_at = B.tree.key(at);
                KeyId joint_id = ks.next_id();
                VersionedKey joint{joint_id, 0, h_pair(k_at.material, {joint_id, 0})};
                derivations_[joint.ref()] = k_at.ref();
                paired_derivations_.insert(joint.ref());
                big_pl.directives.push_back({DirectiveKind::PairDeriveKey, k_at.ref(), joint.id, {}});
                for (NodeId n = B.tree.node(at).parent; n != B.tree.root(); n = B.tree.node(n).parent) {
                    VersionedKey old_k = B.tree.key(n);
                    VersionedKey new_k = pair_hash_update(old_k);
                    B.tree.set_key(n, new_k);
                    derivations_[new_k.ref()] = old_k.ref();
                    paired_derivations_.insert(new_k.ref());
                    big_pl.directives.push_back({DirectiveKind::PairHashKey, old_k.ref(), 0, {}});
                }
                B.tree = LkhTree::graft(sk_xy, std::move(B.tree), std::move(S.tree), at, joint, &dropped);
                for (NodeId n = B.tree.node(at).parent; n != 0; n = B.tree.node(n).parent)
                    small_pl.keys.push_back(B.tree.key(n));
            }
            emit(MsgKind::Multicast, {Envelope{sk_big.ref(), big_users}}, big_pl, "merge: hash group key");
            emit(MsgKind::Multicast, {Envelope{sk_small.ref(), small_users}}, small_pl, "merge: new group key");
            // Retired with the outer-tree update that every member of the merged SG receives.
            old_outer[big].insert(old_outer[big].end(), dropped.begin(), dropped.end());
            for (auto& pr : small_users)
                st_.user_sg[pr.id] = big;
        } else if (B.tree.empty() && !S.tree.empty()) {
            B.tree = std::move(S.tree);
            for (auto m : B.tree.members())
                st_.user_sg[static_cast<UserId>(m)] = big;
        }
        auto& ob = old_outer[big];
        auto os = old_outer[small];
        ob.insert(ob.end(), os.begin(), os.end());
        old_outer.erase(small);
        st_.sgs.erase(small);
    }

    std::vector<std::pair<LkhTree::Member, VersionedKey>> outer_leaves;
    for (auto& [x, sg] : st_.sgs)
        if (!sg.tree.empty())
            outer_leaves.emplace_back(x, sg.tree.group_key());
    st_.outer = LkhTree::build(outer_leaves, ks);
    for (auto& [x, sg] : st_.sgs) {
        if (sg.tree.empty())
            continue;
        Payload p;
        p.keys = outer_path_keys(x);
        auto& r = old_outer[x];
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        p.retire = r;
        emit(MsgKind::Multicast, {Envelope{sg.tree.group_key().ref(), users_of_sg(x)}}, p, "rebuilt outer tree");
    }
    return finish();
}

// ---------------------------------------------------------------- projections

UserState Kdc::project_user(UserId u) const
{
    SgId x = st_.user_sg.at(u);
    UserState s;
    s.user_id = u;
    const auto& sk = st_.secret_keys.at(Principal::user(u));
    s.secret_id = sk.id;
    s.keys[sk.id] = sk;
    for (auto& k : st_.sgs.at(x).tree.path_keys(u))
        s.keys[k.id] = k;
    for (auto& k : outer_path_keys(x))
        s.keys[k.id] = k;
    for (DeviceId d : subscribed_devices(x))
        s.device_keys[d] = st_.device_keys.at(d);
    s.last_seq = st_.event_seq;
    return s;
}

DeviceState Kdc::project_device(DeviceId d) const
{
    DgId y = st_.device_dg.at(d);
    DeviceState s;
    s.device_id = d;
    const auto& sk = st_.secret_keys.at(Principal::device(d));
    s.secret_id = sk.id;
    s.keys[sk.id] = sk;
    for (auto& k : st_.dgs.at(y).tree.path_keys(d))
        s.keys[k.id] = k;
    s.identity = st_.identities.at(d);
    s.device_key = st_.device_keys.at(d);
    s.last_seq = st_.event_seq;
    return s;
}

void Kdc::check_invariants() const
{
    st_.outer.validate();
    std::set<std::set<DgId>> sets;
    std::size_t populated = 0;
    for (auto& [x, sg] : st_.sgs) {
        sg.tree.validate();
        if (sg.subs.empty())
            throw std::logic_error("SG " + std::to_string(x) + " without subscriptions");
        if (!sets.insert(sg.subs).second)
            throw std::logic_error("duplicate subscription set");
        for (DgId y : sg.subs)
            if (!st_.dgs.count(y))
                throw std::logic_error("subscription to missing DG");
        if (sg.tree.empty()) {
            if (st_.outer.contains(x))
                throw std::logic_error("empty SG in outer tree");
            continue;
        }
        ++populated;
        if (!st_.outer.contains(x))
            throw std::logic_error("populated SG missing from outer tree");
        if (!(st_.outer.key(st_.outer.leaf_of(x)) == sg.tree.group_key()))
            throw std::logic_error("outer leaf key out of sync with SG group key");
        for (auto m : sg.tree.members()) {
            auto it = st_.user_sg.find(static_cast<UserId>(m));
            if (it == st_.user_sg.end() || it->second != x)
                throw std::logic_error("user registry mismatch");
            if (!(sg.tree.key(sg.tree.leaf_of(m)) == st_.secret_keys.at(Principal::user(static_cast<UserId>(m)))))
                throw std::logic_error("leaf key is not the member secret");
        }
    }
    if (populated != st_.outer.size())
        throw std::logic_error("outer tree has unknown SGs");
    std::size_t users = 0;
    for (auto& [_, sg] : st_.sgs)
        users += sg.tree.size();
    if (users != st_.user_sg.size())
        throw std::logic_error("user appears in more than one SG or registry is stale");
    std::size_t devices = 0;
    for (auto& [y, dg] : st_.dgs) {
        dg.tree.validate();
        if (dg.tree.empty())
            throw std::logic_error("empty DG");
        devices += dg.tree.size();
        for (auto m : dg.tree.members())
            if (st_.device_dg.at(static_cast<DeviceId>(m)) != y)
                throw std::logic_error("device registry mismatch");
    }
    if (devices != st_.device_dg.size())
        throw std::logic_error("device registry is stale");
    for (auto& [d, id] : st_.identities) {
        DeviceKey k = derive_device_key(id);
        const DeviceKey& cur = st_.device_keys.at(d);
        for (std::uint32_t i = 0; i < cur.lineage; ++i)
            k = hash_update(k);
        if (!(k == cur))
            throw std::logic_error("device key of d" + std::to_string(d) + " not derivable from its identity");
    }
}

} // namespace gkm
