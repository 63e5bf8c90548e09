#pragma once

// Independent reference computations shared by the unit tests and the acceptance harness.

#include "gkm/auditor.hpp"
#include "gkm/lkh.hpp"
#include "gkm/transport.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace gkm::oracle {

using Member = LkhTree::Member;

// Hand-built trees. Internal node ids double as key ids; leaf keys get ids 1000 + node id.
class Builder {
public:
    NodeId internal(NodeId parent)
    {
        NodeId id = ++next_;
        LkhTree::Node n;
        n.id = id;
        n.parent = parent;
        n.key = {id, 0, material(id)};
        attach(parent, id);
        nodes_.push_back(n);
        return id;
    }
    NodeId leaf(NodeId parent, Member m)
    {
        NodeId id = ++next_;
        LkhTree::Node n;
        n.id = id;
        n.parent = parent;
        n.member = m;
        n.key = {1000 + id, 0, material(1000 + id)};
        attach(parent, id);
        nodes_.push_back(n);
        return id;
    }
    LkhTree tree() const { return LkhTree::from_nodes(nodes_.front().id, nodes_); }

private:
    static Bytes32 material(std::uint64_t id)
    {
        Bytes32 b{};
        for (int i = 0; i < 8; ++i)
            b[i] = static_cast<std::uint8_t>(id >> (8 * i));
        return h(b);
    }
    void attach(NodeId parent, NodeId child)
    {
        if (parent == 0)
            return;
        for (auto& n : nodes_)
            if (n.id == parent)
                n.child[n.child[0] == 0 ? 0 : 1] = child;
    }
    std::vector<LkhTree::Node> nodes_;
    NodeId next_ = 0;
};

// Every full binary tree shape with `n` leaves, members numbered left to right from `first`.
struct Shape {
    std::shared_ptr<Shape> l, r;
};

inline std::vector<std::shared_ptr<Shape>> shapes(int n)
{
    if (n == 1)
        return {std::make_shared<Shape>()};
    std::vector<std::shared_ptr<Shape>> out;
    for (int k = 1; k < n; ++k)
        for (auto& a : shapes(k))
            for (auto& b : shapes(n - k))
                out.push_back(std::make_shared<Shape>(Shape{a, b}));
    return out;
}

inline LkhTree materialize(const std::shared_ptr<Shape>& s)
{
    Builder b;
    Member next = 1;
    NodeId root = b.internal(0);
    std::function<void(const std::shared_ptr<Shape>&, NodeId)> rec = [&](const std::shared_ptr<Shape>& x, NodeId p) {
        if (!x->l) {
            b.leaf(p, next++);
            return;
        }
        NodeId n = b.internal(p);
        rec(x->l, n);
        rec(x->r, n);
    };
    if (!s->l) {
        rec(s, root);
    } else {
        rec(s->l, root);
        rec(s->r, root);
    }
    return b.tree();
}

// Smallest number of nodes whose leaf sets lie inside `target` and together cover it, by
// trying every node subset of growing size.
inline std::size_t brute_cover(const std::vector<std::uint32_t>& masks, std::uint32_t target)
{
    std::vector<std::uint32_t> ok;
    for (auto m : masks)
        if (m != 0 && (m & ~target) == 0)
            ok.push_back(m);
    std::function<bool(std::size_t, std::size_t, std::uint32_t)> pick = [&](std::size_t from, std::size_t left,
                                                                          std::uint32_t u) {
        if (left == 0)
            return u == target;
        for (std::size_t i = from; i < ok.size(); ++i)
            if (pick(i + 1, left - 1, u | ok[i]))
                return true;
        return false;
    };
    for (std::size_t k = 1; k <= ok.size(); ++k)
        if (pick(0, k, 0))
            return k;
    return 0;
}

inline std::uint32_t leaf_mask(const LkhTree& t, NodeId n)
{
    std::uint32_t m = 0;
    for (Member x : t.members_under(n))
        m |= 1u << (x - 1);
    return m;
}

// Number of (tree, target) pairs over all shapes with up to `max_leaves` leaves where min_cover is
// not an exact partition of minimum size. `trees` and `cases` receive the totals.
inline std::size_t cover_mismatches(int max_leaves, std::size_t& trees, std::size_t& cases)
{
    std::size_t bad = 0;
    trees = cases = 0;
    for (int n = 1; n <= max_leaves; ++n) {
        for (auto& s : shapes(n)) {
            auto t = materialize(s);
            ++trees;
            std::vector<std::uint32_t> masks;
            for (auto& [id, nd] : t.nodes())
                masks.push_back(leaf_mask(t, id));
            for (std::uint32_t target = 1; target < (1u << n); ++target) {
                ++cases;
                std::set<Member> tg;
                for (int i = 0; i < n; ++i)
                    if (target >> i & 1)
                        tg.insert(static_cast<Member>(i + 1));
                auto cover = t.min_cover(tg);
                std::uint32_t u = 0;
                bool disjoint = true;
                for (NodeId c : cover) {
                    auto m = leaf_mask(t, c);
                    disjoint = disjoint && (u & m) == 0;
                    u |= m;
                }
                if (!disjoint || u != target || cover.size() != brute_cover(masks, target))
                    ++bad;
            }
        }
    }
    return bad;
}

// Derivability by naive saturation over atomic terms only: decrypting a payload yields its items,
// a hash-derived key follows from its source, keys hashed from the same source without a salt are
// equal, lineage and nonce successors follow inside the range the transcript mentions, and an
// identity with a nonce yields the matching base device key.
inline std::set<SymbolicTerm> naive_closure(const std::set<SymbolicTerm>& initial, const TranscriptLog& log,
                                            std::optional<Principal> self = std::nullopt)
{
    using Term = SymbolicTerm;
    std::set<Term> universe(initial.begin(), initial.end());
    std::vector<std::pair<std::vector<Term>, std::vector<Term>>> rules; // all premises => all results
    std::set<Term> known = initial;
    std::map<KeyRef, std::vector<KeyRef>> plain_children;

    auto items_of = [](const Payload& p) {
        std::vector<Term> out;
        for (auto& k : p.keys)
            out.push_back(Term::key(k.ref()));
        for (auto& dk : p.device_keys)
            out.push_back(Term::device_key(dk.device, dk.key.nonce, dk.key.lineage));
        for (auto& id : p.identities) {
            out.push_back(Term::identity(id.device));
            if (id.nonce)
                out.push_back(Term::nonce(id.device, *id.nonce));
        }
        for (auto& n : p.nonces)
            out.push_back(Term::nonce(n.device, n.nonce));
        return out;
    };

    for (auto& e : log) {
        if (auto* m = std::get_if<EventMarker>(&e)) {
            for (auto& c : m->created) {
                universe.insert(Term::key(c.ref));
                if (!c.hashed_from)
                    continue;
                universe.insert(Term::key(*c.hashed_from));
                rules.push_back({{Term::key(*c.hashed_from)}, {Term::key(c.ref)}});
                if (!c.paired)
                    plain_children[*c.hashed_from].push_back(c.ref);
            }
            for (auto& r : m->retired)
                universe.insert(Term::key(r));
            for (auto& d : m->dk_created)
                universe.insert(Term::device_key(d.device, d.nonce, d.lineage));
            for (auto& d : m->dk_retired)
                universe.insert(Term::device_key(d.device, d.nonce, d.lineage));
        } else if (auto* msg = std::get_if<RekeyMessage>(&e)) {
            auto items = items_of(msg->payload);
            if (items.empty())
                continue;
            universe.insert(items.begin(), items.end());
            for (auto& env : msg->envelopes) {
                if (env.protection) {
                    universe.insert(Term::key(*env.protection));
                    rules.push_back({{Term::key(*env.protection)}, items});
                } else if (self) {
                    for (auto& r : env.recipients)
                        if (r == *self)
                            known.insert(items.begin(), items.end());
                }
            }
        } else {
            auto& p = std::get<DataPacket>(e);
            Term dk = Term::device_key(p.device, p.nonce, p.lineage);
            universe.insert(dk);
            universe.insert(Term::payload(p.packet_id));
            rules.push_back({{dk}, {Term::payload(p.packet_id)}});
        }
    }
    for (auto& [src, kids] : plain_children)
        for (auto& a : kids)
            for (auto& b : kids)
                if (a != b)
                    rules.push_back({{Term::key(a)}, {Term::key(b)}});

    // Fill lineage chains, nonce ranges and the base keys they imply.
    for (bool grew = true; grew;) {
        grew = false;
        auto add = [&](const Term& t) { grew = universe.insert(t).second || grew; };
        std::map<DeviceId, std::pair<std::uint64_t, std::uint64_t>> range;
        for (auto t : std::vector<Term>(universe.begin(), universe.end())) {
            if (t.kind == Term::Kind::DeviceKey) {
                for (std::uint64_t l = 0; l < t.c; ++l)
                    add(Term::device_key(static_cast<DeviceId>(t.a), t.b, static_cast<std::uint32_t>(l)));
                add(Term::nonce(static_cast<DeviceId>(t.a), t.b));
            } else if (t.kind == Term::Kind::Nonce) {
                add(Term::identity(static_cast<DeviceId>(t.a)));
                add(Term::device_key(static_cast<DeviceId>(t.a), t.b, 0));
                auto d = static_cast<DeviceId>(t.a);
                auto it = range.find(d);
                if (it == range.end())
                    range[d] = {t.b, t.b};
                else
                    it->second = {std::min(it->second.first, t.b), std::max(it->second.second, t.b)};
            }
        }
        for (auto& [d, r] : range)
            for (std::uint64_t n = r.first; n <= r.second; ++n)
                add(Term::nonce(d, n));
    }
    for (auto& t : universe) {
        auto d = static_cast<DeviceId>(t.a);
        if (t.kind == Term::Kind::DeviceKey) {
            Term next = Term::device_key(d, t.b, static_cast<std::uint32_t>(t.c + 1));
            if (universe.count(next))
                rules.push_back({{t}, {next}});
        } else if (t.kind == Term::Kind::Nonce) {
            if (universe.count(Term::nonce(d, t.b + 1)))
                rules.push_back({{t}, {Term::nonce(d, t.b + 1)}});
            rules.push_back({{Term::identity(d), t}, {Term::device_key(d, t.b, 0)}});
        }
    }

    for (bool grew = true; grew;) {
        grew = false;
        for (auto& [pre, post] : rules) {
            bool fire = true;
            for (auto& p : pre)
                fire = fire && known.count(p);
            if (!fire)
                continue;
            for (auto& q : post)
                grew = known.insert(q).second || grew;
        }
    }
    return known;
}

inline bool is_atomic(const SymbolicTerm& t)
{
    return t.kind != SymbolicTerm::Kind::Hash && t.kind != SymbolicTerm::Kind::Pair;
}

inline std::set<SymbolicTerm> atomic_only(const std::set<SymbolicTerm>& s)
{
    std::set<SymbolicTerm> out;
    for (auto& t : s)
        if (is_atomic(t))
            out.insert(t);
    return out;
}

// A random transcript over a small alphabet so that keys, devices and nonces collide often.
struct RandomTranscript {
    TranscriptLog log;
    std::set<SymbolicTerm> initial;
    std::optional<Principal> self;
};

inline RandomTranscript random_transcript(std::mt19937_64& rng, std::size_t max_entries = 50)
{
    auto pick = [&](std::uint64_t n) { return rng() % n; };
    auto key = [&] { return KeyRef{1 + pick(8), static_cast<std::uint32_t>(pick(3))}; };
    auto dev = [&] { return static_cast<DeviceId>(1 + pick(3)); };
    auto principal = [&] {
        return pick(2) ? Principal::user(static_cast<UserId>(1 + pick(3))) : Principal::device(dev());
    };
    auto atom = [&]() -> SymbolicTerm {
        switch (pick(5)) {
        case 0:
            return SymbolicTerm::device_key(dev(), pick(5), static_cast<std::uint32_t>(pick(4)));
        case 1:
            return SymbolicTerm::identity(dev());
        case 2:
            return SymbolicTerm::nonce(dev(), pick(5));
        default:
            return SymbolicTerm::key(key());
        }
    };

    RandomTranscript r;
    for (std::size_t i = pick(4); i > 0; --i)
        r.initial.insert(atom());
    if (pick(3))
        r.self = principal();
    std::size_t n = 1 + pick(max_entries);
    for (std::size_t i = 0; i < n; ++i) {
        auto roll = pick(10);
        if (roll < 3) {
            EventMarker m;
            m.seq = i;
            for (std::size_t j = pick(4); j > 0; --j) {
                KeyCreation c{key(), std::nullopt, false};
                if (pick(2)) {
                    c.hashed_from = key();
                    c.paired = pick(3) == 0;
                }
                m.created.push_back(c);
            }
            if (pick(2))
                m.retired.push_back(key());
            for (std::size_t j = pick(3); j > 0; --j)
                m.dk_created.push_back({dev(), pick(5), static_cast<std::uint32_t>(pick(4))});
            r.log.push_back(m);
        } else if (roll < 9) {
            RekeyMessage msg;
            msg.seq = i;
            msg.kind = pick(4) ? MsgKind::Multicast : MsgKind::Establishment;
            for (std::size_t j = 1 + pick(2); j > 0; --j) {
                Envelope env;
                if (msg.kind != MsgKind::Establishment)
                    env.protection = key();
                env.recipients.push_back(principal());
                msg.envelopes.push_back(env);
            }
            for (std::size_t j = pick(4); j > 0; --j) {
                auto k = key();
                msg.payload.keys.push_back({k.id, k.version, {}});
            }
            for (std::size_t j = pick(2); j > 0; --j) {
                DeviceKey dk;
                dk.nonce = pick(5);
                dk.lineage = static_cast<std::uint32_t>(pick(4));
                msg.payload.device_keys.push_back({dev(), dk});
            }
            if (pick(4) == 0) {
                IdentityItem it{dev(), {}, std::nullopt};
                if (pick(2))
                    it.nonce = pick(5);
                msg.payload.identities.push_back(it);
            }
            if (pick(5) == 0)
                msg.payload.nonces.push_back({dev(), pick(5)});
            r.log.push_back(msg);
        } else {
            DataPacket p;
            p.packet_id = i;
            p.device = dev();
            p.nonce = pick(5);
            p.lineage = static_cast<std::uint32_t>(pick(4));
            p.seq = i;
            r.log.push_back(p);
        }
    }
    return r;
}

} // namespace gkm::oracle
