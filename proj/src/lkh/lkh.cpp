#include "gkm/lkh.hpp"

#include <algorithm>
#include <deque>
#include <tuple>

namespace gkm {

LkhTree::Node& LkhTree::mut(NodeId n)
{
    auto it = nodes_.find(n);
    if (it == nodes_.end())
        throw std::logic_error("unknown node " + std::to_string(n));
    return it->second;
}

const LkhTree::Node& LkhTree::node(NodeId n) const
{
    auto it = nodes_.find(n);
    if (it == nodes_.end())
        throw std::logic_error("unknown node " + std::to_string(n));
    return it->second;
}

NodeId LkhTree::leaf_of(Member m) const
{
    auto it = leaf_map_.find(m);
    if (it == leaf_map_.end())
        throw ProtocolError("member not in tree: " + std::to_string(m));
    return it->second;
}

NodeId LkhTree::build_rec(const std::vector<std::pair<Member, VersionedKey>>& ms, std::size_t lo, std::size_t hi,
                          NodeId parent, KeySource& ks, bool force_internal)
{
    std::size_t k = hi - lo;
    if (k == 1 && !force_internal) {
        Node leaf;
        leaf.id = ks.next_id();
        leaf.parent = parent;
        leaf.member = ms[lo].first;
        leaf.key = ms[lo].second;
        if (!leaf_map_.emplace(ms[lo].first, leaf.id).second)
            throw ProtocolError("duplicate member " + std::to_string(ms[lo].first));
        nodes_.emplace(leaf.id, leaf);
        return leaf.id;
    }
    Node in;
    in.key = ks.fresh_key();
    in.id = in.key.id;
    in.parent = parent;
    NodeId id = in.id;
    nodes_.emplace(id, in);
    if (k == 1) {
        NodeId c = build_rec(ms, lo, hi, id, ks, false);
        mut(id).child[0] = c;
        return id;
    }
    std::size_t mid = lo + k / 2;
    NodeId l = build_rec(ms, lo, mid, id, ks, false);
    NodeId r = build_rec(ms, mid, hi, id, ks, false);
    mut(id).child = {l, r};
    return id;
}

LkhTree LkhTree::build(const std::vector<std::pair<Member, VersionedKey>>& members, KeySource& ks)
{
    LkhTree t;
    if (!members.empty())
        t.root_ = t.build_rec(members, 0, members.size(), 0, ks, true);
    return t;
}

LkhTree::InsertResult LkhTree::insert_leaf(Member m, const VersionedKey& member_secret, KeySource& ks,
                                           RootUpdate root_update)
{
    if (contains(m))
        throw ProtocolError("duplicate member " + std::to_string(m));

    InsertResult res;
    Node leaf;
    leaf.id = ks.next_id();
    leaf.member = m;
    leaf.key = member_secret;

    if (empty()) {
        Node r;
        r.key = ks.fresh_key();
        r.id = r.key.id;
        root_ = r.id;
        r.child[0] = leaf.id;
        leaf.parent = r.id;
        nodes_.emplace(r.id, r);
        nodes_.emplace(leaf.id, leaf);
        leaf_map_.emplace(m, leaf.id);
        res.leaf = leaf.id;
        res.refreshed_path = {root_};
        return res;
    }

    // Breadth-first, left to right: first internal node with an empty slot.
    NodeId vacant = 0;
    NodeId first_leaf = 0;
    std::deque<NodeId> q{root_};
    while (!q.empty() && vacant == 0) {
        NodeId n = q.front();
        q.pop_front();
        const Node& nd = node(n);
        if (nd.is_leaf()) {
            if (first_leaf == 0)
                first_leaf = n;
            continue;
        }
        if (nd.child_count() < 2) {
            vacant = n;
            break;
        }
        q.push_back(nd.child[0]);
        q.push_back(nd.child[1]);
    }

    std::optional<NodeId> created;
    if (vacant != 0) {
        Node& v = mut(vacant);
        int slot = v.child[0] == 0 ? 0 : 1;
        v.child[slot] = leaf.id;
        leaf.parent = vacant;
    } else {
        // Split the shallowest-leftmost leaf: new internal node takes its place.
        Node& old = mut(first_leaf);
        Node in;
        in.key = ks.fresh_key();
        in.id = in.key.id;
        in.parent = old.parent;
        in.child = {first_leaf, leaf.id};
        Node& par = mut(old.parent);
        par.child[par.child[0] == first_leaf ? 0 : 1] = in.id;
        mut(first_leaf).parent = in.id;
        leaf.parent = in.id;
        created = in.id;
        nodes_.emplace(in.id, in);
    }
    nodes_.emplace(leaf.id, leaf);
    leaf_map_.emplace(m, leaf.id);
    res.leaf = leaf.id;

    for (NodeId n = node(leaf.id).parent; n != 0; n = node(n).parent) {
        res.refreshed_path.push_back(n);
        if (created && n == *created)
            continue;
        Node& nd = mut(n);
        if (n == root_) {
            if (root_update == RootUpdate::Refresh)
                nd.key = ks.refresh(nd.key);
            else if (root_update == RootUpdate::Hash)
                nd.key = hash_update(nd.key);
        } else {
            nd.key = ks.refresh(nd.key);
        }
    }
    return res;
}

// Unlinks a leaf node, splicing out a non-root parent left with one child. Returns the
// lowest surviving ancestor.
NodeId LkhTree::detach_leaf(NodeId leaf, std::vector<NodeId>& removed)
{
    NodeId cur = node(leaf).parent;
    {
        Node& p = mut(cur);
        p.child[p.child[0] == leaf ? 0 : 1] = 0;
    }
    nodes_.erase(leaf);

    while (cur != root_) {
        Node& c = mut(cur);
        NodeId g = c.parent;
        int cnt = c.child_count();
        if (cnt == 0) {
            Node& gp = mut(g);
            gp.child[gp.child[0] == cur ? 0 : 1] = 0;
            removed.push_back(cur);
            nodes_.erase(cur);
            cur = g;
            continue;
        }
        if (cnt == 1) {
            NodeId s = c.child[0] != 0 ? c.child[0] : c.child[1];
            Node& gp = mut(g);
            gp.child[gp.child[0] == cur ? 0 : 1] = s;
            mut(s).parent = g;
            removed.push_back(cur);
            nodes_.erase(cur);
            cur = g;
        }
        break;
    }
    // The root keeps its key; an internal only child is absorbed into it.
    if (cur == root_ && node(root_).child_count() == 1) {
        Node& r = mut(root_);
        NodeId c = r.child[0] != 0 ? r.child[0] : r.child[1];
        if (!node(c).is_leaf()) {
            auto grand = node(c).child;
            r.child = grand;
            for (NodeId g : grand)
                if (g != 0)
                    mut(g).parent = root_;
            removed.push_back(c);
            nodes_.erase(c);
        }
    }
    return cur;
}

LkhTree::RemoveResult LkhTree::remove_leaf(Member m, KeySource& ks, std::size_t max_messages)
{
    NodeId leaf = leaf_of(m);
    if (size() < 2)
        throw ProtocolError("cannot remove the sole member; use the last-spot procedure");

    RemoveResult res;
    std::optional<Member> mover;
    if (max_messages > 0) {
        // Candidates sit in a two-leaf subtree hanging off the leaver's path, so every key the
        // mover held is either refreshed here or removed. Moving costs one message per path node.
        auto path = path_nodes(m);
        std::size_t dm = path.size(), best = dm;
        if (dm <= max_messages) {
            for (NodeId a : path) {
                for (NodeId c : children(a)) {
                    if (c == leaf || std::find(path.begin(), path.end(), c) != path.end())
                        continue;
                    const Node& cn = node(c);
                    if (cn.is_leaf() || cn.child_count() != 2 || !node(cn.child[0]).is_leaf() ||
                        !node(cn.child[1]).is_leaf())
                        continue;
                    for (NodeId v : cn.child) {
                        std::size_t dv = depth(*node(v).member);
                        if (dv > best || (dv == best && mover && *node(v).member < *mover && dv > dm)) {
                            best = dv;
                            mover = *node(v).member;
                        }
                    }
                }
            }
        }
    }

    NodeId cur = 0;
    if (mover) {
        // The mover leaves its old spot without a rekey (it stays a member) and takes the leaver's leaf.
        NodeId vleaf = leaf_of(*mover);
        auto old_path = path_nodes(*mover);
        VersionedKey vkey = node(vleaf).key;
        leaf_map_.erase(*mover);
        detach_leaf(vleaf, res.removed_nodes);
        Node& l = mut(leaf);
        l.member = *mover;
        l.key = vkey;
        leaf_map_.erase(m);
        leaf_map_[*mover] = leaf;
        cur = l.parent;
        res.moved = mover;
        res.moved_leaf = leaf;
        auto new_path = path_nodes(*mover);
        for (NodeId n : old_path)
            if (std::find(new_path.begin(), new_path.end(), n) == new_path.end())
                res.moved_stale.push_back(n);
    } else {
        leaf_map_.erase(m);
        cur = detach_leaf(leaf, res.removed_nodes);
    }

    for (NodeId n = cur; n != 0; n = node(n).parent) {
        Node& nd = mut(n);
        nd.key = ks.refresh(nd.key);
        res.refreshed_path.push_back(n);
    }
    return res;
}

std::vector<std::pair<NodeId, NodeId>> LkhTree::relocation_candidates(std::size_t limit) const
{
    if (size() < 3)
        return {};
    std::unordered_map<NodeId, std::size_t> dep;
    std::vector<std::pair<NodeId, std::vector<NodeId>>> leaves; // leaf, ancestors leaf side first
    std::size_t h = 0, at_h = 0;
    for (auto& [m, leaf] : leaf_map_) {
        auto path = path_nodes(m);
        h = std::max(h, path.size());
        leaves.emplace_back(leaf, std::move(path));
    }
    for (auto& [leaf, path] : leaves)
        at_h += path.size() == h;
    for (auto& [id, nd] : nodes_)
        dep[id] = node_depth(id);

    struct Cand {
        std::size_t height, count, cost;
        NodeId t, s;
    };
    std::vector<Cand> out;
    for (auto& [t, tn] : nodes_) {
        if (t == root_ || tn.parent == root_)
            continue;
        NodeId par = tn.parent;
        NodeId w = node(par).child[0] == t ? node(par).child[1] : node(par).child[0];
        for (auto& [s, sn] : nodes_) {
            if (s == root_ || s == t || s == par || s == w || dep[s] + 1 >= dep[t])
                continue;
            bool bad = false; // s must not sit inside t or above it
            for (NodeId n = t; n != 0 && !bad; n = node(n).parent)
                bad = n == s;
            for (NodeId n = s; n != 0 && !bad; n = node(n).parent)
                bad = n == t;
            if (bad)
                continue;
            bool s_under_w = false;
            for (NodeId n = s; n != 0 && !s_under_w; n = node(n).parent)
                s_under_w = n == w;
            std::size_t ds = dep[s] - (s_under_w ? 1 : 0);
            std::size_t nh = 0, cnt = 0;
            for (auto& [leaf, path] : leaves) {
                auto under = [&](NodeId x) { return leaf == x || std::find(path.begin(), path.end(), x) != path.end(); };
                std::size_t d = path.size();
                if (under(t))
                    d = d - dep[t] + ds + 1;
                else
                    d = d + (under(s) ? 1 : 0) - (under(w) ? 1 : 0);
                if (d > nh) {
                    nh = d;
                    cnt = 0;
                }
                cnt += d == nh;
            }
            if (nh > h || (nh == h && cnt >= at_h))
                continue;
            std::set<NodeId> up;
            for (NodeId n = s; n != 0; n = node(n).parent)
                up.insert(n);
            NodeId lca = par;
            while (!up.count(lca))
                lca = node(lca).parent;
            std::size_t cost = (dep[s] - dep[lca]) + (dep[par] - dep[lca]);
            out.push_back({nh, cnt, cost, t, s});
        }
    }
    std::sort(out.begin(), out.end(), [](const Cand& a, const Cand& b) {
        return std::tie(a.height, a.count, a.cost, a.t, a.s) < std::tie(b.height, b.count, b.cost, b.t, b.s);
    });
    std::vector<std::pair<NodeId, NodeId>> res;
    for (std::size_t i = 0; i < out.size() && i < limit; ++i)
        res.emplace_back(out[i].t, out[i].s);
    return res;
}

LkhTree::Relocation LkhTree::relocate(NodeId t, NodeId s, KeySource& ks)
{
    Relocation r;
    r.movers = members_under(t);
    NodeId par = node(t).parent;
    NodeId g = node(par).parent;
    if (g == 0)
        throw ProtocolError("relocate: subtree hangs off the root");
    NodeId w = node(par).child[0] == t ? node(par).child[1] : node(par).child[0];
    Node& gn = mut(g);
    gn.child[gn.child[0] == par ? 0 : 1] = w;
    mut(w).parent = g;
    nodes_.erase(par);
    r.removed.push_back(par);

    Node in;
    in.key = ks.fresh_key();
    in.id = in.key.id;
    in.parent = node(s).parent;
    in.child = {s, t};
    Node& sp = mut(in.parent);
    sp.child[sp.child[0] == s ? 0 : 1] = in.id;
    mut(s).parent = in.id;
    mut(t).parent = in.id;
    nodes_.emplace(in.id, in);

    std::set<NodeId> up;
    for (NodeId n = in.id; n != 0; n = node(n).parent)
        up.insert(n);
    NodeId lca = g;
    while (!up.count(lca))
        lca = node(lca).parent;
    for (NodeId n = in.id; n != lca; n = node(n).parent)
        r.refreshed.push_back(n);
    for (NodeId n = g; n != lca; n = node(n).parent)
        r.refreshed.push_back(n);
    for (NodeId n : r.refreshed)
        if (n != in.id)
            mut(n).key = ks.refresh(node(n).key);
    return r;
}

std::size_t LkhTree::rekey_messages(const std::set<NodeId>& fresh) const
{
    std::size_t n = 0;
    for (NodeId f : fresh)
        for (NodeId c : children(f))
            if (!fresh.count(c)) {
                ++n;
                break;
            }
    return n;
}

void LkhTree::split_leaf(Member m, Member a, const VersionedKey& ka, Member b, const VersionedKey& kb, KeySource& ks)
{
    NodeId l = leaf_of(m);
    if (a == b || contains(a) || contains(b))
        throw ProtocolError("split targets must be new distinct members");
    // The old leaf key stays in place as the key of a new internal node.
    Node in = node(l);
    in.id = in.key.id;
    if (nodes_.count(in.id))
        throw std::logic_error("split: key id already used as node id");
    in.member.reset();
    Node na, nb;
    na.id = ks.next_id();
    nb.id = ks.next_id();
    na.parent = nb.parent = in.id;
    na.member = a;
    nb.member = b;
    na.key = ka;
    nb.key = kb;
    in.child = {na.id, nb.id};
    if (in.parent == 0) {
        root_ = in.id;
    } else {
        Node& par = mut(in.parent);
        par.child[par.child[0] == l ? 0 : 1] = in.id;
    }
    nodes_.erase(l);
    leaf_map_.erase(m);
    leaf_map_.emplace(a, na.id);
    leaf_map_.emplace(b, nb.id);
    nodes_.emplace(in.id, in);
    nodes_.emplace(na.id, na);
    nodes_.emplace(nb.id, nb);
}

void LkhTree::set_leaf_key(Member m, const VersionedKey& key) { mut(leaf_of(m)).key = key; }

void LkhTree::set_key(NodeId n, const VersionedKey& key) { mut(n).key = key; }

void LkhTree::clear()
{
    root_ = 0;
    nodes_.clear();
    leaf_map_.clear();
}

LkhTree LkhTree::splice_as_children(const VersionedKey& root_key, LkhTree left, LkhTree right,
                                    std::vector<NodeId>* dropped)
{
    if (left.empty() || right.empty())
        throw ProtocolError("splice requires two nonempty trees");
    LkhTree t;
    Node r;
    r.id = root_key.id;
    r.key = root_key;
    int slot = 0;
    for (auto* src : {&left, &right}) {
        NodeId top = src->root_;
        if (src->node(top).child_count() == 1) {
            const Node& old = src->node(top);
            NodeId only = old.child[0] != 0 ? old.child[0] : old.child[1];
            if (dropped)
                dropped->push_back(top);
            src->nodes_.erase(top);
            top = only;
        }
        for (auto& [id, nd] : src->nodes_) {
            if (!t.nodes_.emplace(id, nd).second || id == r.id)
                throw ProtocolError("node id collision in splice");
        }
        for (auto& [m, leaf] : src->leaf_map_) {
            if (!t.leaf_map_.emplace(m, leaf).second)
                throw ProtocolError("member in both trees");
        }
        t.mut(top).parent = r.id;
        r.child[slot++] = top;
    }
    t.root_ = r.id;
    t.nodes_.emplace(r.id, r);
    return t;
}

std::size_t LkhTree::node_depth(NodeId n) const
{
    std::size_t d = 0;
    for (NodeId p = node(n).parent; p != 0; p = node(p).parent)
        ++d;
    return d;
}

std::size_t LkhTree::graft_height(NodeId at, std::size_t small_height) const
{
    std::size_t h = node_depth(at) + 1 + small_height;
    for (auto& [m, leaf] : leaf_map_) {
        std::size_t d = depth(m);
        NodeId n = leaf;
        while (n != 0 && n != at)
            n = node(n).parent;
        h = std::max(h, d + (n == at ? 1 : 0));
    }
    return h;
}

LkhTree LkhTree::graft(const VersionedKey& root_key, LkhTree big, LkhTree small, NodeId at,
                       const VersionedKey& joint_key, std::vector<NodeId>* dropped)
{
    if (big.empty() || small.empty())
        throw ProtocolError("graft requires two nonempty trees");
    if (at == big.root_ || !big.nodes_.count(at))
        throw ProtocolError("graft point must be a non-root node of the larger tree");

    // Re-key the root under its new id.
    NodeId old_root = big.root_;
    Node r = big.node(old_root);
    big.nodes_.erase(old_root);
    r.id = root_key.id;
    r.key = root_key;
    for (NodeId c : r.child)
        if (c != 0)
            big.mut(c).parent = r.id;
    if (!big.nodes_.emplace(r.id, r).second)
        throw ProtocolError("node id collision in graft");
    big.root_ = r.id;
    if (dropped)
        dropped->push_back(old_root);

    NodeId top = small.root_;
    if (small.node(top).child_count() == 1) {
        const Node& old = small.node(top);
        NodeId only = old.child[0] != 0 ? old.child[0] : old.child[1];
        if (dropped)
            dropped->push_back(top);
        small.nodes_.erase(top);
        top = only;
    }
    for (auto& [id, nd] : small.nodes_)
        if (!big.nodes_.emplace(id, nd).second)
            throw ProtocolError("node id collision in graft");
    for (auto& [m, leaf] : small.leaf_map_)
        if (!big.leaf_map_.emplace(m, leaf).second)
            throw ProtocolError("member in both trees");

    Node k;
    k.id = joint_key.id;
    k.key = joint_key;
    k.parent = big.node(at).parent;
    k.child = {at, top};
    if (!big.nodes_.emplace(k.id, k).second)
        throw ProtocolError("node id collision in graft");
    Node& gp = big.mut(k.parent);
    gp.child[gp.child[0] == at ? 0 : 1] = k.id;
    big.mut(at).parent = k.id;
    big.mut(top).parent = k.id;
    return big;
}

LkhTree LkhTree::from_nodes(NodeId root, std::vector<Node> nodes)
{
    LkhTree t;
    t.root_ = root;
    for (auto& n : nodes) {
        if (n.member)
            t.leaf_map_.emplace(*n.member, n.id);
        t.nodes_.emplace(n.id, std::move(n));
    }
    t.validate();
    return t;
}

std::vector<NodeId> LkhTree::path_nodes(Member m) const
{
    std::vector<NodeId> out;
    for (NodeId n = node(leaf_of(m)).parent; n != 0; n = node(n).parent)
        out.push_back(n);
    return out;
}

std::vector<VersionedKey> LkhTree::path_keys(Member m) const
{
    std::vector<VersionedKey> out;
    for (NodeId n : path_nodes(m))
        out.push_back(node(n).key);
    return out;
}

bool LkhTree::cover_rec(NodeId n, const std::set<Member>& targets, std::vector<NodeId>& out) const
{
    const Node& nd = node(n);
    if (nd.is_leaf())
        return targets.count(*nd.member) != 0;
    std::array<std::vector<NodeId>, 2> sub;
    std::array<bool, 2> full{true, true};
    for (int i = 0; i < 2; ++i)
        if (nd.child[i] != 0)
            full[i] = cover_rec(nd.child[i], targets, sub[i]);
    if (full[0] && full[1])
        return true;
    for (int i = 0; i < 2; ++i) {
        if (nd.child[i] == 0)
            continue;
        if (full[i])
            out.push_back(nd.child[i]);
        else
            out.insert(out.end(), sub[i].begin(), sub[i].end());
    }
    return false;
}

std::vector<NodeId> LkhTree::min_cover(const std::set<Member>& targets) const
{
    if (targets.empty())
        throw ProtocolError("empty target set");
    for (Member m : targets)
        leaf_of(m);
    std::vector<NodeId> out;
    if (cover_rec(root_, targets, out))
        return {root_};
    return out;
}

void LkhTree::collect_members(NodeId n, std::vector<Member>& out) const
{
    const Node& nd = node(n);
    if (nd.is_leaf()) {
        out.push_back(*nd.member);
        return;
    }
    for (NodeId c : nd.child)
        if (c != 0)
            collect_members(c, out);
}

std::vector<LkhTree::Member> LkhTree::members_under(NodeId n) const
{
    std::vector<Member> out;
    collect_members(n, out);
    return out;
}

std::vector<LkhTree::Member> LkhTree::members() const
{
    std::vector<Member> out;
    out.reserve(leaf_map_.size());
    for (auto& [m, _] : leaf_map_)
        out.push_back(m);
    return out;
}

std::vector<NodeId> LkhTree::children(NodeId n) const
{
    std::vector<NodeId> out;
    for (NodeId c : node(n).child)
        if (c != 0)
            out.push_back(c);
    return out;
}

std::size_t LkhTree::height() const
{
    std::size_t h = 0;
    for (auto& [m, leaf] : leaf_map_)
        h = std::max(h, depth(m));
    return h;
}

void LkhTree::validate() const
{
    if (root_ == 0) {
        if (!nodes_.empty() || !leaf_map_.empty())
            throw std::logic_error("empty tree with nodes");
        return;
    }
    if (node(root_).parent != 0)
        throw std::logic_error("root has a parent");
    std::size_t seen = 0, leaves = 0;
    std::deque<NodeId> q{root_};
    std::set<KeyId> key_ids;
    while (!q.empty()) {
        NodeId n = q.front();
        q.pop_front();
        ++seen;
        const Node& nd = node(n);
        if (!key_ids.insert(nd.key.id).second)
            throw std::logic_error("duplicate key id in tree");
        if (nd.is_leaf()) {
            ++leaves;
            if (nd.child_count() != 0)
                throw std::logic_error("leaf with children");
            auto it = leaf_map_.find(*nd.member);
            if (it == leaf_map_.end() || it->second != n)
                throw std::logic_error("leaf map mismatch");
            continue;
        }
        if (nd.key.id != n)
            throw std::logic_error("internal node key id differs from node id");
        if (nd.child_count() == 0)
            throw std::logic_error("internal node without children");
        for (NodeId c : nd.child) {
            if (c == 0)
                continue;
            if (node(c).parent != n)
                throw std::logic_error("broken parent link");
            q.push_back(c);
        }
    }
    if (seen != nodes_.size() || leaves != leaf_map_.size())
        throw std::logic_error("unreachable nodes");
}

} // namespace gkm
