#pragma once

#include "gkm/keymat.hpp"
#include "gkm/types.hpp"

#include <array>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

namespace gkm {

// Binary logical key hierarchy. Internal node ids double as their key ids;
// a leaf carries the member's secret key. The root always exists in a
// nonempty tree, so a one-member tree is a root with a single leaf child.
class LkhTree {
public:
    using Member = std::uint64_t;

    struct Node {
        NodeId id = 0;
        NodeId parent = 0;
        std::array<NodeId, 2> child{0, 0};
        std::optional<Member> member;
        VersionedKey key;

        bool is_leaf() const { return member.has_value(); }
        int child_count() const { return (child[0] != 0) + (child[1] != 0); }
    };

    enum class RootUpdate { Refresh, Hash, Keep };

    struct InsertResult {
        NodeId leaf = 0;
        std::vector<NodeId> refreshed_path; // leaf side first, root last
    };

    struct RemoveResult {
        std::vector<NodeId> refreshed_path; // root last
        std::vector<NodeId> removed_nodes;  // internal nodes that disappeared
        // Set when a deepest member was moved into the vacated leaf to keep the tree balanced.
        std::optional<Member> moved;
        NodeId moved_leaf = 0;
        std::vector<NodeId> moved_stale; // old ancestors of `moved` off its new path (removed ones only)
    };

    struct Relocation {
        std::vector<Member> movers;
        std::vector<NodeId> refreshed; // between either spot and their lowest common ancestor
        std::vector<NodeId> removed;
    };

    LkhTree() = default;

    // Balanced build: left subtree gets floor(k/2) members. Members keep input order.
    static LkhTree build(const std::vector<std::pair<Member, VersionedKey>>& members, KeySource& ks);
    // Old roots become children of the new root; a single-child old root is dropped
    // and its child attached directly (ids listed in `dropped`).
    static LkhTree splice_as_children(const VersionedKey& root_key, LkhTree left, LkhTree right,
                                      std::vector<NodeId>* dropped = nullptr);

    // Re-keys the root of `big` as `root_key` and hangs `small` beside node `at` under a new
    // internal node keyed `joint_key`. A single-child root of `small` is dropped.
    static LkhTree graft(const VersionedKey& root_key, LkhTree big, LkhTree small, NodeId at,
                         const VersionedKey& joint_key, std::vector<NodeId>* dropped = nullptr);
    // Height (internal path length) `graft` would produce at `at`.
    std::size_t graft_height(NodeId at, std::size_t small_height) const;
    std::size_t node_depth(NodeId n) const; // edges from the root

    InsertResult insert_leaf(Member m, const VersionedKey& member_secret, KeySource& ks,
                             RootUpdate root_update = RootUpdate::Refresh);
    // With a nonzero rekey budget, a deeper member from a two-leaf subtree next to the leaver's
    // path may take the vacated leaf when that keeps the rekey within `max_messages`.
    RemoveResult remove_leaf(Member m, KeySource& ks, std::size_t max_messages = 0);
    // Subtree moves (t, s) that hang `t` beside `s` and lower the tree, best first: lowest
    // resulting height, fewest leaves at that height, fewest refreshed keys.
    std::vector<std::pair<NodeId, NodeId>> relocation_candidates(std::size_t limit) const;
    // Keys the moved members held or now reach below the common ancestor of both spots are refreshed.
    Relocation relocate(NodeId t, NodeId s, KeySource& ks);
    // Messages needed to hand out `fresh`: one per refreshed node with a child outside the set.
    std::size_t rekey_messages(const std::set<NodeId>& fresh) const;
    void split_leaf(Member m, Member a, const VersionedKey& ka, Member b, const VersionedKey& kb, KeySource& ks);
    void set_leaf_key(Member m, const VersionedKey& key);
    void set_key(NodeId n, const VersionedKey& key);
    void clear();

    std::vector<VersionedKey> path_keys(Member m) const;
    std::vector<NodeId> path_nodes(Member m) const;
    std::vector<NodeId> min_cover(const std::set<Member>& targets) const;

    bool empty() const { return root_ == 0; }
    std::size_t size() const { return leaf_map_.size(); }
    NodeId root() const { return root_; }
    const VersionedKey& group_key() const { return node(root_).key; }
    bool contains(Member m) const { return leaf_map_.count(m) != 0; }
    NodeId leaf_of(Member m) const;
    const Node& node(NodeId n) const;
    const VersionedKey& key(NodeId n) const { return node(n).key; }
    std::vector<Member> members() const;
    std::vector<Member> members_under(NodeId n) const;
    std::vector<NodeId> children(NodeId n) const;
    std::size_t depth(Member m) const { return path_nodes(m).size(); }
    std::size_t height() const;
    const std::unordered_map<NodeId, Node>& nodes() const { return nodes_; }
    const std::map<Member, NodeId>& leaf_map() const { return leaf_map_; }

    // Throws std::logic_error naming the first broken structural invariant.
    void validate() const;

    // Used by snapshot loading.
    static LkhTree from_nodes(NodeId root, std::vector<Node> nodes);

private:
    NodeId build_rec(const std::vector<std::pair<Member, VersionedKey>>& ms, std::size_t lo, std::size_t hi,
                     NodeId parent, KeySource& ks, bool force_internal);
    Node& mut(NodeId n);
    NodeId detach_leaf(NodeId leaf, std::vector<NodeId>& removed);
    void collect_members(NodeId n, std::vector<Member>& out) const;
    bool cover_rec(NodeId n, const std::set<Member>& targets, std::vector<NodeId>& out) const;

    NodeId root_ = 0;
    std::unordered_map<NodeId, Node> nodes_;
    std::map<Member, NodeId> leaf_map_;
};

} // namespace gkm
