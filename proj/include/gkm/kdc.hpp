#pragma once

#include "gkm/costmodel.hpp"
#include "gkm/endpoints.hpp"
#include "gkm/keymat.hpp"
#include "gkm/lkh.hpp"
#include "gkm/messages.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gkm {

struct Topology {
    std::map<DgId, std::vector<DeviceId>> dg_devices;
    std::map<SgId, std::set<DgId>> subs;
    std::map<SgId, std::vector<UserId>> sg_users;
};

// Protocol mutations used only to show that the auditor notices them.
struct Faults {
    bool skip_join_hash_update = false; // no hash-update broadcast on user joins
    bool skip_nonce_increment = false;  // no nonce increment on user leaves
    bool groupit_shared_secret = false; // users learn device IDs, devices share DG nonces
};

// Values the message-count bounds are instantiated with.
struct EventInfo {
    EventType type = EventType::Setup;
    std::uint64_t N = 0; // N_x: post-join for joins, pre-leave for leaves
    std::uint64_t M = 0; // M_y, same convention
    std::uint64_t Y = 0; // Y_x
    std::uint64_t L = 0; // populated SGs subscribed to DG_y
    std::uint64_t P = 0; // DGs before the event
    std::uint64_t Q = 0; // populated SGs after the event
    std::uint64_t split_users = 0;
    std::uint64_t merges = 0;
    std::uint64_t new_subscriber_sgs = 0;
};

// Bound parameters for an event, with the largest DG size after it.
ScenarioParams params_for(const EventInfo& info, std::size_t mmax);

struct EventOutcome {
    Seq seq = 0;
    EventMarker marker;
    std::vector<RekeyMessage> messages;
    EventInfo info;
};

struct SgRecord {
    SgId id = 0;
    std::set<DgId> subs;
    LkhTree tree; // empty when the SG has no users
};

struct DgRecord {
    DgId id = 0;
    LkhTree tree;
};

struct KdcState {
    std::map<SgId, SgRecord> sgs;
    std::map<DgId, DgRecord> dgs;
    LkhTree outer; // leaves are populated SG ids, leaf keys are SG group keys
    std::map<UserId, SgId> user_sg;
    std::map<DeviceId, DgId> device_dg;
    std::map<DeviceId, DeviceIdentity> identities;
    std::map<DeviceId, DeviceKey> device_keys;
    std::map<Principal, VersionedKey> secret_keys;
    Seq event_seq = 0;
    SgId next_sg_id = 1;
    KeySource ks;
};

class Kdc {
public:
    explicit Kdc(std::uint64_t seed = 1, Faults faults = {});

    EventOutcome setup(const Topology& topo);
    EventOutcome user_join(UserId u, SgId x);
    EventOutcome user_leave(UserId u);
    EventOutcome device_join(DeviceId k, DgId y);
    EventOutcome device_leave(DeviceId k);
    EventOutcome user_join_empty_sg(UserId u, SgId x, std::optional<std::set<DgId>> subs = std::nullopt);
    EventOutcome user_leave_last_spot(UserId u);
    EventOutcome dg_join(DgId y, const std::vector<DeviceId>& devices,
                         const std::map<SgId, std::map<UserId, bool>>& opt_in);
    EventOutcome dg_leave(DgId y, const std::vector<std::pair<SgId, SgId>>& merge_plan);

    // SG pairs whose subscription sets coincide once y is gone, as (smaller id, larger id).
    std::vector<std::pair<SgId, SgId>> merge_plan_for(DgId y) const;

    const KdcState& state() const { return st_; }
    const Faults& faults() const { return faults_; }
    std::size_t P() const { return st_.dgs.size(); }
    std::size_t populated_sgs() const { return st_.outer.size(); }
    std::size_t sg_size(SgId x) const;
    std::vector<DeviceId> subscribed_devices(SgId x) const;
    std::vector<SgId> populated_subscribers(DgId y) const;
    std::size_t max_dg_size() const;

    UserState project_user(UserId u) const;
    DeviceState project_device(DeviceId d) const;

    // Throws std::logic_error on the first violated state invariant.
    void check_invariants() const;

    std::string snapshot() const;
    static Kdc from_snapshot(const std::string& text);

private:
    void begin(EventType t);
    EventOutcome finish();
    VersionedKey establish(Principal p);
    void emit(MsgKind kind, std::vector<Envelope> envs, Payload payload, std::string note);

    std::vector<Principal> users_of_sg(SgId x) const;
    std::vector<Principal> users_under_outer(NodeId n) const;
    std::vector<Principal> all_users() const;
    std::vector<Principal> devices_of_dg(DgId y) const;
    std::vector<VersionedKey> outer_path_keys(SgId x) const;
    std::vector<Envelope> outer_cover(const std::set<SgId>& sgs) const;
    std::vector<NodeId> refresh_outer_path(SgId x);
    void emit_outer_offpath(const std::vector<NodeId>& path, NodeId exclude, const std::vector<KeyId>& retire,
                            const LkhTree::RemoveResult* rem = nullptr);
    void emit_inner_offpath(const LkhTree& t, Role role, const std::vector<NodeId>& path, NodeId exclude,
                            bool skip_root_key, const std::vector<VersionedKey>& extra,
                            const std::vector<KeyId>& retire, const std::string& note,
                            const LkhTree::RemoveResult* rem = nullptr);
    struct InnerRekey {
        std::set<NodeId> fresh;
        std::vector<KeyId> retire;
        std::map<LkhTree::Member, std::vector<KeyId>> stale;
    };
    // Relocates deepest members while the tree is taller than ceil(log2 N) and the rekey of
    // `rk.fresh` still fits in `max_messages`.
    void rebalance(LkhTree& t, InnerRekey& rk, std::size_t max_messages);
    // Spends what the event bound leaves over on rebalancing SG trees.
    void maintain_sg_trees();
    // One message per refreshed node with a child outside `fresh` (other than `exclude`); moved
    // members also retire their stale keys.
    void emit_inner_refresh(const LkhTree& t, Role role, const InnerRekey& rk, NodeId exclude, bool skip_root_key,
                            const std::vector<VersionedKey>& root_extra, const std::string& note);
    void broadcast_hash_update(SgId x, const std::vector<DeviceId>& devs);
    void broadcast_nonce_increment(SgId x, const std::vector<DeviceId>& devs);
    void distribute_device_keys(DgId y, const std::string& note);
    void add_identities_for_users(Payload& p, const std::vector<DeviceId>& devs) const;
    void add_dg_nonces(Payload& p, const std::vector<DgId>& dgs) const;
    std::map<KeyId, std::uint32_t> current_key_versions() const;
    std::map<DeviceId, DkRef> current_dks() const;

    KdcState st_;
    Faults faults_;

    // per-event scratch
    EventOutcome cur_;
    std::map<KeyId, std::uint32_t> before_keys_;
    std::map<DeviceId, DkRef> before_dks_;
    std::map<KeyRef, KeyRef> derivations_;
    std::set<KeyRef> paired_derivations_;
};

} // namespace gkm
