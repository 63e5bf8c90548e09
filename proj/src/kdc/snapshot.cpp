#include "gkm/kdc.hpp"

#include <json.hpp>

namespace gkm {

using json = nlohmann::ordered_json;

namespace {

json key_j(const VersionedKey& k) { return json::array({k.id, k.version, to_hex(k.material)}); }

VersionedKey key_from(const json& j)
{
    return {j.at(0).get<KeyId>(), j.at(1).get<std::uint32_t>(), bytes32_from_hex(j.at(2).get<std::string>())};
}

json tree_j(const LkhTree& t)
{
    json nodes = json::array();
    std::vector<NodeId> ids;
    for (auto& [id, _] : t.nodes())
        ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (NodeId id : ids) {
        const auto& n = t.node(id);
        json e = json::array({n.id, n.parent, n.child[0], n.child[1], key_j(n.key)});
        e.push_back(n.member ? json(*n.member) : json(nullptr));
        nodes.push_back(e);
    }
    return json{{"root", t.root()}, {"nodes", nodes}};
}

LkhTree tree_from(const json& j)
{
    if (j.at("root").get<NodeId>() == 0)
        return {};
    std::vector<LkhTree::Node> nodes;
    for (auto& e : j.at("nodes")) {
        LkhTree::Node n;
        n.id = e.at(0).get<NodeId>();
        n.parent = e.at(1).get<NodeId>();
        n.child = {e.at(2).get<NodeId>(), e.at(3).get<NodeId>()};
        n.key = key_from(e.at(4));
        if (!e.at(5).is_null())
            n.member = e.at(5).get<LkhTree::Member>();
        nodes.push_back(std::move(n));
    }
    return LkhTree::from_nodes(j.at("root").get<NodeId>(), std::move(nodes));
}

} // namespace

std::string Kdc::snapshot() const
{
    json j;
    j["faults"] = {faults_.skip_join_hash_update, faults_.skip_nonce_increment, faults_.groupit_shared_secret};
    j["key_source"] = {st_.ks.seed(), st_.ks.counter(), st_.ks.peek_id()};
    j["event_seq"] = st_.event_seq;
    j["next_sg_id"] = st_.next_sg_id;
    json dgs = json::array();
    for (auto& [y, dg] : st_.dgs)
        dgs.push_back({y, tree_j(dg.tree)});
    j["dgs"] = dgs;
    json sgs = json::array();
    for (auto& [x, sg] : st_.sgs)
        sgs.push_back({x, sg.subs, tree_j(sg.tree)});
    j["sgs"] = sgs;
    j["outer"] = tree_j(st_.outer);
    json devs = json::array();
    for (auto& [d, y] : st_.device_dg) {
        const auto& id = st_.identities.at(d);
        const auto& dk = st_.device_keys.at(d);
        devs.push_back({d, y, to_hex(id.id), id.nonce, to_hex(dk.material), dk.nonce, dk.lineage});
    }
    j["devices"] = devs;
    json users = json::array();
    for (auto& [u, x] : st_.user_sg)
        users.push_back({u, x});
    j["users"] = users;
    json secrets = json::array();
    for (auto& [p, k] : st_.secret_keys)
        secrets.push_back({p.str(), key_j(k)});
    j["secrets"] = secrets;
    return j.dump();
}

Kdc Kdc::from_snapshot(const std::string& text)
{
    json j = json::parse(text);
    Faults f;
    f.skip_join_hash_update = j.at("faults").at(0).get<bool>();
    f.skip_nonce_increment = j.at("faults").at(1).get<bool>();
    f.groupit_shared_secret = j.at("faults").at(2).get<bool>();
    Kdc k(1, f);
    auto& st = k.st_;
    auto& ksj = j.at("key_source");
    st.ks.restore(ksj.at(0).get<std::uint64_t>(), ksj.at(1).get<std::uint64_t>(), ksj.at(2).get<KeyId>());
    st.event_seq = j.at("event_seq").get<Seq>();
    st.next_sg_id = j.at("next_sg_id").get<SgId>();
    for (auto& e : j.at("dgs")) {
        DgId y = e.at(0).get<DgId>();
        st.dgs[y] = DgRecord{y, tree_from(e.at(1))};
    }
    for (auto& e : j.at("sgs")) {
        SgId x = e.at(0).get<SgId>();
        st.sgs[x] = SgRecord{x, e.at(1).get<std::set<DgId>>(), tree_from(e.at(2))};
    }
    st.outer = tree_from(j.at("outer"));
    for (auto& e : j.at("devices")) {
        DeviceId d = e.at(0).get<DeviceId>();
        st.device_dg[d] = e.at(1).get<DgId>();
        st.identities[d] = DeviceIdentity{bytes32_from_hex(e.at(2).get<std::string>()), e.at(3).get<std::uint64_t>()};
        st.device_keys[d] = DeviceKey{bytes32_from_hex(e.at(4).get<std::string>()), e.at(5).get<std::uint64_t>(),
                                      e.at(6).get<std::uint32_t>()};
    }
    for (auto& e : j.at("users"))
        st.user_sg[e.at(0).get<UserId>()] = e.at(1).get<SgId>();
    for (auto& e : j.at("secrets"))
        st.secret_keys[Principal::parse(e.at(0).get<std::string>())] = key_from(e.at(1));
    k.check_invariants();
    return k;
}

} // namespace gkm
