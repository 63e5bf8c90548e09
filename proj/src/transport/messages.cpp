#include "gkm/messages.hpp"

#include <json.hpp>

#include <array>
#include <set>

namespace gkm {

using json = nlohmann::ordered_json;

namespace {

constexpr std::array kEventNames{"setup",     "user_join",          "user_leave",
                                 "device_join", "device_leave",     "user_join_empty_sg",
                                 "user_leave_last_spot", "dg_join", "dg_leave"};
constexpr std::array kKindNames{"broadcast", "multicast", "unicast", "establishment"};
constexpr std::array kDirectiveNames{"hash_key", "derive_key", "hash_device_keys", "nonce_increment",
                                     "device_unavailable", "pair_hash_key", "pair_derive_key"};

template <typename E, std::size_t N>
E lookup(const std::array<const char*, N>& names, std::string_view s, const char* what)
{
    for (std::size_t i = 0; i < N; ++i)
        if (s == names[i])
            return static_cast<E>(i);
    throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(s));
}

json ref_j(const KeyRef& r) { return json::array({r.id, r.version}); }
KeyRef ref_from(const json& j) { return {j.at(0).get<KeyId>(), j.at(1).get<std::uint32_t>()}; }

json key_j(const VersionedKey& k) { return json::array({k.id, k.version, to_hex(k.material)}); }
VersionedKey key_from(const json& j)
{
    return {j.at(0).get<KeyId>(), j.at(1).get<std::uint32_t>(), bytes32_from_hex(j.at(2).get<std::string>())};
}

json dk_j(const DkRef& d) { return json::array({d.device, d.nonce, d.lineage}); }
DkRef dk_from(const json& j)
{
    return {j.at(0).get<DeviceId>(), j.at(1).get<std::uint64_t>(), j.at(2).get<std::uint32_t>()};
}

json principals_j(const std::vector<Principal>& ps)
{
    json a = json::array();
    for (auto& p : ps)
        a.push_back(p.str());
    return a;
}

std::vector<Principal> principals_from(const json& j)
{
    std::vector<Principal> out;
    for (auto& s : j)
        out.push_back(Principal::parse(s.get<std::string>()));
    return out;
}

json payload_j(const Payload& p)
{
    json j = json::object();
    json keys = json::array();
    for (auto& k : p.keys)
        keys.push_back(key_j(k));
    j["keys"] = keys;
    j["retire"] = p.retire;
    json dks = json::array();
    for (auto& d : p.device_keys)
        dks.push_back(json::array({d.device, d.key.nonce, d.key.lineage, to_hex(d.key.material)}));
    j["device_keys"] = dks;
    json ids = json::array();
    for (auto& i : p.identities) {
        json e = json::array({i.device, to_hex(i.id)});
        if (i.nonce)
            e.push_back(*i.nonce);
        ids.push_back(e);
    }
    j["identities"] = ids;
    json ns = json::array();
    for (auto& n : p.nonces)
        ns.push_back(json::array({n.device, n.nonce}));
    j["nonces"] = ns;
    json ds = json::array();
    for (auto& d : p.directives) {
        json e = json::object();
        e["kind"] = to_string(d.kind);
        e["key"] = ref_j(d.key);
        e["target"] = d.target;
        e["devices"] = d.devices;
        ds.push_back(e);
    }
    j["directives"] = ds;
    return j;
}

Payload payload_from(const json& j)
{
    Payload p;
    for (auto& k : j.at("keys"))
        p.keys.push_back(key_from(k));
    p.retire = j.at("retire").get<std::vector<KeyId>>();
    for (auto& d : j.at("device_keys"))
        p.device_keys.push_back({d.at(0).get<DeviceId>(),
                                 DeviceKey{bytes32_from_hex(d.at(3).get<std::string>()), d.at(1).get<std::uint64_t>(),
                                           d.at(2).get<std::uint32_t>()}});
    for (auto& i : j.at("identities")) {
        IdentityItem it{i.at(0).get<DeviceId>(), bytes32_from_hex(i.at(1).get<std::string>()), std::nullopt};
        if (i.size() > 2)
            it.nonce = i.at(2).get<std::uint64_t>();
        p.identities.push_back(it);
    }
    for (auto& n : j.at("nonces"))
        p.nonces.push_back({n.at(0).get<DeviceId>(), n.at(1).get<std::uint64_t>()});
    for (auto& d : j.at("directives")) {
        Directive dir;
        dir.kind = lookup<DirectiveKind>(kDirectiveNames, d.at("kind").get<std::string>(), "directive");
        dir.key = ref_from(d.at("key"));
        dir.target = d.at("target").get<KeyId>();
        dir.devices = d.at("devices").get<std::vector<DeviceId>>();
        p.directives.push_back(dir);
    }
    return p;
}

} // namespace

std::string_view to_string(EventType t) { return kEventNames[static_cast<std::size_t>(t)]; }
EventType event_type_from_string(std::string_view s) { return lookup<EventType>(kEventNames, s, "event type"); }
std::string_view to_string(MsgKind k) { return kKindNames[static_cast<std::size_t>(k)]; }
MsgKind msg_kind_from_string(std::string_view s) { return lookup<MsgKind>(kKindNames, s, "message kind"); }
std::string_view to_string(DirectiveKind k) { return kDirectiveNames[static_cast<std::size_t>(k)]; }

std::vector<Principal> RekeyMessage::addressed_to() const
{
    std::set<Principal> s;
    for (auto& e : envelopes)
        s.insert(e.recipients.begin(), e.recipients.end());
    return {s.begin(), s.end()};
}

void MessageCounts::add(const RekeyMessage& m)
{
    switch (m.kind) {
    case MsgKind::Broadcast: ++broadcasts; break;
    case MsgKind::Multicast: ++multicasts; break;
    case MsgKind::Unicast: ++unicasts; break;
    case MsgKind::Establishment: ++establishments; break;
    }
    envelopes += m.envelopes.size();
}

std::string to_line(const TranscriptEntry& e)
{
    json j = json::object();
    if (auto* m = std::get_if<EventMarker>(&e)) {
        j["record"] = "event";
        j["seq"] = m->seq;
        j["type"] = to_string(m->type);
        j["joined"] = principals_j(m->joined);
        j["departed"] = principals_j(m->departed);
        json cr = json::array();
        for (auto& c : m->created) {
            json x = json::array({c.ref.id, c.ref.version});
            if (c.hashed_from)
                x.push_back(ref_j(*c.hashed_from));
            if (c.hashed_from && c.paired)
                x.push_back("pair");
            cr.push_back(x);
        }
        j["created"] = cr;
        json rt = json::array();
        for (auto& r : m->retired)
            rt.push_back(ref_j(r));
        j["retired"] = rt;
        json dc = json::array(), dr = json::array();
        for (auto& d : m->dk_created)
            dc.push_back(dk_j(d));
        for (auto& d : m->dk_retired)
            dr.push_back(dk_j(d));
        j["dk_created"] = dc;
        j["dk_retired"] = dr;
        json au = json::array();
        for (auto& [d, us] : m->authorized)
            au.push_back(json::array({d, us}));
        j["authorized"] = au;
    } else if (auto* m = std::get_if<RekeyMessage>(&e)) {
        j["record"] = "message";
        j["seq"] = m->seq;
        j["index"] = m->index;
        j["kind"] = to_string(m->kind);
        json envs = json::array();
        for (auto& env : m->envelopes) {
            json x = json::object();
            x["key"] = env.protection ? ref_j(*env.protection) : json(nullptr);
            x["to"] = principals_j(env.recipients);
            envs.push_back(x);
        }
        j["envelopes"] = envs;
        j["payload"] = payload_j(m->payload);
        j["note"] = m->note;
    } else {
        auto& p = std::get<DataPacket>(e);
        j["record"] = "data";
        j["packet"] = p.packet_id;
        j["device"] = p.device;
        j["seq"] = p.seq;
        j["dk"] = json::array({p.nonce, p.lineage});
        j["epoch"] = p.epoch;
        j["ciphertext"] = to_hex(p.ciphertext);
    }
    return j.dump();
}

TranscriptEntry entry_from_line(const std::string& line)
{
    json j = json::parse(line);
    const std::string rec = j.at("record").get<std::string>();
    if (rec == "event") {
        EventMarker m;
        m.seq = j.at("seq").get<Seq>();
        m.type = event_type_from_string(j.at("type").get<std::string>());
        m.joined = principals_from(j.at("joined"));
        m.departed = principals_from(j.at("departed"));
        for (auto& c : j.at("created")) {
            KeyCreation kc{{c.at(0).get<KeyId>(), c.at(1).get<std::uint32_t>()}, std::nullopt};
            if (c.size() > 2)
                kc.hashed_from = ref_from(c.at(2));
            kc.paired = c.size() > 3 && c.at(3) == "pair";
            m.created.push_back(kc);
        }
        for (auto& r : j.at("retired"))
            m.retired.push_back(ref_from(r));
        for (auto& d : j.at("dk_created"))
            m.dk_created.push_back(dk_from(d));
        for (auto& d : j.at("dk_retired"))
            m.dk_retired.push_back(dk_from(d));
        for (auto& a : j.at("authorized"))
            m.authorized.emplace_back(a.at(0).get<DeviceId>(), a.at(1).get<std::vector<UserId>>());
        return m;
    }
    if (rec == "message") {
        RekeyMessage m;
        m.seq = j.at("seq").get<Seq>();
        m.index = j.at("index").get<std::uint32_t>();
        m.kind = msg_kind_from_string(j.at("kind").get<std::string>());
        for (auto& x : j.at("envelopes")) {
            Envelope env;
            if (!x.at("key").is_null())
                env.protection = ref_from(x.at("key"));
            env.recipients = principals_from(x.at("to"));
            m.envelopes.push_back(env);
        }
        m.payload = payload_from(j.at("payload"));
        m.note = j.at("note").get<std::string>();
        return m;
    }
    if (rec == "data") {
        DataPacket p;
        p.packet_id = j.at("packet").get<std::uint64_t>();
        p.device = j.at("device").get<DeviceId>();
        p.seq = j.at("seq").get<Seq>();
        p.nonce = j.at("dk").at(0).get<std::uint64_t>();
        p.lineage = j.at("dk").at(1).get<std::uint32_t>();
        p.epoch = j.at("epoch").get<Seq>();
        auto hex = j.at("ciphertext").get<std::string>();
        if (hex.size() % 2 != 0)
            throw std::invalid_argument("odd ciphertext hex");
        for (std::size_t i = 0; i < hex.size(); i += 2)
            p.ciphertext.push_back(static_cast<std::uint8_t>(std::stoi(hex.substr(i, 2), nullptr, 16)));
        return p;
    }
    throw std::invalid_argument("unknown record type: " + rec);
}

} // namespace gkm
