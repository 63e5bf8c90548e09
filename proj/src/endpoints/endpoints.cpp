#include "gkm/endpoints.hpp"

#include <algorithm>

namespace gkm {

namespace {

bool holds(const std::map<KeyId, VersionedKey>& keys, const KeyRef& r)
{
    auto it = keys.find(r.id);
    return it != keys.end() && it->second.version == r.version;
}

template <typename State>
bool opens(const State& st, const RekeyMessage& msg, Principal self)
{
    if (msg.seq != st.last_seq + 1)
        throw EndpointError(self.str() + ": out-of-order message seq " + std::to_string(msg.seq) + " after " +
                            std::to_string(st.last_seq));
    for (auto& env : msg.envelopes) {
        if (std::find(env.recipients.begin(), env.recipients.end(), self) == env.recipients.end())
            continue;
        if (!env.protection || holds(st.keys, *env.protection))
            return true;
    }
    return false;
}

bool contains(const std::vector<DeviceId>& v, DeviceId d) { return std::find(v.begin(), v.end(), d) != v.end(); }

template <typename State>
void apply_common(State& st, const Payload& p)
{
    for (KeyId id : p.retire)
        st.keys.erase(id);
    for (auto& k : p.keys)
        st.keys[k.id] = k;
    for (auto& d : p.directives) {
        if (d.kind == DirectiveKind::HashKey && holds(st.keys, d.key)) {
            st.keys[d.key.id] = hash_update(st.keys[d.key.id]);
        } else if (d.kind == DirectiveKind::DeriveKey && holds(st.keys, d.key)) {
            st.keys[d.target] = VersionedKey{d.target, 0, h(st.keys[d.key.id].material)};
        } else if (d.kind == DirectiveKind::PairHashKey && holds(st.keys, d.key)) {
            st.keys[d.key.id] = pair_hash_update(st.keys[d.key.id]);
        } else if (d.kind == DirectiveKind::PairDeriveKey && holds(st.keys, d.key)) {
            st.keys[d.target] = VersionedKey{d.target, 0, h_pair(st.keys[d.key.id].material, {d.target, 0})};
        }
    }
}

} // namespace

bool apply_rekey(UserState& st, const RekeyMessage& msg)
{
    if (!opens(st, msg, Principal::user(st.user_id)))
        return false;
    apply_common(st, msg.payload);
    for (auto& dk : msg.payload.device_keys)
        st.device_keys[dk.device] = dk.key;
    for (auto& d : msg.payload.directives) {
        if (d.kind == DirectiveKind::HashDeviceKeys) {
            for (DeviceId j : d.devices) {
                auto it = st.device_keys.find(j);
                if (it != st.device_keys.end())
                    it->second = hash_update(it->second);
            }
        } else if (d.kind == DirectiveKind::DeviceUnavailable) {
            for (DeviceId j : d.devices)
                st.device_keys.erase(j);
        }
    }
    return true;
}

bool apply_rekey(DeviceState& st, const RekeyMessage& msg)
{
    if (!opens(st, msg, Principal::device(st.device_id)))
        return false;
    apply_common(st, msg.payload);
    for (auto& id : msg.payload.identities) {
        if (id.device == st.device_id && id.nonce) {
            st.identity = DeviceIdentity{id.id, *id.nonce};
            st.device_key = derive_device_key(*st.identity);
            st.dk_epoch = msg.seq;
        }
    }
    for (auto& d : msg.payload.directives) {
        if (!contains(d.devices, st.device_id))
            continue;
        if (d.kind == DirectiveKind::HashDeviceKeys) {
            st.device_key = hash_update(st.device_key);
            st.dk_epoch = msg.seq;
        } else if (d.kind == DirectiveKind::NonceIncrement) {
            if (!st.identity)
                throw EndpointError(Principal::device(st.device_id).str() + ": nonce increment without identity");
            st.identity = increment_nonce(*st.identity);
            st.device_key = derive_device_key(*st.identity);
            st.dk_epoch = msg.seq;
        }
    }
    return true;
}

void advance(UserState& st, Seq seq)
{
    if (seq != st.last_seq + 1)
        throw EndpointError("seq gap at user " + std::to_string(st.user_id));
    st.last_seq = seq;
}

void advance(DeviceState& st, Seq seq)
{
    if (seq != st.last_seq + 1)
        throw EndpointError("seq gap at device " + std::to_string(st.device_id));
    st.last_seq = seq;
}

DataPacket device_publish(const DeviceState& st, std::uint64_t packet_id, Seq seq,
                          std::span<const std::uint8_t> payload)
{
    DataPacket p;
    p.packet_id = packet_id;
    p.device = st.device_id;
    p.seq = seq;
    p.nonce = st.device_key.nonce;
    p.lineage = st.device_key.lineage;
    p.epoch = st.dk_epoch;
    p.ciphertext = aead_seal(st.device_key.material, st.device_id, packet_id, payload);
    return p;
}

DecryptResult user_decrypt(const UserState& st, const DataPacket& pkt)
{
    auto it = st.device_keys.find(pkt.device);
    if (it == st.device_keys.end())
        return {DecryptStatus::UnknownDevice, {}};
    if (it->second.nonce != pkt.nonce || it->second.lineage != pkt.lineage)
        return {DecryptStatus::StaleKey, {}};
    auto pt = aead_open(it->second.material, pkt.device, pkt.packet_id, pkt.ciphertext);
    if (!pt)
        return {DecryptStatus::Rejected, {}};
    return {DecryptStatus::Ok, std::move(*pt)};
}

namespace {

std::string diff_keys(const std::map<KeyId, VersionedKey>& have, const std::map<KeyId, VersionedKey>& want)
{
    for (auto& [id, k] : want) {
        auto it = have.find(id);
        if (it == have.end())
            return "missing key " + std::to_string(id) + "v" + std::to_string(k.version);
        if (it->second.version != k.version)
            return "key " + std::to_string(id) + " at v" + std::to_string(it->second.version) + ", expected v" +
                   std::to_string(k.version);
        if (it->second.material != k.material)
            return "key " + std::to_string(id) + " material differs";
    }
    for (auto& [id, k] : have)
        if (!want.count(id))
            return "extra key " + std::to_string(id) + "v" + std::to_string(k.version);
    return {};
}

} // namespace

std::string diff_state(const UserState& have, const UserState& want)
{
    std::string d = diff_keys(have.keys, want.keys);
    if (!d.empty())
        return "u" + std::to_string(want.user_id) + ": " + d;
    for (auto& [dev, k] : want.device_keys) {
        auto it = have.device_keys.find(dev);
        if (it == have.device_keys.end())
            return "u" + std::to_string(want.user_id) + ": missing DK of d" + std::to_string(dev);
        if (!(it->second == k))
            return "u" + std::to_string(want.user_id) + ": DK of d" + std::to_string(dev) + " differs (n=" +
                   std::to_string(it->second.nonce) + ",l=" + std::to_string(it->second.lineage) + " vs n=" +
                   std::to_string(k.nonce) + ",l=" + std::to_string(k.lineage) + ")";
    }
    for (auto& [dev, k] : have.device_keys)
        if (!want.device_keys.count(dev))
            return "u" + std::to_string(want.user_id) + ": extra DK of d" + std::to_string(dev);
    return {};
}

std::string diff_state(const DeviceState& have, const DeviceState& want)
{
    std::string d = diff_keys(have.keys, want.keys);
    std::string who = "d" + std::to_string(want.device_id) + ": ";
    if (!d.empty())
        return who + d;
    if (have.identity != want.identity)
        return who + "identity differs";
    if (!(have.device_key == want.device_key))
        return who + "device key differs";
    return {};
}

} // namespace gkm
