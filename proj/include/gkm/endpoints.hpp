#pragma once

#include "gkm/messages.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gkm {

// Key stores are flat: an endpoint does not need to know where in a tree a
// key sits, only its id and current version.
struct UserState {
    UserId user_id = 0;
    KeyId secret_id = 0;
    std::map<KeyId, VersionedKey> keys;
    std::map<DeviceId, DeviceKey> device_keys;
    Seq last_seq = 0;

    std::size_t inventory() const { return keys.size() + device_keys.size(); }
};

struct DeviceState {
    DeviceId device_id = 0;
    KeyId secret_id = 0;
    std::optional<DeviceIdentity> identity;
    DeviceKey device_key;
    Seq dk_epoch = 0;
    std::map<KeyId, VersionedKey> keys;
    Seq last_seq = 0;

    // keys plus ID and nonce
    std::size_t inventory() const { return keys.size() + (identity ? 2 : 0); }
};

class EndpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Returns true when one envelope addressed to the endpoint could be opened.
// Throws EndpointError on out-of-order delivery.
bool apply_rekey(UserState& st, const RekeyMessage& msg);
bool apply_rekey(DeviceState& st, const RekeyMessage& msg);

// Seq-advance notice closing an event.
void advance(UserState& st, Seq seq);
void advance(DeviceState& st, Seq seq);

DataPacket device_publish(const DeviceState& st, std::uint64_t packet_id, Seq seq,
                          std::span<const std::uint8_t> payload);

enum class DecryptStatus { Ok, UnknownDevice, StaleKey, Rejected };

struct DecryptResult {
    DecryptStatus status = DecryptStatus::Rejected;
    std::vector<std::uint8_t> payload;
};

DecryptResult user_decrypt(const UserState& st, const DataPacket& pkt);

// Empty string when equal, otherwise the first difference. last_seq is ignored.
std::string diff_state(const UserState& have, const UserState& want);
std::string diff_state(const DeviceState& have, const DeviceState& want);

} // namespace gkm
