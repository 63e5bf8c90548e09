#pragma once

#include "gkm/keymat.hpp"
#include "gkm/types.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace gkm {

enum class EventType {
    Setup,
    UserJoin,
    UserLeave,
    DeviceJoin,
    DeviceLeave,
    UserJoinEmptySg,
    UserLeaveLastSpot,
    DgJoin,
    DgLeave,
};

std::string_view to_string(EventType t);
EventType event_type_from_string(std::string_view s);

enum class MsgKind { Broadcast, Multicast, Unicast, Establishment };

std::string_view to_string(MsgKind k);
MsgKind msg_kind_from_string(std::string_view s);

// One ciphertext of a message. Establishment envelopes have no protecting key
// (out-of-band handshake) and are readable by their single recipient only.
struct Envelope {
    std::optional<KeyRef> protection;
    std::vector<Principal> recipients;
};

enum class DirectiveKind {
    HashKey,          // holders of `key` replace it with h(key), version + 1
    DeriveKey,        // holders of `key` install KeyRef{target, 0} = h(key)
    HashDeviceKeys,   // DK_j := h(DK_j) for every j in devices, at devices and holders
    NonceIncrement,   // devices in the set: n := n + 1, DK := h(ID || n)
    DeviceUnavailable, // holders drop DK_j
    PairHashKey,       // holders of `key` replace it with h(key || key), version + 1
    PairDeriveKey      // holders of `key` install KeyRef{target, 0} = h(key || key)
};

std::string_view to_string(DirectiveKind k);

struct Directive {
    DirectiveKind kind = DirectiveKind::HashKey;
    KeyRef key{};
    KeyId target = 0;
    std::vector<DeviceId> devices;
};

struct DeviceKeyItem {
    DeviceId device = 0;
    DeviceKey key;
};

// ID and, optionally, nonce of a device.
struct IdentityItem {
    DeviceId device = 0;
    Bytes32 id{};
    std::optional<std::uint64_t> nonce;
};

struct NonceItem {
    DeviceId device = 0;
    std::uint64_t nonce = 0;
};

struct Payload {
    std::vector<VersionedKey> keys;
    std::vector<KeyId> retire;
    std::vector<DeviceKeyItem> device_keys;
    std::vector<IdentityItem> identities;
    std::vector<NonceItem> nonces;
    std::vector<Directive> directives;
};

struct RekeyMessage {
    Seq seq = 0;
    std::uint32_t index = 0;
    MsgKind kind = MsgKind::Multicast;
    std::vector<Envelope> envelopes;
    Payload payload;
    std::string note;

    std::vector<Principal> addressed_to() const;
};

struct DataPacket {
    std::uint64_t packet_id = 0;
    DeviceId device = 0;
    Seq seq = 0;
    std::uint64_t nonce = 0;
    std::uint32_t lineage = 0;
    Seq epoch = 0; // seq of the protecting key's last update
    std::vector<std::uint8_t> ciphertext;
};

struct KeyCreation {
    KeyRef ref;
    std::optional<KeyRef> hashed_from;
    bool paired = false; // h(old || old) rather than h(old)
};

struct DkRef {
    DeviceId device = 0;
    std::uint64_t nonce = 0;
    std::uint32_t lineage = 0;
    auto operator<=>(const DkRef&) const = default;
};

// Per-event metadata: who joined/left and which key versions were created
// or retired. Declared by the KDC; consumed by the auditor and by replay.
struct EventMarker {
    Seq seq = 0;
    EventType type = EventType::Setup;
    std::vector<Principal> joined;
    std::vector<Principal> departed;
    std::vector<KeyCreation> created;
    std::vector<KeyRef> retired;
    std::vector<DkRef> dk_created;
    std::vector<DkRef> dk_retired;
    // device -> users authorized to read it after this event
    std::vector<std::pair<DeviceId, std::vector<UserId>>> authorized;
};

using TranscriptEntry = std::variant<EventMarker, RekeyMessage, DataPacket>;

struct MessageCounts {
    std::uint64_t broadcasts = 0;
    std::uint64_t multicasts = 0;
    std::uint64_t unicasts = 0;
    std::uint64_t establishments = 0;
    std::uint64_t envelopes = 0;

    void add(const RekeyMessage& m);
    std::uint64_t total() const { return broadcasts + multicasts + unicasts; }
    bool operator==(const MessageCounts&) const = default;
};

// Line-delimited records with a stable field order.
std::string to_line(const TranscriptEntry& e);
TranscriptEntry entry_from_line(const std::string& line);

} // namespace gkm
