#pragma once

#include "gkm/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gkm {

// The build's hash. All golden vectors are computed against it.
inline constexpr std::string_view kHashName = "SHA-256";

Bytes32 sha256(std::span<const std::uint8_t> data);
Bytes32 h(const Bytes32& k);
// h(k || k || id || version) of the key being created: a hash domain that never meets a plain
// hash chain, and never repeats for two created keys.
Bytes32 h_pair(const Bytes32& k, KeyRef salt);

std::string to_hex(std::span<const std::uint8_t> data);
Bytes32 bytes32_from_hex(std::string_view hex);

struct DeviceIdentity {
    Bytes32 id{};
    std::uint64_t nonce = 0;
    bool operator==(const DeviceIdentity&) const = default;
};

struct DeviceKey {
    Bytes32 material{};
    std::uint64_t nonce = 0;
    std::uint32_t lineage = 0;
    bool operator==(const DeviceKey&) const = default;
};

// DK = h(ID || nonce), nonce as 8 big-endian bytes.
DeviceKey derive_device_key(const DeviceIdentity& identity);
DeviceKey hash_update(const DeviceKey& key);
VersionedKey hash_update(const VersionedKey& key);
VersionedKey pair_hash_update(const VersionedKey& key);
DeviceIdentity increment_nonce(const DeviceIdentity& identity);

// Deterministic key material and id source. material_i = SHA-256(seed || i).
class KeySource {
public:
    explicit KeySource(std::uint64_t seed = 1) : seed_(seed) {}

    KeyId next_id() { return next_id_++; }
    Bytes32 fresh();
    std::uint64_t next_u64();
    VersionedKey fresh_key() { return VersionedKey{next_id(), 0, fresh()}; }
    VersionedKey refresh(const VersionedKey& k) { return VersionedKey{k.id, k.version + 1, fresh()}; }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }
    KeyId peek_id() const { return next_id_; }
    void restore(std::uint64_t seed, std::uint64_t counter, KeyId next_id)
    {
        seed_ = seed;
        counter_ = counter;
        next_id_ = next_id;
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    KeyId next_id_ = 1;
};

// AES-256-GCM with a 12-byte nonce built from (a, b).
std::vector<std::uint8_t> aead_seal(const Bytes32& key, std::uint64_t a, std::uint64_t b,
                                    std::span<const std::uint8_t> plaintext);
std::optional<std::vector<std::uint8_t>> aead_open(const Bytes32& key, std::uint64_t a, std::uint64_t b,
                                                   std::span<const std::uint8_t> sealed);

} // namespace gkm
