#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gkm {

using Bytes32 = std::array<std::uint8_t, 32>;

using KeyId = std::uint64_t;
using NodeId = std::uint64_t;
using UserId = std::uint32_t;
using DeviceId = std::uint32_t;
using SgId = std::uint32_t;
using DgId = std::uint32_t;
using Seq = std::uint64_t;

struct KeyRef {
    KeyId id = 0;
    std::uint32_t version = 0;
    auto operator<=>(const KeyRef&) const = default;
};

struct VersionedKey {
    KeyId id = 0;
    std::uint32_t version = 0;
    Bytes32 material{};

    KeyRef ref() const { return {id, version}; }
    bool operator==(const VersionedKey&) const = default;
};

enum class Role : std::uint8_t { User, Device };

struct Principal {
    Role role = Role::User;
    std::uint32_t id = 0;
    auto operator<=>(const Principal&) const = default;

    static Principal user(UserId u) { return {Role::User, u}; }
    static Principal device(DeviceId d) { return {Role::Device, d}; }
    std::string str() const { return (role == Role::User ? "u" : "d") + std::to_string(id); }
    static Principal parse(const std::string& s);
};

// Invalid operation against the current protocol state (precondition failure).
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Principal Principal::parse(const std::string& s)
{
    if (s.size() < 2 || (s[0] != 'u' && s[0] != 'd'))
        throw ProtocolError("bad principal: " + s);
    return {s[0] == 'u' ? Role::User : Role::Device,
            static_cast<std::uint32_t>(std::stoul(s.substr(1)))};
}

} // namespace gkm
