#include "gkm/keymat.hpp"

#include <openssl/evp.h>

#include <limits>
#include <memory>

namespace gkm {

Bytes32 sha256(std::span<const std::uint8_t> data)
{
    Bytes32 out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
        throw std::runtime_error("EVP_Digest failed");
    return out;
}

Bytes32 h(const Bytes32& k) { return sha256(k); }

Bytes32 h_pair(const Bytes32& k, KeyRef salt)
{
    std::array<std::uint8_t, 76> buf{};
    std::copy(k.begin(), k.end(), buf.begin());
    std::copy(k.begin(), k.end(), buf.begin() + 32);
    for (int i = 0; i < 8; ++i)
        buf[64 + i] = static_cast<std::uint8_t>(salt.id >> (56 - 8 * i));
    for (int i = 0; i < 4; ++i)
        buf[72 + i] = static_cast<std::uint8_t>(salt.version >> (24 - 8 * i));
    return sha256(buf);
}

std::string to_hex(std::span<const std::uint8_t> data)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(data.size() * 2);
    for (auto b : data) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 15]);
    }
    return s;
}

Bytes32 bytes32_from_hex(std::string_view hex)
{
    if (hex.size() != 64)
        throw std::invalid_argument("expected 64 hex digits");
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument("bad hex digit");
    };
    Bytes32 out{};
    for (std::size_t i = 0; i < 32; ++i)
        out[i] = static_cast<std::uint8_t>(nib(hex[2 * i]) << 4 | nib(hex[2 * i + 1]));
    return out;
}

static void put_be64(std::uint8_t* p, std::uint64_t v)
{
    for (int i = 7; i >= 0; --i) {
        p[i] = static_cast<std::uint8_t>(v & 0xff);
        v >>= 8;
    }
}

DeviceKey derive_device_key(const DeviceIdentity& identity)
{
    std::array<std::uint8_t, 40> buf{};
    std::copy(identity.id.begin(), identity.id.end(), buf.begin());
    put_be64(buf.data() + 32, identity.nonce);
    return DeviceKey{sha256(buf), identity.nonce, 0};
}

DeviceKey hash_update(const DeviceKey& key) { return DeviceKey{h(key.material), key.nonce, key.lineage + 1}; }

VersionedKey hash_update(const VersionedKey& key) { return VersionedKey{key.id, key.version + 1, h(key.material)}; }

VersionedKey pair_hash_update(const VersionedKey& key)
{
    return VersionedKey{key.id, key.version + 1, h_pair(key.material, {key.id, key.version + 1})};
}

DeviceIdentity increment_nonce(const DeviceIdentity& identity)
{
    if (identity.nonce == std::numeric_limits<std::uint64_t>::max())
        throw ProtocolError("nonce overflow");
    return DeviceIdentity{identity.id, identity.nonce + 1};
}

Bytes32 KeySource::fresh()
{
    std::array<std::uint8_t, 16> buf{};
    put_be64(buf.data(), seed_);
    put_be64(buf.data() + 8, counter_++);
    return sha256(buf);
}

std::uint64_t KeySource::next_u64()
{
    auto b = fresh();
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v = v << 8 | b[i];
    return v;
}

namespace {

struct CtxFree {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};

std::array<std::uint8_t, 12> gcm_iv(std::uint64_t a, std::uint64_t b)
{
    std::array<std::uint8_t, 12> iv{};
    std::array<std::uint8_t, 16> full{};
    put_be64(full.data(), a);
    put_be64(full.data() + 8, b);
    // a is small (device id); keep its low 4 bytes and all of b
    std::copy(full.begin() + 4, full.end(), iv.begin());
    return iv;
}

constexpr std::size_t kTag = 16;

} // namespace

std::vector<std::uint8_t> aead_seal(const Bytes32& key, std::uint64_t a, std::uint64_t b,
                                    std::span<const std::uint8_t> plaintext)
{
    std::unique_ptr<EVP_CIPHER_CTX, CtxFree> ctx(EVP_CIPHER_CTX_new());
    auto iv = gcm_iv(a, b);
    std::vector<std::uint8_t> out(plaintext.size() + kTag);
    int len = 0;
    if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), iv.data()) != 1 ||
        EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(), static_cast<int>(plaintext.size())) != 1)
        throw std::runtime_error("AES-GCM encrypt failed");
    int fin = 0;
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTag, out.data() + plaintext.size()) != 1)
        throw std::runtime_error("AES-GCM finalize failed");
    return out;
}

std::optional<std::vector<std::uint8_t>> aead_open(const Bytes32& key, std::uint64_t a, std::uint64_t b,
                                                   std::span<const std::uint8_t> sealed)
{
    if (sealed.size() < kTag)
        return std::nullopt;
    std::unique_ptr<EVP_CIPHER_CTX, CtxFree> ctx(EVP_CIPHER_CTX_new());
    auto iv = gcm_iv(a, b);
    std::size_t n = sealed.size() - kTag;
    std::vector<std::uint8_t> out(n);
    std::array<std::uint8_t, kTag> tag{};
    std::copy(sealed.begin() + n, sealed.end(), tag.begin());
    int len = 0;
    if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), iv.data()) != 1 ||
        EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(n)) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTag, tag.data()) != 1)
        return std::nullopt;
    int fin = 0;
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1)
        return std::nullopt;
    return out;
}

} // namespace gkm
