#pragma once

#include "gkm/messages.hpp"
#include "gkm/transport.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gkm {

// Symbolic terms. Hash and Pair refer to other interned terms by id.
struct SymbolicTerm {
    enum class Kind : std::uint8_t { Key, DeviceKey, Identity, Nonce, Payload, Hash, Pair };
    Kind kind = Kind::Key;
    std::uint64_t a = 0; // key id, device id, packet id, or first operand
    std::uint64_t b = 0; // key version, nonce, second operand, or salt key id
    std::uint64_t c = 0; // lineage or salt key version
    auto operator<=>(const SymbolicTerm&) const = default;

    static SymbolicTerm key(KeyRef r) { return {Kind::Key, r.id, r.version, 0}; }
    static SymbolicTerm device_key(DeviceId d, std::uint64_t n, std::uint32_t l) { return {Kind::DeviceKey, d, n, l}; }
    static SymbolicTerm identity(DeviceId d) { return {Kind::Identity, d, 0, 0}; }
    static SymbolicTerm nonce(DeviceId d, std::uint64_t n) { return {Kind::Nonce, d, n, 0}; }
    static SymbolicTerm payload(std::uint64_t packet) { return {Kind::Payload, packet, 0, 0}; }
};

using TermId = std::uint32_t;

// Least-fixed-point knowledge of several principals at once. Column i is the
// knowledge of one principal (or coalition); every bus ciphertext is public.
class KnowledgeEngine {
public:
    explicit KnowledgeEngine(std::size_t columns);

    TermId intern(const SymbolicTerm& t);
    std::optional<TermId> find(const SymbolicTerm& t) const;
    TermId hash_of(TermId t);
    TermId hash_of(TermId t, KeyRef salt); // salts are public
    TermId pair_of(TermId a, TermId b);

    void grant(std::size_t col, TermId t);
    void add_enc(TermId key, TermId content);
    void add_derivation(TermId from, TermId to);

    bool knows(std::size_t col, TermId t) const;
    bool knows(std::size_t col, const SymbolicTerm& t) const;
    std::vector<TermId> known_by(std::size_t col) const;

    const SymbolicTerm& term(TermId t) const { return terms_[t]; }
    std::size_t size() const { return terms_.size(); }
    std::size_t columns() const { return cols_; }
    std::string describe(TermId t) const;

private:
    using Bits = std::vector<std::uint64_t>;

    struct Conj {
        TermId other;
        TermId out;
    };

    void link_new_term(TermId id);
    void propagate();
    void merge_into(TermId to, const Bits& bits);
    void touch(TermId to, const Bits& bits);

    std::size_t cols_;
    std::size_t words_;
    std::vector<SymbolicTerm> terms_;
    std::map<SymbolicTerm, TermId> index_;
    std::vector<Bits> bits_;
    std::vector<std::vector<TermId>> edges_;
    std::vector<std::vector<Conj>> conj_;
    std::map<DeviceId, std::pair<std::uint64_t, std::uint64_t>> nonce_range_;
    std::map<std::pair<DeviceId, std::uint64_t>, std::uint64_t> max_lineage_;
    std::vector<TermId> work_;
};

std::string describe(const SymbolicTerm& t);

// Terms carried by the transcript pieces.
struct KnowledgeWindow {
    Seq lo = 0;
    Seq hi = ~Seq{0};
    bool contains(Seq s) const { return s >= lo && s <= hi; }
};

// Feeds transcript entries into an engine. Establishment envelopes are only
// readable by the listed recipient, so they feed the columns named in `owners`.
class TranscriptFeeder {
public:
    TranscriptFeeder(KnowledgeEngine& eng, std::map<Principal, std::vector<std::size_t>> owners);
    void feed(const TranscriptEntry& e);

private:
    std::optional<TermId> payload_term(const Payload& p);
    KnowledgeEngine& eng_;
    std::map<Principal, std::vector<std::size_t>> owners_;
};

// Single-principal closure: initial knowledge plus everything observable in
// the window (the principal also reads establishments addressed to it).
std::set<SymbolicTerm> closure(const std::set<SymbolicTerm>& initial, const TranscriptLog& log,
                               KnowledgeWindow window = {}, std::optional<Principal> self = std::nullopt);

struct Verdict {
    Seq seq = 0;
    std::string property; // forward_secrecy, backward_secrecy, collusion, access_control
    std::string subject;
    bool pass = true;
    std::vector<std::string> witnesses;

    std::string line() const;
};

struct AuditOptions {
    bool secrecy = true;
    bool collusion = true;
    bool access_control = true;
    std::size_t collusion_cap = 20;
    std::uint64_t seed = 1;
};

class Auditor {
public:
    explicit Auditor(TranscriptLog log);

    Verdict check_forward_secrecy(Seq leave_event, Principal p);
    Verdict check_backward_secrecy(Seq join_event, Principal p);
    Verdict check_collusion(Seq leave_event, UserId leaver, DeviceId accomplice);
    Verdict check_access_control(Seq epoch);

    // Every applicable check over the whole transcript in one pass.
    std::vector<Verdict> audit_all(const AuditOptions& opt = {});

    const std::vector<EventMarker>& markers() const { return markers_; }
    std::vector<DeviceId> live_devices_after(Seq s) const;

private:
    struct Pass {
        KnowledgeEngine eng{1};
        std::map<Principal, std::size_t> col;
        std::map<std::pair<UserId, DeviceId>, std::size_t> coalition;
        std::map<Seq, Verdict> access;
    };

    Pass& principal_pass();
    Pass run_pass(const std::vector<std::pair<UserId, DeviceId>>& coalitions, bool track_access);
    const EventMarker& marker(Seq s) const;
    Verdict forward(Pass& pass, std::size_t col, Seq t, const std::string& subject, const std::string& property,
                    std::optional<DeviceId> exclude_device, bool dk_only);
    Verdict backward(Pass& pass, std::size_t col, Seq t, const std::string& subject);
    void note_last(const SymbolicTerm& t, Seq s);
    void note_first(const SymbolicTerm& t, Seq s);

    TranscriptLog log_;
    std::vector<EventMarker> markers_;
    std::set<Principal> principals_;
    std::optional<Pass> principal_pass_;
    // term -> last seq at which it is created or protects data (forward candidates)
    std::map<SymbolicTerm, Seq> fwd_last_;
    // term -> first seq at which a joiner must not know it (backward candidates)
    std::map<SymbolicTerm, Seq> bwd_first_;
};

} // namespace gkm
