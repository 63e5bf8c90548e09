#include "gkm/auditor.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace gkm {

using K = SymbolicTerm::Kind;

std::string describe(const SymbolicTerm& t)
{
    switch (t.kind) {
    case K::Key:
        return "K" + std::to_string(t.a) + "v" + std::to_string(t.b);
    case K::DeviceKey:
        return "DK(d" + std::to_string(t.a) + ",n" + std::to_string(t.b) + ",l" + std::to_string(t.c) + ")";
    case K::Identity:
        return "ID(d" + std::to_string(t.a) + ")";
    case K::Nonce:
        return "N(d" + std::to_string(t.a) + "," + std::to_string(t.b) + ")";
    case K::Payload:
        return "Data(#" + std::to_string(t.a) + ")";
    case K::Hash:
        if (t.b != 0)
            return "h(#" + std::to_string(t.a) + ";K" + std::to_string(t.b) + "v" + std::to_string(t.c) + ")";
        return "h(#" + std::to_string(t.a) + ")";
    case K::Pair:
        return "<#" + std::to_string(t.a) + ",#" + std::to_string(t.b) + ">";
    }
    return "?";
}

// ---------------------------------------------------------------- engine

KnowledgeEngine::KnowledgeEngine(std::size_t columns) : cols_(columns), words_((columns + 63) / 64) {}

std::optional<TermId> KnowledgeEngine::find(const SymbolicTerm& t) const
{
    auto it = index_.find(t);
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

TermId KnowledgeEngine::intern(const SymbolicTerm& t)
{
    if (auto id = find(t))
        return *id;
    auto id = static_cast<TermId>(terms_.size());
    terms_.push_back(t);
    index_.emplace(t, id);
    bits_.emplace_back(words_, 0);
    edges_.emplace_back();
    conj_.emplace_back();
    link_new_term(id);
    return id;
}

TermId KnowledgeEngine::hash_of(TermId t) { return intern({K::Hash, t, 0, 0}); }
TermId KnowledgeEngine::hash_of(TermId t, KeyRef salt) { return intern({K::Hash, t, salt.id, salt.version}); }

TermId KnowledgeEngine::pair_of(TermId a, TermId b) { return intern({K::Pair, a, b, 0}); }

void KnowledgeEngine::link_new_term(TermId id)
{
    const SymbolicTerm t = terms_[id];
    switch (t.kind) {
    case K::Hash:
        add_derivation(static_cast<TermId>(t.a), id);
        break;
    case K::Pair: {
        auto a = static_cast<TermId>(t.a), b = static_cast<TermId>(t.b);
        add_derivation(id, a);
        add_derivation(id, b);
        conj_[a].push_back({b, id});
        conj_[b].push_back({a, id});
        Bits both(words_);
        for (std::size_t w = 0; w < words_; ++w)
            both[w] = bits_[a][w] & bits_[b][w];
        touch(id, both);
        propagate();
        break;
    }
    case K::DeviceKey: {
        auto d = static_cast<DeviceId>(t.a);
        auto key = std::make_pair(d, t.b);
        auto it = max_lineage_.find(key);
        std::uint64_t from = 0;
        if (it == max_lineage_.end()) {
            max_lineage_[key] = t.c;
            intern(SymbolicTerm::nonce(d, t.b));
        } else if (t.c > it->second) {
            from = it->second;
            it->second = t.c;
        } else {
            break; // inside an existing chain; the extending call links it
        }
        for (std::uint64_t l = from; l < t.c; ++l)
            intern(SymbolicTerm::device_key(d, t.b, static_cast<std::uint32_t>(l)));
        for (std::uint64_t l = from; l < t.c; ++l)
            add_derivation(*find(SymbolicTerm::device_key(d, t.b, static_cast<std::uint32_t>(l))),
                           *find(SymbolicTerm::device_key(d, t.b, static_cast<std::uint32_t>(l + 1))));
        break;
    }
    case K::Nonce: {
        auto d = static_cast<DeviceId>(t.a);
        auto n = t.b;
        auto it = nonce_range_.find(d);
        std::uint64_t lo = n, hi = n;
        bool extend = false;
        if (it == nonce_range_.end()) {
            nonce_range_[d] = {n, n};
        } else if (n > it->second.second) {
            lo = it->second.second;
            it->second.second = n;
            extend = true;
        } else if (n < it->second.first) {
            hi = it->second.first;
            it->second.first = n;
            extend = true;
        }
        TermId idt = intern(SymbolicTerm::identity(d));
        TermId dk0 = intern(SymbolicTerm::device_key(d, n, 0));
        conj_[idt].push_back({id, dk0});
        conj_[id].push_back({idt, dk0});
        Bits both(words_);
        for (std::size_t w = 0; w < words_; ++w)
            both[w] = bits_[idt][w] & bits_[id][w];
        touch(dk0, both);
        propagate();
        if (extend) {
            for (std::uint64_t k = lo + 1; k < hi; ++k)
                intern(SymbolicTerm::nonce(d, k));
            for (std::uint64_t k = lo; k < hi; ++k)
                add_derivation(*find(SymbolicTerm::nonce(d, k)), *find(SymbolicTerm::nonce(d, k + 1)));
        }
        break;
    }
    default:
        break;
    }
}

void KnowledgeEngine::touch(TermId to, const Bits& bits)
{
    bool changed = false;
    auto& dst = bits_[to];
    for (std::size_t w = 0; w < words_; ++w) {
        auto add = bits[w] & ~dst[w];
        if (add) {
            dst[w] |= add;
            changed = true;
        }
    }
    if (changed)
        work_.push_back(to);
}

void KnowledgeEngine::merge_into(TermId to, const Bits& bits)
{
    touch(to, bits);
    propagate();
}

void KnowledgeEngine::propagate()
{
    Bits both(words_);
    while (!work_.empty()) {
        TermId t = work_.back();
        work_.pop_back();
        for (TermId e : edges_[t])
            touch(e, bits_[t]);
        for (auto& c : conj_[t]) {
            bool any = false;
            for (std::size_t w = 0; w < words_; ++w) {
                both[w] = bits_[t][w] & bits_[c.other][w];
                any |= both[w] != 0;
            }
            if (any)
                touch(c.out, both);
        }
    }
}

void KnowledgeEngine::grant(std::size_t col, TermId t)
{
    if (col >= cols_)
        throw std::out_of_range("knowledge column out of range");
    Bits b(words_, 0);
    b[col / 64] = std::uint64_t{1} << (col % 64);
    merge_into(t, b);
}

void KnowledgeEngine::add_enc(TermId key, TermId content) { add_derivation(key, content); }

void KnowledgeEngine::add_derivation(TermId from, TermId to)
{
    edges_[from].push_back(to);
    merge_into(to, bits_[from]);
}

bool KnowledgeEngine::knows(std::size_t col, TermId t) const
{
    return (bits_[t][col / 64] >> (col % 64)) & 1;
}

bool KnowledgeEngine::knows(std::size_t col, const SymbolicTerm& t) const
{
    auto id = find(t);
    return id && knows(col, *id);
}

std::vector<TermId> KnowledgeEngine::known_by(std::size_t col) const
{
    std::vector<TermId> out;
    for (TermId t = 0; t < terms_.size(); ++t)
        if (knows(col, t))
            out.push_back(t);
    return out;
}

std::string KnowledgeEngine::describe(TermId id) const
{
    const auto& t = terms_[id];
    if (t.kind == K::Hash && t.b != 0)
        return "h(" + describe(static_cast<TermId>(t.a)) + ";K" + std::to_string(t.b) + "v" + std::to_string(t.c) + ")";
    if (t.kind == K::Hash)
        return "h(" + describe(static_cast<TermId>(t.a)) + ")";
    if (t.kind == K::Pair)
        return "<" + describe(static_cast<TermId>(t.a)) + "," + describe(static_cast<TermId>(t.b)) + ">";
    return gkm::describe(t);
}

// ---------------------------------------------------------------- feeder

TranscriptFeeder::TranscriptFeeder(KnowledgeEngine& eng, std::map<Principal, std::vector<std::size_t>> owners)
    : eng_(eng), owners_(std::move(owners))
{
}

std::optional<TermId> TranscriptFeeder::payload_term(const Payload& p)
{
    std::vector<TermId> items;
    for (auto& k : p.keys)
        items.push_back(eng_.intern(SymbolicTerm::key(k.ref())));
    for (auto& dk : p.device_keys)
        items.push_back(eng_.intern(SymbolicTerm::device_key(dk.device, dk.key.nonce, dk.key.lineage)));
    for (auto& id : p.identities) {
        items.push_back(eng_.intern(SymbolicTerm::identity(id.device)));
        if (id.nonce)
            items.push_back(eng_.intern(SymbolicTerm::nonce(id.device, *id.nonce)));
    }
    for (auto& n : p.nonces)
        items.push_back(eng_.intern(SymbolicTerm::nonce(n.device, n.nonce)));
    if (items.empty())
        return std::nullopt;
    TermId acc = items.back();
    for (auto i = items.size() - 1; i-- > 0;)
        acc = eng_.pair_of(items[i], acc);
    return acc;
}

void TranscriptFeeder::feed(const TranscriptEntry& e)
{
    if (auto* m = std::get_if<EventMarker>(&e)) {
        for (auto& c : m->created) {
            TermId k = eng_.intern(SymbolicTerm::key(c.ref));
            if (c.hashed_from) {
                TermId old = eng_.intern(SymbolicTerm::key(*c.hashed_from));
                TermId h = c.paired ? eng_.hash_of(eng_.pair_of(old, old), c.ref) : eng_.hash_of(old);
                eng_.add_derivation(h, k);
                eng_.add_derivation(k, h);
            }
        }
        for (auto& r : m->retired)
            eng_.intern(SymbolicTerm::key(r));
        for (auto& d : m->dk_created)
            eng_.intern(SymbolicTerm::device_key(d.device, d.nonce, d.lineage));
        for (auto& d : m->dk_retired)
            eng_.intern(SymbolicTerm::device_key(d.device, d.nonce, d.lineage));
    } else if (auto* msg = std::get_if<RekeyMessage>(&e)) {
        auto content = payload_term(msg->payload);
        if (!content)
            return;
        for (auto& env : msg->envelopes) {
            if (env.protection) {
                eng_.add_enc(eng_.intern(SymbolicTerm::key(*env.protection)), *content);
                continue;
            }
            for (auto& r : env.recipients) {
                auto it = owners_.find(r);
                if (it == owners_.end())
                    continue;
                for (auto col : it->second)
                    eng_.grant(col, *content);
            }
        }
    } else {
        auto& pkt = std::get<DataPacket>(e);
        eng_.add_enc(eng_.intern(SymbolicTerm::device_key(pkt.device, pkt.nonce, pkt.lineage)),
                     eng_.intern(SymbolicTerm::payload(pkt.packet_id)));
    }
}

namespace {

Seq seq_of(const TranscriptEntry& e)
{
    return std::visit([](auto& x) { return x.seq; }, e);
}

} // namespace

std::set<SymbolicTerm> closure(const std::set<SymbolicTerm>& initial, const TranscriptLog& log,
                               KnowledgeWindow window, std::optional<Principal> self)
{
    KnowledgeEngine eng(1);
    std::map<Principal, std::vector<std::size_t>> owners;
    if (self)
        owners[*self] = {0};
    TranscriptFeeder feeder(eng, owners);
    for (auto& t : initial)
        eng.grant(0, eng.intern(t));
    for (auto& e : log)
        if (window.contains(seq_of(e)))
            feeder.feed(e);
    std::set<SymbolicTerm> out;
    for (TermId t : eng.known_by(0))
        out.insert(eng.term(t));
    return out;
}

// ---------------------------------------------------------------- verdicts

std::string Verdict::line() const
{
    std::string s = "seq=" + std::to_string(seq) + " property=" + property + " subject=" + subject +
                    " result=" + (pass ? "PASS" : "FAIL");
    if (!witnesses.empty()) {
        s += " witnesses=";
        for (std::size_t i = 0; i < witnesses.size(); ++i)
            s += (i ? ";" : "") + witnesses[i];
    }
    return s;
}

Auditor::Auditor(TranscriptLog log) : log_(std::move(log))
{
    for (auto& e : log_) {
        if (auto* m = std::get_if<EventMarker>(&e)) {
            markers_.push_back(*m);
            for (auto& p : m->joined)
                principals_.insert(p);
            for (auto& c : m->created)
                note_last(SymbolicTerm::key(c.ref), m->seq);
            for (auto& d : m->dk_created)
                note_last(SymbolicTerm::device_key(d.device, d.nonce, d.lineage), m->seq);
            for (auto& r : m->retired)
                note_first(SymbolicTerm::key(r), m->seq);
            for (auto& d : m->dk_retired)
                note_first(SymbolicTerm::device_key(d.device, d.nonce, d.lineage), m->seq);
        } else if (auto* p = std::get_if<DataPacket>(&e)) {
            auto t = SymbolicTerm::device_key(p->device, p->nonce, p->lineage);
            note_last(t, p->seq);
            note_first(t, p->seq + 1);
        }
    }
}

void Auditor::note_last(const SymbolicTerm& t, Seq s)
{
    auto [it, fresh] = fwd_last_.emplace(t, s);
    if (!fresh)
        it->second = std::max(it->second, s);
}

void Auditor::note_first(const SymbolicTerm& t, Seq s)
{
    auto [it, fresh] = bwd_first_.emplace(t, s);
    if (!fresh)
        it->second = std::min(it->second, s);
}

const EventMarker& Auditor::marker(Seq s) const
{
    for (auto& m : markers_)
        if (m.seq == s)
            return m;
    throw std::invalid_argument("no event with seq " + std::to_string(s));
}

std::vector<DeviceId> Auditor::live_devices_after(Seq s) const
{
    std::set<DeviceId> live;
    for (auto& m : markers_) {
        if (m.seq > s)
            break;
        for (auto& p : m.joined)
            if (p.role == Role::Device)
                live.insert(p.id);
        for (auto& p : m.departed)
            if (p.role == Role::Device)
                live.erase(p.id);
    }
    return {live.begin(), live.end()};
}

Auditor::Pass Auditor::run_pass(const std::vector<std::pair<UserId, DeviceId>>& coalitions, bool track_access)
{
    Pass pass;
    std::size_t n = 0;
    std::map<Principal, std::vector<std::size_t>> owners;
    for (auto& p : principals_) {
        pass.col[p] = n;
        owners[p].push_back(n++);
    }
    for (auto& c : coalitions) {
        if (pass.coalition.count(c))
            continue;
        pass.coalition[c] = n;
        owners[Principal::user(c.first)].push_back(n);
        owners[Principal::device(c.second)].push_back(n);
        ++n;
    }
    pass.eng = KnowledgeEngine(std::max<std::size_t>(n, 1));
    TranscriptFeeder feeder(pass.eng, owners);

    std::vector<std::pair<UserId, std::size_t>> user_cols;
    for (auto& [p, c] : pass.col)
        if (p.role == Role::User)
            user_cols.emplace_back(p.id, c);

    std::map<DeviceId, DkRef> current;
    const EventMarker* open = nullptr;
    auto close_epoch = [&]() {
        if (!open || !track_access)
            return;
        Verdict v;
        v.seq = open->seq;
        v.property = "access_control";
        v.subject = "all";
        for (auto& [d, users] : open->authorized) {
            auto it = current.find(d);
            if (it == current.end()) {
                v.pass = false;
                v.witnesses.push_back("no DK recorded for d" + std::to_string(d));
                continue;
            }
            auto term = SymbolicTerm::device_key(d, it->second.nonce, it->second.lineage);
            auto id = pass.eng.find(term);
            std::set<UserId> want(users.begin(), users.end());
            for (auto& [u, c] : user_cols) {
                bool k = id && pass.eng.knows(c, *id);
                if (k != static_cast<bool>(want.count(u))) {
                    v.pass = false;
                    v.witnesses.push_back(describe(term) + (k ? " known by unauthorized u" : " missing at u") +
                                          std::to_string(u));
                }
            }
        }
        pass.access[v.seq] = std::move(v);
    };

    for (auto& e : log_) {
        if (auto* m = std::get_if<EventMarker>(&e)) {
            close_epoch();
            open = m;
            for (auto& r : m->dk_retired) {
                auto it = current.find(r.device);
                if (it != current.end() && it->second == r)
                    current.erase(it);
            }
            for (auto& c : m->dk_created)
                current[c.device] = c;
        }
        feeder.feed(e);
    }
    close_epoch();
    return pass;
}

Auditor::Pass& Auditor::principal_pass()
{
    if (!principal_pass_)
        principal_pass_ = run_pass({}, true);
    return *principal_pass_;
}

Verdict Auditor::forward(Pass& pass, std::size_t col, Seq t, const std::string& subject, const std::string& property,
                         std::optional<DeviceId> exclude_device, bool dk_only)
{
    Verdict v;
    v.seq = t;
    v.property = property;
    v.subject = subject;
    for (auto& [c, last] : fwd_last_) {
        if (last < t)
            continue;
        if (c.kind != SymbolicTerm::Kind::DeviceKey && dk_only)
            continue;
        if (c.kind == SymbolicTerm::Kind::DeviceKey && exclude_device && c.a == *exclude_device)
            continue;
        if (pass.eng.knows(col, c)) {
            v.pass = false;
            v.witnesses.push_back(describe(c));
        }
    }
    return v;
}

Verdict Auditor::backward(Pass& pass, std::size_t col, Seq t, const std::string& subject)
{
    Verdict v;
    v.seq = t;
    v.property = "backward_secrecy";
    v.subject = subject;
    for (auto& [c, first] : bwd_first_)
        if (first <= t && pass.eng.knows(col, c)) {
            v.pass = false;
            v.witnesses.push_back(describe(c));
        }
    return v;
}

Verdict Auditor::check_forward_secrecy(Seq leave_event, Principal p)
{
    const auto& m = marker(leave_event);
    if (std::find(m.departed.begin(), m.departed.end(), p) == m.departed.end())
        throw std::invalid_argument(p.str() + " did not leave at seq " + std::to_string(leave_event));
    auto& pass = principal_pass();
    return forward(pass, pass.col.at(p), leave_event, p.str(), "forward_secrecy", std::nullopt, false);
}

Verdict Auditor::check_backward_secrecy(Seq join_event, Principal p)
{
    const auto& m = marker(join_event);
    if (std::find(m.joined.begin(), m.joined.end(), p) == m.joined.end())
        throw std::invalid_argument(p.str() + " did not join at seq " + std::to_string(join_event));
    auto& pass = principal_pass();
    return backward(pass, pass.col.at(p), join_event, p.str());
}

Verdict Auditor::check_collusion(Seq leave_event, UserId leaver, DeviceId accomplice)
{
    const auto& m = marker(leave_event);
    if (std::find(m.departed.begin(), m.departed.end(), Principal::user(leaver)) == m.departed.end())
        throw std::invalid_argument("u" + std::to_string(leaver) + " did not leave at seq " +
                                    std::to_string(leave_event));
    auto live = live_devices_after(leave_event);
    if (!std::binary_search(live.begin(), live.end(), accomplice))
        throw std::invalid_argument("d" + std::to_string(accomplice) + " is not live after seq " +
                                    std::to_string(leave_event));
    auto pass = run_pass({{leaver, accomplice}}, false);
    return forward(pass, pass.coalition.at({leaver, accomplice}), leave_event,
                   "u" + std::to_string(leaver) + "+d" + std::to_string(accomplice), "collusion", accomplice, true);
}

Verdict Auditor::check_access_control(Seq epoch)
{
    marker(epoch);
    return principal_pass().access.at(epoch);
}

std::vector<Verdict> Auditor::audit_all(const AuditOptions& opt)
{
    std::vector<std::pair<UserId, DeviceId>> coalitions;
    std::vector<std::tuple<Seq, UserId, DeviceId>> collusion_checks;
    if (opt.collusion) {
        for (auto& m : markers_) {
            if (m.type != EventType::UserLeave && m.type != EventType::UserLeaveLastSpot)
                continue;
            auto live = live_devices_after(m.seq);
            std::mt19937_64 rng(opt.seed ^ (m.seq * 0x9E3779B97F4A7C15ULL));
            std::shuffle(live.begin(), live.end(), rng);
            if (live.size() > opt.collusion_cap)
                live.resize(opt.collusion_cap);
            std::sort(live.begin(), live.end());
            for (auto& p : m.departed)
                if (p.role == Role::User)
                    for (DeviceId d : live) {
                        coalitions.emplace_back(p.id, d);
                        collusion_checks.emplace_back(m.seq, p.id, d);
                    }
        }
    }
    Pass pass = run_pass(coalitions, opt.access_control);
    std::vector<Verdict> out;
    for (auto& m : markers_) {
        if (opt.secrecy) {
            for (auto& p : m.departed)
                out.push_back(forward(pass, pass.col.at(p), m.seq, p.str(), "forward_secrecy", std::nullopt, false));
            if (m.type != EventType::Setup)
                for (auto& p : m.joined)
                    out.push_back(backward(pass, pass.col.at(p), m.seq, p.str()));
        }
        if (opt.access_control)
            out.push_back(pass.access.at(m.seq));
    }
    for (auto& [t, u, d] : collusion_checks)
        out.push_back(forward(pass, pass.coalition.at({u, d}), t, "u" + std::to_string(u) + "+d" + std::to_string(d),
                              "collusion", d, true));
    return out;
}

} // namespace gkm
