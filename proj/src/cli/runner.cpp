#include "gkm/runner.hpp"

#include <chrono>
#include <random>
#include <sstream>

namespace gkm {

RunChecks RunChecks::parse(const std::string& csv)
{
    RunChecks c{false, false, false, false, false};
    std::stringstream ss(csv);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (name == "all")
            c = RunChecks{};
        else if (name == "none" || name.empty())
            continue;
        else if (name == "bounds")
            c.bounds = true;
        else if (name == "agreement")
            c.agreement = true;
        else if (name == "secrecy")
            c.secrecy = true;
        else if (name == "collusion")
            c.collusion = true;
        else if (name == "access")
            c.access = true;
        else
            throw std::invalid_argument("unknown check " + name);
    }
    return c;
}

std::string check_bounds(const MessageCounts& c, const CommCost& b)
{
    std::string err;
    auto over = [&](const char* what, std::uint64_t got, std::uint64_t lim) {
        if (got > lim)
            err += std::string(err.empty() ? "" : "; ") + what + " " + std::to_string(got) + " > " +
                   std::to_string(lim);
    };
    over("broadcasts", c.broadcasts, b.broadcasts);
    over("establishments", c.establishments, b.establishments);
    over("multicasts", c.multicasts, b.multicasts);
    over("multicasts+unicasts", c.multicasts + c.unicasts, b.multicasts + b.unicasts);
    return err;
}

std::string check_agreement(const Kdc& kdc, const Bus& bus)
{
    const auto& st = kdc.state();
    if (bus.users().size() != st.user_sg.size())
        return "live user count " + std::to_string(bus.users().size()) + " differs from KDC " +
               std::to_string(st.user_sg.size());
    if (bus.devices().size() != st.device_dg.size())
        return "live device count " + std::to_string(bus.devices().size()) + " differs from KDC " +
               std::to_string(st.device_dg.size());
    const auto mmax = kdc.max_dg_size();
    for (auto& [u, x] : st.user_sg) {
        auto it = bus.users().find(u);
        if (it == bus.users().end())
            return "u" + std::to_string(u) + " not live on the bus";
        auto d = diff_state(it->second, kdc.project_user(u));
        if (!d.empty())
            return d;
        ScenarioParams p;
        p.Y = st.sgs.at(x).subs.size();
        p.Mmax = mmax;
        p.N = st.sgs.at(x).tree.size();
        p.P = kdc.P();
        auto lim = storage_cost(Scheme::Proposed, Role::User, p);
        if (it->second.inventory() > lim)
            return "u" + std::to_string(u) + " stores " + std::to_string(it->second.inventory()) + " keys > " +
                   std::to_string(lim);
    }
    for (auto& [d, y] : st.device_dg) {
        auto it = bus.devices().find(d);
        if (it == bus.devices().end())
            return "d" + std::to_string(d) + " not live on the bus";
        auto diff = diff_state(it->second, kdc.project_device(d));
        if (!diff.empty())
            return diff;
        ScenarioParams p;
        p.M = st.dgs.at(y).tree.size();
        auto lim = storage_cost(Scheme::Proposed, Role::Device, p);
        if (it->second.inventory() > lim)
            return "d" + std::to_string(d) + " stores " + std::to_string(it->second.inventory()) + " items > " +
                   std::to_string(lim);
    }
    return {};
}

namespace {

// One authorized reader must decrypt each packet, one unauthorized live user must not.
std::string check_packets(const Kdc& kdc, const Bus& bus, const std::vector<DataPacket>& pkts, std::mt19937_64& rng)
{
    const auto& st = kdc.state();
    for (auto& pkt : pkts) {
        DgId y = st.device_dg.at(pkt.device);
        std::vector<UserId> yes, no;
        for (auto& [u, x] : st.user_sg)
            (st.sgs.at(x).subs.count(y) ? yes : no).push_back(u);
        std::string body = "reading d" + std::to_string(pkt.device) + "@" + std::to_string(pkt.seq);
        if (!yes.empty()) {
            UserId u = yes[std::uniform_int_distribution<std::size_t>(0, yes.size() - 1)(rng)];
            auto r = user_decrypt(bus.users().at(u), pkt);
            if (r.status != DecryptStatus::Ok || std::string(r.payload.begin(), r.payload.end()) != body)
                return "u" + std::to_string(u) + " cannot read packet of d" + std::to_string(pkt.device);
        }
        if (!no.empty()) {
            UserId u = no[std::uniform_int_distribution<std::size_t>(0, no.size() - 1)(rng)];
            if (user_decrypt(bus.users().at(u), pkt).status == DecryptStatus::Ok)
                return "unauthorized u" + std::to_string(u) + " reads packet of d" + std::to_string(pkt.device);
        }
    }
    return {};
}

void run_audit(RunReport& rep, const TranscriptLog& log, const RunChecks& checks, AuditOptions audit)
{
    if (!checks.secrecy && !checks.collusion && !checks.access)
        return;
    audit.secrecy = checks.secrecy;
    audit.collusion = checks.collusion;
    audit.access_control = checks.access;
    Auditor a(log);
    rep.verdicts = a.audit_all(audit);
    for (auto& v : rep.verdicts)
        if (!v.pass)
            rep.failures.push_back("audit " + v.line());
}

} // namespace

RunReport run_trace(const TraceFile& trace, const RunChecks& checks, const AuditOptions& audit)
{
    auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    Kdc kdc(trace.seed, trace.faults);
    Bus bus;
    bus.set_logging(checks.keep_transcript || checks.secrecy || checks.collusion || checks.access);
    std::mt19937_64 rng(trace.seed);

    auto step = [&](EventOutcome out) {
        EventRecord rec;
        rec.seq = out.seq;
        rec.type = out.marker.type;
        try {
            rec.counts = bus.dispatch(out.marker, out.messages);
        } catch (const std::exception& e) {
            rec.agreement_ok = false;
            rec.detail = std::string("delivery: ") + e.what();
            rep.failures.push_back("seq " + std::to_string(rec.seq) + " " + rec.detail);
            rep.events.push_back(rec);
            return false;
        }
        auto pkts = bus.publish_all(out.seq);
        if (checks.bounds && rec.type != EventType::Setup) {
            rec.bound = comm_bound(Scheme::Proposed, rec.type, params_for(out.info, kdc.max_dg_size()));
            auto err = check_bounds(rec.counts, *rec.bound);
            if (!err.empty()) {
                rec.bounds_ok = false;
                rec.detail = "bounds: " + err;
                rep.failures.push_back("seq " + std::to_string(rec.seq) + " " + std::string(to_string(rec.type)) +
                                       " " + rec.detail);
            }
        }
        if (checks.agreement) {
            std::string err;
            try {
                kdc.check_invariants();
            } catch (const std::exception& e) {
                err = std::string("invariant: ") + e.what();
            }
            if (err.empty())
                err = check_agreement(kdc, bus);
            if (err.empty())
                err = check_packets(kdc, bus, pkts, rng);
            if (!err.empty()) {
                rec.agreement_ok = false;
                rec.detail += (rec.detail.empty() ? "" : "; ") + ("agreement: " + err);
                rep.failures.push_back("seq " + std::to_string(rec.seq) + " " + std::string(to_string(rec.type)) +
                                       " agreement: " + err);
            }
        }
        rep.events.push_back(rec);
        return true;
    };

    bool alive = step(kdc.setup(trace.topology));
    for (std::size_t i = 0; alive && i < trace.events.size(); ++i)
        alive = step(apply_event(kdc, trace.events[i]));

    rep.transcript = bus.log();
    if (alive)
        run_audit(rep, rep.transcript, checks, audit);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

RunReport audit_transcript(const TranscriptLog& log, const RunChecks& checks, const AuditOptions& audit)
{
    auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.transcript = log;
    try {
        Bus replayed = Bus::replay(log);
        auto counts = counts_from_log(log);
        for (auto& e : log)
            if (auto* m = std::get_if<EventMarker>(&e)) {
                EventRecord rec;
                rec.seq = m->seq;
                rec.type = m->type;
                rec.counts = counts[m->seq];
                rep.events.push_back(rec);
            }
    } catch (const std::exception& e) {
        rep.failures.push_back(std::string("replay: ") + e.what());
    }
    if (rep.ok())
        run_audit(rep, log, checks, audit);
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

std::string RunReport::to_text() const
{
    std::ostringstream os;
    for (auto& e : events) {
        os << "event seq=" << e.seq << " type=" << to_string(e.type) << " broadcasts=" << e.counts.broadcasts
           << " multicasts=" << e.counts.multicasts << " unicasts=" << e.counts.unicasts
           << " establishments=" << e.counts.establishments << " envelopes=" << e.counts.envelopes;
        if (e.bound)
            os << " bound=" << e.bound->broadcasts << "/" << e.bound->multicasts << "/" << e.bound->unicasts << "/"
               << e.bound->establishments << " bounds=" << (e.bounds_ok ? "PASS" : "FAIL");
        os << " agreement=" << (e.agreement_ok ? "PASS" : "FAIL");
        if (!e.detail.empty())
            os << " detail=\"" << e.detail << "\"";
        os << '\n';
    }
    for (auto& v : verdicts)
        os << "verdict " << v.line() << '\n';
    for (auto& f : failures)
        os << "failure " << f << '\n';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", wall_ms);
    os << "summary events=" << events.size() << " verdicts=" << verdicts.size() << " failures=" << failures.size()
       << " wall_ms=" << buf << " result=" << (ok() ? "PASS" : "FAIL") << '\n';
    return os.str();
}

} // namespace gkm
