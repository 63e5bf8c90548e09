#include "gkm/trace.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace gkm {

using json = nlohmann::ordered_json;

namespace {

std::string fault_names(const Faults& f)
{
    std::string s;
    auto add = [&](bool on, const char* n) {
        if (on)
            s += (s.empty() ? "" : ",") + std::string(n);
    };
    add(f.skip_join_hash_update, "skip_join_hash_update");
    add(f.skip_nonce_increment, "skip_nonce_increment");
    add(f.groupit_shared_secret, "groupit_shared_secret");
    return s;
}

json event_j(const TraceEvent& e)
{
    json j;
    j["record"] = "event";
    j["type"] = std::string(to_string(e.type));
    switch (e.type) {
    case EventType::UserJoin:
        j["user"] = e.user;
        j["sg"] = e.sg;
        break;
    case EventType::UserLeave:
    case EventType::UserLeaveLastSpot:
        j["user"] = e.user;
        break;
    case EventType::DeviceJoin:
        j["device"] = e.device;
        j["dg"] = e.dg;
        break;
    case EventType::DeviceLeave:
        j["device"] = e.device;
        break;
    case EventType::UserJoinEmptySg:
        j["user"] = e.user;
        j["sg"] = e.sg;
        if (e.subs)
            j["subs"] = *e.subs;
        break;
    case EventType::DgJoin: {
        j["dg"] = e.dg;
        j["devices"] = e.devices;
        json oi = json::array();
        for (auto& [x, us] : e.opt_in)
            oi.push_back(json::array({x, us}));
        j["opt_in"] = oi;
        break;
    }
    case EventType::DgLeave: {
        j["dg"] = e.dg;
        json m = json::array();
        for (auto& [a, b] : e.merges)
            m.push_back(json::array({a, b}));
        j["merges"] = m;
        break;
    }
    case EventType::Setup:
        throw TraceError("setup is implied by the header");
    }
    return j;
}

TraceEvent event_from(const json& j)
{
    TraceEvent e;
    e.type = event_type_from_string(j.at("type").get<std::string>());
    switch (e.type) {
    case EventType::UserJoin:
        e.user = j.at("user").get<UserId>();
        e.sg = j.at("sg").get<SgId>();
        break;
    case EventType::UserLeave:
    case EventType::UserLeaveLastSpot:
        e.user = j.at("user").get<UserId>();
        break;
    case EventType::DeviceJoin:
        e.device = j.at("device").get<DeviceId>();
        e.dg = j.at("dg").get<DgId>();
        break;
    case EventType::DeviceLeave:
        e.device = j.at("device").get<DeviceId>();
        break;
    case EventType::UserJoinEmptySg:
        e.user = j.at("user").get<UserId>();
        e.sg = j.at("sg").get<SgId>();
        if (j.contains("subs"))
            e.subs = j.at("subs").get<std::set<DgId>>();
        break;
    case EventType::DgJoin:
        e.dg = j.at("dg").get<DgId>();
        e.devices = j.at("devices").get<std::vector<DeviceId>>();
        for (auto& x : j.at("opt_in"))
            e.opt_in[x.at(0).get<SgId>()] = x.at(1).get<std::set<UserId>>();
        break;
    case EventType::DgLeave:
        e.dg = j.at("dg").get<DgId>();
        for (auto& m : j.at("merges"))
            e.merges.emplace_back(m.at(0).get<SgId>(), m.at(1).get<SgId>());
        break;
    case EventType::Setup:
        throw TraceError("setup record inside the event list");
    }
    return e;
}

} // namespace

std::string trace_to_text(const TraceFile& t)
{
    std::ostringstream os;
    json h;
    h["record"] = "header";
    h["seed"] = t.seed;
    h["faults"] = fault_names(t.faults);
    json dgs = json::array();
    for (auto& [y, ds] : t.topology.dg_devices)
        dgs.push_back(json::array({y, ds}));
    json sgs = json::array();
    for (auto& [x, subs] : t.topology.subs) {
        auto it = t.topology.sg_users.find(x);
        std::vector<UserId> us = it == t.topology.sg_users.end() ? std::vector<UserId>{} : it->second;
        sgs.push_back(json::array({x, subs, us}));
    }
    h["dgs"] = dgs;
    h["sgs"] = sgs;
    os << h.dump() << '\n';
    for (auto& e : t.events)
        os << event_j(e).dump() << '\n';
    return os.str();
}

TraceFile trace_from_text(const std::string& text)
{
    TraceFile t;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        try {
            json j = json::parse(line);
            auto rec = j.at("record").get<std::string>();
            if (rec == "header") {
                if (header)
                    throw TraceError("second header");
                header = true;
                t.seed = j.at("seed").get<std::uint64_t>();
                std::string f = j.value("faults", "");
                std::stringstream fs(f);
                std::string name;
                while (std::getline(fs, name, ',')) {
                    if (name == "skip_join_hash_update")
                        t.faults.skip_join_hash_update = true;
                    else if (name == "skip_nonce_increment")
                        t.faults.skip_nonce_increment = true;
                    else if (name == "groupit_shared_secret")
                        t.faults.groupit_shared_secret = true;
                    else if (!name.empty())
                        throw TraceError("unknown fault " + name);
                }
                for (auto& d : j.at("dgs"))
                    t.topology.dg_devices[d.at(0).get<DgId>()] = d.at(1).get<std::vector<DeviceId>>();
                for (auto& s : j.at("sgs")) {
                    SgId x = s.at(0).get<SgId>();
                    t.topology.subs[x] = s.at(1).get<std::set<DgId>>();
                    auto us = s.at(2).get<std::vector<UserId>>();
                    if (!us.empty())
                        t.topology.sg_users[x] = us;
                }
            } else if (rec == "event") {
                if (!header)
                    throw TraceError("event before header");
                t.events.push_back(event_from(j));
            } else {
                throw TraceError("unknown record " + rec);
            }
        } catch (const TraceError& e) {
            throw TraceError("line " + std::to_string(lineno) + ": " + e.what());
        } catch (const std::exception& e) {
            throw TraceError("line " + std::to_string(lineno) + ": malformed record: " + e.what());
        }
    }
    if (!header)
        throw TraceError("trace has no header");
    return t;
}

TraceFile read_trace(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw TraceError("cannot open trace " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return trace_from_text(ss.str());
}

void write_trace(const TraceFile& t, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw TraceError("cannot write trace " + path);
    out << trace_to_text(t);
}

EventOutcome apply_event(Kdc& kdc, const TraceEvent& e)
{
    switch (e.type) {
    case EventType::UserJoin:
        return kdc.user_join(e.user, e.sg);
    case EventType::UserLeave:
        return kdc.user_leave(e.user);
    case EventType::DeviceJoin:
        return kdc.device_join(e.device, e.dg);
    case EventType::DeviceLeave:
        return kdc.device_leave(e.device);
    case EventType::UserJoinEmptySg:
        return kdc.user_join_empty_sg(e.user, e.sg, e.subs);
    case EventType::UserLeaveLastSpot:
        return kdc.user_leave_last_spot(e.user);
    case EventType::DgJoin: {
        std::map<SgId, std::map<UserId, bool>> oi;
        for (auto& [x, us] : e.opt_in)
            for (UserId u : us)
                oi[x][u] = true;
        return kdc.dg_join(e.dg, e.devices, oi);
    }
    case EventType::DgLeave:
        return kdc.dg_leave(e.dg, e.merges);
    case EventType::Setup:
        break;
    }
    throw TraceError("setup cannot be applied as an event");
}

// ---------------------------------------------------------------- generation

Topology random_topology(std::uint64_t seed, std::size_t dgs, std::size_t max_users, std::size_t max_devices,
                         std::size_t sgs)
{
    if (dgs == 0 || dgs > 16)
        throw GenError("DG count must be in 1..16");
    std::mt19937_64 rng(seed);
    auto uniform = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    Topology t;
    DeviceId next_dev = 1;
    for (DgId y = 1; y <= dgs; ++y) {
        auto m = uniform(1, max_devices);
        for (std::size_t i = 0; i < m; ++i)
            t.dg_devices[y].push_back(next_dev++);
    }
    const std::size_t all = (std::size_t{1} << dgs) - 1;
    std::vector<SgId> masks;
    for (SgId x = 1; x <= all; ++x)
        masks.push_back(x);
    std::shuffle(masks.begin(), masks.end(), rng);
    std::size_t count = sgs ? std::min(sgs, all) : uniform(1, std::min<std::size_t>(all, 12));
    masks.resize(count);
    std::sort(masks.begin(), masks.end());
    UserId next_user = 1;
    bool any = false;
    for (SgId x : masks) {
        std::set<DgId> subs;
        for (DgId y = 1; y <= dgs; ++y)
            if (x & (1u << (y - 1)))
                subs.insert(y);
        t.subs[x] = subs;
        std::size_t n = uniform(0, 6) == 0 ? 0 : uniform(1, max_users);
        for (std::size_t i = 0; i < n; ++i)
            t.sg_users[x].push_back(next_user++);
        any |= n > 0;
    }
    if (!any)
        t.sg_users[masks.front()].push_back(next_user++);
    return t;
}

namespace {

struct Feasible {
    std::vector<SgId> join_sgs, leave_sgs, last_spot_sgs, empty_sgs;
    std::vector<std::set<DgId>> new_subsets;
    std::vector<DgId> grow_dgs, shrink_dgs;
    bool dg_join = false, dg_leave = false;
};

Feasible feasible(const Kdc& kdc, const GenConfig& cfg)
{
    Feasible f;
    const auto& st = kdc.state();
    std::set<std::set<DgId>> taken;
    for (auto& [x, sg] : st.sgs) {
        taken.insert(sg.subs);
        auto n = sg.tree.size();
        if (n == 0)
            f.empty_sgs.push_back(x);
        if (n > 0 && n < cfg.max_users)
            f.join_sgs.push_back(x);
        if (n >= 2)
            f.leave_sgs.push_back(x);
        if (n == 1)
            f.last_spot_sgs.push_back(x);
    }
    std::vector<DgId> dgs;
    for (auto& [y, dg] : st.dgs) {
        dgs.push_back(y);
        if (dg.tree.size() < cfg.max_devices)
            f.grow_dgs.push_back(y);
        if (dg.tree.size() >= 2)
            f.shrink_dgs.push_back(y);
    }
    if (dgs.size() <= 10) {
        for (std::size_t mask = 1; mask < (std::size_t{1} << dgs.size()); ++mask) {
            std::set<DgId> s;
            for (std::size_t i = 0; i < dgs.size(); ++i)
                if (mask & (std::size_t{1} << i))
                    s.insert(dgs[i]);
            if (!taken.count(s))
                f.new_subsets.push_back(s);
        }
    }
    f.dg_join = dgs.size() < cfg.max_dgs;
    f.dg_leave = dgs.size() >= 2;
    return f;
}

bool is_feasible(EventType t, const Feasible& f)
{
    switch (t) {
    case EventType::UserJoin:
        return !f.join_sgs.empty();
    case EventType::UserLeave:
        return !f.leave_sgs.empty();
    case EventType::DeviceJoin:
        return !f.grow_dgs.empty();
    case EventType::DeviceLeave:
        return !f.shrink_dgs.empty();
    case EventType::UserJoinEmptySg:
        return !f.empty_sgs.empty() || !f.new_subsets.empty();
    case EventType::UserLeaveLastSpot:
        return !f.last_spot_sgs.empty();
    case EventType::DgJoin:
        return f.dg_join;
    case EventType::DgLeave:
        return f.dg_leave;
    case EventType::Setup:
        break;
    }
    return false;
}

} // namespace

TraceFile gen_trace(const GenConfig& cfg)
{
    double total = 0;
    for (double w : cfg.weights) {
        if (w < 0)
            throw GenError("event weights must be nonnegative");
        total += w;
    }
    if (total <= 0)
        throw GenError("at least one event weight must be positive");

    TraceFile t;
    t.seed = cfg.seed;
    t.faults = cfg.faults;
    t.topology = random_topology(cfg.seed, cfg.dgs, cfg.max_users, cfg.max_devices, cfg.initial_sgs);

    std::mt19937_64 rng(cfg.seed * 0x2545F4914F6CDD1DULL + 7);
    auto pick = [&](const auto& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };
    auto coin = [&](double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; };

    Kdc kdc(cfg.seed, cfg.faults);
    kdc.setup(t.topology);
    UserId next_user = 1;
    DeviceId next_dev = 1;
    DgId next_dg = 1;
    for (auto& [x, us] : t.topology.sg_users)
        for (auto u : us)
            next_user = std::max(next_user, u + 1);
    for (auto& [y, ds] : t.topology.dg_devices) {
        next_dg = std::max(next_dg, y + 1);
        for (auto d : ds)
            next_dev = std::max(next_dev, d + 1);
    }

    for (std::size_t i = 0; i < cfg.length; ++i) {
        auto f = feasible(kdc, cfg);
        std::vector<double> w(cfg.weights.begin(), cfg.weights.end());
        double sum = 0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            if (!is_feasible(kGenEventTypes[k], f))
                w[k] = 0;
            sum += w[k];
        }
        if (sum <= 0) {
            if (t.events.empty())
                throw GenError("infeasible event mix: no weighted event applies to the topology");
            break;
        }
        std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
        TraceEvent e;
        e.type = kGenEventTypes[dist(rng)];
        const auto& st = kdc.state();
        switch (e.type) {
        case EventType::UserJoin:
            e.user = next_user++;
            e.sg = pick(f.join_sgs);
            break;
        case EventType::UserLeave: {
            auto ms = st.sgs.at(pick(f.leave_sgs)).tree.members();
            e.user = static_cast<UserId>(pick(ms));
            break;
        }
        case EventType::DeviceJoin:
            e.device = next_dev++;
            e.dg = pick(f.grow_dgs);
            break;
        case EventType::DeviceLeave: {
            auto ms = st.dgs.at(pick(f.shrink_dgs)).tree.members();
            e.device = static_cast<DeviceId>(pick(ms));
            break;
        }
        case EventType::UserJoinEmptySg:
            e.user = next_user++;
            if (!f.empty_sgs.empty() && (f.new_subsets.empty() || coin(0.5))) {
                e.sg = pick(f.empty_sgs);
            } else {
                e.sg = st.next_sg_id;
                e.subs = pick(f.new_subsets);
            }
            break;
        case EventType::UserLeaveLastSpot: {
            auto ms = st.sgs.at(pick(f.last_spot_sgs)).tree.members();
            e.user = static_cast<UserId>(ms.front());
            break;
        }
        case EventType::DgJoin: {
            e.dg = next_dg++;
            auto m = std::uniform_int_distribution<std::size_t>(1, cfg.max_devices)(rng);
            for (std::size_t k = 0; k < m; ++k)
                e.devices.push_back(next_dev++);
            for (auto& [x, sg] : st.sgs) {
                if (sg.tree.empty())
                    continue;
                auto r = std::uniform_int_distribution<int>(0, 2)(rng);
                std::set<UserId> yes;
                for (auto u : sg.tree.members())
                    if (r == 1 || (r == 2 && coin(0.5)))
                        yes.insert(static_cast<UserId>(u));
                if (!yes.empty())
                    e.opt_in[x] = yes;
            }
            break;
        }
        case EventType::DgLeave: {
            std::vector<DgId> dgs;
            for (auto& [y, _] : st.dgs)
                dgs.push_back(y);
            e.dg = pick(dgs);
            e.merges = kdc.merge_plan_for(e.dg);
            break;
        }
        case EventType::Setup:
            break;
        }
        apply_event(kdc, e);
        t.events.push_back(std::move(e));
    }
    return t;
}

TraceFile fig15_trace(std::uint64_t seed)
{
    constexpr DgId P = 10;
    constexpr std::size_t M = 20, N = 100;
    constexpr SgId big = 0b1110000000; // DGs 8, 9, 10
    TraceFile t;
    t.seed = seed;
    DeviceId next_dev = 1;
    for (DgId y = 1; y <= P; ++y)
        for (std::size_t i = 0; i < M; ++i)
            t.topology.dg_devices[y].push_back(next_dev++);
    UserId next_user = 1;
    for (SgId x = 1; x < (1u << P); ++x) {
        std::set<DgId> subs;
        for (DgId y = 1; y <= P; ++y)
            if (x & (1u << (y - 1)))
                subs.insert(y);
        t.topology.subs[x] = subs;
        std::size_t n = x == big ? N : 1;
        for (std::size_t i = 0; i < n; ++i)
            t.topology.sg_users[x].push_back(next_user++);
    }
    // Leaver: a member whose removal leaves only internal off-path children,
    // so every rekey message is a multicast.
    Kdc probe(seed);
    probe.setup(t.topology);
    const auto& tree = probe.state().sgs.at(big).tree;
    std::optional<UserId> leaver;
    for (auto m : tree.members()) {
        NodeId leaf = tree.leaf_of(m);
        NodeId parent = tree.node(leaf).parent;
        bool ok = true;
        for (NodeId c : tree.children(parent))
            if (c != leaf && tree.node(c).is_leaf())
                ok = false;
        if (ok) {
            leaver = static_cast<UserId>(m);
            break;
        }
    }
    if (!leaver)
        throw GenError("no suitable leaver in the figure-15 SG");
    TraceEvent e;
    e.type = EventType::UserLeave;
    e.user = *leaver;
    t.events.push_back(e);
    return t;
}

} // namespace gkm
