#include "gkm/transport.hpp"

#include <fstream>
#include <string>

namespace gkm {

void Bus::begin(const EventMarker& marker)
{
    Seq expected = last_seq_ ? *last_seq_ + 1 : 1;
    if (marker.seq != expected)
        throw DeliveryError("out-of-order event: got seq " + std::to_string(marker.seq) + ", expected " +
                            std::to_string(expected));
    for (auto& p : marker.joined) {
        if (p.role == Role::User) {
            UserState st;
            st.user_id = p.id;
            st.last_seq = marker.seq - 1;
            if (!users_.emplace(p.id, st).second)
                throw DeliveryError("joined principal already live: " + p.str());
        } else {
            DeviceState st;
            st.device_id = p.id;
            st.last_seq = marker.seq - 1;
            if (!devices_.emplace(p.id, st).second)
                throw DeliveryError("joined principal already live: " + p.str());
        }
    }
    if (logging_)
        log_.push_back(marker);
}

void Bus::deliver(const RekeyMessage& msg, MessageCounts& counts)
{
    counts.add(msg);
    for (auto& p : msg.addressed_to()) {
        bool ok = false;
        if (p.role == Role::User) {
            auto it = users_.find(p.id);
            if (it == users_.end())
                throw DeliveryError("message " + std::to_string(msg.seq) + "." + std::to_string(msg.index) +
                                    " addressed to non-live " + p.str());
            if (msg.kind == MsgKind::Establishment && it->second.secret_id == 0 && !msg.payload.keys.empty())
                it->second.secret_id = msg.payload.keys.front().id;
            ok = apply_rekey(it->second, msg);
        } else {
            auto it = devices_.find(p.id);
            if (it == devices_.end())
                throw DeliveryError("message " + std::to_string(msg.seq) + "." + std::to_string(msg.index) +
                                    " addressed to non-live " + p.str());
            if (msg.kind == MsgKind::Establishment && it->second.secret_id == 0 && !msg.payload.keys.empty())
                it->second.secret_id = msg.payload.keys.front().id;
            ok = apply_rekey(it->second, msg);
        }
        if (!ok)
            throw DeliveryError("mis-routed message " + std::to_string(msg.seq) + "." + std::to_string(msg.index) +
                                " (" + msg.note + "): " + p.str() + " holds no protecting key");
    }
    if (logging_)
        log_.push_back(msg);
}

void Bus::end(const EventMarker& marker)
{
    for (auto& p : marker.departed) {
        if (p.role == Role::User)
            users_.erase(p.id);
        else
            devices_.erase(p.id);
    }
    for (auto& [_, u] : users_)
        advance(u, marker.seq);
    for (auto& [_, d] : devices_)
        advance(d, marker.seq);
    last_seq_ = marker.seq;
}

MessageCounts Bus::dispatch(const EventMarker& marker, const std::vector<RekeyMessage>& messages)
{
    MessageCounts counts;
    begin(marker);
    for (auto& m : messages) {
        if (m.seq != marker.seq)
            throw DeliveryError("message seq does not match its event");
        deliver(m, counts);
    }
    end(marker);
    return counts;
}

std::vector<DataPacket> Bus::publish_all(Seq seq)
{
    std::vector<DataPacket> out;
    for (auto& [id, d] : devices_) {
        if (!d.identity)
            continue;
        std::string body = "reading d" + std::to_string(id) + "@" + std::to_string(seq);
        auto pkt = device_publish(d, next_packet_++, seq,
                                  std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
        if (logging_)
            log_.push_back(pkt);
        out.push_back(std::move(pkt));
    }
    return out;
}

Bus Bus::replay(const TranscriptLog& log)
{
    Bus b;
    std::optional<EventMarker> open;
    MessageCounts scratch;
    for (auto& e : log) {
        if (auto* m = std::get_if<EventMarker>(&e)) {
            if (open)
                b.end(*open);
            b.begin(*m);
            open = *m;
        } else if (auto* msg = std::get_if<RekeyMessage>(&e)) {
            if (!open || msg->seq != open->seq)
                throw DeliveryError("corrupted log: message outside its event");
            b.deliver(*msg, scratch);
        } else {
            auto& pkt = std::get<DataPacket>(e);
            if (open) {
                b.end(*open);
                open.reset();
            }
            if (!b.last_seq_ || pkt.seq != *b.last_seq_)
                throw DeliveryError("corrupted log: packet seq mismatch");
            b.log_.push_back(pkt);
            b.next_packet_ = std::max(b.next_packet_, pkt.packet_id + 1);
        }
    }
    if (open)
        b.end(*open);
    return b;
}

std::map<Seq, MessageCounts> counts_from_log(const TranscriptLog& log)
{
    std::map<Seq, MessageCounts> out;
    for (auto& e : log) {
        if (auto* m = std::get_if<EventMarker>(&e))
            out[m->seq];
        else if (auto* msg = std::get_if<RekeyMessage>(&e))
            out[msg->seq].add(*msg);
    }
    return out;
}

TranscriptLog read_transcript(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open transcript " + path);
    TranscriptLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        log.push_back(entry_from_line(line));
    }
    return log;
}

void write_transcript(const TranscriptLog& log, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write transcript " + path);
    for (auto& e : log)
        out << to_line(e) << '\n';
}

} // namespace gkm
