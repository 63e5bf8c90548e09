#pragma once

#include "gkm/endpoints.hpp"
#include "gkm/messages.hpp"

#include <map>
#include <optional>
#include <vector>

namespace gkm {

using TranscriptLog = std::vector<TranscriptEntry>;

class DeliveryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reliable ordered in-memory bus. Every message is logged; delivery goes to
// the live endpoints named in its envelopes.
class Bus {
public:
    MessageCounts dispatch(const EventMarker& marker, const std::vector<RekeyMessage>& messages);

    // Every live device with an identity publishes one packet for `seq`.
    std::vector<DataPacket> publish_all(Seq seq);

    const TranscriptLog& log() const { return log_; }
    const std::map<UserId, UserState>& users() const { return users_; }
    const std::map<DeviceId, DeviceState>& devices() const { return devices_; }
    std::optional<Seq> last_seq() const { return last_seq_; }
    bool logging() const { return logging_; }
    void set_logging(bool on) { logging_ = on; }

    // Deterministic reconstruction of endpoint state from a transcript.
    static Bus replay(const TranscriptLog& log);

private:
    void begin(const EventMarker& marker);
    void deliver(const RekeyMessage& msg, MessageCounts& counts);
    void end(const EventMarker& marker);

    std::map<UserId, UserState> users_;
    std::map<DeviceId, DeviceState> devices_;
    TranscriptLog log_;
    std::optional<Seq> last_seq_;
    std::uint64_t next_packet_ = 1;
    bool logging_ = true;
};

// Per-seq message counts recomputed from a transcript.
std::map<Seq, MessageCounts> counts_from_log(const TranscriptLog& log);

TranscriptLog read_transcript(const std::string& path);
void write_transcript(const TranscriptLog& log, const std::string& path);

} // namespace gkm
