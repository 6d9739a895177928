#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "cotag/rlnc.hpp"
#include "cotag/time.hpp"

namespace cotag {

/// Application traffic of one flow: a base rate with one burst window.
struct FlowSpec {
  FlowId flow_id = 0;
  std::uint32_t packet_size = 8192;
  double base_rate_gbps = 0.6;
  double burst_rate_gbps = 2.0;
  double burst_start_s = 0.5;
  double burst_duration_s = 2.0;

  void validate() const;
  double offered_rate_gbps(double t_s) const;
  /// Application bytes generated in [0, t).
  double offered_bytes_until(double t_s) const;
  /// Application packets generated in [0, t).
  std::uint64_t packets_available(double t_s) const;
  /// Time at which packet `seq` (0-based) becomes available.
  double packet_ready_time(std::uint64_t seq) const;
  /// First sequence number generated at or after the burst start.
  std::uint64_t first_burst_seq() const;
};

/// Knobs of the simplified cubic-style sender.
struct TransportConfig {
  double initial_window = 10.0;
  double max_window = 4096.0;
  double beta = 0.7;
  double cubic_c = 0.4;          ///< packets / s^3
  std::uint32_t dup_threshold = 3;
  SimTime min_rto = std::chrono::milliseconds(1);
  SimTime initial_rto = std::chrono::milliseconds(100);
  SimTime max_rto = std::chrono::seconds(1);

  void validate() const;
};

struct SentInfo {
  SimTime sent_at{};
  bool retransmission = false;
};

/// Per-flow sender state. Invariants: in_flight.size() <= window (checked
/// when sending) and window >= 1.
struct SenderState {
  double window = 10.0;
  double ssthresh = 1e18;
  double w_max = 0.0;
  SimTime epoch_start{};
  bool in_congestion_avoidance_epoch = false;
  std::map<std::uint64_t, SentInfo> in_flight;
  std::set<std::uint64_t> retransmit_queue;
  std::uint64_t next_seq = 0;
  std::uint64_t cumulative_ack = 0;  ///< all seq < this are acknowledged
  std::optional<std::uint64_t> highest_acked;
  std::optional<SimTime> srtt;
  SimTime rttvar{};
  std::uint64_t recovery_point = 0;  ///< losses below this belong to the last epoch
  std::uint64_t loss_events = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t timeouts = 0;
  unsigned backoff = 0;  ///< timer doublings since the last valid RTT sample

  explicit SenderState(const TransportConfig& cfg = {});
  SimTime rto(const TransportConfig& cfg) const;
};

/// Acknowledgement carrying the cumulative point and the sequence number that
/// triggered it.
struct Ack {
  FlowId flow = 0;
  std::uint64_t cumulative = 0;
  std::uint64_t seq = 0;
};

/// Packets the sender may put on the wire now: retransmissions first, then
/// new data generated by the application so far, limited by the window.
std::size_t source_tick(const FlowSpec& fs, const SenderState& ss, SimTime now);

/// Chooses and records the packets counted by source_tick().
std::vector<std::uint64_t> take_packets(const FlowSpec& fs, SenderState& ss, SimTime now);

/// Grows the window for each newly acknowledged packet and returns sequence
/// numbers now deemed lost (dup_threshold packets above them acknowledged).
/// RTT samples come from the sender's own send times, never from
/// retransmitted packets. The window only grows while the flow is using it:
/// at least half of it in slow start, all but one packet afterwards.
std::vector<std::uint64_t> on_ack(SenderState& ss, const Ack& ack, SimTime now,
                                  const TransportConfig& cfg);

/// Registers loss of `seqs`. Multiplies the window by beta once per loss
/// epoch (a loss of a packet sent before the last reduction does not reduce
/// again). Lost packets are queued for retransmission.
void on_loss(SenderState& ss, const std::vector<std::uint64_t>& seqs, SimTime now,
             const TransportConfig& cfg);

/// The earliest-sent packet in flight if its timer (send time + rto) expired
/// by `now`.
std::optional<std::uint64_t> timed_out(const SenderState& ss, SimTime now,
                                       const TransportConfig& cfg);

/// Timer expiry: everything in flight is presumed lost and queued for
/// retransmission, the window restarts from one packet in slow start
/// (threshold beta * window) and the timer backs off until the next RTT
/// sample from a packet that was not retransmitted.
void on_timeout(SenderState& ss, SimTime now, const TransportConfig& cfg);

/// Earliest pending retransmission deadline.
std::optional<SimTime> next_timeout(const SenderState& ss, const TransportConfig& cfg);

/// Cumulative-ack receiver with duplicate suppression.
class Receiver {
 public:
  struct Delivery {
    Ack ack;
    /// Sequence numbers handed to the application in order by this arrival.
    std::vector<std::uint64_t> in_order;
    bool duplicate = false;
  };

  explicit Receiver(FlowId flow) : flow_(flow) {}

  Delivery on_segment(std::uint64_t seq);

  std::uint64_t next_expected() const noexcept { return next_expected_; }
  std::uint64_t duplicates() const noexcept { return duplicates_; }
  std::uint64_t unique_received() const noexcept { return unique_; }

 private:
  FlowId flow_;
  std::uint64_t next_expected_ = 0;
  std::set<std::uint64_t> out_of_order_;
  std::uint64_t duplicates_ = 0;
  std::uint64_t unique_ = 0;
};

struct PathCopy {
  int path = 0;
  std::uint64_t seq = 0;
};

/// One copy of the packet per path.
std::array<PathCopy, 2> duplicate_multipath_schedule(std::uint64_t seq);

}  // namespace cotag
