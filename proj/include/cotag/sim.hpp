#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "cotag/random.hpp"
#include "cotag/rlnc.hpp"
#include "cotag/time.hpp"

namespace cotag {

using NodeId = std::uint32_t;

enum class EventKind : std::uint8_t {
  PacketArrival,
  TransmitOpportunity,
  CohortTick,
  BandwidthUpdate,
  FlowControl,
};

const char* to_string(EventKind k) noexcept;

/// One event-log line: `time_ns,node,kind,flow,cohort,priority,outcome`.
/// Handlers fill in whatever applies; the rest is printed empty.
struct LogRecord {
  SimTime time{};
  NodeId node = 0;
  EventKind kind = EventKind::PacketArrival;
  std::optional<FlowId> flow;
  std::optional<CohortLabel> cohort;
  std::optional<Priority> priority;
  std::string outcome;
};

std::string format_log_record(const LogRecord& r);

/// Single-threaded discrete-event scheduler. Events run in (time, insertion
/// sequence) order and each runs exactly once.
class Scheduler {
 public:
  using Action = std::function<void(LogRecord&)>;

  SimTime now() const noexcept { return now_; }

  /// Throws ContractViolation when `at` lies in the past.
  void schedule(SimTime at, NodeId target, EventKind kind, Action action);

  /// Dispatches every event with time <= `until`, then advances the clock to
  /// `until`. Returns the number of dispatched events.
  std::size_t run_until(SimTime until);

  std::size_t pending() const noexcept { return queue_.size(); }
  std::uint64_t dispatched() const noexcept { return dispatched_; }

  /// Stream receiving one formatted record per dispatch, or nullptr.
  void set_log(std::ostream* log) noexcept { log_ = log; }

 private:
  struct Entry {
    SimTime time;
    std::uint64_t seq;
    NodeId target;
    EventKind kind;
    Action action;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const noexcept {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
  SimTime now_{};
  std::uint64_t next_seq_ = 0;
  std::uint64_t dispatched_ = 0;
  std::ostream* log_ = nullptr;
};

enum class EnqueueOutcome { Enqueued, DroppedIncoming, EvictedLow };

const char* to_string(EnqueueOutcome o) noexcept;

/// FIFO of bounded size whose overflow policy prefers to drop Low priority
/// packets:
///  - full, incoming Low: the incoming packet is dropped;
///  - full, incoming High, buffer all High: the incoming packet is dropped;
///  - full, incoming High, some Low buffered: the most recently received Low
///    packet is evicted and the incoming packet is enqueued.
/// With every packet High this is plain drop-tail.
template <typename Packet>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ContractViolation("queue capacity must be positive");
  }

  struct Result {
    EnqueueOutcome outcome;
    std::optional<Packet> evicted;  ///< set for EvictedLow
  };

  Result push(Packet pkt) {
    if (items_.size() < capacity_) {
      add(std::move(pkt));
      return {EnqueueOutcome::Enqueued, std::nullopt};
    }
    if (pkt.priority == Priority::Low || low_count_ == 0)
      return {EnqueueOutcome::DroppedIncoming, std::nullopt};
    auto it = items_.end();
    do {
      --it;
    } while (it->priority != Priority::Low);
    std::optional<Packet> evicted(std::move(*it));
    items_.erase(it);
    --low_count_;
    add(std::move(pkt));
    return {EnqueueOutcome::EvictedLow, std::move(evicted)};
  }

  std::optional<Packet> pop() {
    if (items_.empty()) return std::nullopt;
    Packet p = std::move(items_.front());
    items_.pop_front();
    if (p.priority == Priority::Low) --low_count_;
    return p;
  }

  /// Removes every packet matching `pred`; returns how many were removed.
  template <typename Pred>
  std::size_t remove_if(Pred pred) {
    std::size_t removed = 0;
    for (auto it = items_.begin(); it != items_.end();) {
      if (pred(*it)) {
        if (it->priority == Priority::Low) --low_count_;
        it = items_.erase(it);
        ++removed;
      } else {
        ++it;
      }
    }
    return removed;
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return items_.empty(); }
  bool full() const noexcept { return items_.size() >= capacity_; }
  std::size_t low_count() const noexcept { return low_count_; }
  bool all_high() const noexcept { return low_count_ == 0; }

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

 private:
  void add(Packet pkt) {
    if (pkt.priority == Priority::Low) ++low_count_;
    items_.push_back(std::move(pkt));
  }

  std::size_t capacity_;
  std::size_t low_count_ = 0;
  std::deque<Packet> items_;
};

template <typename Packet>
EnqueueOutcome enqueue_with_drop(BoundedQueue<Packet>& q, Packet pkt) {
  return q.push(std::move(pkt)).outcome;
}

/// A unidirectional link. Bandwidth may change over time; a new value applies
/// from the next serialization start.
struct Link {
  NodeId src = 0;
  NodeId dst = 0;
  double bandwidth_bps = 0.0;
  SimTime propagation_delay{};
  double per = 0.0;

  void validate() const;
};

enum class TransmitOutcome { Delivered, Dropped, Blocked };

struct Transmission {
  TransmitOutcome outcome = TransmitOutcome::Blocked;
  SimTime serialization_end{};  ///< link becomes free again
  SimTime arrival{};            ///< meaningful for Delivered
};

/// Serialization time, rounded up to a whole nanosecond.
SimTime serialization_time(std::uint64_t size_bytes, double bandwidth_bps);

/// Starts sending `size_bytes` at `now`. A zero-bandwidth link returns
/// Blocked and the caller retries after the next bandwidth update. A packet
/// lost to PER still occupies the link for its serialization time.
Transmission transmit(const Link& link, std::uint64_t size_bytes, SimTime now, Rng& rng);

}  // namespace cotag

namespace cotag {

/// Transmitter feeding one Link. When the link is free the port pulls the
/// next packet from its source. After a serialization ends the next pull is
/// deferred to a fresh event at the same instant, so arrivals already queued
/// for that instant are handled before the port picks its next packet.
template <typename Packet>
class Port {
 public:
  struct Hooks {
    std::function<std::optional<Packet>(SimTime)> pull;
    std::function<void(Packet, LogRecord&)> deliver;
    std::function<std::uint32_t(const Packet&)> size;
    /// Called when a packet starts serialization (after the PER draw).
    std::function<void(const Packet&, TransmitOutcome)> on_send;
  };

  Port(Scheduler& sched, Link link, std::uint64_t per_seed, Hooks hooks)
      : sched_(sched), link_(link), per_rng_(per_seed), hooks_(std::move(hooks)) {
    link_.validate();
  }

  Port(const Port&) = delete;
  Port& operator=(const Port&) = delete;

  /// Starts a transmission if the port is idle and the source has a packet.
  void kick() {
    if (busy_) return;
    if (!(link_.bandwidth_bps > 0.0)) {
      blocked_ = true;
      return;
    }
    blocked_ = false;
    auto pkt = hooks_.pull(sched_.now());
    if (!pkt) return;
    const auto size = hooks_.size(*pkt);
    const Transmission tx = transmit(link_, size, sched_.now(), per_rng_);
    if (hooks_.on_send) hooks_.on_send(*pkt, tx.outcome);
    busy_ = true;
    ++sent_;
    if (tx.outcome == TransmitOutcome::Delivered) {
      ++in_flight_;
      sched_.schedule(tx.arrival, link_.dst, EventKind::PacketArrival,
                      [this, p = std::move(*pkt)](LogRecord& rec) mutable {
                        --in_flight_;
                        hooks_.deliver(std::move(p), rec);
                      });
    } else {
      ++dropped_per_;
    }
    sched_.schedule(tx.serialization_end, link_.src, EventKind::TransmitOpportunity,
                    [this](LogRecord& rec) {
                      busy_ = false;
                      rec.outcome = "link-free";
                      sched_.schedule(sched_.now(), link_.src, EventKind::TransmitOpportunity,
                                      [this](LogRecord& r) {
                                        r.outcome = "pull";
                                        kick();
                                      });
                    });
  }

  /// New bandwidth, effective from the next serialization start.
  void set_bandwidth(double bps) {
    link_.bandwidth_bps = bps;
    if (blocked_) kick();
  }

  const Link& link() const noexcept { return link_; }
  bool busy() const noexcept { return busy_; }
  std::uint64_t in_flight() const noexcept { return in_flight_; }
  std::uint64_t sent() const noexcept { return sent_; }
  std::uint64_t dropped_per() const noexcept { return dropped_per_; }

 private:
  Scheduler& sched_;
  Link link_;
  Rng per_rng_;
  Hooks hooks_;
  bool busy_ = false;
  bool blocked_ = false;
  std::uint64_t in_flight_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t dropped_per_ = 0;
};

}  // namespace cotag
