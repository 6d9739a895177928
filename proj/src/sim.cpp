#include "cotag/sim.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace cotag {

const char* to_string(EventKind k) noexcept {
  switch (k) {
    case EventKind::PacketArrival: return "arrival";
    case EventKind::TransmitOpportunity: return "txop";
    case EventKind::CohortTick: return "cohort";
    case EventKind::BandwidthUpdate: return "bandwidth";
    case EventKind::FlowControl: return "flow";
  }
  return "?";
}

const char* to_string(EnqueueOutcome o) noexcept {
  switch (o) {
    case EnqueueOutcome::Enqueued: return "enqueued";
    case EnqueueOutcome::DroppedIncoming: return "dropped-incoming";
    case EnqueueOutcome::EvictedLow: return "evicted-low";
  }
  return "?";
}

std::string format_log_record(const LogRecord& r) {
  std::string s = std::to_string(r.time.count());
  s += ',';
  s += std::to_string(r.node);
  s += ',';
  s += to_string(r.kind);
  s += ',';
  if (r.flow) s += std::to_string(*r.flow);
  s += ',';
  if (r.cohort) s += std::to_string(*r.cohort);
  s += ',';
  if (r.priority) s += to_string(*r.priority);
  s += ',';
  s += r.outcome;
  return s;
}

void Scheduler::schedule(SimTime at, NodeId target, EventKind kind, Action action) {
  if (at < now_)
    throw ContractViolation("schedule: event at " + std::to_string(at.count()) +
                            " ns is before now " + std::to_string(now_.count()));
  queue_.push(Entry{at, next_seq_++, target, kind, std::move(action)});
}

std::size_t Scheduler::run_until(SimTime until) {
  std::size_t count = 0;
  while (!queue_.empty() && queue_.top().time <= until) {
    // priority_queue::top is const; the entry is popped right after the move.
    Entry e = std::move(const_cast<Entry&>(queue_.top()));
    queue_.pop();
    now_ = e.time;
    LogRecord rec;
    rec.time = e.time;
    rec.node = e.target;
    rec.kind = e.kind;
    if (e.action) e.action(rec);
    if (log_) *log_ << format_log_record(rec) << '\n';
    ++count;
    ++dispatched_;
  }
  if (until > now_) now_ = until;
  return count;
}

void Link::validate() const {
  if (!(per >= 0.0 && per <= 1.0)) throw std::invalid_argument("link PER must be in [0,1]");
  if (propagation_delay < SimTime::zero())
    throw std::invalid_argument("link delay must be non-negative");
  if (!(bandwidth_bps >= 0.0)) throw std::invalid_argument("link bandwidth must be >= 0");
}

SimTime serialization_time(std::uint64_t size_bytes, double bandwidth_bps) {
  const double ns = static_cast<double>(size_bytes) * 8.0 * 1e9 / bandwidth_bps;
  // Guard against 8192*8/6e9 style values landing a hair above an integer.
  const double rounded = std::round(ns);
  const double whole = std::abs(ns - rounded) < 1e-6 ? rounded : std::ceil(ns);
  return SimTime{static_cast<std::int64_t>(whole)};
}

Transmission transmit(const Link& link, std::uint64_t size_bytes, SimTime now, Rng& rng) {
  Transmission t;
  if (!(link.bandwidth_bps > 0.0)) {
    t.outcome = TransmitOutcome::Blocked;
    t.serialization_end = now;
    return t;
  }
  t.serialization_end = now + serialization_time(size_bytes, link.bandwidth_bps);
  t.arrival = t.serialization_end + link.propagation_delay;
  // Draw unconditionally so the PER stream position does not depend on `per`.
  const double u = rng.uniform();
  t.outcome = u < link.per ? TransmitOutcome::Dropped : TransmitOutcome::Delivered;
  return t;
}

}  // namespace cotag
