#include "cotag/transport.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cotag {

void FlowSpec::validate() const {
  if (packet_size == 0) throw std::invalid_argument("packet size must be positive");
  if (!(base_rate_gbps > 0.0) || !(burst_rate_gbps > 0.0))
    throw std::invalid_argument("flow rates must be positive");
  if (!(burst_duration_s > 0.0)) throw std::invalid_argument("burst duration must be positive");
  if (burst_start_s < 0.0) throw std::invalid_argument("burst start must be non-negative");
}

double FlowSpec::offered_rate_gbps(double t) const {
  return (t >= burst_start_s && t < burst_start_s + burst_duration_s) ? burst_rate_gbps
                                                                      : base_rate_gbps;
}

double FlowSpec::offered_bytes_until(double t) const {
  if (t <= 0.0) return 0.0;
  const double burst_end = burst_start_s + burst_duration_s;
  const double before = std::min(t, burst_start_s);
  const double during = std::clamp(t, burst_start_s, burst_end) - burst_start_s;
  const double after = std::max(0.0, t - burst_end);
  return (base_rate_gbps * (before + after) + burst_rate_gbps * during) * 1e9 / 8.0;
}

std::uint64_t FlowSpec::packets_available(double t) const {
  return static_cast<std::uint64_t>(std::floor(offered_bytes_until(t) / packet_size + 1e-9));
}

double FlowSpec::packet_ready_time(std::uint64_t seq) const {
  const double bytes = static_cast<double>(seq + 1) * packet_size;
  const double to_rate = 1e9 / 8.0;
  const double pre = base_rate_gbps * to_rate * burst_start_s;
  if (bytes <= pre) return bytes / (base_rate_gbps * to_rate);
  const double burst_bytes = burst_rate_gbps * to_rate * burst_duration_s;
  if (bytes <= pre + burst_bytes)
    return burst_start_s + (bytes - pre) / (burst_rate_gbps * to_rate);
  return burst_start_s + burst_duration_s +
         (bytes - pre - burst_bytes) / (base_rate_gbps * to_rate);
}

std::uint64_t FlowSpec::first_burst_seq() const {
  // Packet seq is complete once (seq + 1) * packet_size bytes were generated.
  const auto n = static_cast<std::uint64_t>(
      std::ceil(offered_bytes_until(burst_start_s) / packet_size - 1e-9));
  return n == 0 ? 0 : n - 1;
}

void TransportConfig::validate() const {
  if (!(initial_window >= 1.0) || !(max_window >= initial_window))
    throw std::invalid_argument("transport window bounds are inconsistent");
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("beta must be in (0,1)");
  if (!(cubic_c > 0.0)) throw std::invalid_argument("cubic C must be positive");
  if (dup_threshold == 0) throw std::invalid_argument("dup threshold must be positive");
  if (!(min_rto > SimTime::zero()) || !(initial_rto > SimTime::zero()) || max_rto < min_rto)
    throw std::invalid_argument("retransmission timer bounds are inconsistent");
}

SenderState::SenderState(const TransportConfig& cfg) : window(cfg.initial_window) {}

SimTime SenderState::rto(const TransportConfig& cfg) const {
  SimTime base = srtt ? std::max({cfg.min_rto, 2 * *srtt, *srtt + 4 * rttvar}) : cfg.initial_rto;
  for (unsigned i = 0; i < backoff && base < cfg.max_rto; ++i) base *= 2;
  return std::min(base, cfg.max_rto);
}

std::size_t source_tick(const FlowSpec& fs, const SenderState& ss, SimTime now) {
  const auto window = static_cast<std::size_t>(std::floor(ss.window));
  if (ss.in_flight.size() >= window) return 0;
  const std::size_t room = window - ss.in_flight.size();
  const std::uint64_t available = fs.packets_available(to_seconds(now));
  const std::uint64_t fresh = available > ss.next_seq ? available - ss.next_seq : 0;
  return static_cast<std::size_t>(
      std::min<std::uint64_t>(room, ss.retransmit_queue.size() + fresh));
}

std::vector<std::uint64_t> take_packets(const FlowSpec& fs, SenderState& ss, SimTime now) {
  std::size_t n = source_tick(fs, ss, now);
  std::vector<std::uint64_t> out;
  out.reserve(n);
  while (n > 0 && !ss.retransmit_queue.empty()) {
    const auto seq = *ss.retransmit_queue.begin();
    ss.retransmit_queue.erase(ss.retransmit_queue.begin());
    ss.in_flight[seq] = SentInfo{now, true};
    ++ss.retransmissions;
    out.push_back(seq);
    --n;
  }
  while (n > 0) {
    const auto seq = ss.next_seq++;
    ss.in_flight[seq] = SentInfo{now, false};
    out.push_back(seq);
    --n;
  }
  return out;
}

namespace {

void grow(SenderState& ss, SimTime now, const TransportConfig& cfg) {
  if (ss.window < ss.ssthresh) {
    ss.window += 1.0;
  } else {
    const double rtt = ss.srtt ? to_seconds(*ss.srtt) : to_seconds(cfg.initial_rto);
    if (!ss.in_congestion_avoidance_epoch) {
      ss.in_congestion_avoidance_epoch = true;
      ss.epoch_start = now;
      if (ss.w_max < ss.window) ss.w_max = ss.window;
    }
    const double t = to_seconds(now - ss.epoch_start) + rtt;
    const double k = std::cbrt(ss.w_max * (1.0 - cfg.beta) / cfg.cubic_c);
    const double cubic = cfg.cubic_c * std::pow(t - k, 3.0) + ss.w_max;
    // Reno-friendly lower bound on the target.
    const double reno = ss.w_max * cfg.beta +
                        3.0 * (1.0 - cfg.beta) / (1.0 + cfg.beta) * (t / std::max(rtt, 1e-6));
    const double target = std::max(cubic, reno);
    if (target > ss.window)
      ss.window += std::min(1.0, (target - ss.window) / ss.window);
    else
      ss.window += 0.01 / ss.window;
  }
  ss.window = std::clamp(ss.window, 1.0, cfg.max_window);
}

}  // namespace

std::vector<std::uint64_t> on_ack(SenderState& ss, const Ack& ack, SimTime now,
                                  const TransportConfig& cfg) {
  std::size_t newly = 0;
  const double used = static_cast<double>(ss.in_flight.size());
  auto acknowledge = [&](std::map<std::uint64_t, SentInfo>::iterator it) {
    if (!it->second.retransmission && it->first == ack.seq) {
      const SimTime sample = now - it->second.sent_at;
      ss.backoff = 0;
      if (ss.srtt) {
        const SimTime err = sample > *ss.srtt ? sample - *ss.srtt : *ss.srtt - sample;
        ss.rttvar = SimTime{(3 * ss.rttvar.count() + err.count()) / 4};
        ss.srtt = SimTime{(7 * ss.srtt->count() + sample.count()) / 8};
      } else {
        ss.srtt = sample;
        ss.rttvar = sample / 2;
      }
    }
    ++newly;
    return ss.in_flight.erase(it);
  };

  if (auto it = ss.in_flight.find(ack.seq); it != ss.in_flight.end()) acknowledge(it);
  ss.retransmit_queue.erase(ack.seq);
  if (ack.cumulative > ss.cumulative_ack) {
    for (auto it = ss.in_flight.begin(); it != ss.in_flight.end() && it->first < ack.cumulative;)
      it = acknowledge(it);
    ss.retransmit_queue.erase(ss.retransmit_queue.begin(),
                              ss.retransmit_queue.lower_bound(ack.cumulative));
    ss.cumulative_ack = ack.cumulative;
  }
  if (!ss.highest_acked || ack.seq > *ss.highest_acked) ss.highest_acked = ack.seq;

  const bool slow_start = ss.window < ss.ssthresh;
  const bool window_limited = slow_start ? used >= 0.5 * ss.window : used >= ss.window - 1.0;
  if (window_limited)
    for (std::size_t i = 0; i < newly; ++i) grow(ss, now, cfg);

  std::vector<std::uint64_t> lost;
  if (*ss.highest_acked >= cfg.dup_threshold) {
    const std::uint64_t limit = *ss.highest_acked - cfg.dup_threshold + 1;
    for (auto it = ss.in_flight.begin(); it != ss.in_flight.end() && it->first < limit; ++it) {
      // A retransmission is only judged by its own timer.
      if (!it->second.retransmission) lost.push_back(it->first);
    }
  }
  return lost;
}

void on_loss(SenderState& ss, const std::vector<std::uint64_t>& seqs, SimTime now,
             const TransportConfig& cfg) {
  if (seqs.empty()) return;
  bool new_epoch = false;
  for (auto seq : seqs) {
    ss.in_flight.erase(seq);
    ss.retransmit_queue.insert(seq);
    if (seq >= ss.recovery_point) new_epoch = true;
  }
  if (!new_epoch) return;
  ++ss.loss_events;
  ss.w_max = ss.window;
  ss.window = std::max(1.0, ss.window * cfg.beta);
  ss.ssthresh = ss.window;
  ss.epoch_start = now;
  ss.in_congestion_avoidance_epoch = true;
  ss.recovery_point = ss.next_seq;
}

std::optional<std::uint64_t> timed_out(const SenderState& ss, SimTime now,
                                       const TransportConfig& cfg) {
  std::optional<std::uint64_t> oldest;
  SimTime sent = SimTime::max();
  for (const auto& [seq, info] : ss.in_flight) {
    if (info.sent_at < sent) {
      sent = info.sent_at;
      oldest = seq;
    }
  }
  if (oldest && sent + ss.rto(cfg) <= now) return oldest;
  return std::nullopt;
}

void on_timeout(SenderState& ss, SimTime now, const TransportConfig& cfg) {
  ++ss.timeouts;
  ++ss.loss_events;
  for (const auto& [seq, info] : ss.in_flight) ss.retransmit_queue.insert(seq);
  ss.in_flight.clear();
  ss.w_max = ss.window;
  ss.ssthresh = std::max(2.0, ss.window * cfg.beta);
  ss.window = 1.0;
  ss.epoch_start = now;
  ss.in_congestion_avoidance_epoch = false;
  ss.recovery_point = ss.next_seq;
  ++ss.backoff;
}

std::optional<SimTime> next_timeout(const SenderState& ss, const TransportConfig& cfg) {
  if (ss.in_flight.empty()) return std::nullopt;
  SimTime earliest = SimTime::max();
  for (const auto& [seq, info] : ss.in_flight) earliest = std::min(earliest, info.sent_at);
  return earliest + ss.rto(cfg);
}

Receiver::Delivery Receiver::on_segment(std::uint64_t seq) {
  Delivery d;
  if (seq < next_expected_ || out_of_order_.count(seq)) {
    ++duplicates_;
    d.duplicate = true;
    d.ack = Ack{flow_, next_expected_, seq};
    return d;
  }
  ++unique_;
  if (seq == next_expected_) {
    d.in_order.push_back(seq);
    ++next_expected_;
    while (!out_of_order_.empty() && *out_of_order_.begin() == next_expected_) {
      d.in_order.push_back(next_expected_);
      out_of_order_.erase(out_of_order_.begin());
      ++next_expected_;
    }
  } else {
    out_of_order_.insert(seq);
  }
  d.ack = Ack{flow_, next_expected_, seq};
  return d;
}

std::array<PathCopy, 2> duplicate_multipath_schedule(std::uint64_t seq) {
  return {PathCopy{0, seq}, PathCopy{1, seq}};
}

}  // namespace cotag
