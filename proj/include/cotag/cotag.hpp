#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "cotag/rlnc.hpp"
#include "cotag/sim.hpp"
#include "cotag/time.hpp"

namespace cotag {

struct SourcePacket {
  FlowId flow = 0;
  Bytes payload;
  std::uint32_t wire_bytes = 0;
};

/// How coded emissions pick the flow to code.
///  QueueOrder: the flow of the next source packet in cohort arrival order,
///              cycling through the queue once every packet had its turn.
///  RoundRobin: cycle over distinct flows.
enum class FlowOrder { QueueOrder, RoundRobin };

struct GatewayConfig {
  SimTime cohort_interval = std::chrono::milliseconds(10);
  FlowOrder order = FlowOrder::QueueOrder;
};

/// Gateway counters of one (cohort, flow).
struct GatewayFlowCounters {
  std::size_t arrivals = 0;
  std::size_t high_sent = 0;
  std::size_t low_sent = 0;
};

/// Coded forwarding at the network gateway.
///
/// Packets arriving in [cT, (c+1)T) form cohort c. Cohort c is coded and sent
/// with label c only during [(c+1)T, (c+2)T) and dropped afterwards. The first
/// n_c emissions of a cohort (n_c = its arrival count) are High priority; the
/// rest are redundant Low priority combinations sent while the interval lasts.
class Gateway {
 public:
  Gateway(GatewayConfig cfg, std::uint64_t seed);

  CohortLabel cohort_of(SimTime t) const;

  void on_arrival(SourcePacket pkt, SimTime now);

  /// Next coded packet for outgoing link `link_id`, or nullopt when the
  /// cohort being processed is empty.
  std::optional<CodedPacket> on_transmit_opportunity(int link_id, SimTime now);

  /// When the interval's cohort is empty, the label link `link_id` must
  /// still carry once so downstream nodes can move on. Returns that label the
  /// first time it is asked per (link, label); nullopt otherwise.
  std::optional<CohortLabel> marker_opportunity(int link_id, SimTime now);

  /// Label being forwarded at `now` if it has material.
  std::optional<CohortLabel> processing_cohort() const;

  /// n of the cohort currently forwarded (0 if none).
  std::size_t processing_arrivals() const;

  const std::map<CohortLabel, std::map<FlowId, GatewayFlowCounters>>& counters() const {
    return counters_;
  }
  std::size_t discarded_unsent_cohorts() const noexcept { return discarded_cohorts_; }

  const GatewayConfig& config() const noexcept { return cfg_; }

 private:
  struct Processing {
    CohortLabel label = 0;
    std::vector<FlowId> order;   // arrival order of the cohort's packets
    std::vector<FlowId> flows;   // distinct flows, first-arrival order
    std::map<FlowId, Generation> gens;
    std::map<FlowId, std::size_t> high_quota;
    std::size_t high_sent = 0;
    std::size_t low_sent = 0;
  };

  void roll(SimTime now);
  FlowId pick_flow(Processing& p, bool high);

  GatewayConfig cfg_;
  Rng rng_;
  CohortLabel arrival_label_ = 0;
  std::vector<SourcePacket> arrival_buffer_;
  std::optional<Processing> processing_;
  std::map<CohortLabel, std::map<FlowId, GatewayFlowCounters>> counters_;
  std::size_t discarded_cohorts_ = 0;
  std::map<int, CohortLabel> last_label_;  // per outgoing link
};

struct NodeConfig {
  std::size_t buffer_capacity = 2048;
  int incoming_links = 1;
};

/// Tracks the largest label seen per incoming link and decides when the
/// smallest unprocessed label may be processed.
class LabelGate {
 public:
  explicit LabelGate(int links);

  /// False if `label` is smaller than one already seen on `link`.
  bool observe(int link, CohortLabel label);

  /// min over links of the largest label seen; nullopt until every link has
  /// carried at least one packet.
  std::optional<CohortLabel> min_largest() const;

  /// True when `label` <= min_l L_l - 1.
  bool may_process(CohortLabel label) const;

  std::optional<CohortLabel> largest(int link) const { return largest_.at(link); }

 private:
  std::vector<std::optional<CohortLabel>> largest_;
};

struct BufferedPacket {
  CodedPacket pkt;
  Priority priority = Priority::High;
  bool sent = false;
};

struct NodeArrival {
  EnqueueOutcome outcome = EnqueueOutcome::Enqueued;
  std::optional<Priority> evicted;    ///< priority of the evicted packet
  bool protocol_error = false;        ///< label regression; packet discarded
  std::optional<CohortLabel> advanced_to;
  std::size_t given_away = 0;         ///< packets discarded by the advance
};

/// An mmWave access point: buffers coded packets, processes label k between
/// the first label k+1 arrival and the first label k+2 arrival, and drops the
/// rest of cohort k when the window closes. Label markers count as arrivals.
class AccessPoint {
 public:
  AccessPoint(NodeConfig cfg, std::uint64_t seed);

  NodeArrival on_arrival(CodedPacket pkt, int link_id, SimTime now);

  /// A label marker: updates the gate like a packet would, buffers nothing.
  NodeArrival on_marker(CohortLabel label, int link_id, SimTime now);

  /// Sends, in order: one recoding per buffered High packet of label k
  /// (tagged High), one per buffered Low packet (tagged Low), then fresh Low
  /// recodings cycling over the label-k queue.
  std::optional<CodedPacket> on_transmit_opportunity(SimTime now);

  /// With nothing to send, the AP announces the largest label seen upstream
  /// once, since it will never emit a smaller one again.
  std::optional<CohortLabel> marker_opportunity(SimTime now);

  std::optional<CohortLabel> processing_label() const noexcept { return k_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t n_high() const noexcept { return n_high_; }
  std::size_t sent() const noexcept { return sent_; }
  const BoundedQueue<BufferedPacket>& buffer() const noexcept { return buffer_; }
  const LabelGate& gate() const noexcept { return gate_; }

 private:
  CodedPacket recode_flow(FlowId flow, Priority priority);
  void update(NodeArrival& r, CohortLabel arrived);

  NodeConfig cfg_;
  Rng rng_;
  BoundedQueue<BufferedPacket> buffer_;
  LabelGate gate_;
  std::optional<CohortLabel> k_;
  std::optional<CohortLabel> closed_;  // last label whose window closed
  std::size_t n_ = 0;
  std::size_t n_high_ = 0;
  std::size_t sent_ = 0;
  std::size_t take_pos_ = 0;
  std::optional<CohortLabel> last_emitted_;
};

struct GenerationOutcome {
  FlowId flow = 0;
  CohortLabel cohort = 0;
  bool decoded = false;
  std::size_t rank = 0;
  std::size_t generation_size = 0;
  std::size_t packets = 0;
  std::vector<Bytes> payloads;  ///< source order, empty unless decoded
};

struct DeviceArrival {
  NodeArrival node;
  std::vector<GenerationOutcome> generations;
  std::size_t consumed = 0;  ///< buffered packets used up by decoding
};

/// The mobile device: buffers coded packets and decodes label k once every
/// incoming link has carried a label greater than k.
class Device {
 public:
  explicit Device(NodeConfig cfg);

  DeviceArrival on_arrival(CodedPacket pkt, int link_id, SimTime now);
  DeviceArrival on_marker(CohortLabel label, int link_id, SimTime now);

  std::optional<CohortLabel> last_processed() const noexcept { return last_processed_; }
  const BoundedQueue<BufferedPacket>& buffer() const noexcept { return buffer_; }

 private:
  void decode_ready(DeviceArrival& out);

  NodeConfig cfg_;
  BoundedQueue<BufferedPacket> buffer_;
  LabelGate gate_;
  std::optional<CohortLabel> last_processed_;
};

/// Smallest label in `buffer` greater than `after` (or the smallest label if
/// `after` is unset).
std::optional<CohortLabel> smallest_unprocessed(const BoundedQueue<BufferedPacket>& buffer,
                                                std::optional<CohortLabel> after);

}  // namespace cotag
