#include "cotag/cotag.hpp"

#include <algorithm>
#include <limits>

namespace cotag {

Gateway::Gateway(GatewayConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed, "coding") {
  if (cfg_.cohort_interval <= SimTime::zero())
    throw std::invalid_argument("cohort interval must be positive");
}

CohortLabel Gateway::cohort_of(SimTime t) const {
  if (t < SimTime::zero()) throw ContractViolation("negative time");
  return static_cast<CohortLabel>(t / cfg_.cohort_interval);
}

void Gateway::roll(SimTime now) {
  const CohortLabel c = cohort_of(now);
  if (processing_ && processing_->label < c - 1) {
    // Interval over: whatever was not sent is dropped.
    processing_.reset();
  }
  if (c <= arrival_label_) return;
  if (arrival_label_ == c - 1 && !arrival_buffer_.empty()) {
    Processing p;
    p.label = arrival_label_;
    std::map<FlowId, std::vector<Bytes>> payloads;
    for (auto& sp : arrival_buffer_) {
      p.order.push_back(sp.flow);
      if (!payloads.count(sp.flow)) p.flows.push_back(sp.flow);
      payloads[sp.flow].push_back(std::move(sp.payload));
      ++p.high_quota[sp.flow];
    }
    for (auto& [flow, list] : payloads)
      p.gens.emplace(flow, Generation(flow, p.label, list));
    processing_ = std::move(p);
  } else if (!arrival_buffer_.empty()) {
    ++discarded_cohorts_;
  }
  arrival_buffer_.clear();
  arrival_label_ = c;
}

void Gateway::on_arrival(SourcePacket pkt, SimTime now) {
  roll(now);
  ++counters_[arrival_label_][pkt.flow].arrivals;
  arrival_buffer_.push_back(std::move(pkt));
}

std::optional<CohortLabel> Gateway::processing_cohort() const {
  if (!processing_) return std::nullopt;
  return processing_->label;
}

std::size_t Gateway::processing_arrivals() const {
  return processing_ ? processing_->order.size() : 0;
}

FlowId Gateway::pick_flow(Processing& p, bool high) {
  const std::size_t pos = p.high_sent + p.low_sent;
  if (cfg_.order == FlowOrder::QueueOrder) return p.order[pos % p.order.size()];
  // Round robin over flows; during the High phase skip flows whose High
  // quota (their arrival count) is used up.
  for (std::size_t i = 0; i < p.flows.size(); ++i) {
    const FlowId f = p.flows[(pos + i) % p.flows.size()];
    if (!high || p.high_quota[f] > 0) return f;
  }
  return p.flows.front();
}

std::optional<CohortLabel> Gateway::marker_opportunity(int link_id, SimTime now) {
  roll(now);
  const CohortLabel label = cohort_of(now) - 1;
  if (label < 0) return std::nullopt;
  if (processing_ && processing_->label == label) return std::nullopt;
  auto [it, fresh] = last_label_.try_emplace(link_id, label);
  if (!fresh) {
    if (it->second >= label) return std::nullopt;
    it->second = label;
  }
  return label;
}

std::optional<CodedPacket> Gateway::on_transmit_opportunity(int link_id, SimTime now) {
  roll(now);
  if (!processing_ || processing_->label != cohort_of(now) - 1) return std::nullopt;
  Processing& p = *processing_;
  last_label_[link_id] = p.label;
  const bool high = p.high_sent < p.order.size();
  const FlowId flow = pick_flow(p, high);
  const Generation& gen = p.gens.at(flow);
  const auto coeffs = random_coefficients(gen.size(), rng_);
  CodedPacket pkt = encode(gen, coeffs, high ? Priority::High : Priority::Low);
  auto& ctr = counters_[p.label][flow];
  if (high) {
    ++p.high_sent;
    --p.high_quota[flow];
    ++ctr.high_sent;
  } else {
    ++p.low_sent;
    ++ctr.low_sent;
  }
  return pkt;
}

LabelGate::LabelGate(int links) : largest_(static_cast<std::size_t>(links)) {
  if (links < 1) throw std::invalid_argument("a node needs at least one incoming link");
}

bool LabelGate::observe(int link, CohortLabel label) {
  auto& l = largest_.at(static_cast<std::size_t>(link));
  if (l && label < *l) return false;
  l = label;
  return true;
}

std::optional<CohortLabel> LabelGate::min_largest() const {
  CohortLabel m = std::numeric_limits<CohortLabel>::max();
  for (const auto& l : largest_) {
    if (!l) return std::nullopt;
    m = std::min(m, *l);
  }
  return m;
}

bool LabelGate::may_process(CohortLabel label) const {
  const auto m = min_largest();
  return m && label <= *m - 1;
}

std::optional<CohortLabel> smallest_unprocessed(const BoundedQueue<BufferedPacket>& buffer,
                                                std::optional<CohortLabel> after) {
  std::optional<CohortLabel> best;
  for (const auto& b : buffer) {
    const auto label = b.pkt.cohort;
    if (after && label <= *after) continue;
    if (!best || label < *best) best = label;
  }
  return best;
}

namespace {

NodeArrival admit(BoundedQueue<BufferedPacket>& buffer, LabelGate& gate,
                  CodedPacket pkt, int link_id, std::optional<CohortLabel> processed) {
  NodeArrival r;
  const CohortLabel label = pkt.cohort;
  if (!gate.observe(link_id, label) || (processed && label < *processed)) {
    r.protocol_error = true;
    r.outcome = EnqueueOutcome::DroppedIncoming;
    return r;
  }
  const Priority prio = pkt.priority;
  auto res = buffer.push(BufferedPacket{std::move(pkt), prio, false});
  r.outcome = res.outcome;
  if (res.evicted) r.evicted = res.evicted->priority;
  return r;
}

}  // namespace

AccessPoint::AccessPoint(NodeConfig cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed, "recoding"), buffer_(cfg.buffer_capacity), gate_(cfg.incoming_links) {}

NodeArrival AccessPoint::on_arrival(CodedPacket pkt, int link_id, SimTime /*now*/) {
  const CohortLabel label = pkt.cohort;
  NodeArrival r = admit(buffer_, gate_, std::move(pkt), link_id, k_ ? k_ : closed_);
  if (!r.protocol_error) update(r, label);
  return r;
}

NodeArrival AccessPoint::on_marker(CohortLabel label, int link_id, SimTime /*now*/) {
  NodeArrival r;
  if (!gate_.observe(link_id, label) || (k_ && label < *k_)) {
    r.protocol_error = true;
    r.outcome = EnqueueOutcome::DroppedIncoming;
    return r;
  }
  update(r, label);
  return r;
}

void AccessPoint::update(NodeArrival& r, CohortLabel arrived) {
  // The first arrival of label k+2 or later closes the window of k.
  if (k_ && arrived >= *k_ + 2) {
    const CohortLabel k = *k_;
    r.given_away += buffer_.remove_if([k](const BufferedPacket& b) { return b.pkt.cohort <= k; });
    k_.reset();
    closed_ = k;
  }
  const auto next = smallest_unprocessed(buffer_, k_ ? k_ : closed_);
  if (next && gate_.may_process(*next)) {
    k_ = *next;
    const CohortLabel k = *k_;
    r.advanced_to = k;
    r.given_away += buffer_.remove_if([k](const BufferedPacket& b) { return b.pkt.cohort < k; });
    n_ = 0;
    n_high_ = 0;
    for (const auto& b : buffer_) {
      if (b.pkt.cohort != k) continue;
      ++n_;
      if (b.priority == Priority::High) ++n_high_;
    }
    sent_ = 0;
    take_pos_ = 0;
  }
}

std::optional<CohortLabel> AccessPoint::marker_opportunity(SimTime /*now*/) {
  const auto upstream = gate_.min_largest();
  if (!upstream || (last_emitted_ && *last_emitted_ >= *upstream)) return std::nullopt;
  last_emitted_ = *upstream;
  return upstream;
}

CodedPacket AccessPoint::recode_flow(FlowId flow, Priority priority) {
  std::vector<const CodedPacket*> inputs;
  for (const auto& b : buffer_)
    if (b.pkt.cohort == *k_ && b.pkt.flow_id == flow) inputs.push_back(&b.pkt);
  return recode_random(inputs, priority, rng_);
}

std::optional<CodedPacket> AccessPoint::on_transmit_opportunity(SimTime /*now*/) {
  if (!k_) return std::nullopt;
  const CohortLabel k = *k_;

  auto next_unsent = [&](Priority prio) -> BufferedPacket* {
    for (auto& b : buffer_)
      if (b.pkt.cohort == k && b.priority == prio && !b.sent) return &b;
    return nullptr;
  };

  BufferedPacket* turn = nullptr;
  Priority tag = Priority::Low;
  if (sent_ < n_high_) {
    turn = next_unsent(Priority::High);
    tag = Priority::High;
  }
  if (!turn) {
    turn = next_unsent(Priority::Low);
    tag = Priority::Low;
  }
  FlowId flow;
  if (turn) {
    turn->sent = true;
    flow = turn->pkt.flow_id;
  } else {
    std::vector<FlowId> queue_flows;
    for (const auto& b : buffer_)
      if (b.pkt.cohort == k) queue_flows.push_back(b.pkt.flow_id);
    if (queue_flows.empty()) return std::nullopt;
    flow = queue_flows[take_pos_++ % queue_flows.size()];
    tag = Priority::Low;
  }
  ++sent_;
  last_emitted_ = k;
  return recode_flow(flow, tag);
}

Device::Device(NodeConfig cfg)
    : cfg_(cfg), buffer_(cfg.buffer_capacity), gate_(cfg.incoming_links) {}

DeviceArrival Device::on_arrival(CodedPacket pkt, int link_id, SimTime /*now*/) {
  DeviceArrival out;
  out.node = admit(buffer_, gate_, std::move(pkt), link_id, last_processed_);
  if (!out.node.protocol_error) decode_ready(out);
  return out;
}

DeviceArrival Device::on_marker(CohortLabel label, int link_id, SimTime /*now*/) {
  DeviceArrival out;
  if (!gate_.observe(link_id, label)) {
    out.node.protocol_error = true;
    out.node.outcome = EnqueueOutcome::DroppedIncoming;
    return out;
  }
  decode_ready(out);
  return out;
}

void Device::decode_ready(DeviceArrival& out) {
  // Decoding is instantaneous, so every label that became eligible is handled
  // now rather than one per arrival.
  for (;;) {
    const auto next = smallest_unprocessed(buffer_, last_processed_);
    if (!next || !gate_.may_process(*next)) break;
    const CohortLabel k = *next;
    out.node.advanced_to = k;
    out.node.given_away +=
        buffer_.remove_if([k](const BufferedPacket& b) { return b.pkt.cohort < k; });

    std::map<FlowId, std::vector<const CodedPacket*>> by_flow;
    for (const auto& b : buffer_)
      if (b.pkt.cohort == k) by_flow[b.pkt.flow_id].push_back(&b.pkt);
    for (const auto& [flow, pkts] : by_flow) {
      GenerationOutcome g;
      g.flow = flow;
      g.cohort = k;
      g.packets = pkts.size();
      g.generation_size = pkts.front()->generation_size();
      Decoder dec(flow, k, g.generation_size);
      for (const auto* p : pkts) {
        if (dec.complete()) break;
        if (p->generation_size() != g.generation_size) continue;
        dec.insert(*p);
      }
      g.rank = dec.rank();
      if (auto payloads = dec.extract()) {
        g.decoded = true;
        g.payloads = std::move(*payloads);
      }
      out.generations.push_back(std::move(g));
    }
    out.consumed +=
        buffer_.remove_if([k](const BufferedPacket& b) { return b.pkt.cohort == k; });
    last_processed_ = k;
  }
}

}  // namespace cotag
