#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "cotag/harness.hpp"

namespace cotag {

const char* to_string(Scheme s) noexcept {
  switch (s) {
    case Scheme::Cotag: return "cotag";
    case Scheme::SinglePathBaseline: return "single-path";
    case Scheme::DuplicateMultipath: return "duplicate-multipath";
  }
  return "?";
}

Scheme parse_scheme(std::string_view name) {
  for (Scheme s : {Scheme::Cotag, Scheme::SinglePathBaseline, Scheme::DuplicateMultipath})
    if (name == to_string(s)) return s;
  throw ConfigError("unknown scheme '" + std::string(name) +
                    "' (expected cotag, single-path or duplicate-multipath)");
}

std::string format_cohort_audit(const CohortAuditRecord& r) {
  std::ostringstream os;
  os << r.cohort << ',' << r.flow << ',' << r.n_k << ',' << r.high_sent << ',' << r.low_sent
     << ',' << r.ap1_sent << ',' << r.ap2_sent << ',' << r.delivered << ','
     << (r.decoded ? "true" : "false");
  return os.str();
}

void ScenarioConfig::validate() const {
  auto prob = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0))
      throw ConfigError(std::string(what) + " must lie in [0, 1]");
  };
  prob(per, "per");
  if (!(latency_ms >= 0.0)) throw ConfigError("latency_ms must be non-negative");
  if (!(cohort_interval_ms > 0.0)) throw ConfigError("T_ms must be positive");
  if (flow_count == 0) throw ConfigError("at least one flow is required");
  if (!(duration_s >= 0.0)) throw ConfigError("duration_s must be non-negative");
  if (!(rate_scale > 0.0)) throw ConfigError("rate_scale must be positive");
  if (!(transfer_target_bits > 0.0)) throw ConfigError("transfer_target_bits must be positive");
  if (!(topology.server_link_gbps > 0.0) || !(topology.gateway_link_gbps > 0.0))
    throw ConfigError("wired link rates must be positive");
  if (!(topology.gateway_ap_delay_ms >= 0.0) || !(topology.ap_device_delay_ms >= 0.0))
    throw ConfigError("propagation delays must be non-negative");
  if (topology.queue_capacity == 0) throw ConfigError("queue_capacity must be positive");
  try {
    flow.validate();
    transport.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  std::visit(
      [&](const auto& ch) {
        using T = std::decay_t<decltype(ch)>;
        if constexpr (std::is_same_v<T, MarkovChannel>) {
          prob(ch.params.p, "p");
          prob(ch.params.q, "q");
          try {
            ch.params.validate();
            ch.levels.validate();
          } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
          }
        } else if constexpr (std::is_same_v<T, TraceChannel>) {
          if (!std::filesystem::exists(ch.path))
            throw ConfigError("trace file not found: " + ch.path.string());
        } else {
          if (!(ch.rate1_gbps >= 0.0) || !(ch.rate2_gbps >= 0.0))
            throw ConfigError("constant channel rates must be non-negative");
        }
      },
      channel);
}

std::vector<FlowSpec> ScenarioConfig::flows() const {
  std::vector<FlowSpec> out;
  for (std::size_t i = 0; i < flow_count; ++i) {
    FlowSpec f = flow;
    f.flow_id = static_cast<FlowId>(i);
    f.base_rate_gbps *= rate_scale;
    f.burst_rate_gbps *= rate_scale;
    out.push_back(f);
  }
  return out;
}

namespace {

constexpr std::size_t kPayloadBytes = 16;

std::uint32_t payload_tag(FlowId flow, std::uint64_t seq) {
  return static_cast<std::uint32_t>(splitmix64((std::uint64_t{flow} << 40) ^ seq));
}

void put_be(Bytes& b, std::uint64_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_be(const Bytes& b, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

/// flow(4) | seq(8) | tag(4)
Bytes make_payload(FlowId flow, std::uint64_t seq) {
  Bytes b;
  b.reserve(kPayloadBytes);
  put_be(b, flow, 4);
  put_be(b, seq, 8);
  put_be(b, payload_tag(flow, seq), 4);
  return b;
}

std::optional<std::pair<FlowId, std::uint64_t>> parse_payload(const Bytes& b) {
  if (b.size() != kPayloadBytes) return std::nullopt;
  const auto flow = static_cast<FlowId>(get_be(b, 0, 4));
  const auto seq = get_be(b, 4, 8);
  if (get_be(b, 12, 4) != payload_tag(flow, seq)) return std::nullopt;
  return std::make_pair(flow, seq);
}

struct WirePacket {
  Priority priority = Priority::High;
  FlowId flow = 0;
  std::uint64_t seq = 0;
  int path = 0;
  std::optional<CodedPacket> coded;
  std::optional<CohortLabel> marker;
};

constexpr std::uint32_t kMarkerBytes = 64;

using WirePort = Port<WirePacket>;

SimTime ms(double v) { return from_seconds(v * 1e-3); }

class Simulation {
 public:
  Simulation(const ScenarioConfig& cfg, const RunOptions& opts)
      : cfg_(cfg),
        opts_(opts),
        flows_(cfg.flows()),
        end_(from_seconds(cfg.duration_s)),
        ack_delay_(ms(cfg.latency_ms + cfg.topology.gateway_ap_delay_ms +
                      cfg.topology.ap_device_delay_ms)),
        server_queue_(cfg.topology.queue_capacity) {
    for (const auto& f : flows_) {
      senders_.emplace_back(cfg.transport);
      receivers_.emplace_back(f.flow_id);
    }
    flow_state_.resize(flows_.size());
    burst_begin_ = flows_.front().burst_start_s;
    burst_end_ = std::min(cfg.duration_s, burst_begin_ + flows_.front().burst_duration_s);
    target_bits_ = cfg.transfer_target_bits * cfg.rate_scale;
    sched_.set_log(opts.event_log);
    build();
  }

  RunResult run();

 private:
  struct FlowRuntime {
    bool wake_pending = false;
    SimTime wake_at{};
    bool timer_pending = false;
    SimTime timer_at{};
    std::uint64_t timer_token = 0;
  };

  void build();
  void build_channel();
  void set_air_rates(double r1_gbps, double r2_gbps);
  void schedule_tick(SimTime at);
  void schedule_channel_step(SimTime at);

  // Server side.
  void try_send(std::size_t f);
  void schedule_wakeup(std::size_t f);
  void arm_timer(std::size_t f);
  void on_timer(std::size_t f);
  void on_ack_arrival(const Ack& ack);

  // Gateway and access points.
  void gateway_receive(WirePacket pkt, LogRecord& rec);
  void ap_receive(int ap, WirePacket pkt, LogRecord& rec);
  std::optional<WirePacket> ap_pull(int ap);
  void device_receive(int link, WirePacket pkt, LogRecord& rec);
  void deliver(FlowId flow, std::uint64_t seq);

  void audit_node_arrival(const NodeArrival& r, Priority prio, std::size_t low_before);
  void check_label(int port, CohortLabel label);

  WirePacket marker(CohortLabel label) {
    WirePacket w;
    w.marker = label;
    ++audit_.created;
    return w;
  }

  WirePacket wrap(CodedPacket pkt) {
    WirePacket w;
    w.priority = pkt.priority;
    w.flow = pkt.flow_id;
    pkt.wire_bytes = flows_.front().packet_size;
    w.coded = std::move(pkt);
    ++audit_.created;
    return w;
  }

  std::unique_ptr<WirePort> make_port(Link link, const char* stream,
                                      typename WirePort::Hooks hooks) {
    hooks.size = [this](const WirePacket& p) {
      return p.marker ? kMarkerBytes : flows_.front().packet_size;
    };
    return std::make_unique<WirePort>(sched_, link, stream_seed(cfg_.seed, stream),
                                      std::move(hooks));
  }

  std::optional<WirePacket> pop_fifo(BoundedQueue<WirePacket>& q) { return q.pop(); }

  void push_fifo(BoundedQueue<WirePacket>& q, WirePacket pkt, LogRecord& rec) {
    const auto res = q.push(std::move(pkt));
    if (res.outcome != EnqueueOutcome::Enqueued) ++audit_.dropped_queue;
    rec.outcome = to_string(res.outcome);
  }

  const ScenarioConfig& cfg_;
  const RunOptions& opts_;
  std::vector<FlowSpec> flows_;
  SimTime end_;
  SimTime ack_delay_;
  Scheduler sched_;

  std::vector<SenderState> senders_;
  std::vector<Receiver> receivers_;
  std::vector<FlowRuntime> flow_state_;

  BoundedQueue<WirePacket> server_queue_;
  std::unique_ptr<WirePort> server_port_;
  std::vector<BoundedQueue<WirePacket>> gw_queues_;
  std::vector<BoundedQueue<WirePacket>> ap_queues_;
  std::unique_ptr<WirePort> gw_ports_[2];
  std::unique_ptr<WirePort> ap_ports_[2];
  std::size_t rr_next_ = 0;

  std::optional<Gateway> gateway_;
  std::vector<AccessPoint> aps_;
  std::optional<Device> device_;

  std::optional<ChannelProcess> channel_;
  std::vector<TraceRecord> trace_;
  std::vector<double> rate_samples_[2];

  InvariantAudit audit_;
  std::optional<CohortLabel> last_label_[4];  // gw->ap1, gw->ap2, ap1->dev, ap2->dev
  std::map<CohortLabel, SimTime> ap_first_arrival_[2];
  std::map<CohortLabel, std::pair<SimTime, SimTime>> ap_send_span_[2];
  std::optional<CohortLabel> device_last_generation_;
  struct CohortCounts {
    std::size_t ap_sent[2] = {0, 0};
    std::size_t delivered = 0;
    bool decoded = false;
  };
  std::map<std::pair<CohortLabel, FlowId>, CohortCounts> cohort_counts_;

  double burst_begin_ = 0.0;
  double burst_end_ = 0.0;
  double target_bits_ = 0.0;
  std::uint64_t burst_window_bytes_ = 0;
  double burst_bits_ = 0.0;
  std::optional<double> target_reached_s_;
  std::uint64_t delivered_packets_ = 0;
  std::uint64_t generations_decoded_ = 0;
  std::uint64_t generations_failed_ = 0;
};

void Simulation::build() {
  const auto& topo = cfg_.topology;
  const double scale = cfg_.rate_scale;
  const bool coded = cfg_.scheme == Scheme::Cotag;

  server_port_ = make_port(
      Link{kServer, kGateway, topo.server_link_gbps * scale * 1e9, ms(cfg_.latency_ms), 0.0},
      "per-server",
      {[this](SimTime) { return pop_fifo(server_queue_); },
       [this](WirePacket p, LogRecord& rec) { gateway_receive(std::move(p), rec); }, {}, {}});

  if (coded) {
    gateway_.emplace(GatewayConfig{ms(cfg_.cohort_interval_ms), cfg_.flow_order}, cfg_.seed);
    for (int i = 0; i < 2; ++i)
      aps_.emplace_back(NodeConfig{topo.queue_capacity, 1},
                        stream_seed(cfg_.seed, i == 0 ? "ap1" : "ap2"));
    device_.emplace(NodeConfig{topo.queue_capacity, 2});
  } else {
    for (int i = 0; i < 2; ++i) {
      gw_queues_.emplace_back(topo.queue_capacity);
      ap_queues_.emplace_back(topo.queue_capacity);
    }
  }

  for (int i = 0; i < 2; ++i) {
    const NodeId ap = i == 0 ? kAp1 : kAp2;
    typename WirePort::Hooks gw_hooks;
    if (coded) {
      gw_hooks.pull = [this, i](SimTime now) -> std::optional<WirePacket> {
        auto pkt = gateway_->on_transmit_opportunity(i, now);
        if (!pkt) {
          const auto label = gateway_->marker_opportunity(i, now);
          if (!label) return std::nullopt;
          check_label(i, *label);
          return marker(*label);
        }
        check_label(i, pkt->cohort);
        return wrap(std::move(*pkt));
      };
    } else {
      gw_hooks.pull = [this, i](SimTime) { return pop_fifo(gw_queues_[i]); };
    }
    gw_hooks.deliver = [this, i](WirePacket p, LogRecord& rec) { ap_receive(i, std::move(p), rec); };
    gw_ports_[i] = make_port(Link{kGateway, ap, topo.gateway_link_gbps * scale * 1e9,
                                  ms(topo.gateway_ap_delay_ms), 0.0},
                             i == 0 ? "per-gw1" : "per-gw2", std::move(gw_hooks));

    typename WirePort::Hooks ap_hooks;
    if (coded)
      ap_hooks.pull = [this, i](SimTime) { return ap_pull(i); };
    else
      ap_hooks.pull = [this, i](SimTime) { return pop_fifo(ap_queues_[i]); };
    ap_hooks.deliver = [this, i](WirePacket p, LogRecord& rec) {
      device_receive(i, std::move(p), rec);
    };
    // Bandwidth is set by the channel before the first transmission.
    ap_ports_[i] = make_port(Link{ap, kDevice, 0.0, ms(topo.ap_device_delay_ms), cfg_.per},
                             i == 0 ? "per-air1" : "per-air2", std::move(ap_hooks));
  }

  build_channel();

  if (coded) schedule_tick(ms(cfg_.cohort_interval_ms));

  for (std::size_t f = 0; f < flows_.size(); ++f)
    sched_.schedule(SimTime::zero(), kServer, EventKind::FlowControl, [this, f](LogRecord& rec) {
      rec.flow = flows_[f].flow_id;
      rec.outcome = "start";
      try_send(f);
    });
}

void Simulation::schedule_tick(SimTime at) {
  if (at > end_) return;
  // Each cohort boundary opens a new forwarding interval at the gateway.
  sched_.schedule(at, kGateway, EventKind::CohortTick, [this, at](LogRecord& rec) {
    rec.cohort = gateway_->cohort_of(at);
    rec.outcome = "tick";
    gw_ports_[0]->kick();
    gw_ports_[1]->kick();
    schedule_tick(at + ms(cfg_.cohort_interval_ms));
  });
}

void Simulation::schedule_channel_step(SimTime at) {
  if (at >= end_) return;
  sched_.schedule(at, kDevice, EventKind::BandwidthUpdate, [this, at](LogRecord& rec) {
    channel_->advance();
    set_air_rates(channel_->rate_gbps(0), channel_->rate_gbps(1));
    rec.outcome = to_string(channel_->state());
    schedule_channel_step(at + channel_->params().step);
  });
}

void Simulation::set_air_rates(double r1, double r2) {
  rate_samples_[0].push_back(r1);
  rate_samples_[1].push_back(r2);
  ap_ports_[0]->set_bandwidth(r1 * cfg_.rate_scale * 1e9);
  ap_ports_[1]->set_bandwidth(r2 * cfg_.rate_scale * 1e9);
}

void Simulation::build_channel() {
  if (const auto* m = std::get_if<MarkovChannel>(&cfg_.channel)) {
    channel_.emplace(m->params, m->levels, cfg_.channel_seed.value_or(cfg_.seed));
    set_air_rates(channel_->rate_gbps(0), channel_->rate_gbps(1));
    schedule_channel_step(m->params.step);
  } else if (const auto* t = std::get_if<TraceChannel>(&cfg_.channel)) {
    trace_ = load_trace(t->path, t->single_link);
    if (trace_.empty()) throw ConfigError("trace file has no records: " + t->path.string());
    const double t0 = trace_.front().t_s;
    set_air_rates(trace_.front().rate1_gbps, trace_.front().rate2_gbps);
    for (std::size_t i = 1; i < trace_.size(); ++i) {
      const SimTime at = from_seconds(trace_[i].t_s - t0);
      if (at >= end_) break;
      sched_.schedule(at, kDevice, EventKind::BandwidthUpdate, [this, i](LogRecord& rec) {
        set_air_rates(trace_[i].rate1_gbps, trace_[i].rate2_gbps);
        rec.outcome = "trace";
      });
    }
  } else {
    const auto& c = std::get<ConstantChannel>(cfg_.channel);
    set_air_rates(c.rate1_gbps, c.rate2_gbps);
  }
}

void Simulation::try_send(std::size_t f) {
  auto& ss = senders_[f];
  const SimTime now = sched_.now();
  for (const auto seq : take_packets(flows_[f], ss, now)) {
    const FlowId flow = flows_[f].flow_id;
    const int copies = cfg_.scheme == Scheme::DuplicateMultipath ? 2 : 1;
    for (int c = 0; c < copies; ++c) {
      WirePacket w;
      w.flow = flow;
      w.seq = seq;
      w.path = c;
      ++audit_.created;
      if (server_queue_.push(std::move(w)).outcome != EnqueueOutcome::Enqueued)
        ++audit_.dropped_queue;
    }
  }
  server_port_->kick();
  schedule_wakeup(f);
  arm_timer(f);
}

void Simulation::schedule_wakeup(std::size_t f) {
  auto& ss = senders_[f];
  auto& rt = flow_state_[f];
  if (static_cast<double>(ss.in_flight.size()) + 1.0 > std::floor(ss.window)) return;
  if (!ss.retransmit_queue.empty()) return;
  const auto& fs = flows_[f];
  SimTime at{static_cast<SimTime::rep>(std::ceil(fs.packet_ready_time(ss.next_seq) * 1e9))};
  while (fs.packets_available(to_seconds(at)) <= ss.next_seq) at += SimTime{1};
  at = std::max(at, sched_.now() + SimTime{1});
  if (at > end_) return;
  if (rt.wake_pending && rt.wake_at <= at) return;
  rt.wake_pending = true;
  rt.wake_at = at;
  sched_.schedule(at, kServer, EventKind::FlowControl, [this, f, at](LogRecord& rec) {
    auto& r = flow_state_[f];
    if (!r.wake_pending || r.wake_at != at) {
      rec.outcome = "stale";
      return;
    }
    r.wake_pending = false;
    rec.flow = flows_[f].flow_id;
    rec.outcome = "app-data";
    try_send(f);
  });
}

void Simulation::arm_timer(std::size_t f) {
  auto& rt = flow_state_[f];
  const auto deadline = next_timeout(senders_[f], cfg_.transport);
  if (!deadline) return;
  const SimTime at = std::max(*deadline, sched_.now());
  if (rt.timer_pending && rt.timer_at <= at) return;
  rt.timer_pending = true;
  rt.timer_at = at;
  const auto token = ++rt.timer_token;
  sched_.schedule(at, kServer, EventKind::FlowControl, [this, f, token](LogRecord& rec) {
    rec.flow = flows_[f].flow_id;
    if (flow_state_[f].timer_token != token) {
      rec.outcome = "stale";
      return;
    }
    flow_state_[f].timer_pending = false;
    rec.outcome = "timer";
    on_timer(f);
  });
}

void Simulation::on_timer(std::size_t f) {
  auto& ss = senders_[f];
  if (auto seq = timed_out(ss, sched_.now(), cfg_.transport)) {
    on_timeout(ss, sched_.now(), cfg_.transport);
  }
  try_send(f);
}

void Simulation::on_ack_arrival(const Ack& ack) {
  const std::size_t f = ack.flow;
  auto& ss = senders_[f];
  const auto lost = on_ack(ss, ack, sched_.now(), cfg_.transport);
  on_loss(ss, lost, sched_.now(), cfg_.transport);
  try_send(f);
}

void Simulation::check_label(int port, CohortLabel label) {
  auto& last = last_label_[port];
  if (last && label < *last) ++audit_.label_violations;
  last = label;
}

void Simulation::audit_node_arrival(const NodeArrival& r, Priority prio, std::size_t low_before) {
  if (r.protocol_error) {
    ++audit_.label_violations;
    ++audit_.dropped_queue;
    return;
  }
  if (r.outcome == EnqueueOutcome::DroppedIncoming) {
    ++audit_.dropped_queue;
    if (prio == Priority::High && low_before > 0) ++audit_.high_eviction_violations;
  } else if (r.outcome == EnqueueOutcome::EvictedLow) {
    ++audit_.dropped_queue;
    if (r.evicted != Priority::Low) ++audit_.high_eviction_violations;
  }
  audit_.dropped_give += r.given_away;
}

void Simulation::gateway_receive(WirePacket pkt, LogRecord& rec) {
  rec.flow = pkt.flow;
  if (gateway_) {
    ++audit_.consumed;
    gateway_->on_arrival(
        SourcePacket{pkt.flow, make_payload(pkt.flow, pkt.seq), flows_.front().packet_size},
        sched_.now());
    rec.cohort = gateway_->cohort_of(sched_.now());
    rec.outcome = "buffered";
    return;
  }
  int port = pkt.path;
  if (cfg_.scheme == Scheme::SinglePathBaseline) port = static_cast<int>(rr_next_++ % 2);
  push_fifo(gw_queues_[port], std::move(pkt), rec);
  gw_ports_[port]->kick();
}

void Simulation::ap_receive(int ap, WirePacket pkt, LogRecord& rec) {
  if (pkt.marker) {
    ++audit_.consumed;
    rec.cohort = *pkt.marker;
    ap_first_arrival_[ap].try_emplace(*pkt.marker, sched_.now());
    const auto r = aps_[ap].on_marker(*pkt.marker, 0, sched_.now());
    audit_node_arrival(r, Priority::High, 0);
    rec.outcome = r.protocol_error ? "protocol-error" : "marker";
    ap_ports_[ap]->kick();
    return;
  }
  rec.flow = pkt.flow;
  rec.priority = pkt.priority;
  if (!pkt.coded) {
    push_fifo(ap_queues_[ap], std::move(pkt), rec);
    ap_ports_[ap]->kick();
    return;
  }
  auto& node = aps_[ap];
  const CohortLabel label = pkt.coded->cohort;
  rec.cohort = label;
  ap_first_arrival_[ap].try_emplace(label, sched_.now());
  const std::size_t low_before = node.buffer().low_count();
  const auto r = node.on_arrival(std::move(*pkt.coded), 0, sched_.now());
  audit_node_arrival(r, pkt.priority, low_before);
  rec.outcome = r.protocol_error ? "protocol-error" : to_string(r.outcome);
  ap_ports_[ap]->kick();
}

std::optional<WirePacket> Simulation::ap_pull(int ap) {
  auto pkt = aps_[ap].on_transmit_opportunity(sched_.now());
  if (!pkt) {
    const auto label = aps_[ap].marker_opportunity(sched_.now());
    if (!label) return std::nullopt;
    check_label(2 + ap, *label);
    return marker(*label);
  }
  const SimTime now = sched_.now();
  auto [it, fresh] = ap_send_span_[ap].try_emplace(pkt->cohort, now, now);
  if (!fresh) it->second.second = now;
  check_label(2 + ap, pkt->cohort);
  if (opts_.cohort_audit) ++cohort_counts_[{pkt->cohort, pkt->flow_id}].ap_sent[ap];
  return wrap(std::move(*pkt));
}

void Simulation::device_receive(int link, WirePacket pkt, LogRecord& rec) {
  DeviceArrival r;
  if (pkt.marker) {
    ++audit_.consumed;
    rec.cohort = *pkt.marker;
    r = device_->on_marker(*pkt.marker, link, sched_.now());
    audit_node_arrival(r.node, Priority::High, 0);
    rec.outcome = r.node.protocol_error ? "protocol-error" : "marker";
  } else {
    rec.flow = pkt.flow;
    rec.priority = pkt.priority;
    if (!pkt.coded) {
      ++audit_.consumed;
      rec.outcome = "segment";
      deliver(pkt.flow, pkt.seq);
      return;
    }
    rec.cohort = pkt.coded->cohort;
    const std::size_t low_before = device_->buffer().low_count();
    r = device_->on_arrival(std::move(*pkt.coded), link, sched_.now());
    audit_node_arrival(r.node, pkt.priority, low_before);
    rec.outcome = r.node.protocol_error ? "protocol-error" : to_string(r.node.outcome);
  }
  audit_.consumed += r.consumed;
  for (auto& g : r.generations) {
    if (device_last_generation_ && g.cohort < *device_last_generation_) ++audit_.stale_violations;
    device_last_generation_ = g.cohort;
    CohortCounts* counts = opts_.cohort_audit ? &cohort_counts_[{g.cohort, g.flow}] : nullptr;
    if (!g.decoded) {
      ++generations_failed_;
      continue;
    }
    ++generations_decoded_;
    if (counts) {
      counts->decoded = true;
      counts->delivered += g.payloads.size();
    }
    for (const auto& payload : g.payloads) {
      const auto parsed = parse_payload(payload);
      if (!parsed || parsed->first != g.flow) {
        ++audit_.payload_violations;
        continue;
      }
      deliver(parsed->first, parsed->second);
    }
  }
  if (!r.generations.empty()) rec.outcome += ";decoded";
}

void Simulation::deliver(FlowId flow, std::uint64_t seq) {
  auto& rx = receivers_.at(flow);
  const auto d = rx.on_segment(seq);
  const double now_s = to_seconds(sched_.now());
  const auto& fs = flows_[flow];
  for (const auto s : d.in_order) {
    ++delivered_packets_;
    if (now_s >= burst_begin_ && now_s < burst_end_) burst_window_bytes_ += fs.packet_size;
    if (s >= fs.first_burst_seq() && !target_reached_s_) {
      burst_bits_ += 8.0 * fs.packet_size;
      if (burst_bits_ >= target_bits_) target_reached_s_ = now_s - burst_begin_;
    }
  }
  const Ack ack = d.ack;
  sched_.schedule(sched_.now() + ack_delay_, kServer, EventKind::FlowControl,
                  [this, ack](LogRecord& rec) {
                    rec.flow = ack.flow;
                    rec.outcome = "ack";
                    on_ack_arrival(ack);
                  });
}

RunResult Simulation::run() {
  RunResult out;
  out.events = sched_.run_until(end_);

  // Conservation: everything not yet accounted for is on a link or buffered.
  audit_.in_flight_end += server_port_->in_flight();
  audit_.dropped_per += server_port_->dropped_per();
  audit_.resident_end += server_queue_.size();
  for (int i = 0; i < 2; ++i) {
    for (const auto* port : {gw_ports_[i].get(), ap_ports_[i].get()}) {
      audit_.in_flight_end += port->in_flight();
      audit_.dropped_per += port->dropped_per();
    }
    if (!gw_queues_.empty()) audit_.resident_end += gw_queues_[i].size() + ap_queues_[i].size();
  }
  for (const auto& ap : aps_) audit_.resident_end += ap.buffer().size();
  if (device_) audit_.resident_end += device_->buffer().size();

  // Giving bound: label k is sent only between the first arrival of the next
  // label and the first arrival of the one after it.
  for (int i = 0; i < 2; ++i) {
    const auto& first = ap_first_arrival_[i];
    for (const auto& [label, span] : ap_send_span_[i]) {
      auto s1 = first.upper_bound(label);
      if (s1 == first.end() || span.first < s1->second) {
        ++audit_.giving_violations;
        continue;
      }
      auto s2 = std::next(s1);
      if (s2 != first.end() && span.second >= s2->second) ++audit_.giving_violations;
    }
  }

  std::uint64_t delivered_in_order = 0;
  std::uint64_t injected = 0;
  for (std::size_t f = 0; f < flows_.size(); ++f) {
    delivered_in_order += receivers_[f].next_expected();
    injected += senders_[f].next_seq;
    out.retransmissions += senders_[f].retransmissions;
    out.timeouts += senders_[f].timeouts;
  }
  if (delivered_in_order != delivered_packets_) ++audit_.duplicate_delivery_violations;

  auto& m = out.metrics;
  m.scenario = cfg_.name;
  m.scheme = cfg_.scheme;
  m.per = cfg_.per;
  m.latency_ms = cfg_.latency_ms;
  m.corr_target = cfg_.corr_target;
  m.T_ms = cfg_.cohort_interval_ms;
  m.seed = cfg_.seed;
  if (const auto* mk = std::get_if<MarkovChannel>(&cfg_.channel)) {
    m.p = mk->params.p;
    m.q = mk->params.q;
  }
  m.corr_measured = pearson(rate_samples_[0], rate_samples_[1]);
  const double window = burst_end_ - burst_begin_;
  m.throughput_gbps = window > 0.0 ? 8.0 * static_cast<double>(burst_window_bytes_) / window / 1e9
                                   : 0.0;
  m.latency_5gb_s = target_reached_s_.value_or(std::numeric_limits<double>::infinity());
  const auto size = flows_.front().packet_size;
  m.injected_bytes = injected * size;
  m.delivered_bytes = delivered_in_order * size;

  if (gateway_) {
    // Every generation the gateway formed up to the last label the device
    // processed counts, including those that never reached the device.
    std::uint64_t formed = 0;
    const auto last = device_->last_processed();
    for (const auto& [label, flows] : gateway_->counters()) {
      if (!last || label > *last) break;
      formed += flows.size();
    }
    if (formed > 0)
      m.decode_ratio = static_cast<double>(generations_decoded_) / static_cast<double>(formed);

    if (opts_.cohort_audit) {
      for (const auto& [label, flows] : gateway_->counters()) {
        for (const auto& [flow, c] : flows) {
          CohortAuditRecord a;
          a.cohort = label;
          a.flow = flow;
          a.n_k = c.arrivals;
          a.high_sent = c.high_sent;
          a.low_sent = c.low_sent;
          if (auto it = cohort_counts_.find({label, flow}); it != cohort_counts_.end()) {
            a.ap1_sent = it->second.ap_sent[0];
            a.ap2_sent = it->second.ap_sent[1];
            a.delivered = it->second.delivered;
            a.decoded = it->second.decoded;
          }
          out.cohorts.push_back(a);
        }
      }
    }
  }

  out.audit = audit_;
  out.source_packets_injected = injected;
  out.source_packets_delivered = delivered_in_order;
  out.generations_decoded = generations_decoded_;
  out.generations_failed = generations_failed_;
  return out;
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  if (cfg.duration_s == 0.0) {
    RunResult out;
    auto& m = out.metrics;
    m.scenario = cfg.name;
    m.scheme = cfg.scheme;
    m.per = cfg.per;
    m.latency_ms = cfg.latency_ms;
    m.corr_target = cfg.corr_target;
    m.T_ms = cfg.cohort_interval_ms;
    m.seed = cfg.seed;
    m.decode_ratio = 0.0;
    if (const auto* mk = std::get_if<MarkovChannel>(&cfg.channel)) {
      m.p = mk->params.p;
      m.q = mk->params.q;
    }
    return out;
  }
  Simulation sim(cfg, opts);
  return sim.run();
}

}  // namespace cotag
