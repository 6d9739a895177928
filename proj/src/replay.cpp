#include "cotag/replay.hpp"

#include <deque>
#include <map>
#include <memory>
#include <ostream>

namespace cotag {

namespace {

constexpr FlowId kFlowA = 0;
constexpr FlowId kFlowB = 1;
constexpr std::array<FlowId, 6> kQueue{kFlowA, kFlowB, kFlowA, kFlowA, kFlowB, kFlowA};

struct TwoFlowPacket {
  Priority priority = Priority::High;
  FlowId flow = 0;
  Bytes payload;  // plain forwarding only
  std::optional<CodedPacket> coded;
  std::optional<CohortLabel> marker;
};

using TwoFlowPort = Port<TwoFlowPacket>;

class Replay {
 public:
  explicit Replay(const TwoFlowOptions& opts) : opts_(opts), interval_(from_seconds(opts.interval_ms * 1e-3)) {
    result_.options = opts;
    Rng rng(opts.seed, "two-flow-payload");
    for (std::size_t i = 0; i < kQueue.size(); ++i) {
      Bytes b(opts.packet_size);
      for (auto& x : b) x = rng.byte();
      originals_[kQueue[i]].push_back(b);
      source_.push_back(TwoFlowPacket{Priority::High, kQueue[i], std::move(b), {}, {}});
    }
    sched_.set_log(opts.event_log);
    build();
  }

  TwoFlowResult run();

 private:
  double bps(int link) const {
    return opts_.units[static_cast<std::size_t>(link)] * opts_.packet_size * 8.0 /
           to_seconds(interval_);
  }

  std::unique_ptr<TwoFlowPort> port(int link, NodeId src, NodeId dst, TwoFlowPort::Hooks hooks) {
    // Markers are treated as zero-length control signals here.
    hooks.size = [this](const TwoFlowPacket& p) { return p.marker ? 0u : opts_.packet_size; };
    return std::make_unique<TwoFlowPort>(
        sched_, Link{src, dst, bps(link), SimTime::zero(), 0.0},
        stream_seed(opts_.seed, "two-flow-link" + std::to_string(link)), std::move(hooks));
  }

  void build();
  void schedule_tick(SimTime at);
  void gateway_receive(TwoFlowPacket p);
  void ap_receive(int ap, TwoFlowPacket p);
  std::optional<TwoFlowPacket> gateway_pull(int link);
  std::optional<TwoFlowPacket> ap_pull(int ap);
  void device_receive(int link, TwoFlowPacket p);
  void delivered(FlowId flow, std::size_t index, const Bytes& payload);

  const TwoFlowOptions& opts_;
  SimTime interval_;
  Scheduler sched_;
  TwoFlowResult result_;
  std::map<FlowId, std::vector<Bytes>> originals_;
  std::map<FlowId, std::size_t> plain_seen_;
  std::vector<SimTime> delivery_times_;
  bool mismatch_ = false;
  std::optional<SimTime> window_start_;

  std::deque<TwoFlowPacket> source_;
  std::deque<TwoFlowPacket> gw_fifo_[2];
  std::deque<TwoFlowPacket> ap_fifo_[2];
  std::size_t next_link_ = 0;

  std::optional<Gateway> gateway_;
  std::vector<AccessPoint> aps_;
  std::optional<Device> device_;
  std::map<std::pair<CohortLabel, FlowId>, CohortAuditRecord> audit_;

  std::unique_ptr<TwoFlowPort> server_port_;
  std::unique_ptr<TwoFlowPort> gw_ports_[2];
  std::unique_ptr<TwoFlowPort> ap_ports_[2];
};

std::optional<TwoFlowPacket> pop(std::deque<TwoFlowPacket>& q) {
  if (q.empty()) return std::nullopt;
  std::optional<TwoFlowPacket> p;
  p.emplace(std::move(q.front()));
  q.pop_front();
  return p;
}

void Replay::build() {
  if (opts_.coded) {
    gateway_.emplace(GatewayConfig{interval_, FlowOrder::QueueOrder}, opts_.seed);
    aps_.emplace_back(NodeConfig{64, 1}, stream_seed(opts_.seed, "ap1"));
    aps_.emplace_back(NodeConfig{64, 1}, stream_seed(opts_.seed, "ap2"));
    device_.emplace(NodeConfig{64, 2});
  }
  server_port_ = port(0, kServer, kGateway,
                      {[this](SimTime) {
                         auto p = pop(source_);
                         if (p) ++result_.link_sent[0];
                         return p;
                       },
                       [this](TwoFlowPacket p, LogRecord& rec) {
                         rec.flow = p.flow;
                         rec.outcome = "arrival";
                         gateway_receive(std::move(p));
                       },
                       {}, {}});
  for (int i = 0; i < 2; ++i) {
    gw_ports_[i] = port(1 + i, kGateway, i == 0 ? kAp1 : kAp2,
                        {[this, i](SimTime) { return gateway_pull(i); },
                         [this, i](TwoFlowPacket p, LogRecord& rec) {
                           rec.flow = p.flow;
                           rec.outcome = p.marker ? "marker" : "arrival";
                           ap_receive(i, std::move(p));
                         },
                         {}, {}});
    ap_ports_[i] = port(3 + i, i == 0 ? kAp1 : kAp2, kDevice,
                        {[this, i](SimTime) { return ap_pull(i); },
                         [this, i](TwoFlowPacket p, LogRecord& rec) {
                           rec.flow = p.flow;
                           rec.outcome = p.marker ? "marker" : "arrival";
                           device_receive(i, std::move(p));
                         },
                         {}, {}});
  }

  // The batch reaches the gateway entirely within cohort 1.
  const SimTime start = interval_ - serialization_time(opts_.packet_size, bps(0));
  sched_.schedule(start, kServer, EventKind::FlowControl, [this](LogRecord& rec) {
    rec.outcome = "start";
    server_port_->kick();
  });
  if (opts_.coded) schedule_tick(interval_);
}

void Replay::schedule_tick(SimTime at) {
  if (at > 8 * interval_) return;
  sched_.schedule(at, kGateway, EventKind::CohortTick, [this, at](LogRecord& rec) {
    rec.cohort = gateway_->cohort_of(at);
    rec.outcome = "tick";
    gw_ports_[0]->kick();
    gw_ports_[1]->kick();
    schedule_tick(at + interval_);
  });
}

void Replay::gateway_receive(TwoFlowPacket p) {
  if (gateway_) {
    gateway_->on_arrival(SourcePacket{p.flow, std::move(p.payload), opts_.packet_size},
                         sched_.now());
    return;
  }
  const std::size_t link = next_link_++ % 2;
  gw_fifo_[link].push_back(std::move(p));
  gw_ports_[link]->kick();
}

std::optional<TwoFlowPacket> Replay::gateway_pull(int link) {
  const SimTime now = sched_.now();
  if (!gateway_) {
    auto p = pop(gw_fifo_[link]);
    if (p) ++result_.link_sent[1 + static_cast<std::size_t>(link)];
    return p;
  }
  if (auto pkt = gateway_->on_transmit_opportunity(link, now)) {
    ++result_.link_sent[1 + static_cast<std::size_t>(link)];
    ++(pkt->priority == Priority::High ? result_.gateway_high : result_.gateway_low);
    TwoFlowPacket p;
    p.priority = pkt->priority;
    p.flow = pkt->flow_id;
    p.coded = std::move(*pkt);
    return p;
  }
  if (auto label = gateway_->marker_opportunity(link, now)) {
    TwoFlowPacket p;
    p.marker = *label;
    return p;
  }
  return std::nullopt;
}

void Replay::ap_receive(int ap, TwoFlowPacket p) {
  const SimTime now = sched_.now();
  if (!gateway_) {
    ap_fifo_[ap].push_back(std::move(p));
  } else if (p.marker) {
    aps_[static_cast<std::size_t>(ap)].on_marker(*p.marker, 0, now);
  } else {
    aps_[static_cast<std::size_t>(ap)].on_arrival(std::move(*p.coded), 0, now);
  }
  ap_ports_[ap]->kick();
}

std::optional<TwoFlowPacket> Replay::ap_pull(int ap) {
  const SimTime now = sched_.now();
  std::optional<TwoFlowPacket> out;
  if (!gateway_) {
    out = pop(ap_fifo_[ap]);
  } else {
    auto& node = aps_[static_cast<std::size_t>(ap)];
    if (auto pkt = node.on_transmit_opportunity(now)) {
      TwoFlowPacket p;
      p.priority = pkt->priority;
      p.flow = pkt->flow_id;
      auto& a = audit_[{pkt->cohort, pkt->flow_id}];
      ++(ap == 0 ? a.ap1_sent : a.ap2_sent);
      p.coded = std::move(*pkt);
      out = std::move(p);
    } else if (auto label = node.marker_opportunity(now)) {
      TwoFlowPacket p;
      p.marker = *label;
      return p;
    }
  }
  if (out) {
    ++result_.link_sent[3 + static_cast<std::size_t>(ap)];
    if (!window_start_) window_start_ = now;
  }
  return out;
}

void Replay::device_receive(int link, TwoFlowPacket p) {
  const SimTime now = sched_.now();
  const auto l = static_cast<std::size_t>(link);
  if (!gateway_) {
    ++result_.device_received[p.flow][l];
    delivered(p.flow, plain_seen_[p.flow]++, p.payload);
    return;
  }
  DeviceArrival r;
  if (p.marker) {
    r = device_->on_marker(*p.marker, link, now);
  } else {
    ++result_.device_received[p.flow][l];
    r = device_->on_arrival(std::move(*p.coded), link, now);
  }
  for (const auto& g : r.generations) {
    auto& a = audit_[{g.cohort, g.flow}];
    a.decoded = g.decoded;
    a.delivered = g.payloads.size();
    for (std::size_t i = 0; i < g.payloads.size(); ++i) delivered(g.flow, i, g.payloads[i]);
  }
}

void Replay::delivered(FlowId flow, std::size_t index, const Bytes& payload) {
  const auto& orig = originals_[flow];
  // Plain forwarding can reorder a flow, so match by content there.
  bool match = false;
  if (gateway_)
    match = index < orig.size() && orig[index] == payload;
  else
    for (const auto& o : orig) match = match || o == payload;
  if (!match) mismatch_ = true;
  delivery_times_.push_back(sched_.now());
}

TwoFlowResult Replay::run() {
  sched_.run_until(8 * interval_);
  auto& r = result_;
  r.delivered = delivery_times_.size();
  r.byte_exact = !mismatch_ && r.delivered == kQueue.size();
  if (window_start_) {
    const SimTime end = *window_start_ + interval_;
    r.window_start_ms = to_seconds(*window_start_) * 1e3;
    r.window_end_ms = to_seconds(end) * 1e3;
    for (auto t : delivery_times_) r.delivered_in_window += t <= end ? 1 : 0;
  }
  if (gateway_) {
    for (const auto& [label, flows] : gateway_->counters()) {
      for (const auto& [flow, c] : flows) {
        auto a = audit_[{label, flow}];
        a.cohort = label;
        a.flow = flow;
        a.n_k = c.arrivals;
        a.high_sent = c.high_sent;
        a.low_sent = c.low_sent;
        r.cohorts.push_back(a);
      }
    }
  }
  return r;
}

}  // namespace

TwoFlowOptions two_flow_balanced() { return TwoFlowOptions{}; }

TwoFlowOptions two_flow_unbalanced() {
  TwoFlowOptions o;
  o.units = {6, 6, 6, 4, 2};
  return o;
}

TwoFlowResult replay_two_flow(const TwoFlowOptions& opts) {
  for (double u : opts.units)
    if (!(u > 0.0)) throw ConfigError("two-flow link capacities must be positive");
  if (!(opts.interval_ms > 0.0) || opts.packet_size == 0)
    throw ConfigError("two-flow interval and packet size must be positive");
  Replay replay(opts);
  return replay.run();
}

void print_two_flow(std::ostream& out, const TwoFlowResult& r) {
  const auto& o = r.options;
  out << "mode=" << (o.coded ? "cotag" : "plain") << '\n';
  out << "units=";
  for (std::size_t i = 0; i < o.units.size(); ++i) out << (i ? "/" : "") << o.units[i];
  out << '\n';
  for (std::size_t i = 0; i < r.link_sent.size(); ++i)
    out << "link" << i + 1 << "_sent=" << r.link_sent[i] << '\n';
  out << "gateway_high=" << r.gateway_high << '\n';
  out << "gateway_low=" << r.gateway_low << '\n';
  const char* names[] = {"A", "B"};
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t l = 0; l < 2; ++l)
      out << "device_received_" << names[f] << "_via_ap" << l + 1 << '='
          << r.device_received[f][l] << '\n';
  out << "delivered=" << r.delivered << '\n';
  out << "window_ms=" << r.window_start_ms << ".." << r.window_end_ms << '\n';
  out << "delivered_in_window=" << r.delivered_in_window << '\n';
  out << "byte_exact=" << (r.byte_exact ? "true" : "false") << '\n';
  if (!r.cohorts.empty()) {
    out << "cohort,flow,n_k,high_sent,low_sent,ap1_sent,ap2_sent,delivered,decoded\n";
    for (const auto& c : r.cohorts) out << format_cohort_audit(c) << '\n';
  }
}

}  // namespace cotag
