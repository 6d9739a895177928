#include "doctest.h"

#include <map>
#include <set>

#include "cotag/cotag.hpp"

using namespace cotag;
using namespace std::chrono_literals;

namespace {

constexpr FlowId A = 0;
constexpr FlowId B = 1;
constexpr SimTime T = 10ms;

SourcePacket src(FlowId f, std::uint8_t tag) { return SourcePacket{f, Bytes{tag, tag}, 8192}; }

// a1 b1 a2 a3 b2 a4 inside cohort 0.
Gateway two_flow_gateway() {
  Gateway g(GatewayConfig{T}, 1);
  const FlowId order[] = {A, B, A, A, B, A};
  for (int i = 0; i < 6; ++i) g.on_arrival(src(order[i], static_cast<std::uint8_t>(i)), 1ms * i);
  return g;
}

std::vector<CodedPacket> drain(Gateway& g, int opportunities, SimTime at) {
  std::vector<CodedPacket> out;
  for (int i = 0; i < opportunities; ++i)
    if (auto p = g.on_transmit_opportunity(i % 2, at)) out.push_back(std::move(*p));
  return out;
}

CodedPacket coded(FlowId f, CohortLabel c, Priority prio = Priority::High) {
  CodedPacket p;
  p.flow_id = f;
  p.cohort = c;
  p.priority = prio;
  p.coefficients = {1};
  p.payload = {0, 1, 0x42};
  return p;
}

}  // namespace

TEST_CASE("cohort membership is half-open") {
  Gateway g(GatewayConfig{T}, 1);
  CHECK(g.cohort_of(4ms) == 0);
  CHECK(g.cohort_of(10ms) == 1);
  CHECK(g.cohort_of(9999999ns) == 0);
  g.on_arrival(src(A, 1), 4ms);
  g.on_arrival(src(A, 2), 10ms);
  CHECK(g.counters().at(0).at(A).arrivals == 1);
  CHECK(g.counters().at(1).at(A).arrivals == 1);
}

TEST_CASE("gateway forwards cohort k only in the next interval") {
  auto g = two_flow_gateway();
  CHECK_FALSE(g.on_transmit_opportunity(0, 9ms));
  CHECK(g.processing_arrivals() == 0);
  auto first = g.on_transmit_opportunity(0, 10ms);
  REQUIRE(first);
  CHECK(first->cohort == 0);
  CHECK(g.processing_arrivals() == 6);
  CHECK(first->flow_id == A);
  CHECK(first->priority == Priority::High);
  CHECK_FALSE(g.on_transmit_opportunity(0, 20ms));
  CHECK(g.processing_cohort() == std::nullopt);
}

TEST_CASE("gateway two-flow counts: 12 opportunities give 6 High then 6 Low") {
  auto g = two_flow_gateway();
  const auto pkts = drain(g, 12, 12ms);
  REQUIRE(pkts.size() == 12);
  std::map<FlowId, int> high;
  for (std::size_t i = 0; i < pkts.size(); ++i) {
    CHECK(pkts[i].priority == (i < 6 ? Priority::High : Priority::Low));
    if (pkts[i].priority == Priority::High) ++high[pkts[i].flow_id];
    CHECK(pkts[i].generation_size() == (pkts[i].flow_id == A ? 4u : 2u));
  }
  CHECK(high[A] == 4);
  CHECK(high[B] == 2);
  const auto& c = g.counters().at(0);
  CHECK(c.at(A).high_sent == 4);
  CHECK(c.at(B).high_sent == 2);
  CHECK(c.at(A).low_sent + c.at(B).low_sent == 6);
}

TEST_CASE("gateway with fewer opportunities than arrivals sends only High") {
  auto g = two_flow_gateway();
  const auto pkts = drain(g, 4, 15ms);
  REQUIRE(pkts.size() == 4);
  for (const auto& p : pkts) CHECK(p.priority == Priority::High);
  const auto& c = g.counters().at(0);
  CHECK(c.at(A).low_sent + c.at(B).low_sent == 0);
}

TEST_CASE("round-robin flow order") {
  Gateway g(GatewayConfig{T, FlowOrder::RoundRobin}, 1);
  const FlowId order[] = {A, A, A, B};
  for (int i = 0; i < 4; ++i) g.on_arrival(src(order[i], static_cast<std::uint8_t>(i)), 1ms);
  std::map<FlowId, int> high;
  for (const auto& p : drain(g, 4, 10ms)) ++high[p.flow_id];
  CHECK(high[A] == 3);
  CHECK(high[B] == 1);
}

TEST_CASE("empty cohort: no packets, one marker per link and label") {
  Gateway g(GatewayConfig{T}, 1);
  CHECK_FALSE(g.on_transmit_opportunity(0, 15ms));
  CHECK(g.marker_opportunity(0, 15ms) == 0);
  CHECK_FALSE(g.marker_opportunity(0, 16ms));
  CHECK(g.marker_opportunity(1, 16ms) == 0);
  CHECK(g.marker_opportunity(0, 25ms) == 1);
  CHECK_FALSE(g.marker_opportunity(0, 5ms));
}

TEST_CASE("gateway high count property: min(n, opportunities)") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    Gateway g(GatewayConfig{T}, seed);
    const int n = static_cast<int>(rng.below(12));
    for (int i = 0; i < n; ++i)
      g.on_arrival(src(static_cast<FlowId>(rng.below(3)), 0), SimTime{rng.below(10'000'000)});
    const int opp = static_cast<int>(rng.below(20));
    int high = 0;
    CohortLabel last = -1;
    for (const auto& p : drain(g, opp, 10ms + SimTime{rng.below(10'000'000)})) {
      high += p.priority == Priority::High;
      REQUIRE(p.cohort >= last);
      last = p.cohort;
    }
    REQUIRE(high == std::min(n, opp));
  }
}

TEST_CASE("label gate") {
  LabelGate gate(2);
  CHECK_FALSE(gate.min_largest());
  CHECK(gate.observe(0, 0));
  CHECK_FALSE(gate.may_process(0));
  CHECK(gate.observe(0, 5));
  CHECK_FALSE(gate.observe(0, 4));
  CHECK(gate.observe(1, 7));
  CHECK(gate.min_largest() == 5);
  CHECK(gate.may_process(4));
  CHECK_FALSE(gate.may_process(5));
}

TEST_CASE("AP advances to the smallest unprocessed label under the min rule") {
  AccessPoint ap(NodeConfig{64, 2}, 1);
  CHECK_FALSE(ap.on_arrival(coded(A, 4), 0, 0ms).advanced_to);
  CHECK_FALSE(ap.on_marker(5, 0, 0ms).advanced_to);
  const auto r = ap.on_marker(7, 1, 0ms);
  CHECK(r.advanced_to == 4);
  CHECK(ap.processing_label() == 4);
  CHECK(ap.n() == 1);
}

TEST_CASE("AP first packet on one link only does not advance") {
  AccessPoint ap(NodeConfig{64, 2}, 1);
  CHECK_FALSE(ap.on_arrival(coded(A, 0), 0, 0ms).advanced_to);
  CHECK_FALSE(ap.on_arrival(coded(A, 1), 0, 0ms).advanced_to);
  CHECK_FALSE(ap.processing_label());
}

TEST_CASE("AP label regression is a protocol error") {
  AccessPoint ap(NodeConfig{64, 1}, 1);
  ap.on_arrival(coded(A, 3), 0, 0ms);
  const auto r = ap.on_arrival(coded(A, 2), 0, 0ms);
  CHECK(r.protocol_error);
  CHECK(ap.buffer().size() == 1);
}

TEST_CASE("AP gives away leftovers of closed labels") {
  AccessPoint ap(NodeConfig{64, 1}, 1);
  ap.on_arrival(coded(A, 2), 0, 0ms);
  ap.on_arrival(coded(A, 2), 0, 0ms);
  CHECK(ap.on_arrival(coded(A, 3), 0, 0ms).advanced_to == 2);
  CHECK(ap.on_arrival(coded(A, 3), 0, 0ms).given_away == 0);
  auto r = ap.on_arrival(coded(A, 4), 0, 0ms);
  CHECK(r.given_away == 2);  // label 2, never sent
  CHECK(r.advanced_to == 3);
  r = ap.on_marker(5, 0, 0ms);
  CHECK(r.advanced_to == 4);
  CHECK(r.given_away == 2);  // label 3
  for (const auto& b : ap.buffer()) CHECK(b.pkt.cohort >= 4);
}

TEST_CASE("AP two-flow: 3 opportunities for 6 buffered packets") {
  auto g = two_flow_gateway();
  const auto pkts = drain(g, 12, 12ms);
  AccessPoint ap1(NodeConfig{64, 1}, 2);
  for (std::size_t i = 0; i < pkts.size(); i += 2) ap1.on_arrival(pkts[i], 0, 12ms);
  ap1.on_marker(1, 0, 20ms);
  REQUIRE(ap1.processing_label() == 0);
  CHECK(ap1.n() == 6);
  CHECK(ap1.n_high() == 3);
  std::vector<FlowId> flows;
  for (int i = 0; i < 3; ++i) {
    auto p = ap1.on_transmit_opportunity(20ms);
    REQUIRE(p);
    CHECK(p->priority == Priority::High);
    flows.push_back(p->flow_id);
  }
  CHECK(flows == std::vector<FlowId>{A, A, B});
  CHECK(ap1.sent() == 3);
  // The window closes on the first label-2 arrival; nothing more is sent.
  const auto r = ap1.on_marker(2, 0, 30ms);
  CHECK(r.given_away == 6);
  CHECK_FALSE(ap1.on_transmit_opportunity(30ms));
}

TEST_CASE("AP sends High, then Low, then fresh Low recodings") {
  auto g = two_flow_gateway();
  const auto pkts = drain(g, 8, 12ms);  // 6 High, 2 Low
  AccessPoint ap(NodeConfig{64, 1}, 3);
  for (const auto& p : pkts) ap.on_arrival(p, 0, 12ms);
  ap.on_marker(1, 0, 20ms);
  std::vector<Priority> tags;
  for (int i = 0; i < 10; ++i) tags.push_back(ap.on_transmit_opportunity(20ms)->priority);
  for (int i = 0; i < 10; ++i) CHECK(tags[i] == (i < 6 ? Priority::High : Priority::Low));
}

TEST_CASE("AP empty buffer sends nothing") {
  AccessPoint ap(NodeConfig{64, 1}, 1);
  CHECK_FALSE(ap.on_transmit_opportunity(0ms));
  CHECK_FALSE(ap.marker_opportunity(0ms));
  ap.on_marker(3, 0, 0ms);
  CHECK(ap.marker_opportunity(0ms) == 3);
  CHECK_FALSE(ap.marker_opportunity(0ms));
}

TEST_CASE("device waits for a larger label on every link") {
  auto g = two_flow_gateway();
  const auto pkts = drain(g, 6, 12ms);
  Device dev(NodeConfig{64, 2});
  for (std::size_t i = 0; i < pkts.size(); ++i) {
    const auto r = dev.on_arrival(pkts[i], static_cast<int>(i % 2), 12ms);
    CHECK(r.generations.empty());
  }
  CHECK(dev.on_marker(1, 0, 20ms).generations.empty());
  const auto r = dev.on_marker(1, 1, 20ms);
  REQUIRE(r.generations.size() == 2);
  std::map<FlowId, std::vector<Bytes>> got;
  for (const auto& gen : r.generations) {
    CHECK(gen.decoded);
    got[gen.flow] = gen.payloads;
  }
  CHECK(got[A] == std::vector<Bytes>{{0, 0}, {2, 2}, {3, 3}, {5, 5}});
  CHECK(got[B] == std::vector<Bytes>{{1, 1}, {4, 4}});
  CHECK(dev.last_processed() == 0);
  CHECK(dev.buffer().empty());
}

TEST_CASE("device: rank deficiency is per generation") {
  auto g = two_flow_gateway();
  const auto pkts = drain(g, 6, 12ms);
  Device dev(NodeConfig{64, 1});
  int a_seen = 0;
  for (const auto& p : pkts) {
    if (p.flow_id == A && ++a_seen > 3) continue;
    dev.on_arrival(p, 0, 12ms);
  }
  const auto r = dev.on_marker(1, 0, 20ms);
  REQUIRE(r.generations.size() == 2);
  for (const auto& gen : r.generations) {
    if (gen.flow == A) {
      CHECK_FALSE(gen.decoded);
      CHECK(gen.rank == 3);
      CHECK(gen.payloads.empty());
    } else {
      CHECK(gen.decoded);
    }
  }
}

TEST_CASE("smallest unprocessed label") {
  BoundedQueue<BufferedPacket> q(8);
  CHECK_FALSE(smallest_unprocessed(q, std::nullopt));
  for (CohortLabel c : {5, 3, 7}) q.push(BufferedPacket{coded(A, c), Priority::High});
  CHECK(smallest_unprocessed(q, std::nullopt) == 3);
  CHECK(smallest_unprocessed(q, 3) == 5);
  CHECK_FALSE(smallest_unprocessed(q, 7));
}

// Gateway -> two APs -> device, driven step by step with every node given a
// few more opportunities than it has material: every source packet must come
// out exactly once and byte-identical, and per flow the cohorts come out in
// order.
TEST_CASE("end-to-end property: ample capacity delivers everything once") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    Rng rng(seed, "arrivals");
    Gateway gw(GatewayConfig{T}, seed);
    AccessPoint ap0(NodeConfig{4096, 1}, seed + 1), ap1(NodeConfig{4096, 1}, seed + 2);
    AccessPoint* aps[2] = {&ap0, &ap1};
    Device dev(NodeConfig{4096, 2});

    const int cohorts = 12;
    std::map<Bytes, int> expected;
    std::map<Bytes, int> delivered;
    std::map<FlowId, CohortLabel> last_cohort;
    bool stale = false;

    auto consume = [&](const DeviceArrival& r) {
      REQUIRE_FALSE(r.node.protocol_error);
      for (const auto& gen : r.generations) {
        INFO("seed " << seed << " cohort " << gen.cohort << " flow " << gen.flow << " rank "
             << gen.rank << "/" << gen.generation_size << " pkts " << gen.packets);
        REQUIRE(gen.decoded);
        auto [it, fresh] = last_cohort.try_emplace(gen.flow, gen.cohort);
        if (!fresh) {
          stale = stale || gen.cohort <= it->second;
          it->second = gen.cohort;
        }
        for (const auto& p : gen.payloads) ++delivered[p];
      }
    };

    int serial = 0;
    for (int step = 0; step < cohorts + 4; ++step) {
      const SimTime start = T * step;
      // Gateway emits the previous cohort at the start of this interval.
      std::size_t opp = 0;
      if (step > 0) {
        for (int link = 0; link < 2; ++link)
          if (auto m = gw.marker_opportunity(link, start))
            REQUIRE_FALSE(aps[link]->on_marker(*m, 0, start).protocol_error);
        // Spare opportunities let the gateway take as well.
        const std::size_t want = gw.processing_arrivals() + 4;
        for (; opp < want; ++opp) {
          auto p = gw.on_transmit_opportunity(static_cast<int>(opp % 2), start);
          if (!p) break;
          REQUIRE_FALSE(aps[opp % 2]->on_arrival(std::move(*p), 0, start).protocol_error);
        }
      }
      // Each AP forwards all it holds for its label, then announces upstream.
      for (int link = 0; link < 2; ++link) {
        AccessPoint& ap = *aps[link];
        if (ap.processing_label() && ap.sent() == 0) {
          // Two extra Low recodings (taking) per label.
          const std::size_t todo = ap.n() + 2;
          for (std::size_t i = 0; i < todo; ++i) {
            auto p = ap.on_transmit_opportunity(start);
            REQUIRE(p);
            consume(dev.on_arrival(std::move(*p), link, start));
          }
        }
        if (auto m = ap.marker_opportunity(start)) consume(dev.on_marker(*m, link, start));
      }
      // New arrivals of this interval.
      if (step < cohorts) {
        const int k = static_cast<int>(rng.below(9));
        std::vector<SimTime> times;
        for (int i = 0; i < k; ++i) times.push_back(start + SimTime{rng.below(10'000'000)});
        std::sort(times.begin(), times.end());
        for (auto t : times) {
          Bytes payload(1 + rng.below(40));
          for (auto& b : payload) b = rng.byte();
          payload[0] = static_cast<std::uint8_t>(serial);
          payload.push_back(static_cast<std::uint8_t>(serial++ >> 8));
          ++expected[payload];
          gw.on_arrival(SourcePacket{static_cast<FlowId>(rng.below(3)), payload, 8192}, t);
        }
      }
    }
    CHECK_FALSE(stale);
    CHECK(delivered == expected);
  }
}
