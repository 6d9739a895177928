#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "cotag/sim.hpp"

using namespace cotag;

namespace {

struct Item {
  int id = 0;
  Priority priority = Priority::High;
};

// Reference overflow policy on a plain vector.
EnqueueOutcome reference_push(std::vector<Item>& buf, std::size_t cap, Item it) {
  if (buf.size() < cap) {
    buf.push_back(it);
    return EnqueueOutcome::Enqueued;
  }
  if (it.priority == Priority::Low) return EnqueueOutcome::DroppedIncoming;
  for (std::size_t i = buf.size(); i-- > 0;) {
    if (buf[i].priority == Priority::Low) {
      buf.erase(buf.begin() + static_cast<std::ptrdiff_t>(i));
      buf.push_back(it);
      return EnqueueOutcome::EvictedLow;
    }
  }
  return EnqueueOutcome::DroppedIncoming;
}

}  // namespace

TEST_CASE("scheduler orders by time then insertion") {
  Scheduler s;
  std::vector<int> order;
  s.schedule(SimTime{30}, 0, EventKind::FlowControl, [&](LogRecord&) { order.push_back(3); });
  s.schedule(SimTime{10}, 0, EventKind::FlowControl, [&](LogRecord&) { order.push_back(1); });
  s.schedule(SimTime{10}, 0, EventKind::FlowControl, [&](LogRecord&) { order.push_back(2); });
  s.schedule(SimTime{50}, 0, EventKind::FlowControl, [&](LogRecord&) { order.push_back(5); });
  CHECK(s.run_until(SimTime{40}) == 3);
  CHECK(order == std::vector<int>{1, 2, 3});
  CHECK(s.now() == SimTime{40});
  CHECK(s.pending() == 1);
  CHECK_THROWS_AS(s.schedule(SimTime{39}, 0, EventKind::FlowControl, {}), ContractViolation);
  CHECK(s.run_until(SimTime{100}) == 1);
  CHECK(s.dispatched() == 4);
}

TEST_CASE("events scheduled at now run in the same pass") {
  Scheduler s;
  int hits = 0;
  s.schedule(SimTime{5}, 0, EventKind::FlowControl, [&](LogRecord&) {
    ++hits;
    s.schedule(s.now(), 0, EventKind::FlowControl, [&](LogRecord&) { ++hits; });
  });
  CHECK(s.run_until(SimTime{5}) == 2);
  CHECK(hits == 2);
}

TEST_CASE("scheduler property: random schedules dispatch sorted, each once") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(seed);
    Scheduler s;
    std::vector<std::pair<std::int64_t, int>> seen;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
      const auto t = static_cast<std::int64_t>(rng.below(100));
      s.schedule(SimTime{t}, 0, EventKind::FlowControl,
                 [&seen, t, i](LogRecord&) { seen.emplace_back(t, i); });
    }
    s.run_until(SimTime{1000});
    REQUIRE(seen.size() == static_cast<std::size_t>(n));
    REQUIRE(std::is_sorted(seen.begin(), seen.end()));
  }
}

TEST_CASE("log records") {
  LogRecord r;
  r.time = SimTime{1234};
  r.node = 3;
  r.kind = EventKind::PacketArrival;
  CHECK(format_log_record(r) == "1234,3,arrival,,,,");
  r.flow = 2;
  r.cohort = 7;
  r.outcome = "ok";
  CHECK(format_log_record(r).starts_with("1234,3,arrival,2,7,"));
  CHECK(format_log_record(r).ends_with(",ok"));

  Scheduler s;
  std::ostringstream log;
  s.set_log(&log);
  s.schedule(SimTime{9}, 4, EventKind::CohortTick, [](LogRecord& rec) { rec.outcome = "x"; });
  s.run_until(SimTime{10});
  CHECK(log.str() == "9,4,cohort,,,,x\n");
}

TEST_CASE("bounded queue drop branches") {
  BoundedQueue<Item> q(2);
  CHECK_THROWS_AS(BoundedQueue<Item>(0), ContractViolation);
  CHECK(enqueue_with_drop(q, Item{1, Priority::High}) == EnqueueOutcome::Enqueued);
  CHECK(enqueue_with_drop(q, Item{2, Priority::Low}) == EnqueueOutcome::Enqueued);
  CHECK(q.full());
  CHECK(enqueue_with_drop(q, Item{3, Priority::Low}) == EnqueueOutcome::DroppedIncoming);
  const auto r = q.push(Item{4, Priority::High});
  CHECK(r.outcome == EnqueueOutcome::EvictedLow);
  REQUIRE(r.evicted);
  CHECK(r.evicted->id == 2);
  CHECK(q.all_high());
  CHECK(enqueue_with_drop(q, Item{5, Priority::High}) == EnqueueOutcome::DroppedIncoming);
  CHECK(q.pop()->id == 1);
  CHECK(q.pop()->id == 4);
  CHECK_FALSE(q.pop());
}

TEST_CASE("bounded queue property: matches the reference policy") {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    Rng rng(seed);
    const std::size_t cap = 1 + rng.below(6);
    BoundedQueue<Item> q(cap);
    std::vector<Item> ref;
    for (int step = 0; step < 300; ++step) {
      if (rng.bernoulli(0.3)) {
        auto got = q.pop();
        if (ref.empty()) {
          REQUIRE_FALSE(got);
        } else {
          REQUIRE(got);
          REQUIRE(got->id == ref.front().id);
          ref.erase(ref.begin());
        }
      } else {
        Item it{step, rng.bernoulli(0.5) ? Priority::High : Priority::Low};
        const bool all_high_before = q.all_high();
        const auto before = q.size();
        const auto got = enqueue_with_drop(q, it);
        REQUIRE(got == reference_push(ref, cap, it));
        // High packets are never dropped while a Low one is buffered.
        if (it.priority == Priority::High && got == EnqueueOutcome::DroppedIncoming)
          REQUIRE(all_high_before);
        REQUIRE(q.size() >= before);
      }
      REQUIRE(q.size() == ref.size());
      REQUIRE(q.size() <= cap);
      const auto lows = static_cast<std::size_t>(std::count_if(
          ref.begin(), ref.end(), [](const Item& i) { return i.priority == Priority::Low; }));
      REQUIRE(q.low_count() == lows);
    }
  }
}

TEST_CASE("all-high queue is drop-tail") {
  BoundedQueue<Item> q(3);
  for (int i = 0; i < 10; ++i) q.push(Item{i, Priority::High});
  CHECK(q.pop()->id == 0);
  CHECK(q.pop()->id == 1);
  CHECK(q.pop()->id == 2);
}

TEST_CASE("serialization time") {
  CHECK(serialization_time(8192, 6e9) == SimTime{10923});
  CHECK(serialization_time(1250, 10e9) == SimTime{1000});
  CHECK(serialization_time(1, 3e9) == SimTime{3});
  for (std::uint64_t size : {64u, 1500u, 8192u, 9000u})
    for (double bw : {1e9, 2.5e9, 6e9, 10e9}) {
      const double exact = static_cast<double>(size) * 8 / bw * 1e9;
      const auto got = serialization_time(size, bw).count();
      CHECK(got >= std::floor(exact));
      CHECK(got <= std::ceil(exact));
      CHECK(static_cast<double>(got) >= exact - 1e-6);
    }
}

TEST_CASE("transmit") {
  Rng rng(1);
  Link link{0, 1, 1e9, std::chrono::microseconds(5), 0.0};
  auto t = transmit(link, 125, SimTime{100}, rng);
  CHECK(t.outcome == TransmitOutcome::Delivered);
  CHECK(t.serialization_end == SimTime{1100});
  CHECK(t.arrival == SimTime{6100});

  link.bandwidth_bps = 0;
  CHECK(transmit(link, 125, SimTime{0}, rng).outcome == TransmitOutcome::Blocked);

  link.bandwidth_bps = 1e9;
  link.per = 1.0;
  CHECK(transmit(link, 125, SimTime{0}, rng).outcome == TransmitOutcome::Dropped);

  link.per = 0.1;
  int dropped = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    dropped += transmit(link, 125, SimTime{0}, rng).outcome == TransmitOutcome::Dropped;
  // Binomial: 4 sigma = 4 * sqrt(n * 0.1 * 0.9) ~ 380.
  CHECK(std::abs(dropped - n / 10) < 380);

  link.per = 1.5;
  CHECK_THROWS(link.validate());
}

TEST_CASE("port serializes back to back and pulls at the free instant") {
  Scheduler s;
  std::vector<Item> source{{1, Priority::High}, {2, Priority::High}, {3, Priority::High}};
  std::vector<std::pair<int, std::int64_t>> arrivals;
  Port<Item>::Hooks hooks;
  hooks.pull = [&](SimTime) -> std::optional<Item> {
    if (source.empty()) return std::nullopt;
    Item it = source.front();
    source.erase(source.begin());
    return it;
  };
  hooks.deliver = [&](Item it, LogRecord&) { arrivals.emplace_back(it.id, s.now().count()); };
  hooks.size = [](const Item&) { return 125u; };
  Port<Item> port(s, Link{0, 1, 1e9, SimTime{500}, 0.0}, 7, hooks);
  port.kick();
  s.run_until(SimTime{100000});
  REQUIRE(arrivals.size() == 3);
  CHECK(arrivals[0] == std::pair{1, std::int64_t{1500}});
  CHECK(arrivals[1] == std::pair{2, std::int64_t{2500}});
  CHECK(arrivals[2] == std::pair{3, std::int64_t{3500}});
  CHECK(port.sent() == 3);
  CHECK_FALSE(port.busy());
}

TEST_CASE("blocked port resumes on a bandwidth update") {
  Scheduler s;
  int pulls = 0, delivered = 0;
  Port<Item>::Hooks hooks;
  hooks.pull = [&](SimTime) -> std::optional<Item> {
    if (pulls++ > 0) return std::nullopt;
    return Item{1, Priority::High};
  };
  hooks.deliver = [&](Item, LogRecord&) { ++delivered; };
  hooks.size = [](const Item&) { return 100u; };
  Port<Item> port(s, Link{0, 1, 0.0, SimTime{0}, 0.0}, 1, hooks);
  port.kick();
  CHECK(pulls == 0);
  port.set_bandwidth(1e9);
  s.run_until(SimTime{10000});
  CHECK(delivered == 1);
}
