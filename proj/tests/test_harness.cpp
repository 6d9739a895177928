#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cotag/harness.hpp"
#include "cotag/replay.hpp"

using namespace cotag;

namespace {

ScenarioConfig small(Scheme scheme = Scheme::Cotag) {
  ScenarioConfig c;
  c.scheme = scheme;
  c.rate_scale = 0.1;
  c.duration_s = 0.4;
  c.flow.burst_start_s = 0.1;
  c.flow.burst_duration_s = 0.3;
  return c;
}

std::string csv_of(const std::vector<MetricsRecord>& rows) {
  std::ostringstream out;
  write_csv(out, rows);
  return out.str();
}

}  // namespace

TEST_CASE("scheme names") {
  for (auto s : {Scheme::Cotag, Scheme::SinglePathBaseline, Scheme::DuplicateMultipath})
    CHECK(parse_scheme(to_string(s)) == s);
  CHECK_THROWS(parse_scheme("mptcp"));
}

TEST_CASE("constant links with ample capacity carry the offered load") {
  // 10 flows at 0.6 Gbps over 10 + 10 Gbps links, all rates scaled by 0.1.
  ScenarioConfig c;
  c.rate_scale = 0.1;
  c.channel = ConstantChannel{10.0, 10.0};
  c.flow.base_rate_gbps = 0.6;
  c.flow.burst_rate_gbps = 0.6;
  c.flow.burst_start_s = 0.5;
  c.flow.burst_duration_s = 1.0;
  c.duration_s = 1.5;
  for (auto scheme : {Scheme::Cotag, Scheme::SinglePathBaseline, Scheme::DuplicateMultipath}) {
    c.scheme = scheme;
    const auto r = run_scenario(c);
    INFO(to_string(scheme));
    CHECK(r.metrics.throughput_gbps == doctest::Approx(0.6).epsilon(0.10));
    CHECK(r.metrics.delivered_bytes <= r.metrics.injected_bytes);
    CHECK(r.audit.violations() == 0);
  }
}

TEST_CASE("zero duration gives a zeroed record") {
  auto c = small();
  c.duration_s = 0;
  const auto r = run_scenario(c);
  CHECK(r.metrics.throughput_gbps == 0);
  CHECK(r.metrics.injected_bytes == 0);
  CHECK(r.metrics.delivered_bytes == 0);
  CHECK(r.events == 0);
}

TEST_CASE("invalid configs are rejected before running") {
  auto c = small();
  c.per = 1.5;
  CHECK_THROWS_AS(run_scenario(c), ConfigError);
  c = small();
  c.cohort_interval_ms = 0;
  CHECK_THROWS_AS(run_scenario(c), ConfigError);
  c = small();
  c.flow_count = 0;
  CHECK_THROWS_AS(run_scenario(c), ConfigError);
  c = small();
  c.channel = TraceChannel{"/nonexistent/trace.csv", false};
  CHECK_THROWS(run_scenario(c));
}

TEST_CASE("markov scenarios keep every invariant") {
  for (auto scheme : {Scheme::Cotag, Scheme::SinglePathBaseline, Scheme::DuplicateMultipath})
    for (std::uint64_t seed : {1u, 2u}) {
      auto c = small(scheme);
      c.seed = seed;
      c.per = 1e-3;
      c.latency_ms = 1;
      const auto r = run_scenario(c);
      INFO(to_string(scheme) << " seed " << seed);
      CHECK(r.audit.violations() == 0);
      CHECK(r.audit.conserved());
      CHECK(r.metrics.throughput_gbps >= 0);
      CHECK(r.metrics.delivered_bytes <= r.metrics.injected_bytes);
    }
}

TEST_CASE("runs are reproducible, event log included") {
  auto c = small();
  c.per = 1e-3;
  std::ostringstream a, b;
  RunOptions oa{&a, true}, ob{&b, true};
  const auto ra = run_scenario(c, oa);
  const auto rb = run_scenario(c, ob);
  CHECK(a.str() == b.str());
  CHECK_FALSE(a.str().empty());
  CHECK(format_csv_row(ra.metrics) == format_csv_row(rb.metrics));
  REQUIRE(ra.cohorts.size() == rb.cohorts.size());
  for (std::size_t i = 0; i < ra.cohorts.size(); ++i)
    CHECK(format_cohort_audit(ra.cohorts[i]) == format_cohort_audit(rb.cohorts[i]));

  c.seed = 2;
  CHECK(format_csv_row(run_scenario(c).metrics) != format_csv_row(ra.metrics));
}

TEST_CASE("event log lines have seven fields") {
  auto c = small();
  c.duration_s = 0.05;
  std::ostringstream log;
  run_scenario(c, RunOptions{&log, false});
  std::istringstream in(log.str());
  std::string line;
  std::int64_t last = -1;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    REQUIRE(std::count(line.begin(), line.end(), ',') == 6);
    const auto t = std::stoll(line.substr(0, line.find(',')));
    REQUIRE(t >= last);
    last = t;
  }
  CHECK(lines > 100);
}

TEST_CASE("grid cardinality, seeds and CSV size") {
  GridAxes axes;
  axes.per = {0.0, 1e-4};
  axes.latency_ms = {0.0, 1.0};
  axes.repeats = 3;
  auto base = small();
  base.duration_s = 0.15;
  const auto cells = expand_grid(base, axes);
  CHECK(cells.size() == 36);
  std::set<std::uint64_t> seeds;
  for (const auto& c : cells) seeds.insert(c.seed);
  CHECK(seeds.size() == 36);
  // Cells of one repeat share the bandwidth realization.
  CHECK(cells[0].channel_seed == cells[3].channel_seed);
  CHECK(cells[0].channel_seed != cells[1].channel_seed);

  const auto rows = run_grid(base, axes);
  REQUIRE(rows.size() == 36);
  const auto text = csv_of(rows);
  CHECK(std::count(text.begin(), text.end(), '\n') == 37);

  axes.workers = 1;
  CHECK(csv_of(run_grid(base, axes)) == text);
  axes.workers = 4;
  CHECK(csv_of(run_grid(base, axes)) == text);

  // Exchangeable cells: running one on its own gives the same row.
  CHECK(format_csv_row(run_scenario(cells[17]).metrics) == format_csv_row(rows[17]));
}

TEST_CASE("grid axes must be non-empty") {
  GridAxes axes;
  axes.per.clear();
  CHECK_THROWS_AS(expand_grid(small(), axes), ConfigError);
  axes = GridAxes{};
  axes.correlation = {0.0};
  auto c = small();
  c.channel = ConstantChannel{};
  CHECK_THROWS_AS(expand_grid(c, axes), ConfigError);
}

TEST_CASE("correlation axis calibrates q") {
  GridAxes axes;
  axes.correlation = {-0.34, 0.0, 0.34};
  axes.schemes = {Scheme::Cotag};
  const auto cells = expand_grid(small(), axes);
  REQUIRE(cells.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& m = std::get<MarkovChannel>(cells[i].channel);
    CHECK(cells[i].corr_target == axes.correlation[i]);
    CHECK(std::abs(state_correlation(m.params) - axes.correlation[i]) <= 0.03);
    // Measured on a long synthetic realization as well.
    Rng rng(11);
    const auto trace = generate_trace(m.params, m.levels, 200000, rng);
    std::vector<double> a, b;
    for (const auto& r : trace) {
      a.push_back(r.rate1_gbps >= 0.5 * (m.levels.mean_low + m.levels.mean_high));
      b.push_back(r.rate2_gbps >= 0.5 * (m.levels.mean_low + m.levels.mean_high));
    }
    CHECK(std::abs(pearson(a, b) - axes.correlation[i]) <= 0.03);
  }
}

TEST_CASE("csv round trip") {
  MetricsRecord r;
  r.scenario = "odd, \"name\"";
  r.scheme = Scheme::DuplicateMultipath;
  r.per = 1e-4;
  r.latency_ms = 5;
  r.corr_target = -0.34;
  r.corr_measured = -0.331234;
  r.p = 0.5;
  r.q = 0.17;
  r.T_ms = 10;
  r.seed = 18446744073709551615ull;
  r.throughput_gbps = 1.25;
  r.latency_5gb_s = std::numeric_limits<double>::infinity();
  r.decode_ratio = std::numeric_limits<double>::quiet_NaN();
  r.injected_bytes = 123456789;
  r.delivered_bytes = 12345678;
  std::istringstream in(csv_of({r, MetricsRecord{}}));
  const auto back = read_csv(in);
  REQUIRE(back.size() == 2);
  CHECK(format_csv_row(back[0]) == format_csv_row(r));
  CHECK(back[0].scenario == r.scenario);
  CHECK(back[0].seed == r.seed);
  CHECK(std::isinf(back[0].latency_5gb_s));
  CHECK(std::isnan(back[0].decode_ratio));
  CHECK(back[0].per == doctest::Approx(1e-4));
}

TEST_CASE("empty csv is header only") {
  const auto text = csv_of({});
  CHECK(text == std::string(kCsvHeader) + "\n");
  std::istringstream in(text);
  CHECK(read_csv(in).empty());

  const auto path = std::filesystem::temp_directory_path() / "cotag_empty.csv";
  write_csv(path, {});
  CHECK(read_csv(path).empty());
  std::filesystem::remove(path);
  CHECK_THROWS(write_csv(std::filesystem::path("/nonexistent/dir/x.csv"), {}));
}

TEST_CASE("csv read errors name the line") {
  std::istringstream bad(std::string(kCsvHeader) + "\na,b,c\n");
  try {
    read_csv(bad);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::istringstream wrong("x,y\n");
  CHECK_THROWS(read_csv(wrong));
}

TEST_CASE("config parsing") {
  const auto cfg = parse_config(R"({
    "name": "demo", "scheme": "single-path", "per": 0.001, "latency_ms": 5,
    "T_ms": 4, "seed": 9, "channel_seed": 3, "flow_order": "round-robin",
    "channel": {"type": "markov", "p": 0.3, "q": 0.8, "step_ms": 50,
                "levels": {"mean_low": 2, "mean_high": 8}},
    "flow": {"packet_size": 1500},
    "transport": {"min_rto_ms": 2},
    "grid": {"per": [0, 0.01], "schemes": ["cotag"], "repeats": 2}
  })");
  const auto& s = cfg.scenario;
  CHECK(s.name == "demo");
  CHECK(s.scheme == Scheme::SinglePathBaseline);
  CHECK(s.per == 0.001);
  CHECK(s.cohort_interval_ms == 4);
  CHECK(s.channel_seed == 3u);
  CHECK(s.flow_order == FlowOrder::RoundRobin);
  const auto& m = std::get<MarkovChannel>(s.channel);
  CHECK(m.params.p == 0.3);
  CHECK(m.params.step == std::chrono::milliseconds(50));
  CHECK(m.levels.mean_high == 8);
  CHECK(s.flow.packet_size == 1500);
  CHECK(s.transport.min_rto == std::chrono::milliseconds(2));
  CHECK(cfg.grid.per.size() == 2);
  CHECK(cfg.grid.schemes == std::vector<Scheme>{Scheme::Cotag});
  CHECK(cfg.grid.repeats == 2);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"bogus": 1})"), "unknown key 'bogus' in config",
                       ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"channel": {"type": "markov", "x": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"per": "high"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"channel": {"type": "wifi"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"grid": {"per": []}})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("trace channel paths resolve against the config file") {
  const auto dir = std::filesystem::temp_directory_path() / "cotag_cfg_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"channel": {"type": "trace", "path": "t.csv"}})";
  }
  {
    std::ofstream f(dir / "t.csv");
    f << "t_s,rate1_gbps,rate2_gbps\n0,10,3\n0.1,3,10\n0.2,10,10\n";
  }
  const auto cfg = load_config(dir / "cfg.json");
  const auto& t = std::get<TraceChannel>(cfg.scenario.channel);
  CHECK(t.path == dir / "t.csv");
  auto c = cfg.scenario;
  c.rate_scale = 0.1;
  c.duration_s = 0.3;
  const auto r = run_scenario(c);
  CHECK(r.metrics.injected_bytes > 0);
  CHECK(r.audit.violations() == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("replay dump is deterministic") {
  std::ostringstream a, b;
  print_two_flow(a, replay_two_flow(two_flow_balanced()));
  print_two_flow(b, replay_two_flow(two_flow_balanced()));
  CHECK(a.str() == b.str());
  auto bad = two_flow_balanced();
  bad.units[3] = 0;
  CHECK_THROWS(replay_two_flow(bad));
}
