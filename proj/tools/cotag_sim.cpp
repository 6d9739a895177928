// cotag-sim: run, sweep, calibrate and replay coded multipath scenarios.

#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "cotag/harness.hpp"
#include "cotag/replay.hpp"

using namespace cotag;

namespace {

struct Overrides {
  std::optional<std::string> scheme;
  std::optional<double> per;
  std::optional<double> latency_ms;
  std::optional<double> p;
  std::optional<double> q;
  std::optional<double> T_ms;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> trace;
  std::optional<double> duration_s;
  std::optional<double> rate_scale;

  void add_to(CLI::App* app) {
    app->add_option("--scheme", scheme, "cotag, single-path or duplicate-multipath");
    app->add_option("--per", per, "packet error rate of the mmWave links");
    app->add_option("--latency-ms", latency_ms, "server-gateway one-way latency");
    app->add_option("--p", p, "Markov flip probability of link 1");
    app->add_option("--q", q, "Markov probability that link 2 follows link 1");
    app->add_option("--T-ms", T_ms, "cohort interval");
    app->add_option("--seed", seed, "simulation seed");
    app->add_option("--trace", trace, "bandwidth trace (t_s,rate1_gbps,rate2_gbps)");
    app->add_option("--duration-s", duration_s, "simulated time");
    app->add_option("--rate-scale", rate_scale, "multiplier on every rate");
  }

  void apply(ScenarioConfig& c) const {
    if (scheme) c.scheme = parse_scheme(*scheme);
    if (per) c.per = *per;
    if (latency_ms) c.latency_ms = *latency_ms;
    if (T_ms) c.cohort_interval_ms = *T_ms;
    if (seed) c.seed = *seed;
    if (duration_s) c.duration_s = *duration_s;
    if (rate_scale) c.rate_scale = *rate_scale;
    if (trace) c.channel = TraceChannel{*trace, false};
    if (p || q) {
      auto* m = std::get_if<MarkovChannel>(&c.channel);
      if (!m) throw ConfigError("--p/--q need a markov channel");
      if (p) m->params.p = *p;
      if (q) m->params.q = *q;
    }
  }
};

ExperimentConfig load(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

void emit_csv(const std::string& out, const std::vector<MetricsRecord>& rows) {
  if (out.empty() || out == "-")
    write_csv(std::cout, rows);
  else
    write_csv(std::filesystem::path(out), rows);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator of coded multipath forwarding over two mmWave links"};
  app.require_subcommand(1);

  std::string config_path, out_path, events_path, audit_path;
  Overrides ov;

  auto* run = app.add_subcommand("run", "run one scenario and print its metrics row");
  run->add_option("config", config_path, "JSON scenario file")->check(CLI::ExistingFile);
  ov.add_to(run);
  run->add_option("--out", out_path, "CSV output (default stdout)");
  run->add_option("--events", events_path, "event log output");
  run->add_option("--cohort-audit", audit_path, "per-cohort audit output");

  std::optional<std::size_t> repeats, workers;
  auto* grid = app.add_subcommand("grid", "sweep the grid section of a config file");
  grid->add_option("config", config_path, "JSON scenario file")->check(CLI::ExistingFile);
  ov.add_to(grid);
  grid->add_option("--repeats", repeats, "seeds per cell");
  grid->add_option("--workers", workers, "worker threads (0: all cores)");
  grid->add_option("--out", out_path, "CSV output (default stdout)");

  std::string trace_in;
  bool single_link = false;
  auto* cal = app.add_subcommand("calibrate", "fit Markov parameters to a bandwidth trace");
  cal->add_option("trace", trace_in, "trace file")->required()->check(CLI::ExistingFile);
  cal->add_flag("--single-link", single_link, "trace holds t_s,rate_gbps");

  std::size_t steps = 100000;
  double gen_p = 0.5, gen_q = 0.5;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  auto* gen = app.add_subcommand("trace", "write a synthetic Markov bandwidth trace");
  gen->add_option("--steps", steps, "number of samples");
  gen->add_option("--p", gen_p);
  gen->add_option("--q", gen_q);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out)->required();

  bool unbalanced = false, baseline = false;
  std::uint64_t replay_seed = 1;
  auto* replay = app.add_subcommand("replay-two-flow", "six-packet two-flow replay");
  replay->add_flag("--unbalanced", unbalanced, "links 4/5 at 4 and 2 units");
  replay->add_flag("--baseline", baseline, "plain forwarding instead of coding");
  replay->add_option("--seed", replay_seed);
  replay->add_option("--events", events_path, "event log output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = load(config_path);
      ov.apply(cfg.scenario);
      std::optional<std::ofstream> events;
      RunOptions opts;
      if (!events_path.empty()) {
        events = open_out(events_path);
        opts.event_log = &*events;
      }
      opts.cohort_audit = !audit_path.empty();
      const auto result = run_scenario(cfg.scenario, opts);
      emit_csv(out_path, {result.metrics});
      if (opts.cohort_audit) {
        auto f = open_out(audit_path);
        f << "cohort,flow,n_k,high_sent,low_sent,ap1_sent,ap2_sent,delivered,decoded\n";
        for (const auto& c : result.cohorts) f << format_cohort_audit(c) << '\n';
      }
      if (result.audit.violations() != 0) {
        std::cerr << "invariant violations: " << result.audit.violations() << '\n';
        return 3;
      }
    } else if (*grid) {
      auto cfg = load(config_path);
      ov.apply(cfg.scenario);
      if (repeats) cfg.grid.repeats = *repeats;
      if (workers) cfg.grid.workers = *workers;
      emit_csv(out_path, run_grid(cfg.scenario, cfg.grid));
    } else if (*cal) {
      const auto trace = load_trace(trace_in, single_link);
      const auto c = calibrate_from_trace(trace);
      nlohmann::ordered_json j;
      j["type"] = "markov";
      j["p"] = c.params.p;
      j["q"] = c.params.q;
      j["step_ms"] = to_seconds(c.params.step) * 1e3;
      j["levels"] = {{"mean_low", c.levels.mean_low},
                     {"mean_high", c.levels.mean_high},
                     {"spread_low", c.levels.spread_low},
                     {"spread_high", c.levels.spread_high}};
      std::cout << nlohmann::ordered_json{{"channel", j}}.dump(2) << '\n';
    } else if (*gen) {
      MarkovParams params{gen_p, gen_q};
      params.validate();
      Rng rng(gen_seed, "trace");
      save_trace(gen_out, generate_trace(params, RateLevels{}, steps, rng));
    } else if (*replay) {
      auto opts = unbalanced ? two_flow_unbalanced() : two_flow_balanced();
      opts.coded = !baseline;
      opts.seed = replay_seed;
      std::optional<std::ofstream> events;
      if (!events_path.empty()) {
        events = open_out(events_path);
        opts.event_log = &*events;
      }
      print_two_flow(std::cout, replay_two_flow(opts));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
