#include <fstream>
#include <initializer_list>
#include <sstream>

#include "cotag/harness.hpp"
#include "json.hpp"

namespace cotag {

namespace {

using nlohmann::json;

/// Typed access to one JSON object that rejects keys it was not told about.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<const char*> keys)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) throw ConfigError("unknown key '" + key + "' in " + path_);
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  void ms(const char* key, SimTime& out) const {
    double v = to_seconds(out) * 1e3;
    get(key, v);
    if (!(v >= 0.0)) throw ConfigError(path_ + "." + key + " must be non-negative");
    out = from_seconds(v * 1e-3);
  }

  Section sub(const char* key, std::initializer_list<const char*> keys) const {
    return Section(j_.at(key), path_ + "." + key, keys);
  }

  const json& raw(const char* key) const { return j_.at(key); }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
};

void parse_levels(const Section& s, RateLevels& l) {
  s.get("mean_low", l.mean_low);
  s.get("mean_high", l.mean_high);
  s.get("spread_low", l.spread_low);
  s.get("spread_high", l.spread_high);
  s.get("spread_is_variance", l.spread_is_variance);
}

ChannelSpec parse_channel(const json& j) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
    throw ConfigError("channel.type is required (markov, trace or constant)");
  const auto type = j.at("type").get<std::string>();
  if (type == "markov") {
    Section s(j, "channel", {"type", "p", "q", "step_ms", "levels"});
    MarkovChannel m;
    s.get("p", m.params.p);
    s.get("q", m.params.q);
    s.ms("step_ms", m.params.step);
    if (s.has("levels"))
      parse_levels(
          s.sub("levels", {"mean_low", "mean_high", "spread_low", "spread_high",
                           "spread_is_variance"}),
          m.levels);
    return m;
  }
  if (type == "trace") {
    Section s(j, "channel", {"type", "path", "single_link"});
    TraceChannel t;
    std::string path;
    s.get("path", path);
    if (path.empty()) throw ConfigError("channel.path is required for a trace channel");
    t.path = path;
    s.get("single_link", t.single_link);
    return t;
  }
  if (type == "constant") {
    Section s(j, "channel", {"type", "rate1_gbps", "rate2_gbps"});
    ConstantChannel c;
    s.get("rate1_gbps", c.rate1_gbps);
    s.get("rate2_gbps", c.rate2_gbps);
    return c;
  }
  throw ConfigError("unknown channel type '" + type + "'");
}

GridAxes parse_grid(const Section& s) {
  GridAxes g;
  s.get("per", g.per);
  s.get("latency_ms", g.latency_ms);
  s.get("correlation", g.correlation);
  if (s.has("schemes")) {
    std::vector<std::string> names;
    s.get("schemes", names);
    g.schemes.clear();
    for (const auto& n : names) g.schemes.push_back(parse_scheme(n));
  }
  s.get("repeats", g.repeats);
  s.get("workers", g.workers);
  if (g.per.empty() || g.latency_ms.empty() || g.schemes.empty() || g.repeats == 0)
    throw ConfigError("grid axes must be non-empty");
  return g;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section root(j, "config",
               {"name", "scheme", "per", "latency_ms", "T_ms", "seed", "channel_seed",
                "duration_s", "rate_scale", "transfer_target_bits", "flow_count", "flow_order",
                "corr_target", "channel", "flow", "topology", "transport", "grid"});
  ExperimentConfig out;
  auto& c = out.scenario;
  root.get("name", c.name);
  if (root.has("scheme")) {
    std::string s;
    root.get("scheme", s);
    c.scheme = parse_scheme(s);
  }
  root.get("per", c.per);
  root.get("latency_ms", c.latency_ms);
  root.get("T_ms", c.cohort_interval_ms);
  root.get("seed", c.seed);
  if (root.has("channel_seed")) {
    std::uint64_t s = 0;
    root.get("channel_seed", s);
    c.channel_seed = s;
  }
  root.get("duration_s", c.duration_s);
  root.get("rate_scale", c.rate_scale);
  root.get("transfer_target_bits", c.transfer_target_bits);
  root.get("flow_count", c.flow_count);
  root.get("corr_target", c.corr_target);
  if (root.has("flow_order")) {
    std::string s;
    root.get("flow_order", s);
    if (s == "queue")
      c.flow_order = FlowOrder::QueueOrder;
    else if (s == "round-robin")
      c.flow_order = FlowOrder::RoundRobin;
    else
      throw ConfigError("flow_order must be queue or round-robin");
  }
  if (root.has("channel")) c.channel = parse_channel(root.raw("channel"));
  if (root.has("flow")) {
    auto s = root.sub("flow", {"packet_size", "base_rate_gbps", "burst_rate_gbps",
                               "burst_start_s", "burst_duration_s"});
    s.get("packet_size", c.flow.packet_size);
    s.get("base_rate_gbps", c.flow.base_rate_gbps);
    s.get("burst_rate_gbps", c.flow.burst_rate_gbps);
    s.get("burst_start_s", c.flow.burst_start_s);
    s.get("burst_duration_s", c.flow.burst_duration_s);
  }
  if (root.has("topology")) {
    auto s = root.sub("topology", {"server_link_gbps", "gateway_link_gbps",
                                   "gateway_ap_delay_ms", "ap_device_delay_ms",
                                   "queue_capacity"});
    s.get("server_link_gbps", c.topology.server_link_gbps);
    s.get("gateway_link_gbps", c.topology.gateway_link_gbps);
    s.get("gateway_ap_delay_ms", c.topology.gateway_ap_delay_ms);
    s.get("ap_device_delay_ms", c.topology.ap_device_delay_ms);
    s.get("queue_capacity", c.topology.queue_capacity);
  }
  if (root.has("transport")) {
    auto s = root.sub("transport", {"initial_window", "max_window", "beta", "cubic_c",
                                    "dup_threshold", "min_rto_ms", "initial_rto_ms",
                                    "max_rto_ms"});
    auto& t = c.transport;
    s.get("initial_window", t.initial_window);
    s.get("max_window", t.max_window);
    s.get("beta", t.beta);
    s.get("cubic_c", t.cubic_c);
    s.get("dup_threshold", t.dup_threshold);
    s.ms("min_rto_ms", t.min_rto);
    s.ms("initial_rto_ms", t.initial_rto);
    s.ms("max_rto_ms", t.max_rto);
  }
  if (root.has("grid"))
    out.grid = parse_grid(root.sub(
        "grid", {"per", "latency_ms", "correlation", "schemes", "repeats", "workers"}));
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str());
  // Trace paths are relative to the config file.
  if (auto* t = std::get_if<TraceChannel>(&cfg.scenario.channel); t && t->path.is_relative())
    t->path = path.parent_path() / t->path;
  return cfg;
}

}  // namespace cotag
