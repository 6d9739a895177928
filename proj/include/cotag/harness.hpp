#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cotag/channel.hpp"
#include "cotag/cotag.hpp"
#include "cotag/transport.hpp"

namespace cotag {

enum class Scheme { Cotag, SinglePathBaseline, DuplicateMultipath };

const char* to_string(Scheme s) noexcept;
/// Accepts the names printed by to_string().
Scheme parse_scheme(std::string_view name);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MarkovChannel {
  MarkovParams params{0.5, 0.5};
  RateLevels levels;
};

struct TraceChannel {
  std::filesystem::path path;
  bool single_link = false;
};

struct ConstantChannel {
  double rate1_gbps = 10.0;
  double rate2_gbps = 10.0;
};

using ChannelSpec = std::variant<MarkovChannel, TraceChannel, ConstantChannel>;

/// server(0) -> gateway(1) -> {AP1(2), AP2(3)} -> device(4). Rates are
/// before rate_scale is applied.
struct Topology {
  double server_link_gbps = 40.0;
  double gateway_link_gbps = 20.0;
  double gateway_ap_delay_ms = 0.05;
  double ap_device_delay_ms = 0.01;
  std::size_t queue_capacity = 2048;
};

inline constexpr NodeId kServer = 0;
inline constexpr NodeId kGateway = 1;
inline constexpr NodeId kAp1 = 2;
inline constexpr NodeId kAp2 = 3;
inline constexpr NodeId kDevice = 4;

struct ScenarioConfig {
  std::string name = "scenario";
  Scheme scheme = Scheme::Cotag;
  ChannelSpec channel = MarkovChannel{};
  double per = 0.0;
  double latency_ms = 0.0;        ///< one-way server-gateway propagation delay
  double cohort_interval_ms = 10.0;
  std::size_t flow_count = 10;
  FlowSpec flow;                  ///< template for every flow
  Topology topology;
  TransportConfig transport;
  FlowOrder flow_order = FlowOrder::QueueOrder;
  double duration_s = 2.5;
  /// Multiplies every link rate, channel rate, flow rate and the transfer
  /// target, keeping the scenario's shape at a smaller packet count.
  double rate_scale = 1.0;
  double transfer_target_bits = 5e9;
  std::uint64_t seed = 1;
  /// Seed of the bandwidth process; defaults to `seed`.
  std::optional<std::uint64_t> channel_seed;
  double corr_target = std::numeric_limits<double>::quiet_NaN();

  /// Throws ConfigError describing the first problem found.
  void validate() const;
  /// Flow specs after scaling, ids 0..flow_count-1.
  std::vector<FlowSpec> flows() const;
};

struct MetricsRecord {
  std::string scenario;
  Scheme scheme = Scheme::Cotag;
  double per = 0.0;
  double latency_ms = 0.0;
  double corr_target = std::numeric_limits<double>::quiet_NaN();
  double corr_measured = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  double q = std::numeric_limits<double>::quiet_NaN();
  double T_ms = 0.0;
  std::uint64_t seed = 0;
  double throughput_gbps = 0.0;
  double latency_5gb_s = 0.0;  ///< +inf when the target was not reached
  double decode_ratio = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t injected_bytes = 0;
  std::uint64_t delivered_bytes = 0;
};

/// Counters of the protocol invariants. Every field named *_violations must
/// stay zero.
struct InvariantAudit {
  // Packet conservation over every hop.
  std::uint64_t created = 0;
  std::uint64_t consumed = 0;       ///< handed to the next protocol stage
  std::uint64_t dropped_per = 0;
  std::uint64_t dropped_queue = 0;  ///< drop-tail, eviction, protocol error
  std::uint64_t dropped_give = 0;   ///< discarded when a label window closed
  std::uint64_t in_flight_end = 0;
  std::uint64_t resident_end = 0;   ///< still buffered at the end

  std::uint64_t label_violations = 0;
  std::uint64_t stale_violations = 0;
  std::uint64_t high_eviction_violations = 0;
  std::uint64_t giving_violations = 0;
  std::uint64_t payload_violations = 0;
  std::uint64_t duplicate_delivery_violations = 0;

  bool conserved() const noexcept {
    return created ==
           consumed + dropped_per + dropped_queue + dropped_give + in_flight_end + resident_end;
  }
  std::uint64_t violations() const noexcept {
    return label_violations + stale_violations + high_eviction_violations +
           giving_violations + payload_violations + duplicate_delivery_violations +
           (conserved() ? 0 : 1);
  }
};

/// `cohort,flow,n_k,high_sent,low_sent,ap1_sent,ap2_sent,delivered,decoded`
struct CohortAuditRecord {
  CohortLabel cohort = 0;
  FlowId flow = 0;
  std::size_t n_k = 0;
  std::size_t high_sent = 0;
  std::size_t low_sent = 0;
  std::size_t ap1_sent = 0;
  std::size_t ap2_sent = 0;
  std::size_t delivered = 0;
  bool decoded = false;
};

std::string format_cohort_audit(const CohortAuditRecord& r);

struct RunOptions {
  std::ostream* event_log = nullptr;
  bool cohort_audit = false;
};

struct RunResult {
  MetricsRecord metrics;
  InvariantAudit audit;
  std::vector<CohortAuditRecord> cohorts;
  std::uint64_t events = 0;
  std::uint64_t source_packets_injected = 0;  ///< unique application packets sent
  std::uint64_t source_packets_delivered = 0; ///< handed to applications in order
  std::uint64_t generations_decoded = 0;
  std::uint64_t generations_failed = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t timeouts = 0;
};

RunResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opts = {});

struct GridAxes {
  std::vector<double> per{0.0};
  std::vector<double> latency_ms{0.0};
  /// Bandwidth correlation targets; empty keeps the base channel.
  std::vector<double> correlation;
  std::vector<Scheme> schemes{Scheme::Cotag, Scheme::SinglePathBaseline,
                              Scheme::DuplicateMultipath};
  std::size_t repeats = 1;
  std::size_t workers = 0;  ///< 0: hardware concurrency
};

/// Channel parameters used for a correlation target: q is calibrated so the
/// Markov chain's bandwidth correlation matches `target`.
MarkovChannel channel_for_correlation(const MarkovChannel& base, double target);

/// Expands the axes (order: correlation, per, latency, scheme, repeat) into
/// cell configurations. Each cell gets its own seed; cells of one repeat share
/// the bandwidth realization.
std::vector<ScenarioConfig> expand_grid(const ScenarioConfig& base, const GridAxes& axes);

/// Runs every cell of the grid in a worker pool; rows come back in cell order.
std::vector<MetricsRecord> run_grid(const ScenarioConfig& base, const GridAxes& axes);
std::vector<MetricsRecord> run_cells(const std::vector<ScenarioConfig>& cells,
                                     std::size_t workers);

inline constexpr std::string_view kCsvHeader =
    "scenario,scheme,per,latency_ms,corr_target,corr_measured,p,q,T_ms,seed,"
    "throughput_gbps,latency_5gb_s,decode_ratio,injected_bytes,delivered_bytes";

std::string format_csv_row(const MetricsRecord& r);
void write_csv(std::ostream& out, const std::vector<MetricsRecord>& records);
void write_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_csv(std::istream& in);
std::vector<MetricsRecord> read_csv(const std::filesystem::path& path);

/// A scenario file plus the optional grid section.
struct ExperimentConfig {
  ScenarioConfig scenario;
  GridAxes grid;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace cotag
