#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "cotag/harness.hpp"

namespace cotag {

/// The six-packet two-flow example: a1 b1 a2 a3 b2 a4 queued at the server,
/// links 1-5 = server-gateway, gateway-AP1, gateway-AP2, AP1-device,
/// AP2-device. Link capacities are in packets per interval.
struct TwoFlowOptions {
  std::array<double, 5> units{6, 6, 6, 3, 3};
  bool coded = true;             ///< false: plain forwarding, alternating links
  double interval_ms = 12.0;
  std::uint32_t packet_size = 8192;
  std::uint64_t seed = 1;
  std::ostream* event_log = nullptr;
};

struct TwoFlowResult {
  TwoFlowOptions options;
  std::array<std::size_t, 5> link_sent{};  ///< data packets started per link
  std::size_t gateway_high = 0;
  std::size_t gateway_low = 0;
  /// Coded packets (or plain packets) received by the device, [flow][link].
  std::array<std::array<std::size_t, 2>, 2> device_received{};
  std::size_t delivered = 0;            ///< originals handed to the application
  std::size_t delivered_in_window = 0;  ///< by window_end
  bool byte_exact = false;              ///< every delivered payload matches its original
  double window_start_ms = 0.0;         ///< first AP-device transmission
  double window_end_ms = 0.0;           ///< window_start + one interval
  std::vector<CohortAuditRecord> cohorts;
};

TwoFlowOptions two_flow_balanced();
TwoFlowOptions two_flow_unbalanced();

TwoFlowResult replay_two_flow(const TwoFlowOptions& opts);

/// Human-readable dump: one `key=value` line per quantity, then the cohort
/// audit records.
void print_two_flow(std::ostream& out, const TwoFlowResult& r);

}  // namespace cotag
