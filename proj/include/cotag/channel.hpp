#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cotag/random.hpp"
#include "cotag/time.hpp"

namespace cotag {

/// Joint High/Low level of the two mmWave links; the first letter is link 1.
enum class ChannelState : std::uint8_t { HH = 0, HL = 1, LH = 2, LL = 3 };

inline constexpr std::array<ChannelState, 4> kAllChannelStates = {
    ChannelState::HH, ChannelState::HL, ChannelState::LH, ChannelState::LL};

constexpr bool link1_high(ChannelState s) {
  return s == ChannelState::HH || s == ChannelState::HL;
}
constexpr bool link2_high(ChannelState s) {
  return s == ChannelState::HH || s == ChannelState::LH;
}
constexpr ChannelState make_state(bool l1_high, bool l2_high) {
  return l1_high ? (l2_high ? ChannelState::HH : ChannelState::HL)
                 : (l2_high ? ChannelState::LH : ChannelState::LL);
}

const char* to_string(ChannelState s) noexcept;

struct MarkovParams {
  double p = 0.5;  ///< per-step flip probability of link 1's level
  double q = 0.5;  ///< probability that link 2 takes link 1's new level
  SimTime step = std::chrono::milliseconds(100);

  /// Throws std::invalid_argument when out of range.
  void validate() const;
};

/// Per-level Gaussian bandwidth, in Gbps. The spread values are standard
/// deviations unless `spread_is_variance` is set.
struct RateLevels {
  double mean_low = 3.0;
  double mean_high = 10.0;
  double spread_low = 0.3;
  double spread_high = 1.0;
  bool spread_is_variance = false;

  double stddev_low() const;
  double stddev_high() const;
  RateLevels scaled(double factor) const;
  void validate() const;
};

double transition_prob(ChannelState from, ChannelState to, const MarkovParams& params);

/// Row-stochastic 4x4 matrix indexed by ChannelState.
std::array<std::array<double, 4>, 4> transition_matrix(const MarkovParams& params);

ChannelState step_state(ChannelState st, const MarkovParams& params, Rng& rng);

/// Gbps for (link 1, link 2); Gaussian per level, clamped at zero.
std::pair<double, double> sample_bandwidth(ChannelState st, const RateLevels& levels,
                                           Rng& rng);

/// Stationary Pearson correlation of the two links' High indicators.
double state_correlation(const MarkovParams& params);

/// Stationary distribution of the chain, indexed by ChannelState.
std::array<double, 4> stationary_distribution(const MarkovParams& params);

struct TraceRecord {
  double t_s = 0.0;
  double rate1_gbps = 0.0;
  double rate2_gbps = 0.0;
};

class TraceError : public std::runtime_error {
 public:
  TraceError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads `t_s,rate1_gbps,rate2_gbps`. With `single_link`, the file holds
/// `t_s,rate_gbps` and the rate is used for both links. Timestamps must be
/// strictly increasing and rates non-negative.
std::vector<TraceRecord> load_trace(const std::filesystem::path& path,
                                    bool single_link = false);
void save_trace(const std::filesystem::path& path, std::span<const TraceRecord> trace);

/// Synthetic trace of `steps` samples spaced params.step apart, starting from
/// a state drawn from the stationary distribution.
std::vector<TraceRecord> generate_trace(const MarkovParams& params,
                                        const RateLevels& levels, std::size_t steps,
                                        Rng& rng);

struct Calibration {
  MarkovParams params;
  RateLevels levels;
  double median1 = 0.0;
  double median2 = 0.0;
  std::size_t low_samples = 0;
  std::size_t high_samples = 0;
};

/// Quantizes each link at its median (>= median is High), estimates p from
/// link 1's flip frequency, q from how often link 2 matches link 1, and the
/// per-level mean and standard deviation from the pooled samples.
Calibration calibrate_from_trace(std::span<const TraceRecord> trace);

/// Quantized states of a trace, using each link's median as the boundary.
std::vector<ChannelState> quantize_trace(std::span<const TraceRecord> trace);

/// Sample Pearson correlation; NaN when either series is constant.
double pearson(std::span<const double> x, std::span<const double> y);

enum class CorrelationMeasure { Indicator, Bandwidth };

/// Finds q whose Monte Carlo correlation (indicator or bandwidth) matches
/// `target`, by bisection over q in [0, 1].
double calibrate_q_for_correlation(double target, double p, const RateLevels& levels,
                                   CorrelationMeasure measure, std::size_t steps,
                                   std::uint64_t seed);

/// Both links' bandwidth over time, driven by the Markov chain.
class ChannelProcess {
 public:
  ChannelProcess(MarkovParams params, RateLevels levels, std::uint64_t seed);

  /// Moves one step and resamples both bandwidths.
  void advance();

  ChannelState state() const noexcept { return state_; }
  double rate_gbps(int link) const { return link == 0 ? rates_.first : rates_.second; }
  const MarkovParams& params() const noexcept { return params_; }

 private:
  MarkovParams params_;
  RateLevels levels_;
  Rng rng_;
  ChannelState state_;
  std::pair<double, double> rates_;
};

}  // namespace cotag
