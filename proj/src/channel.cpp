#include "cotag/channel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cotag {

const char* to_string(ChannelState s) noexcept {
  switch (s) {
    case ChannelState::HH: return "HH";
    case ChannelState::HL: return "HL";
    case ChannelState::LH: return "LH";
    case ChannelState::LL: return "LL";
  }
  return "?";
}

void MarkovParams::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("markov p must be in [0,1]");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("markov q must be in [0,1]");
  if (step <= SimTime::zero()) throw std::invalid_argument("markov step must be positive");
}

double RateLevels::stddev_low() const {
  return spread_is_variance ? std::sqrt(spread_low) : spread_low;
}
double RateLevels::stddev_high() const {
  return spread_is_variance ? std::sqrt(spread_high) : spread_high;
}

RateLevels RateLevels::scaled(double factor) const {
  RateLevels r = *this;
  r.mean_low *= factor;
  r.mean_high *= factor;
  const double spread_factor = spread_is_variance ? factor * factor : factor;
  r.spread_low *= spread_factor;
  r.spread_high *= spread_factor;
  return r;
}

void RateLevels::validate() const {
  if (!(mean_low > 0.0) || !(mean_high > 0.0))
    throw std::invalid_argument("rate level means must be positive");
  if (!(mean_high > mean_low))
    throw std::invalid_argument("high rate level must exceed the low level");
  if (spread_low < 0.0 || spread_high < 0.0)
    throw std::invalid_argument("rate level spreads must be non-negative");
}

double transition_prob(ChannelState from, ChannelState to, const MarkovParams& params) {
  const bool flipped = link1_high(from) != link1_high(to);
  const bool matched = link1_high(to) == link2_high(to);
  return (flipped ? params.p : 1.0 - params.p) * (matched ? params.q : 1.0 - params.q);
}

std::array<std::array<double, 4>, 4> transition_matrix(const MarkovParams& params) {
  std::array<std::array<double, 4>, 4> m{};
  for (auto from : kAllChannelStates)
    for (auto to : kAllChannelStates)
      m[static_cast<int>(from)][static_cast<int>(to)] = transition_prob(from, to, params);
  return m;
}

ChannelState step_state(ChannelState st, const MarkovParams& params, Rng& rng) {
  const bool flip = rng.uniform() < params.p;
  const bool match = rng.uniform() < params.q;
  const bool l1 = link1_high(st) != flip;
  return make_state(l1, match ? l1 : !l1);
}

std::pair<double, double> sample_bandwidth(ChannelState st, const RateLevels& levels,
                                           Rng& rng) {
  auto draw = [&](bool high) {
    const double mean = high ? levels.mean_high : levels.mean_low;
    const double sd = high ? levels.stddev_high() : levels.stddev_low();
    return std::max(0.0, rng.normal(mean, sd));
  };
  const double r1 = draw(link1_high(st));
  const double r2 = draw(link2_high(st));
  return {r1, r2};
}

double state_correlation(const MarkovParams& params) { return 2.0 * params.q - 1.0; }

std::array<double, 4> stationary_distribution(const MarkovParams& params) {
  const double q = params.q;
  return {q / 2.0, (1.0 - q) / 2.0, (1.0 - q) / 2.0, q / 2.0};
}

namespace {

double parse_double(std::string_view field, std::size_t line, const char* what) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t'))
    field.remove_prefix(1);
  while (!field.empty() &&
         (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
    field.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(v))
    throw TraceError("line " + std::to_string(line) + ": bad " + what + " '" +
                         std::string(field) + "'",
                     line);
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<TraceRecord> load_trace(const std::filesystem::path& path, bool single_link) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace " + path.string(), 0);
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  const std::size_t columns = single_link ? 2 : 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("t_s", 0) == 0) continue;  // header
    const auto fields = split(line, ',');
    if (fields.size() != columns)
      throw TraceError("line " + std::to_string(lineno) + ": expected " +
                           std::to_string(columns) + " columns, got " +
                           std::to_string(fields.size()),
                       lineno);
    TraceRecord r;
    r.t_s = parse_double(fields[0], lineno, "timestamp");
    r.rate1_gbps = parse_double(fields[1], lineno, "rate");
    r.rate2_gbps = single_link ? r.rate1_gbps : parse_double(fields[2], lineno, "rate");
    if (r.rate1_gbps < 0.0 || r.rate2_gbps < 0.0)
      throw TraceError("line " + std::to_string(lineno) + ": negative rate", lineno);
    if (!out.empty() && !(r.t_s > out.back().t_s))
      throw TraceError("line " + std::to_string(lineno) +
                           ": timestamps must be strictly increasing",
                       lineno);
    out.push_back(r);
  }
  return out;
}

void save_trace(const std::filesystem::path& path, std::span<const TraceRecord> trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace " + path.string());
  out << "t_s,rate1_gbps,rate2_gbps\n";
  for (const auto& r : trace)
    out << format_double(r.t_s) << ',' << format_double(r.rate1_gbps) << ','
        << format_double(r.rate2_gbps) << '\n';
  if (!out) throw std::runtime_error("error writing trace " + path.string());
}

std::vector<TraceRecord> generate_trace(const MarkovParams& params,
                                        const RateLevels& levels, std::size_t steps,
                                        Rng& rng) {
  params.validate();
  std::vector<TraceRecord> out;
  out.reserve(steps);
  const bool l1 = rng.uniform() < 0.5;
  ChannelState st = make_state(l1, rng.uniform() < params.q ? l1 : !l1);
  const double dt = to_seconds(params.step);
  for (std::size_t i = 0; i < steps; ++i) {
    if (i > 0) st = step_state(st, params, rng);
    const auto [r1, r2] = sample_bandwidth(st, levels, rng);
    out.push_back({static_cast<double>(i) * dt, r1, r2});
  }
  return out;
}

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double upper = v[n / 2];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lower + upper);
}

struct Moments {
  std::size_t n = 0;
  double sum = 0.0;
  double sum_sq = 0.0;
  void add(double x) {
    ++n;
    sum += x;
    sum_sq += x * x;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (n < 2) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) /
                                       static_cast<double>(n - 1)));
  }
};

}  // namespace

std::vector<ChannelState> quantize_trace(std::span<const TraceRecord> trace) {
  if (trace.empty()) return {};
  std::vector<double> r1, r2;
  r1.reserve(trace.size());
  r2.reserve(trace.size());
  for (const auto& r : trace) {
    r1.push_back(r.rate1_gbps);
    r2.push_back(r.rate2_gbps);
  }
  const double m1 = median_of(r1);
  const double m2 = median_of(r2);
  std::vector<ChannelState> states;
  states.reserve(trace.size());
  for (const auto& r : trace) states.push_back(make_state(r.rate1_gbps >= m1, r.rate2_gbps >= m2));
  return states;
}

Calibration calibrate_from_trace(std::span<const TraceRecord> trace) {
  if (trace.size() < 2)
    throw CalibrationError("calibration needs at least two trace samples");
  Calibration cal;
  {
    std::vector<double> r1, r2;
    for (const auto& r : trace) {
      r1.push_back(r.rate1_gbps);
      r2.push_back(r.rate2_gbps);
    }
    cal.median1 = median_of(std::move(r1));
    cal.median2 = median_of(std::move(r2));
  }
  const auto states = quantize_trace(trace);

  std::size_t flips = 0;
  std::size_t matches = 0;
  Moments low, high;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto s = states[i];
    if (i > 0 && link1_high(s) != link1_high(states[i - 1])) ++flips;
    if (link1_high(s) == link2_high(s)) ++matches;
    (link1_high(s) ? high : low).add(trace[i].rate1_gbps);
    (link2_high(s) ? high : low).add(trace[i].rate2_gbps);
  }
  cal.params.p = static_cast<double>(flips) / static_cast<double>(states.size() - 1);
  cal.params.q = static_cast<double>(matches) / static_cast<double>(states.size());
  if (trace.size() >= 2) {
    const double dt = (trace.back().t_s - trace.front().t_s) /
                      static_cast<double>(trace.size() - 1);
    if (dt > 0.0) cal.params.step = from_seconds(dt);
  }
  // An empty class (e.g. a constant trace) inherits the other class's stats.
  const Moments& lo = low.n ? low : high;
  const Moments& hi = high.n ? high : low;
  cal.levels.mean_low = lo.mean();
  cal.levels.mean_high = hi.mean();
  cal.levels.spread_low = lo.stddev();
  cal.levels.spread_high = hi.stddev();
  cal.levels.spread_is_variance = false;
  cal.low_samples = low.n;
  cal.high_samples = high.n;
  return cal;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

namespace {

double monte_carlo_correlation(double p, double q, const RateLevels& levels,
                               CorrelationMeasure measure, std::size_t steps,
                               std::uint64_t seed) {
  MarkovParams params{p, q};
  Rng rng(seed, "calibrate-q");
  const auto trace = generate_trace(params, levels, steps, rng);
  std::vector<double> a, b;
  a.reserve(steps);
  b.reserve(steps);
  if (measure == CorrelationMeasure::Bandwidth) {
    for (const auto& r : trace) {
      a.push_back(r.rate1_gbps);
      b.push_back(r.rate2_gbps);
    }
  } else {
    const double threshold = 0.5 * (levels.mean_low + levels.mean_high);
    for (const auto& r : trace) {
      a.push_back(r.rate1_gbps >= threshold ? 1.0 : 0.0);
      b.push_back(r.rate2_gbps >= threshold ? 1.0 : 0.0);
    }
  }
  return pearson(a, b);
}

}  // namespace

double calibrate_q_for_correlation(double target, double p, const RateLevels& levels,
                                   CorrelationMeasure measure, std::size_t steps,
                                   std::uint64_t seed) {
  if (!(target >= -1.0 && target <= 1.0))
    throw std::invalid_argument("target correlation must be in [-1,1]");
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 30; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double c = monte_carlo_correlation(p, mid, levels, measure, steps, seed);
    if (std::isnan(c) || c < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

ChannelProcess::ChannelProcess(MarkovParams params, RateLevels levels, std::uint64_t seed)
    : params_(params), levels_(levels), rng_(seed, "channel") {
  params_.validate();
  const bool l1 = rng_.uniform() < 0.5;
  state_ = make_state(l1, rng_.uniform() < params_.q ? l1 : !l1);
  rates_ = sample_bandwidth(state_, levels_, rng_);
}

void ChannelProcess::advance() {
  state_ = step_state(state_, params_, rng_);
  rates_ = sample_bandwidth(state_, levels_, rng_);
}

}  // namespace cotag
