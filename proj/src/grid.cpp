#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "cotag/harness.hpp"

namespace cotag {

namespace {

constexpr std::size_t kCalibrationSteps = 200000;
constexpr std::uint64_t kCalibrationSeed = 0x5eed;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad integer '" + s + "'");
  return v;
}

}  // namespace

MarkovChannel channel_for_correlation(const MarkovChannel& base, double target) {
  MarkovChannel out = base;
  out.params.q = calibrate_q_for_correlation(target, base.params.p, base.levels,
                                             CorrelationMeasure::Bandwidth, kCalibrationSteps,
                                             kCalibrationSeed);
  return out;
}

std::vector<ScenarioConfig> expand_grid(const ScenarioConfig& base, const GridAxes& axes) {
  if (axes.per.empty() || axes.latency_ms.empty() || axes.schemes.empty() || axes.repeats == 0)
    throw ConfigError("grid axes must be non-empty");

  std::vector<std::optional<double>> corr;
  if (axes.correlation.empty()) {
    corr.push_back(std::nullopt);
  } else {
    if (!std::holds_alternative<MarkovChannel>(base.channel))
      throw ConfigError("a correlation axis needs a markov channel");
    corr.assign(axes.correlation.begin(), axes.correlation.end());
  }

  std::vector<ScenarioConfig> cells;
  const std::uint64_t channel_root = base.channel_seed.value_or(base.seed);
  for (const auto& c : corr) {
    ChannelSpec channel = base.channel;
    if (c) channel = channel_for_correlation(std::get<MarkovChannel>(base.channel), *c);
    for (double per : axes.per)
      for (double lat : axes.latency_ms)
        for (Scheme scheme : axes.schemes)
          for (std::size_t r = 0; r < axes.repeats; ++r) {
            ScenarioConfig cell = base;
            const std::size_t index = cells.size();
            cell.name = base.name + "#" + std::to_string(index);
            cell.channel = channel;
            cell.corr_target = c ? *c : base.corr_target;
            cell.per = per;
            cell.latency_ms = lat;
            cell.scheme = scheme;
            cell.seed = stream_seed(base.seed, "cell/" + std::to_string(index));
            cell.channel_seed = stream_seed(channel_root, "repeat/" + std::to_string(r));
            cells.push_back(std::move(cell));
          }
  }
  return cells;
}

std::vector<MetricsRecord> run_cells(const std::vector<ScenarioConfig>& cells,
                                     std::size_t workers) {
  for (const auto& c : cells) c.validate();
  std::vector<MetricsRecord> out(cells.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(cells.size(), 1));

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        out[i] = run_scenario(cells[i]).metrics;
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = cells.size();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::vector<MetricsRecord> run_grid(const ScenarioConfig& base, const GridAxes& axes) {
  return run_cells(expand_grid(base, axes), axes.workers);
}

std::string format_csv_row(const MetricsRecord& r) {
  std::string s = quote(r.scenario);
  auto add = [&s](const std::string& v) {
    s += ',';
    s += v;
  };
  add(to_string(r.scheme));
  add(format_double(r.per));
  add(format_double(r.latency_ms));
  add(format_double(r.corr_target));
  add(format_double(r.corr_measured));
  add(format_double(r.p));
  add(format_double(r.q));
  add(format_double(r.T_ms));
  add(std::to_string(r.seed));
  add(format_double(r.throughput_gbps));
  add(format_double(r.latency_5gb_s));
  add(format_double(r.decode_ratio));
  add(std::to_string(r.injected_bytes));
  add(std::to_string(r.delivered_bytes));
  return s;
}

void write_csv(std::ostream& out, const std::vector<MetricsRecord>& records) {
  out << kCsvHeader << '\n';
  for (const auto& r : records) out << format_csv_row(r) << '\n';
}

void write_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_csv(out, records);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<MetricsRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw std::runtime_error("csv header mismatch");
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_row(line);
    if (f.size() != 15)
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected 15 fields");
    try {
      MetricsRecord r;
      r.scenario = f[0];
      r.scheme = parse_scheme(f[1]);
      r.per = parse_double(f[2]);
      r.latency_ms = parse_double(f[3]);
      r.corr_target = parse_double(f[4]);
      r.corr_measured = parse_double(f[5]);
      r.p = parse_double(f[6]);
      r.q = parse_double(f[7]);
      r.T_ms = parse_double(f[8]);
      r.seed = parse_u64(f[9]);
      r.throughput_gbps = parse_double(f[10]);
      r.latency_5gb_s = parse_double(f[11]);
      r.decode_ratio = parse_double(f[12]);
      r.injected_bytes = parse_u64(f[13]);
      r.delivered_bytes = parse_u64(f[14]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<MetricsRecord> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv(in);
}

}  // namespace cotag
