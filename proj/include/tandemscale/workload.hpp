#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace tandemscale {

// Unit-size jobs released at the listed times into server 1 of a K-server
// tandem line.
struct Trace {
  std::vector<double> arrivals;
  int servers = 1;

  std::size_t size() const { return arrivals.size(); }
  bool empty() const { return arrivals.empty(); }
  bool operator==(const Trace&) const = default;
};

class TraceError : public std::runtime_error {
 public:
  TraceError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline void validate(const Trace& trace) {
  if (trace.servers < 1) throw std::invalid_argument("trace needs K >= 1");
  for (std::size_t i = 0; i < trace.arrivals.size(); ++i) {
    const double t = trace.arrivals[i];
    if (!std::isfinite(t) || t < 0.0) {
      throw std::invalid_argument("arrival " + std::to_string(i) + " is not a finite nonnegative time");
    }
    if (i > 0 && t < trace.arrivals[i - 1]) {
      throw std::invalid_argument("arrivals unsorted at index " + std::to_string(i));
    }
  }
}

inline Trace gen_batch(std::size_t n, double t0, int servers) {
  Trace trace{std::vector<double>(n, t0), servers};
  validate(trace);
  return trace;
}

// One job at 0, one at `gap`, then `burst` jobs just after the second.
inline Trace gen_trickle_then_burst(double gap, std::size_t burst, int servers) {
  if (!(gap > 0.0)) throw std::invalid_argument("gap must be positive");
  Trace trace;
  trace.servers = servers;
  trace.arrivals = {0.0, gap};
  trace.arrivals.insert(trace.arrivals.end(), burst, gap + gap * 1e-6);
  validate(trace);
  return trace;
}

namespace detail {

// 53-bit uniform in [0, 1) from the raw engine output; avoids
// implementation-defined distribution algorithms so traces match across
// standard libraries.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double exponential(std::mt19937_64& rng, double rate) {
  return -std::log1p(-uniform01(rng)) / rate;
}

}  // namespace detail

inline Trace gen_poisson(double rate, double horizon, std::uint64_t seed, int servers) {
  if (!(rate > 0.0)) throw std::invalid_argument("rate must be positive");
  if (horizon < 0.0) throw std::invalid_argument("horizon must be nonnegative");
  Trace trace;
  trace.servers = servers;
  std::mt19937_64 rng(seed);
  double t = 0.0;
  while (true) {
    t += detail::exponential(rng, rate);
    if (!(t < horizon)) break;
    trace.arrivals.push_back(t);
  }
  validate(trace);
  return trace;
}

// First `n` arrivals of the same seeded stream gen_poisson draws.
inline Trace gen_poisson_count(double rate, std::size_t n, std::uint64_t seed, int servers) {
  if (!(rate > 0.0)) throw std::invalid_argument("rate must be positive");
  Trace trace;
  trace.servers = servers;
  std::mt19937_64 rng(seed);
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t += detail::exponential(rng, rate);
    trace.arrivals.push_back(t);
  }
  validate(trace);
  return trace;
}

// JSON lines: {"K": int} header, then one {"t": float} per job.
// Extra header keys (a run manifest, say) are ignored by parse_trace.
inline void emit_trace(const Trace& trace, std::ostream& out,
                       const nlohmann::json& header_extra = nlohmann::json::object()) {
  nlohmann::json header = header_extra;
  header["K"] = trace.servers;
  out << header.dump() << '\n';
  for (double t : trace.arrivals) out << nlohmann::json{{"t", t}}.dump() << '\n';
}

inline Trace parse_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw TraceError(lineno, "malformed JSON");
    }
    if (!j.is_object()) throw TraceError(lineno, "expected a JSON object");
    if (!have_header) {
      if (!j.contains("K") || !j.at("K").is_number_integer()) {
        throw TraceError(lineno, "missing K header");
      }
      trace.servers = j.at("K").get<int>();
      if (trace.servers < 1) throw TraceError(lineno, "K must be >= 1");
      have_header = true;
      continue;
    }
    if (!j.contains("t") || !j.at("t").is_number()) throw TraceError(lineno, "missing arrival time \"t\"");
    const double t = j.at("t").get<double>();
    if (!std::isfinite(t) || t < 0.0) throw TraceError(lineno, "arrival time must be finite and nonnegative");
    if (!trace.arrivals.empty() && t < trace.arrivals.back()) throw TraceError(lineno, "unsorted arrivals");
    trace.arrivals.push_back(t);
  }
  if (!have_header) throw TraceError(lineno, "missing K header");
  return trace;
}

inline Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace " + path);
  return parse_trace(in);
}

inline void save_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace " + path);
  emit_trace(trace, out);
}

}  // namespace tandemscale
