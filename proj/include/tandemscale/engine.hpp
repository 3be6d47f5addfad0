#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tandemscale/power.hpp"
#include "tandemscale/workload.hpp"

namespace tandemscale {

// Events closer than this are processed as one instant.
inline constexpr double kEventMergeTolerance = 1e-12;

class PolicyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpeedSegment {
  double start = 0.0;
  double end = 0.0;
  double speed = 0.0;

  double duration() const { return end - start; }
  double work() const { return speed * (end - start); }
};

struct JobRecord {
  double arrival = 0.0;
  double finish = std::numeric_limits<double>::quiet_NaN();
  // service[k]: speed segments the job received as head of server k.
  std::vector<std::vector<SpeedSegment>> service;
};

// One server's FIFO line. Only the head job can have remaining work below 1.
struct ServerQueue {
  std::deque<std::size_t> jobs;
  double head_remaining = 0.0;
  double head_started = 0.0;  // when the current head entered service here

  int count() const { return static_cast<int>(jobs.size()); }
  bool empty() const { return jobs.empty(); }
};

struct SystemState {
  double clock = 0.0;
  std::vector<ServerQueue> servers;
  std::vector<JobRecord> jobs;

  int num_servers() const { return static_cast<int>(servers.size()); }

  std::vector<int> counts() const {
    std::vector<int> out;
    out.reserve(servers.size());
    for (const auto& s : servers) out.push_back(s.count());
    return out;
  }
};

// Maps the current state to one speed per server. Speeds may depend only on
// the state, which changes only at events; a policy whose speeds also change
// between events reports when through next_speed_change.
class SpeedPolicy {
 public:
  virtual ~SpeedPolicy() = default;
  virtual std::string_view name() const = 0;
  virtual const PowerFunction& power() const = 0;
  virtual std::vector<double> speeds(const SystemState& state) const = 0;
  // Time after state.clock at which speeds change absent queue events.
  virtual double next_speed_change(const SystemState&) const {
    return std::numeric_limits<double>::infinity();
  }
};

enum class EventKind { Arrival, Transfer, Departure, SpeedChange };

inline std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Arrival: return "arrival";
    case EventKind::Transfer: return "transfer";
    case EventKind::Departure: return "departure";
    case EventKind::SpeedChange: return "speed-change";
  }
  return "?";
}

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::Arrival;
  std::size_t job = 0;  // unused for speed changes
  int server = 0;       // 0-based; source server for transfers
  double speed = 0.0;   // new speed, speed changes only
};

// State held constant over [start, end): counts and speeds are fixed, head
// remaining work depletes linearly from its value at `start`.
struct StateSegment {
  double start = 0.0;
  double end = 0.0;
  std::vector<int> counts;
  std::vector<double> head_remaining;
  std::vector<double> speeds;
};

// Instantaneous view of the tandem line.
struct QueueSnapshot {
  std::vector<int> counts;
  std::vector<double> head_remaining;
  std::vector<double> speeds;

  int total() const { return std::accumulate(counts.begin(), counts.end(), 0); }
};

enum class Side { Before, After };

struct CostReport {
  double flow_time = 0.0;
  double energy = 0.0;
  double total = 0.0;
};

struct Trajectory {
  int servers = 1;
  std::string policy;
  PowerFunction power{1.0, 2.0};
  std::vector<JobRecord> jobs;
  std::vector<Event> events;
  std::vector<StateSegment> segments;
  double flow_integral = 0.0;  // integral of n(t) dt
  double energy = 0.0;         // integral of sum_k P(s_k(t)) dt
  bool complete = false;

  std::size_t num_jobs() const { return jobs.size(); }
  double start_time() const { return segments.empty() ? 0.0 : segments.front().start; }
  double end_time() const { return segments.empty() ? 0.0 : segments.back().end; }

  // State at time t. At a segment boundary, Before gives the left limit and
  // After the right limit. Outside the recorded span the line is empty.
  QueueSnapshot at(double t, Side side = Side::After) const {
    QueueSnapshot snap{std::vector<int>(servers, 0), std::vector<double>(servers, 0.0),
                       std::vector<double>(servers, 0.0)};
    if (segments.empty()) return snap;
    // First segment whose end is past t (After) or at/past t (Before).
    auto it = side == Side::After
                  ? std::upper_bound(segments.begin(), segments.end(), t,
                                     [](double v, const StateSegment& s) { return v < s.end; })
                  : std::lower_bound(segments.begin(), segments.end(), t,
                                     [](const StateSegment& s, double v) { return s.end < v; });
    if (it == segments.end()) return snap;
    if (side == Side::After ? t < it->start : t <= it->start) return snap;
    snap.counts = it->counts;
    snap.speeds = it->speeds;
    for (int k = 0; k < servers; ++k) {
      if (it->counts[k] == 0) continue;
      const double q = it->head_remaining[k] - it->speeds[k] * (t - it->start);
      snap.head_remaining[k] = std::clamp(q, 0.0, 1.0);
    }
    return snap;
  }

  // Distinct times at which the state jumps.
  std::vector<double> event_times() const {
    std::vector<double> out;
    for (const auto& e : events) {
      if (out.empty() || e.time != out.back()) out.push_back(e.time);
    }
    return out;
  }
};

struct SimulationOptions {
  std::size_t max_events = 10'000'000;
};

namespace detail {

inline void check_speeds(const SystemState& state, const std::vector<double>& speeds,
                         const PowerFunction& power) {
  if (speeds.size() != state.servers.size()) {
    throw PolicyError("policy returned " + std::to_string(speeds.size()) + " speeds for " +
                      std::to_string(state.servers.size()) + " servers");
  }
  for (std::size_t k = 0; k < speeds.size(); ++k) {
    const double s = speeds[k];
    if (!std::isfinite(s) || s < 0.0) {
      throw PolicyError("policy returned invalid speed on server " + std::to_string(k + 1));
    }
    if (s > 0.0 && state.servers[k].empty()) {
      throw PolicyError("policy assigned positive speed to empty server " + std::to_string(k + 1));
    }
    (void)power.eval(s);  // cap check
  }
}

}  // namespace detail

inline Trajectory simulate(const Trace& trace, const SpeedPolicy& policy,
                           const SimulationOptions& options = {}) {
  validate(trace);
  const int K = trace.servers;
  const std::size_t n = trace.size();
  const PowerFunction& power = policy.power();

  Trajectory traj;
  traj.servers = K;
  traj.policy = std::string(policy.name());
  traj.power = power;

  SystemState state;
  state.servers.resize(K);
  state.jobs.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    state.jobs[j].arrival = trace.arrivals[j];
    state.jobs[j].service.resize(K);
  }
  if (n == 0) {
    traj.complete = true;
    return traj;
  }

  std::size_t next_arrival = 0;
  std::size_t departed = 0;
  std::vector<double> speeds(K, 0.0);
  std::vector<char> completes(K, 0);
  state.clock = trace.arrivals.front();

  auto enter = [&](int k, std::size_t job) {
    auto& server = state.servers[k];
    server.jobs.push_back(job);
    if (server.jobs.size() == 1) {
      server.head_remaining = 1.0;
      server.head_started = state.clock;
    }
  };
  auto leave = [&](int k) {
    auto& server = state.servers[k];
    const std::size_t job = server.jobs.front();
    server.jobs.pop_front();
    server.head_remaining = server.jobs.empty() ? 0.0 : 1.0;
    server.head_started = state.clock;
    return job;
  };

  while (departed < n) {
    if (traj.events.size() > options.max_events) {
      std::ostringstream msg;
      msg << "event limit " << options.max_events << " exceeded at t=" << state.clock
          << " with " << (n - departed) << " jobs outstanding (policy " << policy.name() << ")";
      throw SimulationError(msg.str());
    }

    // Next instant: earliest of arrival, head completion, policy speed change.
    constexpr double inf = std::numeric_limits<double>::infinity();
    double t_next = next_arrival < n ? trace.arrivals[next_arrival] : inf;
    for (int k = 0; k < K; ++k) {
      const auto& server = state.servers[k];
      if (!server.empty() && speeds[k] > 0.0) {
        t_next = std::min(t_next, state.clock + server.head_remaining / speeds[k]);
      }
    }
    t_next = std::min(t_next, state.clock + policy.next_speed_change(state));
    if (!std::isfinite(t_next)) {
      throw SimulationError("simulation stalled: jobs outstanding but no server running at t=" +
                            std::to_string(state.clock));
    }
    t_next = std::max(t_next, state.clock);

    for (int k = 0; k < K; ++k) {
      const auto& server = state.servers[k];
      completes[k] = !server.empty() && speeds[k] > 0.0 &&
                     state.clock + server.head_remaining / speeds[k] <= t_next + kEventMergeTolerance;
    }

    // Advance continuous state over [clock, t_next).
    const double dt = t_next - state.clock;
    if (dt > 0.0) {
      int outstanding = 0;
      double power_sum = 0.0;
      for (int k = 0; k < K; ++k) {
        auto& server = state.servers[k];
        outstanding += server.count();
        if (server.empty()) continue;
        if (speeds[k] > 0.0) {
          power_sum += power.eval(speeds[k]);
          auto& segs = state.jobs[server.jobs.front()].service[k];
          // Extend instead of splitting so a profile only breaks where the speed does.
          if (!segs.empty() && segs.back().end == state.clock && segs.back().speed == speeds[k]) {
            segs.back().end = t_next;
          } else {
            segs.push_back({state.clock, t_next, speeds[k]});
          }
          server.head_remaining = std::max(0.0, server.head_remaining - speeds[k] * dt);
        }
      }
      traj.flow_integral += outstanding * dt;
      traj.energy += power_sum * dt;
      traj.segments.back().end = t_next;
    }
    state.clock = t_next;

    // Completions, downstream first so no job crosses two servers at once.
    for (int k = K - 1; k >= 0; --k) {
      if (!completes[k]) continue;
      const std::size_t job = leave(k);
      if (k == K - 1) {
        state.jobs[job].finish = state.clock;
        traj.events.push_back({state.clock, EventKind::Departure, job, k});
        ++departed;
      } else {
        enter(k + 1, job);
        traj.events.push_back({state.clock, EventKind::Transfer, job, k});
      }
    }
    while (next_arrival < n && trace.arrivals[next_arrival] <= state.clock + kEventMergeTolerance) {
      enter(0, next_arrival);
      traj.events.push_back({state.clock, EventKind::Arrival, next_arrival, 0});
      ++next_arrival;
    }

    std::vector<double> fresh = policy.speeds(state);
    detail::check_speeds(state, fresh, power);
    for (int k = 0; k < K; ++k) {
      if (fresh[k] != speeds[k]) {
        traj.events.push_back({state.clock, EventKind::SpeedChange, 0, k, fresh[k]});
      }
    }
    speeds = std::move(fresh);

    if (departed < n) {
      StateSegment seg;
      seg.start = seg.end = state.clock;
      seg.counts = state.counts();
      seg.speeds = speeds;
      seg.head_remaining.resize(K);
      for (int k = 0; k < K; ++k) seg.head_remaining[k] = state.servers[k].head_remaining;
      // Idle gaps are recorded too so the segments tile the whole run.
      if (!traj.segments.empty() && traj.segments.back().end == traj.segments.back().start) {
        traj.segments.back() = std::move(seg);
      } else {
        traj.segments.push_back(std::move(seg));
      }
    }
  }

  traj.jobs = std::move(state.jobs);
  traj.complete = true;
  return traj;
}

inline CostReport cost(const Trajectory& traj) {
  if (!traj.complete) throw SimulationError("cost of an incomplete trajectory");
  CostReport report;
  for (const auto& job : traj.jobs) {
    if (std::isnan(job.finish)) throw SimulationError("job without finish time");
    report.flow_time += job.finish - job.arrival;
  }
  const double scale = std::max(1.0, std::abs(report.flow_time));
  if (std::abs(report.flow_time - traj.flow_integral) > 1e-9 * scale) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "flow time mismatch: sum of job flows " << report.flow_time << " vs integral "
        << traj.flow_integral;
    throw SimulationError(msg.str());
  }
  report.energy = traj.energy;
  report.total = report.flow_time + report.energy;
  return report;
}

inline void to_json(nlohmann::json& j, const CostReport& c) {
  j = nlohmann::json{{"flow_time", c.flow_time}, {"energy", c.energy}, {"total", c.total}};
}

inline nlohmann::json trajectory_to_json(const Trajectory& traj) {
  nlohmann::json j;
  j["servers"] = traj.servers;
  j["policy"] = traj.policy;
  j["power"] = traj.power;
  auto& jobs = j["jobs"] = nlohmann::json::array();
  for (const auto& job : traj.jobs) jobs.push_back({{"arrival", job.arrival}, {"finish", job.finish}});
  auto& events = j["events"] = nlohmann::json::array();
  for (const auto& e : traj.events) {
    nlohmann::json ev{{"t", e.time}, {"kind", to_string(e.kind)}, {"server", e.server + 1}};
    if (e.kind == EventKind::SpeedChange) {
      ev["speed"] = e.speed;
    } else {
      ev["job"] = e.job;
    }
    events.push_back(std::move(ev));
  }
  auto& segs = j["segments"] = nlohmann::json::array();
  for (const auto& s : traj.segments) {
    segs.push_back({{"start", s.start}, {"end", s.end}, {"counts", s.counts},
                    {"head_remaining", s.head_remaining}, {"speeds", s.speeds}});
  }
  if (traj.complete) j["cost"] = cost(traj);
  return j;
}

}  // namespace tandemscale
