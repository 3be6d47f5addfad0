#pragma once

#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tandemscale/engine.hpp"
#include "tandemscale/power.hpp"

namespace tandemscale {

// Number of busy servers among 2..K.
inline int active_downstream(std::span<const int> counts) {
  int active = 0;
  for (std::size_t k = 1; k < counts.size(); ++k) active += counts[k] > 0 ? 1 : 0;
  return active;
}

// Every busy server runs at P^{-1}((n1 + A + 1) / (A + 1)), so total power is
// one more than the number of jobs in the line. With server 1 empty the
// downstream servers each run at P^{-1}(2).
inline std::vector<double> proposed_speeds(std::span<const int> counts, const PowerFunction& pf) {
  std::vector<double> speeds(counts.size(), 0.0);
  if (counts.empty()) return speeds;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > 1) {
      throw PolicyError("proposed policy invariant broken: server " + std::to_string(k + 1) +
                        " holds " + std::to_string(counts[k]) + " jobs");
    }
  }
  const int n1 = counts[0];
  const int active = active_downstream(counts);
  const double shared = n1 > 0 ? pf.inverse(static_cast<double>(n1 + active + 1) / (active + 1))
                               : pf.inverse(2.0);
  if (n1 > 0) speeds[0] = shared;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > 0) speeds[k] = shared;
  }
  return speeds;
}

// Each server applies the single-server rule P^{-1}(n + 1) to its own queue.
inline std::vector<double> autonomous_speeds(std::span<const int> counts, const PowerFunction& pf) {
  std::vector<double> speeds(counts.size(), 0.0);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] > 0) speeds[k] = pf.inverse(static_cast<double>(counts[k]) + 1.0);
  }
  return speeds;
}

class ProposedPolicy final : public SpeedPolicy {
 public:
  explicit ProposedPolicy(PowerFunction pf) : pf_(std::move(pf)) {}
  std::string_view name() const override { return "proposed"; }
  const PowerFunction& power() const override { return pf_; }
  std::vector<double> speeds(const SystemState& state) const override {
    const auto counts = state.counts();
    return proposed_speeds(counts, pf_);
  }

 private:
  PowerFunction pf_;
};

class AutonomousPolicy final : public SpeedPolicy {
 public:
  explicit AutonomousPolicy(PowerFunction pf) : pf_(std::move(pf)) {}
  std::string_view name() const override { return "autonomous"; }
  const PowerFunction& power() const override { return pf_; }
  std::vector<double> speeds(const SystemState& state) const override {
    const auto counts = state.counts();
    return autonomous_speeds(counts, pf_);
  }

 private:
  PowerFunction pf_;
};

// Server 1 runs P^{-1}(n1 + 1); every later server replays, from the moment a
// job reaches its head, the speed profile that job received on server 1.
class ReplicationPolicy final : public SpeedPolicy {
 public:
  explicit ReplicationPolicy(PowerFunction pf) : pf_(std::move(pf)) {}
  std::string_view name() const override { return "replication"; }
  const PowerFunction& power() const override { return pf_; }

  std::vector<double> speeds(const SystemState& state) const override {
    std::vector<double> out(state.servers.size(), 0.0);
    if (out.empty()) return out;
    const auto& first = state.servers[0];
    if (!first.empty()) out[0] = pf_.inverse(static_cast<double>(first.count()) + 1.0);
    for (std::size_t k = 1; k < state.servers.size(); ++k) {
      if (!state.servers[k].empty()) out[k] = locate(state, k).speed;
    }
    return out;
  }

  double next_speed_change(const SystemState& state) const override {
    double soonest = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < state.servers.size(); ++k) {
      if (!state.servers[k].empty()) soonest = std::min(soonest, locate(state, k).until_change);
    }
    return soonest;
  }

 private:
  struct Position {
    double speed;
    double until_change;
  };

  Position locate(const SystemState& state, std::size_t k) const {
    const auto& server = state.servers[k];
    const auto& profile = state.jobs[server.jobs.front()].service[0];
    if (profile.empty()) {
      throw PolicyError("job " + std::to_string(server.jobs.front()) + " reached server " +
                        std::to_string(k + 1) + " without a recorded server-1 profile");
    }
    const double elapsed = state.clock - server.head_started;
    double boundary = 0.0;
    for (const auto& seg : profile) {
      boundary += seg.duration();
      if (boundary > elapsed + kEventMergeTolerance) return {seg.speed, boundary - elapsed};
    }
    // Past the recorded profile by rounding only: finish at the last speed.
    return {profile.back().speed, std::numeric_limits<double>::infinity()};
  }

  PowerFunction pf_;
};

inline std::unique_ptr<SpeedPolicy> make_policy(std::string_view name, const PowerFunction& pf) {
  if (name == "proposed") return std::make_unique<ProposedPolicy>(pf);
  if (name == "autonomous") return std::make_unique<AutonomousPolicy>(pf);
  if (name == "replication") return std::make_unique<ReplicationPolicy>(pf);
  throw std::invalid_argument("unknown policy '" + std::string(name) +
                              "' (expected proposed, autonomous or replication)");
}

}  // namespace tandemscale
