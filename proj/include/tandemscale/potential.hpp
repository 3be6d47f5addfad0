#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tandemscale/engine.hpp"
#include "tandemscale/offline.hpp"
#include "tandemscale/policies.hpp"
#include "tandemscale/power.hpp"

namespace tandemscale {

// Memoized prefix sums f_a(i/a) = sum_{j<=i} Delta(j/a).
class StepWeights {
 public:
  explicit StepWeights(const PowerFunction& pf) : pf_(pf) {}

  double f(long i, long a) {
    if (i <= 0) return 0.0;
    auto& prefix = table_[a];
    if (prefix.empty()) prefix.push_back(0.0);
    while (static_cast<long>(prefix.size()) <= i) {
      const long j = static_cast<long>(prefix.size());
      prefix.push_back(prefix.back() + pf_.delta(static_cast<double>(j) / static_cast<double>(a)));
    }
    return prefix[i];
  }

 private:
  const PowerFunction& pf_;
  std::map<long, std::vector<double>> table_;
};

// Jobs on a server with remaining size at least q, for q in (0, 1].
inline int jobs_at_least(int count, double head_remaining, double q) {
  if (count <= 0) return 0;
  return count - 1 + (q <= head_remaining ? 1 : 0);
}

namespace detail {

// Integrates a step function of q over (0, 1] whose steps sit at `cuts`.
template <typename Fn>
double integrate_steps(std::vector<double> cuts, Fn&& value_at) {
  cuts.push_back(0.0);
  cuts.push_back(1.0);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = std::clamp(cuts[i], 0.0, 1.0);
    const double hi = std::clamp(cuts[i + 1], 0.0, 1.0);
    if (hi <= lo) continue;
    total += (hi - lo) * value_at(0.5 * (lo + hi));
  }
  return total;
}

}  // namespace detail

// Server-1 term: c * integral_0^1 f(d1(q)) dq with
// d1(q) = max(0, n1(q) - n_o(q)) / K. Step weights are Delta(j/K), so
// f(m/K) = f_K(m/K).
inline double phi1(const QueueSnapshot& alg, const OptSnapshot& opt, StepWeights& weights, double c) {
  const long K = static_cast<long>(alg.counts.size());
  const int n1 = alg.counts.at(0);
  const double q1 = alg.head_remaining.at(0);
  return c * detail::integrate_steps({q1, opt.head_remaining}, [&](double q) {
    const long excess = jobs_at_least(n1, q1, q) - jobs_at_least(opt.count, opt.head_remaining, q);
    return weights.f(std::max(0L, excess), K);
  });
}

inline double phi1(const QueueSnapshot& alg, const OptSnapshot& opt, const PowerFunction& pf, double c) {
  StepWeights weights(pf);
  return phi1(alg, opt, weights, c);
}

// Server-j term (j >= 2, one-based): c_j * integral_0^1 f_{A+1}(d_j(q) / (A+1)) dq
// with d_j(q) = sum_{k=2}^{j-1} n^k + n^j(q). No OPT contribution.
inline double phi_alg(const QueueSnapshot& alg, StepWeights& weights, double c_j, int j) {
  const int K = static_cast<int>(alg.counts.size());
  if (j < 2 || j > K) throw std::out_of_range("phi_alg: server index outside 2..K");
  const long a = active_downstream(alg.counts) + 1;
  long upstream = 0;
  for (int k = 2; k < j; ++k) upstream += alg.counts[k - 1];
  const int nj = alg.counts[j - 1];
  const double qj = alg.head_remaining[j - 1];
  return c_j * detail::integrate_steps({qj}, [&](double q) {
    return weights.f(upstream + jobs_at_least(nj, qj, q), a);
  });
}

inline double phi_alg(const QueueSnapshot& alg, const PowerFunction& pf, double c_j, int j) {
  StepWeights weights(pf);
  return phi_alg(alg, weights, c_j, j);
}

// r_i for each busy server i >= 2 (one-based position among busy servers),
// zero for idle ones. Index k holds server k + 1.
inline std::vector<int> active_ranks(const std::vector<int>& counts) {
  std::vector<int> ranks(counts.size(), 0);
  int rank = 0;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > 0) ranks[k] = ++rank;
  }
  return ranks;
}

struct PotentialSnapshot {
  double time = 0.0;
  double phi1 = 0.0;
  std::vector<double> phi_alg;  // servers 2..K
  double total = 0.0;           // K * phi1 + sum phi_alg
  int active = 0;
  std::vector<int> ranks;
};

// Phi = sum_j Phi_j with Phi_1 = phi1 and Phi_j = phi1 + phi_alg_j for j >= 2.
inline PotentialSnapshot potential(const QueueSnapshot& alg, const OptSnapshot& opt,
                                   StepWeights& weights, double c, double time = 0.0) {
  PotentialSnapshot snap;
  snap.time = time;
  const int K = static_cast<int>(alg.counts.size());
  snap.phi1 = phi1(alg, opt, weights, c);
  snap.total = K * snap.phi1;
  for (int j = 2; j <= K; ++j) {
    snap.phi_alg.push_back(phi_alg(alg, weights, c, j));
    snap.total += snap.phi_alg.back();
  }
  snap.active = active_downstream(alg.counts);
  snap.ranks = active_ranks(alg.counts);
  return snap;
}

struct Violation {
  double time = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct CheckResult {
  std::string name;
  bool pass = true;
  double worst_margin = std::numeric_limits<double>::infinity();  // rhs - lhs, before slack
  std::size_t samples = 0;
  std::vector<Violation> violations;

  void record(double time, double lhs, double rhs, double slack) {
    ++samples;
    const double margin = rhs - lhs;
    worst_margin = std::min(worst_margin, margin);
    if (margin + slack < 0.0) {
      pass = false;
      violations.push_back({time, lhs, rhs});
    }
  }
};

struct AuditReport {
  std::vector<CheckResult> checks;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
  }
  std::size_t violation_count() const {
    std::size_t total = 0;
    for (const auto& c : checks) total += c.violations.size();
    return total;
  }
  const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

namespace detail {

inline void require_comparable(const Trajectory& alg, const OptSchedule& opt) {
  if (!alg.complete) throw std::invalid_argument("algorithm trajectory does not end empty");
  if (alg.servers != opt.servers) throw std::invalid_argument("trajectories disagree on K");
  if (alg.jobs.size() != opt.arrivals.size()) throw std::invalid_argument("trajectories disagree on n");
  for (std::size_t j = 0; j < alg.jobs.size(); ++j) {
    if (alg.jobs[j].arrival != opt.arrivals[j]) throw std::invalid_argument("trajectories disagree on arrivals");
    if (!std::isfinite(opt.finish[j])) throw std::invalid_argument("OPT schedule does not end empty");
  }
}

// Sorted union of breakpoints of both trajectories.
inline std::vector<double> merged_breakpoints(const Trajectory& alg, const OptSchedule& opt) {
  std::vector<double> times = alg.event_times();
  for (const auto& s : alg.segments) {
    times.push_back(s.start);
    times.push_back(s.end);
  }
  const auto opt_times = opt.breakpoints();
  times.insert(times.end(), opt_times.begin(), opt_times.end());
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  return times;
}

inline double instantaneous_power(const QueueSnapshot& alg, const PowerFunction& pf) {
  double total = 0.0;
  for (double s : alg.speeds) {
    if (s > 0.0) total += pf.eval(s);
  }
  return total;
}

}  // namespace detail

struct DriftSample {
  double time = 0.0;
  QueueSnapshot alg;
  OptSnapshot opt;
  double dphi1 = 0.0;
  std::vector<double> dphi_alg;  // servers 2..K
  double dphi = 0.0;
  double lhs = 0.0;  // n + sum P(s_k) + dPhi/dt
  double rhs = 0.0;  // c (n_o + K P(s_o))
};

// Central difference of Phi at t with step h; t +/- h must not cross an event.
inline DriftSample drift_at(const Trajectory& alg, const OptSchedule& opt, StepWeights& weights,
                            const PowerFunction& pf, double c, double t, double h) {
  DriftSample out;
  out.time = t;
  out.alg = alg.at(t);
  out.opt = opt.at(t);
  const auto lo = potential(alg.at(t - h), opt.at(t - h), weights, c);
  const auto hi = potential(alg.at(t + h), opt.at(t + h), weights, c);
  out.dphi1 = (hi.phi1 - lo.phi1) / (2.0 * h);
  for (std::size_t j = 0; j < lo.phi_alg.size(); ++j) {
    out.dphi_alg.push_back((hi.phi_alg[j] - lo.phi_alg[j]) / (2.0 * h));
  }
  out.dphi = (hi.total - lo.total) / (2.0 * h);
  const double p_opt = out.opt.speed > 0.0 ? pf.eval(out.opt.speed) : 0.0;
  out.lhs = out.alg.total() + detail::instantaneous_power(out.alg, pf) + out.dphi;
  out.rhs = c * (out.opt.count + alg.servers * p_opt);
  return out;
}

// Samples shorter than this are skipped: a central difference inside them is
// dominated by rounding.
inline constexpr double kMinDriftInterval = 1e-9;

// Running condition n + sum P(s_k) + dPhi/dt <= c (n_o + sum P(s_o)) at the
// midpoint of every event-free interval.
inline CheckResult audit_drift(const Trajectory& alg, const OptSchedule& opt, const PowerFunction& pf,
                               double c) {
  detail::require_comparable(alg, opt);
  CheckResult check;
  check.name = "drift";
  StepWeights weights(pf);
  const auto times = detail::merged_breakpoints(alg, opt);
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    const double len = times[i + 1] - times[i];
    if (len < kMinDriftInterval * std::max(1.0, std::abs(times[i]))) continue;
    const double mid = 0.5 * (times[i] + times[i + 1]);
    const auto s = drift_at(alg, opt, weights, pf, c, mid, 1e-3 * len);
    check.record(mid, s.lhs, s.rhs, 1e-6 * (1.0 + std::abs(s.rhs)));
  }
  return check;
}

struct JumpReport {
  double positive_total = 0.0;
  double budget = 0.0;  // 2 c n K Delta(1)
  double largest = 0.0;
  std::size_t discontinuities = 0;
  CheckResult total_check;     // sum of positive jumps within budget
  CheckResult arrival_check;   // pure arrival instants leave Phi unchanged
  CheckResult single_check;    // each instant's jump <= c K Delta(1)
  CheckResult boundary_check;  // Phi = 0 before the first and after the last event
};

inline JumpReport audit_jumps(const Trajectory& alg, const OptSchedule& opt, const PowerFunction& pf,
                              double c) {
  detail::require_comparable(alg, opt);
  JumpReport report;
  report.total_check.name = "jump_budget";
  report.arrival_check.name = "arrival_jump";
  report.single_check.name = "single_jump";
  report.boundary_check.name = "boundary";
  StepWeights weights(pf);
  const int K = alg.servers;
  const double delta1 = pf.delta(1.0);
  report.budget = 2.0 * c * static_cast<double>(alg.num_jobs()) * K * delta1;

  // Instants whose only algorithm events are arrivals (speed changes aside).
  std::map<double, bool> arrival_only;
  for (const auto& e : alg.events) {
    if (e.kind == EventKind::SpeedChange) continue;
    auto [it, inserted] = arrival_only.emplace(e.time, true);
    if (e.kind != EventKind::Arrival) it->second = false;
  }

  const auto times = detail::merged_breakpoints(alg, opt);
  for (double t : times) {
    const auto before = potential(alg.at(t, Side::Before), opt.at(t, Side::Before), weights, c);
    const auto after = potential(alg.at(t, Side::After), opt.at(t, Side::After), weights, c);
    const double jump = after.total - before.total;
    const double tol = 1e-9 * (1.0 + std::abs(before.total));
    if (std::abs(jump) > tol) ++report.discontinuities;
    if (jump > 0.0) report.positive_total += jump;
    report.largest = std::max(report.largest, jump);
    report.single_check.record(t, jump, c * delta1 * K, tol);
    auto it = arrival_only.find(t);
    if (it != arrival_only.end() && it->second) report.arrival_check.record(t, std::abs(jump), 0.0, tol);
  }
  report.total_check.record(times.empty() ? 0.0 : times.back(), report.positive_total, report.budget, 1e-9);

  if (!times.empty()) {
    const auto first = potential(alg.at(times.front(), Side::Before), opt.at(times.front(), Side::Before),
                                 weights, c);
    const auto last = potential(alg.at(times.back(), Side::After), opt.at(times.back(), Side::After),
                                weights, c);
    report.boundary_check.record(times.front(), std::abs(first.total), 0.0, 1e-9);
    report.boundary_check.record(times.back(), std::abs(last.total), 0.0, 1e-9);
  }
  return report;
}

// C_A <= 6 C_OPT-E + 12 Delta(1) n K.
inline CheckResult audit_integrated(const Trajectory& alg, const OptSchedule& opt, const PowerFunction& pf) {
  detail::require_comparable(alg, opt);
  CheckResult check;
  check.name = "integrated";
  const double lhs = cost(alg).total;
  const double rhs = 6.0 * opt.cost + 12.0 * pf.delta(1.0) * static_cast<double>(alg.num_jobs()) * alg.servers;
  check.record(alg.end_time(), lhs, rhs, 1e-6 * std::max(1.0, std::abs(rhs)));
  return check;
}

inline AuditReport audit_all(const Trajectory& alg, const OptSchedule& opt, const PowerFunction& pf, double c) {
  AuditReport report;
  report.checks.push_back(audit_drift(alg, opt, pf, c));
  auto jumps = audit_jumps(alg, opt, pf, c);
  report.checks.push_back(std::move(jumps.total_check));
  report.checks.push_back(std::move(jumps.arrival_check));
  report.checks.push_back(std::move(jumps.single_check));
  report.checks.push_back(std::move(jumps.boundary_check));
  report.checks.push_back(audit_integrated(alg, opt, pf));
  return report;
}

inline void to_json(nlohmann::json& j, const Violation& v) {
  j = nlohmann::json{{"time", v.time}, {"lhs", v.lhs}, {"rhs", v.rhs}};
}

inline void to_json(nlohmann::json& j, const CheckResult& c) {
  j = nlohmann::json{{"name", c.name}, {"pass", c.pass}, {"samples", c.samples}, {"violations", c.violations}};
  j["worst_margin"] = std::isfinite(c.worst_margin) ? nlohmann::json(c.worst_margin) : nlohmann::json(nullptr);
}

inline void to_json(nlohmann::json& j, const AuditReport& r) {
  j = nlohmann::json{{"pass", r.pass()}, {"violations", r.violation_count()}, {"checks", r.checks}};
}

}  // namespace tandemscale
