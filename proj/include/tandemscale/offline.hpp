#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "tandemscale/engine.hpp"
#include "tandemscale/power.hpp"
#include "tandemscale/workload.hpp"

namespace tandemscale {

// Lower bound n K P'(s*): every one of the nK (job, server) pairs costs at
// least the single-job optimum.
inline double closed_form_lb(std::size_t n, int servers, const PowerFunction& pf) {
  if (servers < 0) throw std::invalid_argument("negative server count");
  return static_cast<double>(n) * servers * pf.per_job_opt_cost();
}

// Worst-case ratio certificate 6 + 12 Delta(1) / P'(s*) for the proposed
// policy; 18 for P(s) = s^2.
inline double competitive_bound(const PowerFunction& pf) {
  return 6.0 + 12.0 * pf.delta(1.0) / pf.per_job_opt_cost();
}

struct OptSnapshot {
  int count = 0;
  double head_remaining = 0.0;
  double speed = 0.0;
};

// Single virtual server whose K lockstep copies process every job at once,
// FIFO, each job at one constant speed. Its cost lower-bounds the tandem OPT.
struct OptSchedule {
  int servers = 1;
  PowerFunction power{1.0, 2.0};
  std::vector<double> arrivals;
  std::vector<double> start;
  std::vector<double> finish;
  double cost = 0.0;

  std::size_t size() const { return arrivals.size(); }
  double speed(std::size_t j) const { return 1.0 / (finish[j] - start[j]); }

  // Outstanding count and head job on the virtual server at time t; Before
  // and After give left and right limits at breakpoints.
  OptSnapshot at(double t, Side side = Side::After) const {
    OptSnapshot snap;
    auto arrived = [&](double a) { return side == Side::After ? a <= t : a < t; };
    auto unfinished = [&](double f) { return side == Side::After ? f > t : f >= t; };
    bool head_found = false;
    for (std::size_t j = 0; j < arrivals.size(); ++j) {
      if (!arrived(arrivals[j])) break;
      if (!unfinished(finish[j])) continue;
      ++snap.count;
      if (!head_found) {
        head_found = true;
        const bool in_service = side == Side::After ? start[j] <= t : start[j] < t;
        if (in_service) {
          snap.speed = speed(j);
          snap.head_remaining = std::clamp(1.0 - (t - start[j]) * snap.speed, 0.0, 1.0);
        } else {
          snap.head_remaining = 1.0;
        }
      }
    }
    return snap;
  }

  std::vector<double> breakpoints() const {
    std::vector<double> out;
    out.reserve(3 * arrivals.size());
    out.insert(out.end(), arrivals.begin(), arrivals.end());
    out.insert(out.end(), start.begin(), start.end());
    out.insert(out.end(), finish.begin(), finish.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

// Energy of one copy of a unit job served at constant speed 1/duration;
// infinite when that speed exceeds the cap.
inline double service_energy(const PowerFunction& pf, double duration) {
  const double s = 1.0 / duration;
  if (pf.speed_cap() && s > *pf.speed_cap()) return std::numeric_limits<double>::infinity();
  return duration * pf.eval(s);
}

// sum_j (f_j - a_j) + K sum_j tau_j P(1/tau_j), tau_j = f_j - max(a_j, f_{j-1}).
// Infinite when the finish times are not strictly feasible.
inline double opt_e_objective(std::span<const double> arrivals, std::span<const double> finish,
                              const PowerFunction& pf, int servers) {
  double total = 0.0;
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < arrivals.size(); ++j) {
    const double tau = finish[j] - std::max(arrivals[j], prev);
    if (!(tau > 0.0)) return std::numeric_limits<double>::infinity();
    total += finish[j] - arrivals[j] + servers * service_energy(pf, tau);
    prev = finish[j];
  }
  return total;
}

namespace detail {

struct GoldenResult {
  double x;
  double value;
};

// Minimizes a unimodal function on the open interval (lo, hi) to width
// rel_tol * max(1, |x|).
inline GoldenResult golden_section(const std::function<double(double)>& fn, double lo, double hi,
                                   double rel_tol = 1e-9) {
  constexpr double inv_phi = 0.6180339887498949;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = fn(x1);
  double f2 = fn(x2);
  for (int iter = 0; iter < 400; ++iter) {
    if (hi - lo <= rel_tol * std::max(1.0, std::abs(0.5 * (lo + hi)))) break;
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = fn(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = fn(x2);
    }
  }
  return f1 <= f2 ? GoldenResult{x1, f1} : GoldenResult{x2, f2};
}

}  // namespace detail

struct OptSolverOptions {
  double line_tolerance = 1e-9;
  double sweep_tolerance = 1e-10;
  std::size_t max_sweeps = 200'000;
};

// Minimizes the enhanced-OPT cost over FIFO constant-speed schedules by
// cyclic coordinate descent. Each sweep moves every finish time alone, then
// every service duration alone (which shifts the jobs queued behind it).
inline OptSchedule enhanced_opt(const Trace& trace, const PowerFunction& pf,
                                const OptSolverOptions& options = {}) {
  validate(trace);
  OptSchedule sched;
  sched.servers = trace.servers;
  sched.power = pf;
  sched.arrivals = trace.arrivals;
  const std::size_t n = trace.size();
  if (n == 0) return sched;

  const int K = trace.servers;
  const auto& a = sched.arrivals;
  // Unconstrained single-job duration: 1 / s* of the K-fold power curve.
  double tau_iso = 1.0 / pf.scaled(K).critical_speed();
  // Shortest admissible duration under a speed cap.
  const double tau_min = pf.speed_cap() ? 1.0 / *pf.speed_cap() : 0.0;
  tau_iso = std::max(tau_iso, tau_min);

  std::vector<double> f(n);
  std::vector<double> tau(n, tau_iso);
  auto rebuild = [&](std::size_t from) {
    for (std::size_t j = from; j < n; ++j) {
      const double begin = j == 0 ? a[0] : std::max(a[j], f[j - 1]);
      f[j] = begin + tau[j];
    }
  };
  auto refresh_tau = [&] {
    for (std::size_t j = 0; j < n; ++j) tau[j] = f[j] - (j == 0 ? a[0] : std::max(a[j], f[j - 1]));
  };
  rebuild(0);

  auto job_cost = [&](double flow, double duration) {
    return flow + K * service_energy(pf, duration);
  };
  double current = opt_e_objective(a, f, pf, K);

  for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
    const double before = current;

    // Finish-time coordinates: f_j between its own start and f_{j+1}.
    for (std::size_t j = 0; j < n; ++j) {
      const double lo = j == 0 ? a[0] : std::max(a[j], f[j - 1]);
      double hi = lo + tau_iso;
      if (j + 1 < n) hi = std::min(hi, f[j + 1]);
      if (!(hi > lo + tau_min)) continue;
      auto local = [&](double fj) {
        double v = job_cost(fj - a[j], fj - lo);
        if (j + 1 < n) {
          const double d = f[j + 1] - std::max(a[j + 1], fj);
          if (!(d > 0.0)) return std::numeric_limits<double>::infinity();
          v += K * service_energy(pf, d);
        }
        return v;
      };
      const double here = local(f[j]);
      const auto best = detail::golden_section(local, lo + tau_min, hi, options.line_tolerance);
      if (best.value < here) f[j] = best.x;
    }
    refresh_tau();

    // Duration coordinates: stretch tau_j, pushing later jobs along.
    for (std::size_t j = 0; j < n; ++j) {
      const double saved = tau[j];
      auto total = [&](double t) {
        tau[j] = t;
        rebuild(j);
        return opt_e_objective(a, f, pf, K);
      };
      const double here = total(saved);
      const auto best = detail::golden_section(total, tau_min, tau_iso, options.line_tolerance);
      tau[j] = best.value < here ? best.x : saved;
      rebuild(j);
    }

    current = opt_e_objective(a, f, pf, K);
    if (before - current < options.sweep_tolerance * current) break;
  }

  sched.finish = f;
  sched.start.resize(n);
  for (std::size_t j = 0; j < n; ++j) sched.start[j] = j == 0 ? a[0] : std::max(a[j], f[j - 1]);
  sched.cost = current;
  return sched;
}

struct EmpiricalRatios {
  std::optional<double> vs_opt_e;
  std::optional<double> vs_closed_form;
  double finalbound_slack = 0.0;  // 6 C_OPT-E + 12 Delta(1) n K - C_A
};

// Both denominators lower-bound the true OPT, so both ratios over-estimate
// the instance's competitive ratio.
inline EmpiricalRatios empirical_ratios(const Trace& trace, const PowerFunction& pf,
                                        double alg_cost, const OptSchedule& opt) {
  if (opt.arrivals != trace.arrivals || opt.servers != trace.servers) {
    throw std::invalid_argument("enhanced-OPT schedule was computed for a different trace");
  }
  EmpiricalRatios out;
  const std::size_t n = trace.size();
  const double lb = closed_form_lb(n, trace.servers, pf);
  out.finalbound_slack = 6.0 * opt.cost + 12.0 * pf.delta(1.0) * n * trace.servers - alg_cost;
  if (n == 0) return out;
  if (!(opt.cost > 0.0) || !(lb > 0.0)) throw std::domain_error("zero lower bound on a nonempty trace");
  out.vs_opt_e = alg_cost / opt.cost;
  out.vs_closed_form = alg_cost / lb;
  return out;
}

inline EmpiricalRatios empirical_ratios(const Trace& trace, const PowerFunction& pf, double alg_cost) {
  return empirical_ratios(trace, pf, alg_cost, enhanced_opt(trace, pf));
}

inline nlohmann::json schedule_to_json(const OptSchedule& s) {
  nlohmann::json j;
  j["servers"] = s.servers;
  j["power"] = s.power;
  auto& jobs = j["jobs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i) {
    jobs.push_back({{"arrival", s.arrivals[i]}, {"start", s.start[i]}, {"finish", s.finish[i]},
                    {"speed", s.speed(i)}});
  }
  j["cost"] = s.cost;
  return j;
}

inline void to_json(nlohmann::json& j, const EmpiricalRatios& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = nlohmann::json{{"vs_opt_e", opt(r.vs_opt_e)},
                     {"vs_closed_form", opt(r.vs_closed_form)},
                     {"finalbound_slack", r.finalbound_slack}};
}

}  // namespace tandemscale
