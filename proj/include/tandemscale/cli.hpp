#pragma once

// Command-line front end. Needs OpenSSL (libcrypto) for input digests.

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tandemscale/engine.hpp"
#include "tandemscale/offline.hpp"
#include "tandemscale/policies.hpp"
#include "tandemscale/potential.hpp"
#include "tandemscale/power.hpp"
#include "tandemscale/stochastic.hpp"
#include "tandemscale/workload.hpp"

namespace tandemscale {

inline constexpr const char* kToolName = "tandemscale";
inline constexpr const char* kToolVersion = "0.1.0";

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Everything needed to rerun a command. No timestamps or hostnames, so the
// same command reproduces the same bytes.
struct RunManifest {
  std::string subcommand;
  nlohmann::json params = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> input_digests;

  nlohmann::json to_json() const {
    nlohmann::json j{{"tool", kToolName}, {"version", kToolVersion}, {"subcommand", subcommand},
                     {"params", params}, {"inputs", input_digests}};
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    return j;
  }
};

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Shortest decimal that round-trips.
inline std::string fmt(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

// "c,alpha" or "c,alpha,cap".
inline PowerFunction parse_power(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad --power '" + text + "' (expected c,alpha[,cap])");
    }
  }
  if (parts.size() != 2 && parts.size() != 3) throw UsageError("bad --power '" + text + "' (expected c,alpha[,cap])");
  std::optional<double> cap;
  if (parts.size() == 3) cap = parts[2];
  return PowerFunction(parts[0], parts[1], cap);
}

// "1..50", "1,2,4,8", "1..4,8" or "" (empty).
inline std::vector<long> parse_int_list(const std::string& text) {
  std::vector<long> out;
  std::stringstream ss(text);
  std::string item;
  auto to_long = [&](const std::string& s) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw UsageError("bad integer list '" + text + "'");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(to_long(item));
    } else {
      const long lo = to_long(item.substr(0, dots));
      const long hi = to_long(item.substr(dots + 2));
      for (long v = lo; v <= hi; ++v) out.push_back(v);
    }
  }
  return out;
}

inline std::vector<std::string> parse_word_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline Trace make_pattern(const std::string& pattern, std::size_t n, int servers, double gap, double rate,
                          std::uint64_t seed) {
  if (pattern == "batch") return gen_batch(n, 0.0, servers);
  if (pattern == "trickle") {
    Trace t = gen_trickle_then_burst(gap, n > 2 ? n - 2 : 0, servers);
    t.arrivals.resize(n);
    return t;
  }
  if (pattern == "poisson") return gen_poisson_count(rate, n, seed, servers);
  throw UsageError("unknown pattern '" + pattern + "' (expected batch, trickle or poisson)");
}

inline unsigned sweep_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TANDEMSCALE_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

struct SweepRow {
  long n = 0;
  long servers = 0;
  std::string pattern;
  std::string policy;
  CostReport cost;
  double opt_e = 0.0;
  double closed_form = 0.0;
  EmpiricalRatios ratios;
  std::optional<std::size_t> violations;
};

namespace cli_detail {

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw UsageError("cannot write " + path);
    }
  }
  std::ostream& stream(std::ostream& fallback) { return file_.is_open() ? file_ : fallback; }

 private:
  std::ofstream file_;
};

inline void write_manifest_comment(std::ostream& os, const RunManifest& m) {
  os << "# manifest " << m.to_json().dump() << '\n';
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speed scaling for tandem servers: simulation, audits and bounds", kToolName};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // gen-trace
  auto* gen = app.add_subcommand("gen-trace", "Write a synthetic arrival trace (JSON lines)");
  std::string gen_pattern;
  std::size_t gen_n = 1;
  int gen_k = 0;
  double gen_t0 = 0.0, gen_gap = 1.0, gen_rate = 1.0;
  std::optional<double> gen_horizon;
  std::size_t gen_burst = 8;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("pattern", gen_pattern, "batch, trickle or poisson")
      ->required()
      ->check(CLI::IsMember({"batch", "trickle", "poisson"}));
  gen->add_option("--n", gen_n, "job count (batch; poisson without --horizon)");
  gen->add_option("--k", gen_k, "number of tandem servers")->required()->check(CLI::PositiveNumber);
  gen->add_option("--t0", gen_t0, "batch release time");
  gen->add_option("--gap", gen_gap, "trickle: time of the second job");
  gen->add_option("--burst", gen_burst, "trickle: jobs in the burst");
  gen->add_option("--rate", gen_rate, "poisson: arrival rate");
  gen->add_option("--horizon", gen_horizon, "poisson: keep arrivals before this time");
  gen->add_option("--seed", gen_seed, "poisson: RNG seed");
  gen->add_option("-o,--output", gen_out, "output path (default stdout)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run one policy on a trace");
  std::string sim_trace, sim_policy = "proposed", sim_power = "1,2", sim_out, sim_traj;
  sim->add_option("trace", sim_trace, "trace file")->required();
  sim->add_option("--policy", sim_policy, "proposed, autonomous or replication");
  sim->add_option("--power", sim_power, "c,alpha[,cap]");
  sim->add_option("-o,--output", sim_out, "cost CSV path (default stdout)");
  sim->add_option("--trajectory", sim_traj, "write the full trajectory JSON here");

  // audit
  auto* aud = app.add_subcommand("audit", "Simulate the proposed policy and audit the potential argument");
  std::string aud_trace, aud_power = "1,2", aud_out;
  double aud_c = 6.0;
  aud->add_option("trace", aud_trace, "trace file")->required();
  aud->add_option("--c", aud_c, "potential constant");
  aud->add_option("--power", aud_power, "c,alpha[,cap]");
  aud->add_option("-o,--output", aud_out, "report path (default stdout)");

  // optbound
  auto* opt = app.add_subcommand("optbound", "Enhanced-OPT schedule and closed-form lower bound");
  std::string opt_trace, opt_power = "1,2", opt_out;
  opt->add_option("trace", opt_trace, "trace file")->required();
  opt->add_option("--power", opt_power, "c,alpha[,cap]");
  opt->add_option("-o,--output", opt_out, "report path (default stdout)");

  // stochastic
  auto* sto = app.add_subcommand("stochastic", "Layered network: closed forms and Monte-Carlo estimate");
  std::string sto_config, sto_format = "json", sto_out;
  double sto_horizon = 1e5;
  std::optional<double> sto_warmup;
  std::uint64_t sto_seed = 1;
  sto->add_option("config", sto_config, "network config JSON")->required();
  sto->add_option("--horizon", sto_horizon, "simulated time");
  sto->add_option("--warmup", sto_warmup, "discarded prefix (default 10% of horizon)");
  sto->add_option("--seed", sto_seed, "RNG seed");
  sto->add_option("--format", sto_format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  sto->add_option("-o,--output", sto_out, "report path (default stdout)");

  // sweep
  auto* swp = app.add_subcommand("sweep", "Empirical ratios over a grid of instances (CSV)");
  std::string swp_n = "1..10", swp_k = "1,2,4,8", swp_patterns = "batch", swp_policies = "proposed",
              swp_power = "1,2", swp_out;
  double swp_gap = 1.0, swp_rate = 1.0, swp_c = 6.0;
  std::uint64_t swp_seed = 1;
  bool swp_audit = false;
  swp->add_option("--n", swp_n, "job counts, e.g. 1..50 or 1,2,4");
  swp->add_option("--k", swp_k, "server counts, e.g. 1,2,4,8");
  swp->add_option("--patterns", swp_patterns, "comma list of batch, trickle, poisson");
  swp->add_option("--policies", swp_policies, "comma list of proposed, autonomous, replication");
  swp->add_option("--power", swp_power, "c,alpha[,cap]");
  swp->add_option("--gap", swp_gap, "trickle gap");
  swp->add_option("--rate", swp_rate, "poisson rate");
  swp->add_option("--seed", swp_seed, "poisson seed");
  swp->add_flag("--audit", swp_audit, "also run the potential audit on proposed rows");
  swp->add_option("--c", swp_c, "potential constant for --audit");
  swp->add_option("-o,--output", swp_out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  auto input = [](RunManifest& m, const std::string& path) {
    const std::string bytes = read_file(path);
    m.input_digests[path] = sha256_hex(bytes);
    return bytes;
  };
  auto load = [&](RunManifest& m, const std::string& path) {
    std::istringstream in(input(m, path));
    try {
      return parse_trace(in);
    } catch (const TraceError& e) {
      throw UsageError(path + ": " + e.what());
    }
  };

  try {
    if (*gen) {
      RunManifest m{"gen-trace"};
      m.params = {{"pattern", gen_pattern}, {"k", gen_k}};
      Trace trace;
      if (gen_pattern == "batch") {
        m.params["n"] = gen_n;
        m.params["t0"] = gen_t0;
        trace = gen_batch(gen_n, gen_t0, gen_k);
      } else if (gen_pattern == "trickle") {
        m.params["gap"] = gen_gap;
        m.params["burst"] = gen_burst;
        trace = gen_trickle_then_burst(gen_gap, gen_burst, gen_k);
      } else {
        m.params["rate"] = gen_rate;
        m.seed = gen_seed;
        if (gen_horizon) {
          m.params["horizon"] = *gen_horizon;
          trace = gen_poisson(gen_rate, *gen_horizon, gen_seed, gen_k);
        } else {
          m.params["n"] = gen_n;
          trace = gen_poisson_count(gen_rate, gen_n, gen_seed, gen_k);
        }
      }
      cli_detail::Output o(gen_out);
      emit_trace(trace, o.stream(out), {{"manifest", m.to_json()}});
      return 0;
    }

    if (*sim) {
      RunManifest m{"simulate"};
      const Trace trace = load(m, sim_trace);
      const PowerFunction pf = parse_power(sim_power);
      const auto policy = make_policy(sim_policy, pf);
      m.params = {{"trace", sim_trace}, {"policy", sim_policy}, {"power", pf}};
      const Trajectory traj = simulate(trace, *policy);
      const CostReport c = cost(traj);
      cli_detail::Output o(sim_out);
      auto& os = o.stream(out);
      cli_detail::write_manifest_comment(os, m);
      os << "policy,n,K,flow_time,energy,total\n"
         << sim_policy << ',' << trace.size() << ',' << trace.servers << ',' << fmt(c.flow_time) << ','
         << fmt(c.energy) << ',' << fmt(c.total) << '\n';
      if (!sim_traj.empty()) {
        std::ofstream tj(sim_traj);
        if (!tj) throw UsageError("cannot write " + sim_traj);
        nlohmann::json j = trajectory_to_json(traj);
        j["manifest"] = m.to_json();
        tj << j.dump(2) << '\n';
      }
      return 0;
    }

    if (*aud) {
      RunManifest m{"audit"};
      const Trace trace = load(m, aud_trace);
      const PowerFunction pf = parse_power(aud_power);
      m.params = {{"trace", aud_trace}, {"c", aud_c}, {"power", pf}};
      const Trajectory traj = simulate(trace, ProposedPolicy(pf));
      const OptSchedule sched = enhanced_opt(trace, pf);
      const AuditReport report = audit_all(traj, sched, pf, aud_c);
      const CostReport c = cost(traj);
      nlohmann::json j{{"manifest", m.to_json()},
                       {"n", trace.size()},
                       {"K", trace.servers},
                       {"cost", c},
                       {"opt_e_cost", sched.cost},
                       {"closed_form_lb", closed_form_lb(trace.size(), trace.servers, pf)},
                       {"ratios", empirical_ratios(trace, pf, c.total, sched)},
                       {"audit", report}};
      cli_detail::Output o(aud_out);
      o.stream(out) << j.dump(2) << '\n';
      return report.pass() ? 0 : 1;
    }

    if (*opt) {
      RunManifest m{"optbound"};
      const Trace trace = load(m, opt_trace);
      const PowerFunction pf = parse_power(opt_power);
      m.params = {{"trace", opt_trace}, {"power", pf}};
      const OptSchedule sched = enhanced_opt(trace, pf);
      nlohmann::json j{{"manifest", m.to_json()},
                       {"opt_e_cost", sched.cost},
                       {"closed_form_lb", closed_form_lb(trace.size(), trace.servers, pf)},
                       {"competitive_bound", competitive_bound(pf)},
                       {"schedule", schedule_to_json(sched)}};
      cli_detail::Output o(opt_out);
      o.stream(out) << j.dump(2) << '\n';
      return 0;
    }

    if (*sto) {
      RunManifest m{"stochastic"};
      nlohmann::json cfg_json;
      try {
        cfg_json = nlohmann::json::parse(input(m, sto_config));
      } catch (const nlohmann::json::parse_error&) {
        throw ConfigError(sto_config + ": malformed JSON");
      }
      const NetworkConfig cfg = network_from_json(cfg_json);
      const double warmup = sto_warmup.value_or(0.1 * sto_horizon);
      m.params = {{"config", sto_config}, {"horizon", sto_horizon}, {"warmup", warmup}, {"format", sto_format}};
      m.seed = sto_seed;
      const StochasticReport report = simulate_network(cfg, sto_horizon, warmup, sto_seed);
      cli_detail::Output o(sto_out);
      auto& os = o.stream(out);
      if (sto_format == "csv") {
        cli_detail::write_manifest_comment(os, m);
        write_csv(report, os);
      } else {
        nlohmann::json j = report;
        j["manifest"] = m.to_json();
        os << j.dump(2) << '\n';
      }
      return 0;
    }

    if (*swp) {
      RunManifest m{"sweep"};
      const PowerFunction pf = parse_power(swp_power);
      const auto ns = parse_int_list(swp_n);
      const auto ks = parse_int_list(swp_k);
      const auto patterns = parse_word_list(swp_patterns);
      const auto policies = parse_word_list(swp_policies);
      for (long n : ns) {
        if (n < 0) throw UsageError("job counts must be nonnegative");
      }
      for (long k : ks) {
        if (k < 1) throw UsageError("server counts must be >= 1");
      }
      for (const auto& p : policies) make_policy(p, pf);
      for (const auto& p : patterns) make_pattern(p, 0, 1, swp_gap, swp_rate, swp_seed);
      m.params = {{"n", swp_n},       {"k", swp_k},       {"patterns", swp_patterns},
                  {"policies", swp_policies}, {"power", pf}, {"gap", swp_gap},
                  {"rate", swp_rate}, {"audit", swp_audit}, {"c", swp_c}};
      m.seed = swp_seed;

      struct Instance {
        long n, k;
        std::string pattern;
      };
      std::vector<Instance> grid;
      for (long n : ns) {
        for (long k : ks) {
          for (const auto& p : patterns) grid.push_back({n, k, p});
        }
      }
      std::vector<std::vector<SweepRow>> rows(grid.size());
      std::vector<std::string> failures(grid.size());
      std::atomic<std::size_t> next{0};
      auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
          const auto& inst = grid[i];
          try {
            const Trace trace = make_pattern(inst.pattern, static_cast<std::size_t>(inst.n),
                                             static_cast<int>(inst.k), swp_gap, swp_rate, swp_seed);
            const OptSchedule sched = enhanced_opt(trace, pf);
            for (const auto& name : policies) {
              SweepRow row{inst.n, inst.k, inst.pattern, name};
              const Trajectory traj = simulate(trace, *make_policy(name, pf));
              row.cost = cost(traj);
              row.opt_e = sched.cost;
              row.closed_form = closed_form_lb(trace.size(), trace.servers, pf);
              row.ratios = empirical_ratios(trace, pf, row.cost.total, sched);
              if (swp_audit && name == "proposed") {
                row.violations = audit_all(traj, sched, pf, swp_c).violation_count();
              }
              rows[i].push_back(std::move(row));
            }
          } catch (const std::exception& e) {
            failures[i] = e.what();
          }
        }
      };
      const unsigned nthreads = std::min<std::size_t>(sweep_threads(), std::max<std::size_t>(grid.size(), 1));
      std::vector<std::thread> pool;
      for (unsigned t = 1; t < nthreads; ++t) pool.emplace_back(worker);
      worker();
      for (auto& t : pool) t.join();
      for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!failures[i].empty()) {
          throw std::runtime_error("instance n=" + std::to_string(grid[i].n) + " K=" + std::to_string(grid[i].k) +
                                   " " + grid[i].pattern + ": " + failures[i]);
        }
      }

      cli_detail::Output o(swp_out);
      auto& os = o.stream(out);
      cli_detail::write_manifest_comment(os, m);
      os << "n,K,pattern,policy,flow_time,energy,total,opt_e,closed_form_lb,ratio_opt_e,"
            "ratio_closed_form,finalbound_slack,audit_violations\n";
      bool ok = true;
      for (const auto& group : rows) {
        for (const auto& r : group) {
          os << r.n << ',' << r.servers << ',' << r.pattern << ',' << r.policy << ',' << fmt(r.cost.flow_time) << ','
             << fmt(r.cost.energy) << ',' << fmt(r.cost.total) << ',' << fmt(r.opt_e) << ','
             << fmt(r.closed_form) << ',' << fmt(r.ratios.vs_opt_e) << ',' << fmt(r.ratios.vs_closed_form) << ','
             << fmt(r.ratios.finalbound_slack) << ',' << (r.violations ? std::to_string(*r.violations) : "")
             << '\n';
          // The bound is only claimed for the proposed policy.
          if (r.policy == "proposed") {
            const double scale = 1.0 + std::abs(r.cost.total);
            if (r.ratios.finalbound_slack < -1e-9 * scale) ok = false;
            if (r.violations && *r.violations > 0) ok = false;
          }
        }
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace tandemscale
