#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tandemscale/workload.hpp"

namespace tandemscale {

struct Layer {
  int m = 1;          // parallel servers
  double mu = 1.0;    // service rate, 1 / mean size
  double c = 1.0;     // power coefficient
  double alpha = 2.0; // power exponent
};

struct NetworkConfig {
  double lambda = 1.0;
  std::vector<Layer> layers;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate(const NetworkConfig& cfg) {
  if (!(cfg.lambda > 0.0) || !std::isfinite(cfg.lambda)) throw ConfigError("lambda must be positive");
  if (cfg.layers.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    const std::string where = "layer " + std::to_string(i + 1) + ": ";
    if (l.m < 1) throw ConfigError(where + "m must be >= 1");
    if (!(l.mu > 0.0)) throw ConfigError(where + "mu must be positive");
    if (!(l.c > 0.0)) throw ConfigError(where + "c must be positive");
    if (!(l.alpha > 1.0)) throw ConfigError(where + "alpha must exceed 1");
  }
}

inline double offered_load(double lambda, const Layer& l) { return lambda / l.mu; }

// Static speed while busy, zero while idle.
inline double gated_speed(double lambda, const Layer& l) {
  return 1.0 + offered_load(lambda, l) / l.m;
}

// lambda * C_i^A = rho + c rho (1 + rho/m)^(alpha - 1).
inline double layer_cost_closed_form(double lambda, const Layer& l) {
  const double rho = offered_load(lambda, l);
  return rho + l.c * rho * std::pow(1.0 + rho / l.m, l.alpha - 1.0);
}

// Energy-only bound: c rho^alpha / m^(alpha - 1).
inline double lb1(double lambda, const Layer& l) {
  const double rho = offered_load(lambda, l);
  return l.c * std::pow(rho, l.alpha) / std::pow(static_cast<double>(l.m), l.alpha - 1.0);
}

// Isolated-job bound: c^(1/alpha) rho alpha (alpha - 1)^(1/alpha - 1).
inline double lb2(double lambda, const Layer& l) {
  const double rho = offered_load(lambda, l);
  return std::pow(l.c, 1.0 / l.alpha) * rho * l.alpha * std::pow(l.alpha - 1.0, 1.0 / l.alpha - 1.0);
}

// Per-layer competitive ratio bound; depends on (c, alpha) only.
inline double ratio_certificate(const Layer& l) {
  const double denom =
      std::min(std::pow(l.c, 1.0 / l.alpha) * l.alpha * std::pow(l.alpha - 1.0, 1.0 / l.alpha - 1.0), l.c);
  return (1.0 + l.c * std::pow(2.0, l.alpha - 1.0)) / denom;
}

inline double network_certificate(const NetworkConfig& cfg) {
  double worst = 0.0;
  for (const auto& l : cfg.layers) worst = std::max(worst, ratio_certificate(l));
  return worst;
}

struct LayerReport {
  double speed = 0.0;
  double closed_form = 0.0;  // lambda * C_i^A
  double lb1 = 0.0;
  double lb2 = 0.0;
  double certificate = 0.0;
  double mean_response = 0.0;
  double response_half_width = 0.0;  // 95% batch-means half width
  double response_std_error = 0.0;
  double mean_energy = 0.0;          // per job
  double energy_half_width = 0.0;
  double simulated_cost = 0.0;       // lambda * (E[T] + E[E])
  double mm1_response = 0.0;         // 1 / (mu s - lambda/m)
  double jensen_lhs = 0.0;           // sum_j P(E[S_j])
  double jensen_rhs = 0.0;           // sum_j E[P(S_j)]
  std::size_t jobs = 0;
};

struct StochasticReport {
  double lambda = 0.0;
  double horizon = 0.0;
  double warmup = 0.0;
  std::uint64_t seed = 0;
  std::vector<LayerReport> layers;
  double closed_form_total = 0.0;
  double simulated_total = 0.0;
  double certificate = 0.0;
};

namespace detail {

struct BatchStats {
  double mean = 0.0;
  double std_error = 0.0;
  double half_width = 0.0;
};

// Batch means over `batches` contiguous groups; Student t at 95%.
inline BatchStats batch_means(const std::vector<double>& xs, int batches = 20) {
  BatchStats out;
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  const std::size_t per = xs.size() / static_cast<std::size_t>(batches);
  if (per == 0) return out;
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    const auto first = xs.begin() + static_cast<std::ptrdiff_t>(b * per);
    means.push_back(std::accumulate(first, first + static_cast<std::ptrdiff_t>(per), 0.0) / per);
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / batches;
  double ss = 0.0;
  for (double m : means) ss += (m - grand) * (m - grand);
  out.std_error = std::sqrt(ss / (batches - 1) / batches);
  constexpr double t_975_19 = 2.093;  // 20 batches
  out.half_width = (batches == 20 ? t_975_19 : 1.96) * out.std_error;
  return out;
}

}  // namespace detail

// Poisson(lambda) arrivals, uniform random routing in every layer, fresh
// Exp(mu_i) size per layer, FIFO servers at the gated speed. Statistics
// cover jobs whose external arrival falls in [warmup, horizon); every job
// is followed to its exit.
inline StochasticReport simulate_network(const NetworkConfig& cfg, double horizon, double warmup,
                                         std::uint64_t seed) {
  validate(cfg);
  if (!(warmup > 0.0) || !(horizon > warmup)) throw ConfigError("need horizon > warmup > 0");

  StochasticReport report;
  report.lambda = cfg.lambda;
  report.horizon = horizon;
  report.warmup = warmup;
  report.seed = seed;

  std::mt19937_64 rng(seed);
  // (time, job) pairs entering the current layer.
  std::vector<std::pair<double, std::size_t>> entering;
  {
    double t = 0.0;
    while (true) {
      t += detail::exponential(rng, cfg.lambda);
      if (!(t < horizon)) break;
      entering.emplace_back(t, entering.size());
    }
  }
  std::vector<char> measured(entering.size());
  for (const auto& [t, job] : entering) measured[job] = t >= warmup;
  const double window = horizon - warmup;

  for (const auto& layer : cfg.layers) {
    LayerReport lr;
    lr.speed = gated_speed(cfg.lambda, layer);
    lr.closed_form = layer_cost_closed_form(cfg.lambda, layer);
    lr.lb1 = lb1(cfg.lambda, layer);
    lr.lb2 = lb2(cfg.lambda, layer);
    lr.certificate = ratio_certificate(layer);
    lr.mm1_response = 1.0 / (layer.mu * lr.speed - cfg.lambda / layer.m);
    const double power = layer.c * std::pow(lr.speed, layer.alpha);

    std::stable_sort(entering.begin(), entering.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    std::vector<double> free_at(layer.m, 0.0);
    std::vector<double> busy(layer.m, 0.0);
    std::vector<double> response;
    std::vector<double> energy;
    for (auto& [t, job] : entering) {
      const int server = layer.m == 1 ? 0 : static_cast<int>(detail::uniform01(rng) * layer.m);
      const double service = detail::exponential(rng, layer.mu) / lr.speed;
      const double done = std::max(t, free_at[server]) + service;
      free_at[server] = done;
      if (measured[job]) {
        busy[server] += service;
        response.push_back(done - t);
        energy.push_back(service * power);
      }
      t = done;
    }

    const auto rs = detail::batch_means(response);
    const auto es = detail::batch_means(energy);
    lr.jobs = response.size();
    lr.mean_response = rs.mean;
    lr.response_half_width = rs.half_width;
    lr.response_std_error = rs.std_error;
    lr.mean_energy = es.mean;
    lr.energy_half_width = es.half_width;
    lr.simulated_cost = cfg.lambda * (rs.mean + es.mean);
    for (int j = 0; j < layer.m; ++j) {
      const double utilization = busy[j] / window;
      lr.jensen_lhs += layer.c * std::pow(lr.speed * utilization, layer.alpha);
      lr.jensen_rhs += power * utilization;
    }
    report.closed_form_total += lr.closed_form / cfg.lambda;
    report.simulated_total += rs.mean + es.mean;
    report.layers.push_back(lr);
  }
  report.certificate = network_certificate(cfg);
  return report;
}

inline NetworkConfig network_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  try {
    cfg.lambda = j.at("lambda").get<double>();
    for (const auto& l : j.at("layers")) {
      cfg.layers.push_back({l.at("m").get<int>(), l.at("mu").get<double>(), l.at("c").get<double>(),
                            l.at("alpha").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

inline void to_json(nlohmann::json& j, const NetworkConfig& cfg) {
  j["lambda"] = cfg.lambda;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : cfg.layers) {
    j["layers"].push_back({{"m", l.m}, {"mu", l.mu}, {"c", l.c}, {"alpha", l.alpha}});
  }
}

inline void to_json(nlohmann::json& j, const LayerReport& l) {
  j = nlohmann::json{{"speed", l.speed},
                     {"closed_form", l.closed_form},
                     {"lb1", l.lb1},
                     {"lb2", l.lb2},
                     {"certificate", l.certificate},
                     {"mean_response", l.mean_response},
                     {"response_half_width", l.response_half_width},
                     {"mean_energy", l.mean_energy},
                     {"energy_half_width", l.energy_half_width},
                     {"simulated_cost", l.simulated_cost},
                     {"mm1_response", l.mm1_response},
                     {"jensen_lhs", l.jensen_lhs},
                     {"jensen_rhs", l.jensen_rhs},
                     {"jobs", l.jobs}};
}

inline void to_json(nlohmann::json& j, const StochasticReport& r) {
  j = nlohmann::json{{"lambda", r.lambda},
                     {"horizon", r.horizon},
                     {"warmup", r.warmup},
                     {"seed", r.seed},
                     {"layers", r.layers},
                     {"closed_form_total", r.closed_form_total},
                     {"simulated_total", r.simulated_total},
                     {"certificate", r.certificate}};
}

inline void write_csv(const StochasticReport& r, std::ostream& out) {
  out << "layer,speed,closed_form,simulated_cost,mean_response,response_half_width,mean_energy,"
         "lb1,lb2,certificate,jobs\n";
  out.precision(17);
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const auto& l = r.layers[i];
    out << i + 1 << ',' << l.speed << ',' << l.closed_form << ',' << l.simulated_cost << ','
        << l.mean_response << ',' << l.response_half_width << ',' << l.mean_energy << ',' << l.lb1
        << ',' << l.lb2 << ',' << l.certificate << ',' << l.jobs << '\n';
  }
}

}  // namespace tandemscale
