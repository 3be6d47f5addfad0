#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace tandemscale {

class CapViolation : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Convex power curve P(s) = offset + coefficient * s^exponent.
//
// The offset is static power drawn only while a server runs; idle servers
// are charged nothing by the engine. With offset == 0 this is the monomial
// family every analytic result in the library is stated for.
class PowerFunction {
 public:
  PowerFunction(double coefficient, double exponent,
                std::optional<double> speed_cap = std::nullopt,
                double offset = 0.0)
      : coefficient_(coefficient),
        exponent_(exponent),
        speed_cap_(speed_cap),
        offset_(offset) {
    if (!(coefficient > 0.0) || !std::isfinite(coefficient)) {
      throw std::invalid_argument("power coefficient must be positive");
    }
    if (!(exponent > 1.0) || !std::isfinite(exponent)) {
      throw std::invalid_argument("power exponent must exceed 1");
    }
    if (!(offset >= 0.0) || !std::isfinite(offset)) {
      throw std::invalid_argument("power offset must be nonnegative");
    }
    if (speed_cap_) {
      if (!(*speed_cap_ > 0.0)) {
        throw std::invalid_argument("speed cap must be positive");
      }
      // A cap below P^{-1}(1) breaks the drift argument for servers >= 2.
      if (!(raw_eval(*speed_cap_) > 1.0)) {
        std::ostringstream msg;
        msg << "speed cap " << *speed_cap_ << " violates P(B) > 1";
        throw std::invalid_argument(msg.str());
      }
    }
  }

  double coefficient() const { return coefficient_; }
  double exponent() const { return exponent_; }
  double offset() const { return offset_; }
  const std::optional<double>& speed_cap() const { return speed_cap_; }
  bool is_monomial() const { return offset_ == 0.0; }

  double eval(double s) const {
    check_speed(s);
    return raw_eval(s);
  }
  double operator()(double s) const { return eval(s); }

  double derivative(double s) const {
    if (s < 0.0) throw std::domain_error("negative speed");
    return coefficient_ * exponent_ * std::pow(s, exponent_ - 1.0);
  }

  // P^{-1}(p), clamped to the speed cap when one is set. Powers at or below
  // the static offset map to speed 0.
  double inverse(double p) const {
    double s = raw_inverse(p);
    if (speed_cap_ && s > *speed_cap_) s = *speed_cap_;
    return s;
  }

  // Marginal power at the speed whose power is beta: P'(P^{-1}(beta)).
  // Uses the uncapped inverse; the cap is a scheduling constraint, not part
  // of the analytic curve.
  double delta(double beta) const {
    if (beta < 0.0 || std::isnan(beta)) throw std::domain_error("negative load ratio");
    return derivative(raw_inverse(beta));
  }

  // f_a(i/a) = sum_{j=1..i} delta(j/a), with f_a(0) = 0.
  double f_sum(long i, long a) const {
    if (i < 0) throw std::domain_error("f_sum: negative step count");
    if (a < 1) throw std::domain_error("f_sum: step denominator must be >= 1");
    double total = 0.0;
    const double ad = static_cast<double>(a);
    for (long j = 1; j <= i; ++j) total += delta(static_cast<double>(j) / ad);
    return total;
  }

  // Minimizer s* of (1 + P(s)) / s; solves 1 + P(s) = s P'(s).
  double critical_speed() const {
    return std::pow((1.0 + offset_) / (coefficient_ * (exponent_ - 1.0)),
                    1.0 / exponent_);
  }

  // Least cost of a unit job on one server run in isolation: P'(s*).
  double per_job_opt_cost() const { return derivative(critical_speed()); }

  // The same curve scaled by k, i.e. k copies of a server running in
  // lockstep. Cap and offset scale accordingly.
  PowerFunction scaled(double k) const {
    return PowerFunction(coefficient_ * k, exponent_, speed_cap_, offset_ * k, Unchecked{});
  }

 private:
  struct Unchecked {};
  PowerFunction(double coefficient, double exponent, std::optional<double> cap,
                double offset, Unchecked)
      : coefficient_(coefficient), exponent_(exponent), speed_cap_(cap), offset_(offset) {}

  double raw_eval(double s) const {
    return offset_ + coefficient_ * std::pow(s, exponent_);
  }
  double raw_inverse(double p) const {
    if (p < 0.0 || std::isnan(p)) throw std::domain_error("negative power");
    if (p <= offset_) return 0.0;
    return std::pow((p - offset_) / coefficient_, 1.0 / exponent_);
  }
  void check_speed(double s) const {
    if (s < 0.0 || std::isnan(s)) throw std::domain_error("negative speed");
    if (speed_cap_ && s > *speed_cap_ * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "speed " << s << " exceeds cap " << *speed_cap_;
      throw CapViolation(msg.str());
    }
  }

  double coefficient_;
  double exponent_;
  std::optional<double> speed_cap_;
  double offset_;
};

// {"c": float, "alpha": float, "cap": float|null}; "offset" is written only
// when nonzero.
inline void to_json(nlohmann::json& j, const PowerFunction& pf) {
  j = nlohmann::json{{"c", pf.coefficient()}, {"alpha", pf.exponent()}};
  j["cap"] = pf.speed_cap() ? nlohmann::json(*pf.speed_cap()) : nlohmann::json(nullptr);
  if (pf.offset() != 0.0) j["offset"] = pf.offset();
}

inline PowerFunction power_from_json(const nlohmann::json& j) {
  std::optional<double> cap;
  if (j.contains("cap") && !j.at("cap").is_null()) cap = j.at("cap").get<double>();
  return PowerFunction(j.at("c").get<double>(), j.at("alpha").get<double>(), cap,
                       j.value("offset", 0.0));
}

}  // namespace tandemscale
