/**
 * @file rg.hpp
 * @brief One-loop flow of the dissipative phi^4 theory in D = 2 - epsilon,
 *        its fixed point and exponents, and the resulting QFI scaling.
 *
 * Flow in t = ln(lambda):
 *   d(delta)/dt = 2 delta + g/2 - delta g / 2
 *   dg/dt       = epsilon g - (3/2) g^2
 */
#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qcm/error.hpp"

namespace qcm::rg {

struct FlowState {
  double log_lambda = 0.0;
  double delta = 0.0;
  double g = 0.0;
};

struct FlowTrajectory {
  std::vector<FlowState> states;
  bool diverged = false;

  const FlowState& back() const { return states.back(); }
};

/// Thrown when the state becomes NaN/inf; carries the last finite state.
class IntegrationError : public NumericalError {
 public:
  IntegrationError(const std::string& what, FlowState last) : NumericalError(what), last_good(last) {}
  FlowState last_good;
};

inline constexpr double kDivergence = 1e6;

inline std::pair<double, double> flow_rhs(double delta, double g, double epsilon) {
  return {2.0 * delta + 0.5 * g - 0.5 * delta * g, epsilon * g - 1.5 * g * g};
}

inline std::pair<double, double> flow_rhs(const FlowState& s, double epsilon) {
  return flow_rhs(s.delta, s.g, epsilon);
}

/// Classical RK4 step of size dt.
inline FlowState rk4_step(const FlowState& s, double epsilon, double dt) {
  const auto [k1d, k1g] = flow_rhs(s.delta, s.g, epsilon);
  const auto [k2d, k2g] = flow_rhs(s.delta + 0.5 * dt * k1d, s.g + 0.5 * dt * k1g, epsilon);
  const auto [k3d, k3g] = flow_rhs(s.delta + 0.5 * dt * k2d, s.g + 0.5 * dt * k2g, epsilon);
  const auto [k4d, k4g] = flow_rhs(s.delta + dt * k3d, s.g + dt * k3g, epsilon);
  return {s.log_lambda + dt, s.delta + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
          s.g + dt / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)};
}

/// Integrates from initial.log_lambda to t_end. Every step is recorded. Stops
/// early with diverged = true once |delta| or |g| exceeds 1e6.
inline FlowTrajectory integrate_flow(const FlowState& initial, double epsilon, double t_end, double dt) {
  if (!(dt > 0.0)) throw DomainError("integrate_flow: dt must be > 0");
  FlowTrajectory out;
  out.states.push_back(initial);
  const double span = t_end - initial.log_lambda;
  if (span <= 0.0) return out;
  const auto steps = static_cast<long>(std::ceil(span / dt - 1e-9));
  FlowState s = initial;
  for (long k = 0; k < steps; ++k) {
    const double h = (k == steps - 1) ? (t_end - s.log_lambda) : dt;
    const FlowState next = rk4_step(s, epsilon, h);
    if (!std::isfinite(next.delta) || !std::isfinite(next.g))
      throw IntegrationError("integrate_flow: non-finite state at t = " + std::to_string(next.log_lambda), s);
    s = next;
    out.states.push_back(s);
    if (std::abs(s.delta) > kDivergence || std::abs(s.g) > kDivergence) {
      out.diverged = true;
      break;
    }
  }
  return out;
}

/// (delta*, g*) with g* = 2 eps / 3 and delta* the exact root of the delta
/// equation at g*, -g*/(4 - g*), which tends to -eps/6 for small eps.
inline std::pair<double, double> fixed_point(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 2.0)) throw DomainError("fixed_point: need 0 <= epsilon <= 2");
  const double g = 2.0 * epsilon / 3.0;
  return {-g / (4.0 - g), g};
}

/// Bisects delta(0) so that the flow started at (delta, g0) neither runs off
/// to +inf nor to -inf before `horizon`. Returns the bracket midpoint.
inline double critical_delta(double g0, double epsilon, double t0, double horizon, double dt,
                             double lo = -1.0, double hi = 1.0, int iterations = 60) {
  auto fate = [&](double d0) {
    FlowState s{t0, d0, g0};
    const auto tr = integrate_flow(s, epsilon, t0 + horizon, dt);
    return tr.back().delta;
  };
  if (!(fate(lo) < 0.0 && fate(hi) > 0.0))
    throw NumericalError("critical_delta: bracket does not straddle the critical manifold");
  for (int k = 0; k < iterations; ++k) {
    const double mid = 0.5 * (lo + hi);
    (fate(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Follows the critical manifold from g(0) = g0 up to t_end. Shooting alone
/// loses the manifold after t ~ 15 because delta departs as exp(2t) from the
/// bisection residue; the flow is therefore re-shot every `window` units of t
/// from the current g, keeping only the first half of each segment.
inline FlowTrajectory follow_critical_manifold(double g0, double epsilon, double t_end, double dt,
                                               double window = 16.0) {
  FlowTrajectory out;
  FlowState s{0.0, 0.0, g0};
  s.delta = critical_delta(g0, epsilon, 0.0, window, dt);
  out.states.push_back(s);
  while (s.log_lambda < t_end - 1e-12) {
    const double seg_end = std::min(t_end, s.log_lambda + 0.5 * window);
    const auto seg = integrate_flow(s, epsilon, seg_end, dt);
    out.states.insert(out.states.end(), seg.states.begin() + 1, seg.states.end());
    s = seg.back();
    if (s.log_lambda < t_end - 1e-12) {
      const double width = std::max(1e-3, 10.0 * std::abs(s.delta) + 10.0 * s.g);
      s.delta = critical_delta(s.g, epsilon, s.log_lambda, window, dt, s.delta - width, s.delta + width);
    }
  }
  return out;
}

inline void write_trajectory_csv(std::ostream& os, const FlowTrajectory& tr) {
  os << "t,delta,g\n";
  os.precision(17);
  for (const auto& s : tr.states) os << s.log_lambda << ',' << s.delta << ',' << s.g << '\n';
}

// --- exponents -----------------------------------------------------------

enum class Regime { mean_field, continuous, ising, phi4_epsilon };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::mean_field: return "mean_field";
    case Regime::continuous: return "continuous";
    case Regime::ising: return "ising";
    case Regime::phi4_epsilon: return "phi4_epsilon";
  }
  return "unknown";
}

/// Critical exponents. NaN marks a value the regime does not determine.
struct ExponentSet {
  double eta = NAN;
  double nu = NAN;
  double z = NAN;
  double epsilon = NAN;
  Regime regime = Regime::phi4_epsilon;
  /// Set when only the sum is known (continuous regime without an eta split).
  double measured_sum = NAN;

  double z_plus_eta() const { return std::isfinite(measured_sum) ? measured_sum : z + eta; }
};

/// One-loop epsilon-expansion exponents; z = 2 - eta so that z + eta = 2.
inline ExponentSet exponents_phi4(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 2.0)) throw DomainError("exponents_phi4: need 0 <= epsilon <= 2");
  constexpr double pi2 = std::numbers::pi * std::numbers::pi;
  ExponentSet e;
  e.epsilon = epsilon;
  e.eta = (12.0 - pi2) * epsilon * epsilon / 108.0;
  e.nu = 0.5 + epsilon / 12.0;
  e.z = 2.0 - e.eta;
  e.regime = Regime::phi4_epsilon;
  return e;
}

/// Measured input for the continuous regime 2/3 <= s < 2, where only the
/// endpoints z + eta = 3 and 5/4 are known analytically.
struct ContinuousMeasurement {
  double z_plus_eta = NAN;
  std::optional<double> eta;
};

/// Exponents of the chain with a bath of spectral exponent s.
///   s < 2/3       : mean field, z = 2/s, eta = 0
///   2/3 <= s < 2  : continuous, z + eta from a measurement in [5/4, 3]
///   s >= 2        : short-range Ising, z = 1, eta = 1/4, nu = 1
inline ExponentSet bath_regime_exponents(double s, std::optional<ContinuousMeasurement> measured = std::nullopt) {
  if (!(s > 0.0)) throw DomainError("bath_regime_exponents: s must be > 0");
  ExponentSet e;
  e.epsilon = 1.0;  // D = 1 chain
  if (s < 2.0 / 3.0) {
    e.regime = Regime::mean_field;
    e.z = 2.0 / s;
    e.eta = 0.0;
    return e;
  }
  if (s >= 2.0) {
    e.regime = Regime::ising;
    e.z = 1.0;
    e.eta = 0.25;
    e.nu = 1.0;
    return e;
  }
  e.regime = Regime::continuous;
  if (!measured || !std::isfinite(measured->z_plus_eta))
    throw DomainError("bath_regime_exponents: s = " + std::to_string(s) +
                      " is in the continuous regime; needs measurement of z + eta");
  const double sum = measured->z_plus_eta;
  if (sum < 1.25 || sum > 3.0)
    throw DomainError("bath_regime_exponents: measured z + eta outside [5/4, 3]");
  e.measured_sum = sum;
  if (measured->eta) {
    e.eta = *measured->eta;
    e.z = sum - e.eta;
  }
  return e;
}

enum class TimeRegime { short_time, long_time };

struct QfiScaling {
  double n_exponent = NAN;
  double t_exponent = NAN;
};

/// Exponents of F ~ N^a t^b from F ~ N t^2 xi^(gamma/nu - z) (t < xi^z) and
/// F ~ N xi^(gamma/nu + z) (t >= xi^z), with gamma/nu = 2 - eta and xi ~ N when
/// xi_equals_N; with a size-independent xi only the extensive factor N remains.
inline QfiScaling qfi_scaling_prediction(const ExponentSet& e, bool xi_equals_N, TimeRegime regime) {
  QfiScaling out;
  out.t_exponent = regime == TimeRegime::short_time ? 2.0 : 0.0;
  if (!xi_equals_N) {
    out.n_exponent = 1.0;
    return out;
  }
  if (regime == TimeRegime::short_time) {
    // Only z + eta enters; an unknown split is fine.
    out.n_exponent = 1.0 + (2.0 - e.z_plus_eta());
  } else {
    if (!std::isfinite(e.eta) || !std::isfinite(e.z))
      throw DomainError("qfi_scaling_prediction: long-time exponent needs eta and z separately");
    out.n_exponent = 1.0 + (2.0 - e.eta + e.z);
  }
  return out;
}

inline nlohmann::json prediction_json(const ExponentSet& e, const QfiScaling& q) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"regime", regime_name(e.regime)}, {"z", num(e.z)},
          {"eta", num(e.eta)},               {"nu", num(e.nu)},
          {"z_plus_eta", num(e.z_plus_eta())},
          {"F_exponent_N", num(q.n_exponent)}, {"F_exponent_t", num(q.t_exponent)}};
}

}  // namespace qcm::rg
