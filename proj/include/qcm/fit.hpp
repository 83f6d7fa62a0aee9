/**
 * @file fit.hpp
 * @brief Weighted nonlinear least squares and the finite-size-scaling fits.
 *
 * least_squares_fit() is a Levenberg-Marquardt iteration with Marquardt's
 * diagonal scaling. The reported covariance is (J^T W J)^-1 evaluated at the
 * optimum without damping; it is not rescaled by chi2/dof, so it is correct
 * when the supplied sigma_y are the true standard deviations.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "qcm/error.hpp"
#include "qcm/observables.hpp"
#include "qcm/serial.hpp"

namespace qcm {

enum class FitModel {
  power_offset,   ///< a r^-b + c,          params (a, b, c)
  shifted_power,  ///< x_c + a N^(-1/nu),  params (x_c, a, nu)
  pure_power,     ///< a r^-b,              params (a, b)
};

inline std::string model_name(FitModel m) {
  switch (m) {
    case FitModel::power_offset: return "power_offset";
    case FitModel::shifted_power: return "shifted_power";
    case FitModel::pure_power: return "pure_power";
  }
  return "unknown";
}

inline std::size_t n_params(FitModel m) { return m == FitModel::pure_power ? 2 : 3; }

struct FitData {
  std::vector<double> x, y, sigma;

  std::size_t size() const { return x.size(); }

  std::uint64_t hash() const {
    ByteWriter w;
    for (const auto* v : {&x, &y, &sigma})
      for (double d : *v) w.f64(d);
    return fnv1a64(w.buffer());
  }
};

struct FitResult {
  FitModel model = FitModel::power_offset;
  std::vector<double> params;
  Eigen::MatrixXd covariance;
  double chi2 = 0.0;
  double chi2_per_dof = 0.0;
  bool converged = false;
  int n_iterations = 0;
  std::string diagnostic;
  std::uint64_t inputs_hash = 0;
  std::pair<double, double> window{0.0, 0.0};

  double err(std::size_t k) const {
    if (covariance.rows() <= static_cast<Eigen::Index>(k)) return INFINITY;
    const double v = covariance(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    return v >= 0.0 ? std::sqrt(v) : INFINITY;
  }

  std::vector<double> errs() const {
    std::vector<double> out;
    for (std::size_t k = 0; k < params.size(); ++k) out.push_back(err(k));
    return out;
  }
};

inline void to_json(nlohmann::json& j, const FitResult& f) {
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < f.covariance.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < f.covariance.cols(); ++c) row.push_back(f.covariance(r, c));
    cov.push_back(row);
  }
  j = nlohmann::json{{"model", model_name(f.model)},
                     {"params", f.params},
                     {"errs", f.errs()},
                     {"cov", cov},
                     {"chi2_per_dof", f.chi2_per_dof},
                     {"window", {f.window.first, f.window.second}},
                     {"inputs_hash", hex64(f.inputs_hash)},
                     {"converged", f.converged},
                     {"n_iterations", f.n_iterations},
                     {"diagnostic", f.diagnostic}};
}

namespace detail {

/// Model value and gradient with respect to the parameters.
inline double model_eval(FitModel m, std::span<const double> p, double x, std::span<double> grad) {
  switch (m) {
    case FitModel::power_offset: {
      const double xb = std::pow(x, -p[1]);
      grad[0] = xb;
      grad[1] = -p[0] * xb * std::log(x);
      grad[2] = 1.0;
      return p[0] * xb + p[2];
    }
    case FitModel::pure_power: {
      const double xb = std::pow(x, -p[1]);
      grad[0] = xb;
      grad[1] = -p[0] * xb * std::log(x);
      return p[0] * xb;
    }
    case FitModel::shifted_power: {
      const double xn = std::pow(x, -1.0 / p[2]);
      grad[0] = 1.0;
      grad[1] = xn;
      grad[2] = p[1] * xn * std::log(x) / (p[2] * p[2]);
      return p[0] + p[1] * xn;
    }
  }
  return NAN;
}

inline double mean_of_logs(std::span<const double> v) {
  double acc = 0.0;
  for (double e : v) acc += std::log(e);
  return acc / static_cast<double>(v.size());
}

/// Deterministic starting point for each model.
inline std::vector<double> initial_guess(FitModel m, const FitData& d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return d.x[a] < d.x[b]; });
  if (m == FitModel::shifted_power) {
    // nu = 1 and the line through the two largest sizes.
    const auto i1 = order[order.size() - 2], i2 = order.back();
    const double u1 = 1.0 / d.x[i1], u2 = 1.0 / d.x[i2];
    const double a = (d.y[i1] - d.y[i2]) / (u1 - u2);
    return {d.y[i2] - a * u2, a, 1.0};
  }
  // Log-log slope between the first and last thirds of the data, after
  // shifting y so that it is positive.
  double c = 0.0;
  if (m == FitModel::power_offset) {
    const double ymin = *std::min_element(d.y.begin(), d.y.end());
    const double ymax = *std::max_element(d.y.begin(), d.y.end());
    if (ymin <= 0.0) c = ymin - 0.05 * std::max(ymax - ymin, 1e-12);
  }
  const std::size_t third = std::max<std::size_t>(1, d.size() / 3);
  std::vector<double> lx1, ly1, lx2, ly2;
  for (std::size_t k = 0; k < third; ++k) {
    lx1.push_back(d.x[order[k]]);
    ly1.push_back(std::max(d.y[order[k]] - c, 1e-300));
    lx2.push_back(d.x[order[d.size() - 1 - k]]);
    ly2.push_back(std::max(d.y[order[d.size() - 1 - k]] - c, 1e-300));
  }
  const double gx1 = mean_of_logs(lx1), gy1 = mean_of_logs(ly1);
  const double gx2 = mean_of_logs(lx2), gy2 = mean_of_logs(ly2);
  const double b = gx2 > gx1 ? -(gy2 - gy1) / (gx2 - gx1) : 0.0;
  const double a = std::exp(gy1 + b * gx1);
  if (m == FitModel::pure_power) return {a, b};
  return {a, b, c};
}

}  // namespace detail

struct FitOptions {
  int max_iterations = 10000;
  double rel_step_tol = 1e-8;
  double grad_tol = 1e-10;
};

/// Minimizes sum ((y - f(x)) / sigma)^2 over the model parameters.
inline FitResult least_squares_fit(FitModel model, const FitData& data,
                                   std::optional<std::vector<double>> guess = std::nullopt,
                                   const FitOptions& opt = {}) {
  const std::size_t m = n_params(model);
  const std::size_t n = data.size();
  if (data.y.size() != n || data.sigma.size() != n)
    throw UsageError("least_squares_fit: x, y, sigma must have equal length");
  if (n < m + 1)
    throw UsageError("least_squares_fit: need at least " + std::to_string(m + 1) + " points");
  for (double s : data.sigma)
    if (!(s > 0.0)) throw UsageError("least_squares_fit: every sigma_y must be > 0");
  for (double x : data.x)
    if (!(x > 0.0)) throw UsageError("least_squares_fit: abscissae must be > 0");

  FitResult out;
  out.model = model;
  out.inputs_hash = data.hash();
  out.window = {*std::min_element(data.x.begin(), data.x.end()),
                *std::max_element(data.x.begin(), data.x.end())};
  std::vector<double> p = guess ? *guess : detail::initial_guess(model, data);
  if (p.size() != m) throw UsageError("least_squares_fit: initial guess has wrong size");

  Eigen::MatrixXd jac(n, m);
  Eigen::VectorXd res(n);
  std::vector<double> grad(m);
  auto evaluate = [&](const std::vector<double>& q, Eigen::MatrixXd* jout, Eigen::VectorXd& rout) {
    double chi2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double f = detail::model_eval(model, q, data.x[k], grad);
      const double r = (data.y[k] - f) / data.sigma[k];
      rout(static_cast<Eigen::Index>(k)) = r;
      chi2 += r * r;
      if (jout)
        for (std::size_t j = 0; j < m; ++j)
          (*jout)(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = grad[j] / data.sigma[k];
    }
    return std::isfinite(chi2) ? chi2 : INFINITY;
  };

  double chi2 = evaluate(p, &jac, res);
  if (!std::isfinite(chi2)) {
    out.params = p;
    out.diagnostic = "model not finite at the initial guess";
    return out;
  }
  double lambda = 1e-3;
  bool done = false;
  int it = 0;
  Eigen::VectorXd trial_res(n);
  for (; it < opt.max_iterations && !done; ++it) {
    const Eigen::MatrixXd A = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * res;
    if (g.norm() < opt.grad_tol) {
      done = true;
      break;
    }
    Eigen::MatrixXd damped = A;
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(m); ++j)
      damped(j, j) += lambda * std::max(A(j, j), 1e-30);
    const Eigen::VectorXd step = damped.ldlt().solve(g);
    std::vector<double> trial(p);
    for (std::size_t j = 0; j < m; ++j) trial[j] += step(static_cast<Eigen::Index>(j));
    const double trial_chi2 = step.allFinite() ? evaluate(trial, nullptr, trial_res) : INFINITY;
    if (trial_chi2 <= chi2) {
      Eigen::VectorXd pv = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(m));
      const double rel = step.norm() / (pv.norm() + 1e-300);
      p = trial;
      chi2 = evaluate(p, &jac, res);
      lambda = std::max(lambda / 10.0, 1e-15);
      if (rel < opt.rel_step_tol) done = true;
    } else {
      lambda *= 10.0;
      if (lambda > 1e20) done = true;  // no downhill step left at machine precision
    }
  }
  out.n_iterations = it;
  out.params = p;
  out.chi2 = chi2;
  out.chi2_per_dof = chi2 / static_cast<double>(n - m);

  const Eigen::MatrixXd A = jac.transpose() * jac;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  const double emax = eig.eigenvalues().maxCoeff();
  const double emin = eig.eigenvalues().minCoeff();
  if (!done) {
    out.diagnostic = "iteration limit reached";
    out.covariance = Eigen::MatrixXd::Constant(m, m, NAN);
    return out;
  }
  if (!(emax > 0.0) || emin <= 1e-13 * emax) {
    out.diagnostic = "singular Jacobian: parameters not identifiable";
    out.covariance = Eigen::MatrixXd::Constant(m, m, INFINITY);
    return out;
  }
  out.covariance = A.inverse();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.converged = true;
  return out;
}

// --- susceptibility peak -------------------------------------------------

struct PeakEstimate {
  double alpha_max = 0.0;
  double alpha_max_err = 0.0;
  double chi_max = 0.0;
};

/// Peak position by a weighted quadratic through the five largest chi values.
/// A maximum on the first or last grid point throws NumericalError.
inline PeakEstimate find_peak(std::span<const double> alphas, std::span<const double> chis,
                              std::span<const double> errs = {}) {
  const std::size_t n = alphas.size();
  if (n < 5) throw UsageError("find_peak: need at least 5 grid points");
  if (chis.size() != n || (!errs.empty() && errs.size() != n))
    throw UsageError("find_peak: grid, values and errors must have equal length");
  const auto imax = static_cast<std::size_t>(std::max_element(chis.begin(), chis.end()) - chis.begin());
  if (imax == 0 || imax == n - 1)
    throw NumericalError("find_peak: maximum on grid boundary at alpha = " +
                         std::to_string(alphas[imax]) + "; extend grid");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + 5, order.end(),
                    [&](auto a, auto b) { return chis[a] > chis[b]; });
  const double x0 = alphas[imax];
  Eigen::MatrixXd X(5, 3);
  Eigen::VectorXd y(5);
  for (Eigen::Index k = 0; k < 5; ++k) {
    const auto idx = order[static_cast<std::size_t>(k)];
    const double w = errs.empty() ? 1.0 : 1.0 / errs[idx];
    if (!std::isfinite(w)) throw UsageError("find_peak: errors must be > 0");
    const double u = alphas[idx] - x0;
    X(k, 0) = w;
    X(k, 1) = w * u;
    X(k, 2) = w * u * u;
    y(k) = w * chis[idx];
  }
  const Eigen::MatrixXd A = X.transpose() * X;
  const Eigen::VectorXd c = A.ldlt().solve(X.transpose() * y);
  if (!(c(2) < 0.0)) throw NumericalError("find_peak: top points are not concave; refine grid");
  const Eigen::MatrixXd cov = A.inverse();
  const double vertex = -c(1) / (2.0 * c(2));
  const Eigen::Vector2d g(-1.0 / (2.0 * c(2)), c(1) / (2.0 * c(2) * c(2)));
  const double var = g.transpose() * cov.block(1, 1, 2, 2) * g;

  PeakEstimate out;
  out.alpha_max = x0 + vertex;
  out.alpha_max_err = errs.empty() ? 0.0 : std::sqrt(std::max(var, 0.0));
  out.chi_max = c(0) + c(1) * vertex + c(2) * vertex * vertex;
  const auto [lo, hi] = std::minmax_element(alphas.begin(), alphas.end());
  if (out.alpha_max <= *lo || out.alpha_max >= *hi)
    throw NumericalError("find_peak: fitted vertex lies outside the grid; extend grid");
  return out;
}

// --- finite-size scaling -------------------------------------------------

struct SizePeak {
  double N = 0.0;
  PeakEstimate peak;
};

/// Fits alpha_max(N) = alpha_C + a N^(-1/nu). Params of the result are
/// (alpha_C, a, nu).
inline FitResult scaling_pipeline(std::span<const SizePeak> peaks,
                                  std::optional<std::vector<double>> guess = std::nullopt) {
  std::set<double> sizes;
  for (const auto& p : peaks) sizes.insert(p.N);
  if (sizes.size() < 4)
    throw UsageError("scaling_pipeline: need at least 4 distinct sizes, got " +
                     std::to_string(sizes.size()));
  FitData d;
  for (const auto& p : peaks) {
    d.x.push_back(p.N);
    d.y.push_back(p.peak.alpha_max);
    d.sigma.push_back(p.peak.alpha_max_err);
  }
  return least_squares_fit(FitModel::shifted_power, d, std::move(guess));
}

struct CorrelationExponent {
  FitResult fit;
  double b = 0.0;
  double b_err = 0.0;
  int r_min = 4;
  int r_max = 0;
  int ring = 0;  ///< > 0: fitted against chord distance on a ring of this length
};

/// (n/pi) sin(pi r/n): distance on a periodic chain of n sites seen as a circle.
inline double chord_distance(double r, int n) {
  if (n <= 0) throw DomainError("chord_distance: ring length must be positive");
  return n / std::numbers::pi * std::sin(std::numbers::pi * r / n);
}

/// b = z + eta - 1 from C(r) = a x^-b + c over r in [r_min, r_max], with
/// x = r, or x = chord_distance(r, ring) when ring > 0.
inline CorrelationExponent correlation_exponent(std::span<const double> r, std::span<const double> C,
                                                std::span<const double> Cerr, int r_min = 4,
                                                int r_max = -1, int ring = 0) {
  if (r.size() != C.size() || r.size() != Cerr.size())
    throw UsageError("correlation_exponent: r, C, Cerr must have equal length");
  if (r_max < 0) r_max = static_cast<int>(*std::max_element(r.begin(), r.end()));
  FitData d;
  for (std::size_t k = 0; k < r.size(); ++k)
    if (r[k] >= r_min && r[k] <= r_max) {
      d.x.push_back(ring > 0 ? chord_distance(r[k], ring) : r[k]);
      d.y.push_back(C[k]);
      d.sigma.push_back(Cerr[k]);
    }
  CorrelationExponent out;
  out.r_min = r_min;
  out.r_max = r_max;
  out.ring = ring;
  out.fit = least_squares_fit(FitModel::power_offset, d);
  out.b = out.fit.params[1];
  out.b_err = out.fit.err(1);
  return out;
}

inline CorrelationExponent correlation_exponent(const CorrelationTable& table, int r_min = 4,
                                                int r_max = -1, int ring = 0) {
  std::vector<double> r, c, e;
  for (const auto& p : table.points) {
    r.push_back(p.r);
    c.push_back(p.mean);
    e.push_back(p.err);
  }
  return correlation_exponent(r, c, e, r_min, r_max, ring);
}

}  // namespace qcm
