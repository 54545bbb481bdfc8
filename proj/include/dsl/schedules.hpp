#pragma once

// Noise-level schedules for the variance-preserving diffusion and step-size
// schedules for the refinement loop.
//
// Conventions: nu(t) is the noise variance of the heat kernel
// N(sqrt(1-nu) x0, nu I), beta(t) the diffusion rate, related by
// d nu/dt = (1 - nu) beta. lambda(t) is the parameter function with
// nu = tanh^2(lambda/2); for the non-softplus kinds it is recovered as
// 2 artanh(sqrt(nu)), so beta/sqrt(nu) = d lambda/dt holds for every kind.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "dsl/error.hpp"

namespace dsl {

// lambda(t) = log(1 + A e^{kt}); nu = tanh^2(lambda/2), beta = lambda' tanh(lambda/2).
struct TanhSoftplus {
  double A;
  double k;
};

// beta = beta0 + 2 beta1 t, nu = 1 - exp(-beta0 t - beta1 t^2).
struct Linear {
  double beta0;
  double beta1;
};

// nu = sin^2(pi t/2), beta = min(threshold, pi tan(pi t/2)).
struct Cosine {
  double threshold = 20.0;
};

using ScheduleKind = std::variant<TanhSoftplus, Linear, Cosine>;

// All schedule quantities at one time. `clamped` marks the cosine region where
// beta is cut at the threshold; its derivatives there come from the unclamped
// tan expression and are not derivatives of the beta actually used.
struct ScheduleSample {
  double t = 0;
  double lambda = 0, lambda_d1 = 0, lambda_d2 = 0, lambda_d3 = 0;
  double nu = 0;
  double beta = 0, beta_d1 = 0, beta_d2 = 0;
  bool clamped = false;
};

class NoiseSchedule {
public:
  NoiseSchedule(ScheduleKind kind, double T) : kind_(kind), T_(T) {
    if (!(T > 0) || !std::isfinite(T))
      throw invalid_argument("T", "total time must be positive and finite");
    std::visit([](const auto &k) { validate(k); }, kind_);
  }

  const ScheduleKind &kind() const noexcept { return kind_; }
  double T() const noexcept { return T_; }

  std::string kind_name() const {
    return std::visit(
        [](const auto &k) -> std::string {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, TanhSoftplus>)
            return "tanh";
          else if constexpr (std::is_same_v<K, Linear>)
            return "linear";
          else
            return "cosine";
        },
        kind_);
  }

  // Round-off of order 1e-12 T outside [0, T] is snapped to the boundary;
  // anything further out is a domain error.
  ScheduleSample eval(double t) const {
    const double slack = 1e-12 * T_;
    if (!(t >= -slack && t <= T_ + slack))
      throw domain_error("schedule evaluated at t=" + std::to_string(t) + " outside [0, " +
                         std::to_string(T_) + "]");
    t = std::clamp(t, 0.0, T_);
    return std::visit([t](const auto &k) { return sample(k, t); }, kind_);
  }

  double nu(double t) const { return eval(t).nu; }
  double beta(double t) const { return eval(t).beta; }

private:
  static void validate(const TanhSoftplus &k) {
    if (!(k.A > 0) || !std::isfinite(k.A))
      throw invalid_argument("A", "must be positive");
    if (!std::isfinite(k.k))
      throw invalid_argument("k", "must be finite");
  }
  static void validate(const Linear &k) {
    if (!(k.beta0 >= 0))
      throw invalid_argument("beta0", "must be nonnegative");
    if (!(k.beta1 >= 0))
      throw invalid_argument("beta1", "must be nonnegative");
  }
  static void validate(const Cosine &k) {
    if (!(k.threshold > 0))
      throw invalid_argument("threshold", "must be positive");
  }

  static ScheduleSample sample(const TanhSoftplus &p, double t) {
    ScheduleSample s;
    s.t = t;
    const double ekt = std::exp(p.k * t);
    const double a = p.A * ekt; // A e^{kt}
    s.lambda = std::log1p(a);
    s.lambda_d1 = p.k * a / (a + 1);
    s.lambda_d2 = p.k * p.k * a / ((a + 1) * (a + 1));
    s.lambda_d3 = -p.k * p.k * p.k * a * (a - 1) / ((a + 1) * (a + 1) * (a + 1));

    // tanh(lambda/2) = a/(a+2) exactly, avoiding cancellation for small A.
    const double th = a / (a + 2);
    const double half = 0.5 * s.lambda;
    const double sech2 = 1 - th * th;
    const double sh = std::sinh(half), ch = std::cosh(half);
    s.nu = th * th;
    s.beta = s.lambda_d1 * th;
    s.beta_d1 = s.lambda_d2 * th + 0.5 * s.lambda_d1 * s.lambda_d1 * sech2;
    s.beta_d2 = s.lambda_d3 * th + 1.5 * s.lambda_d1 * s.lambda_d2 * sech2 -
                0.5 * s.lambda_d1 * s.lambda_d1 * s.lambda_d1 * sh / (ch * ch * ch);
    return s;
  }

  static ScheduleSample sample(const Linear &p, double t) {
    ScheduleSample s;
    s.t = t;
    s.nu = -std::expm1(-p.beta0 * t - p.beta1 * t * t);
    s.beta = p.beta0 + 2 * p.beta1 * t;
    s.beta_d1 = 2 * p.beta1;
    s.beta_d2 = 0;
    fill_lambda(s);
    return s;
  }

  static ScheduleSample sample(const Cosine &p, double t) {
    ScheduleSample s;
    s.t = t;
    const double phase = 0.5 * std::numbers::pi * t;
    const double sn = std::sin(phase), cs = std::cos(phase);
    const double tn = std::tan(phase);
    const double sec2 = 1 / (cs * cs);
    s.nu = sn * sn;
    const double raw = std::numbers::pi * tn;
    s.clamped = raw > p.threshold;
    s.beta = s.clamped ? p.threshold : raw;
    s.beta_d1 = 0.5 * std::numbers::pi * std::numbers::pi * sec2;
    s.beta_d2 = 0.5 * std::numbers::pi * std::numbers::pi * std::numbers::pi * sec2 * tn;
    fill_lambda(s);
    return s;
  }

  // lambda = 2 artanh(sqrt(nu)) and its derivatives through beta and nu.
  // Infinite where nu = 0.
  static void fill_lambda(ScheduleSample &s) {
    const double nu = s.nu, b = s.beta, b1 = s.beta_d1, b2 = s.beta_d2;
    const double r = std::sqrt(nu);
    s.lambda = 2 * std::atanh(r);
    const double nudot = (1 - nu) * b;
    s.lambda_d1 = b / r;
    s.lambda_d2 = b1 / r - 0.5 * b * nudot / (nu * r);
    // d/dt[(1-nu) nu^{-3/2}] = nudot (-nu^{-3/2} - 1.5 (1-nu) nu^{-5/2})
    const double g = (1 - nu) / (nu * r);
    const double gdot = nudot * (-1 / (nu * r) - 1.5 * (1 - nu) / (nu * nu * r));
    s.lambda_d3 = b2 / r - 0.5 * b1 * nudot / (nu * r) - 0.5 * (2 * b * b1 * g + b * b * gdot);
  }

  ScheduleKind kind_;
  double T_;
};

// Closed-form A, k reproducing nu(0) = nu0 and nu(T) = nuT.
inline NoiseSchedule fit_tanh_schedule(double nu0, double nuT, double T) {
  if (!(nu0 > 0 && nu0 < 1))
    throw invalid_argument("nu0", "must lie in (0, 1)");
  if (!(nuT > 0 && nuT < 1))
    throw invalid_argument("nuT", "must lie in (0, 1)");
  if (!(nu0 <= nuT))
    throw invalid_argument("nuT", "must be >= nu0");
  if (!(T > 0) || !std::isfinite(T))
    throw invalid_argument("T", "must be positive");
  const double r0 = std::sqrt(nu0), rT = std::sqrt(nuT);
  const double A = 2 * r0 / (1 - r0);
  const double k = (std::log(2 * rT / (1 - rT)) - std::log(A)) / T;
  return NoiseSchedule(TanhSoftplus{A, k}, T);
}

struct ConstantSteps {};
struct ExponentialSteps {
  double terminal_ratio = 0.1;
};
using StepKind = std::variant<ConstantSteps, ExponentialSteps>;

struct StepSchedule {
  StepKind kind;
  std::size_t N = 0;
  double T = 0;
  std::vector<double> steps;

  // Time at the start of step n (0-based): T - sum_{i<n} h_i; times(N) = 0.
  std::vector<double> times() const {
    std::vector<double> ts(N + 1);
    double acc = 0;
    ts[0] = T;
    for (std::size_t i = 0; i < N; ++i) {
      acc += steps[i];
      ts[i + 1] = T - acc;
    }
    ts[N] = 0.0;
    return ts;
  }
};

inline StepSchedule make_step_schedule(StepKind kind, std::size_t N, double T) {
  if (N == 0)
    throw invalid_argument("N", "step count must be at least 1");
  if (!(T > 0) || !std::isfinite(T))
    throw invalid_argument("T", "must be positive");
  StepSchedule s{kind, N, T, std::vector<double>(N)};
  if (std::holds_alternative<ConstantSteps>(kind)) {
    for (auto &h : s.steps)
      h = T / static_cast<double>(N);
    return s;
  }
  const double ratio = std::get<ExponentialSteps>(kind).terminal_ratio;
  if (!(ratio > 0) || !std::isfinite(ratio))
    throw invalid_argument("terminal_ratio", "must be positive");
  const double r = std::pow(ratio, 1.0 / static_cast<double>(N));
  // r = 1 degenerates to the constant schedule.
  const double h1 = std::abs(r - 1) < 1e-15 ? T / static_cast<double>(N)
                                           : T * (1 - r) / (1 - std::pow(r, static_cast<double>(N)));
  double h = h1;
  for (auto &step : s.steps) {
    step = h;
    h *= r;
  }
  return s;
}

} // namespace dsl
