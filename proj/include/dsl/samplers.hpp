#pragma once

// Refinement-step integrators for the reverse diffusion.
//
// Time runs backwards: each step maps x_t to x_{t-h}. The probability-flow
// ODE drift and the reverse-SDE drift are
//
//     f_flat (x, t) = -(beta/2) x + beta / (2 sqrt(nu)) S(x, t)
//     f_sharp(x, t) = -(beta/2) x + beta / sqrt(nu)     S(x, t)
//
// and an explicit Euler step is x_{t-h} = x_t - h f(x_t, t).
//
// The Quasi-Taylor and Quasi-Ito-Taylor steps replace the derivatives of S
// appearing in the higher-order terms by their single-point ("ideal") values,
// which collapses every update into x_{t-h} = rho x_t + mu S / sqrt(nu) (+ noise)
// with scalar rho, mu depending only on the schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dsl/error.hpp"
#include "dsl/parallel.hpp"
#include "dsl/rng.hpp"
#include "dsl/schedules.hpp"
#include "dsl/score_field.hpp"

namespace dsl {

enum class SolverKind { Euler, Heun, RK4, DDIM, Taylor2, Taylor3, EulerMaruyama, ItoTaylor };

inline constexpr SolverKind all_solvers[] = {
    SolverKind::Euler,   SolverKind::Heun,    SolverKind::RK4,           SolverKind::DDIM,
    SolverKind::Taylor2, SolverKind::Taylor3, SolverKind::EulerMaruyama, SolverKind::ItoTaylor};

constexpr std::size_t nfe_per_step(SolverKind k) noexcept {
  switch (k) {
  case SolverKind::Heun:
    return 2;
  case SolverKind::RK4:
    return 4;
  default:
    return 1;
  }
}

constexpr bool is_stochastic(SolverKind k) noexcept {
  return k == SolverKind::EulerMaruyama || k == SolverKind::ItoTaylor;
}

constexpr bool needs_schedule_derivatives(SolverKind k) noexcept {
  return k == SolverKind::Taylor2 || k == SolverKind::Taylor3 || k == SolverKind::ItoTaylor;
}

constexpr std::string_view solver_name(SolverKind k) noexcept {
  switch (k) {
  case SolverKind::Euler:
    return "euler";
  case SolverKind::Heun:
    return "heun";
  case SolverKind::RK4:
    return "rk4";
  case SolverKind::DDIM:
    return "ddim";
  case SolverKind::Taylor2:
    return "taylor2";
  case SolverKind::Taylor3:
    return "taylor3";
  case SolverKind::EulerMaruyama:
    return "euler-maruyama";
  case SolverKind::ItoTaylor:
    return "ito-taylor";
  }
  return "?";
}

inline std::optional<SolverKind> parse_solver(std::string_view name) {
  for (SolverKind k : all_solvers)
    if (solver_name(k) == name)
      return k;
  if (name == "em")
    return SolverKind::EulerMaruyama;
  if (name == "itotaylor" || name == "ito_taylor")
    return SolverKind::ItoTaylor;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Drifts

namespace detail {

inline void check_nu(double nu) {
  if (!(nu > 0))
    throw singularity_error("drift is singular at nu = " + std::to_string(nu));
}

} // namespace detail

// f_flat given a precomputed score value.
inline void pf_ode_drift(std::span<const double> x, std::span<const double> S,
                         const ScheduleSample &s, std::span<double> out) {
  detail::check_nu(s.nu);
  const double cx = -0.5 * s.beta, cs = 0.5 * s.beta / std::sqrt(s.nu);
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = cx * x[i] + cs * S[i];
}

// f_sharp given a precomputed score value.
inline void rsde_drift(std::span<const double> x, std::span<const double> S,
                       const ScheduleSample &s, std::span<double> out) {
  detail::check_nu(s.nu);
  const double cx = -0.5 * s.beta, cs = s.beta / std::sqrt(s.nu);
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = cx * x[i] + cs * S[i];
}

template <ScoreSource F>
Vec pf_ode_drift(std::span<const double> x, double t, const F &score, const NoiseSchedule &sched) {
  detail::require_same_dim(score.dim(), x.size(), "x");
  const ScheduleSample s = sched.eval(t);
  Vec S(x.size()), out(x.size());
  score.evaluate(x, s, S);
  pf_ode_drift(x, S, s, out);
  return out;
}

template <ScoreSource F>
Vec rsde_drift(std::span<const double> x, double t, const F &score, const NoiseSchedule &sched) {
  detail::require_same_dim(score.dim(), x.size(), "x");
  const ScheduleSample s = sched.eval(t);
  Vec S(x.size()), out(x.size());
  score.evaluate(x, s, S);
  rsde_drift(x, S, s, out);
  return out;
}

// ---------------------------------------------------------------------------
// Quasi-Taylor coefficients

struct FlatCoefficients {
  double rho = 1;
  double mu = 0;
  int order = 2;
};

namespace detail {

inline void require_taylor_sample(const ScheduleSample &s, double h) {
  if (!(h >= 0))
    throw invalid_argument("h", "step size must be nonnegative");
  if (!(s.nu > 0))
    throw singularity_error("Taylor coefficients need nu > 0");
  if (s.clamped)
    throw unsupported_schedule("beta is clamped at t=" + std::to_string(s.t) +
                               "; its derivatives are not defined there");
}

} // namespace detail

// Deterministic step x_{t-h} = rho x + mu S/sqrt(nu), truncated after h^order.
inline FlatCoefficients taylor_flat_coeffs(const ScheduleSample &s, double h, int order) {
  if (order != 2 && order != 3)
    throw invalid_argument("order", "Quasi-Taylor order must be 2 or 3");
  detail::require_taylor_sample(s, h);
  const double b = s.beta, b1 = s.beta_d1, b2 = s.beta_d2, nu = s.nu;
  const double h2 = h * h;
  double rho = 1 + 0.5 * b * h + 0.25 * h2 * (0.5 * b * b - b1);
  double mu = -0.5 * b * h + 0.25 * h2 * (b1 - 0.5 * b * b / nu);
  if (order == 3) {
    const double h3 = h2 * h;
    rho += 0.25 * h3 * (b * b * b / 12 - 0.5 * b * b1 + b2 / 3);
    mu += 0.25 * h3 *
          (b * b * b * (-nu * nu + 3 * nu - 3) / (12 * nu * nu) + 0.5 * b * b1 / nu - b2 / 3);
  }
  return {rho, mu, order};
}

// Per-dimension driving noise of the Ito-Taylor step: w = u1,
// z = u1/2 + u2/(2 sqrt 3) with u1, u2 iid N(0, 1). Scaled as
// w~ = sqrt(h) w and z~ = h^{3/2} z they have Var w~ = h, Cov = h^2/2,
// Var z~ = h^3/3.
struct CorrelatedNoise {
  Vec w;
  Vec z;

  static constexpr std::pair<double, double> from_normals(double u1, double u2) noexcept {
    constexpr double inv_2sqrt3 = 0.28867513459481288225; // 1/(2 sqrt 3)
    return {u1, 0.5 * u1 + inv_2sqrt3 * u2};
  }
};

struct SharpNoiseCoeffs {
  double c_w = 0;  // sqrt(beta h)
  double c_wz = 0; // -beta' / (2 sqrt beta) h^{3/2}, multiplies (w - z)
  double c_z = 0;  // beta^{3/2} (nu - 2) / (2 nu) h^{3/2}
};

struct SharpStep {
  double rho = 1;
  double mu = 0;
  SharpNoiseCoeffs noise;

  double noise_term(double w, double z) const noexcept {
    return noise.c_w * w + noise.c_wz * (w - z) + noise.c_z * z;
  }

  // Full update for one trajectory: x <- rho x + mu S/sqrt(nu) + n(w, z).
  void apply(std::span<double> x, std::span<const double> S, double nu,
             const CorrelatedNoise &n) const {
    const double inv = 1 / std::sqrt(nu);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double wi = n.w.empty() ? 0.0 : n.w[i], zi = n.z.empty() ? 0.0 : n.z[i];
      x[i] = rho * x[i] + mu * S[i] * inv + noise_term(wi, zi);
    }
  }
};

// Stochastic (weak order 2) step with ideal derivatives.
inline SharpStep taylor_sharp_step(const ScheduleSample &s, double h) {
  detail::require_taylor_sample(s, h);
  const double b = s.beta, b1 = s.beta_d1, nu = s.nu;
  if (!(b >= 0))
    throw unsupported_schedule("Ito-Taylor step needs beta >= 0");
  if (b == 0 && b1 != 0 && h > 0)
    throw unsupported_schedule("Ito-Taylor noise term is singular where beta = 0 and beta' != 0");
  SharpStep st;
  st.rho = 1 + 0.5 * b * h + 0.25 * h * h * (0.5 * b * b - b1);
  st.mu = -b * h + 0.5 * b1 * h * h;
  const double h32 = h * std::sqrt(h);
  const double sb = std::sqrt(b);
  st.noise.c_w = sb * std::sqrt(h);
  st.noise.c_wz = b == 0 ? 0.0 : -b1 / (2 * sb) * h32;
  st.noise.c_z = b * sb * (nu - 2) / (2 * nu) * h32;
  return st;
}

// DDIM step x_{t-h} = rho x + mu S with nu_t at the current time and
// nu_prev = nu_{t-h}.
struct DdimCoefficients {
  double rho = 1;
  double mu = 0;
};

inline DdimCoefficients ddim_coeffs(double nu_t, double nu_prev) {
  if (!(nu_t > 0 && nu_t < 1))
    throw invalid_argument("nu_t", "must lie in (0, 1)");
  // nu_prev = 0 is the exact endpoint of schedules with nu(0) = 0.
  if (!(nu_prev >= 0 && nu_prev < 1))
    throw invalid_argument("nu_prev", "must lie in [0, 1)");
  if (nu_prev > nu_t)
    throw invalid_argument("nu_prev", "must not exceed nu_t");
  const double a = 1 - nu_t, ap = 1 - nu_prev;
  const double rho = std::sqrt(ap / a);
  const double mu = (std::sqrt(a * nu_prev) - std::sqrt(ap * nu_t)) / std::sqrt(a);
  return {rho, mu};
}

// ---------------------------------------------------------------------------
// Runge-Kutta

struct ButcherTableau {
  std::string name;
  std::vector<double> c;
  std::vector<std::vector<double>> a; // a[i][j], j < i
  std::vector<double> b;

  std::size_t stages() const noexcept { return b.size(); }

  // Two-stage second-order family; c2 = 1 is Heun's method.
  static ButcherTableau second_order(double c2) {
    if (!(c2 != 0))
      throw invalid_argument("c2", "must be nonzero");
    return {"rk2", {0, c2}, {{}, {c2}}, {1 - 1 / (2 * c2), 1 / (2 * c2)}};
  }

  static ButcherTableau heun() {
    auto t = second_order(1.0);
    t.name = "heun";
    return t;
  }

  static ButcherTableau classical_rk4() {
    return {"rk4",
            {0, 0.5, 0.5, 1},
            {{}, {0.5}, {0, 0.5}, {0, 0, 1}},
            {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6}};
  }
};

// One reversed-time RK step:
//   x_{t-h} = x_t - h sum_i b_i k_i,  k_i = f(x_t - h sum_j a_ij k_j, t - h c_i).
// `drift(x, t, out)` writes f(x, t).
template <class Drift>
void rk_step(const ButcherTableau &tab, Drift &&drift, std::span<double> x, double t, double h) {
  const std::size_t m = tab.stages(), d = x.size();
  std::vector<Vec> k(m, Vec(d));
  Vec stage(d);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t q = 0; q < d; ++q) {
      double acc = 0;
      for (std::size_t j = 0; j < i; ++j)
        acc += tab.a[i][j] * k[j][q];
      stage[q] = x[q] - h * acc;
    }
    drift(std::span<const double>(stage), std::max(0.0, t - h * tab.c[i]), std::span<double>(k[i]));
  }
  for (std::size_t q = 0; q < d; ++q) {
    double acc = 0;
    for (std::size_t i = 0; i < m; ++i)
      acc += tab.b[i] * k[i][q];
    x[q] -= h * acc;
  }
}

// RK step on the probability-flow ODE of a score field.
template <ScoreSource F>
Vec rk_step(const ButcherTableau &tab, std::span<const double> x, double t, double h,
            const F &score, const NoiseSchedule &sched) {
  detail::require_same_dim(score.dim(), x.size(), "x");
  Vec y(x.begin(), x.end()), S(x.size());
  rk_step(
      tab,
      [&](std::span<const double> xs, double ts, std::span<double> out) {
        const ScheduleSample s = sched.eval(ts);
        score.evaluate(xs, s, S);
        pf_ode_drift(xs, S, s, out);
      },
      std::span<double>(y), t, h);
  return y;
}

// ---------------------------------------------------------------------------
// Full sampling loop

struct StandardNormalStart {};
// x_T ~ N(sqrt(1 - nu_T) x0, nu_T I): the exact marginal of delta data at x0.
struct ExactMarginalStart {
  Vec x0;
};
// A given x_T shared by every trajectory.
struct FixedStart {
  Vec x;
};
using StartDistribution = std::variant<StandardNormalStart, ExactMarginalStart, FixedStart>;

struct ClipRange {
  double lo = -1;
  double hi = 1;
};

struct SampleOptions {
  std::optional<ClipRange> clip; // off by default
  bool record_trajectory = false;
  StartDistribution start = StandardNormalStart{};
  // Stochastic solvers inject no noise on the last step unless this is false.
  bool suppress_final_noise = true;
  unsigned threads = 0; // 0: default_threads()
};

struct Checkpoint {
  std::size_t step; // 0 is the initial state at t = T
  double t;         // time of the state
  double h;         // step that produced it (0 for the initial state)
  Vec x;
};

struct SampleRun {
  SolverKind solver;
  std::size_t run_id = 0;
  std::vector<Checkpoint> trajectory;
  Vec final;
  std::size_t nfe = 0;
  std::uint64_t seed = 0;
};

// Per-step data shared by all trajectories; computed once before sampling.
struct PlannedStep {
  double t = 0;
  double h = 0;
  ScheduleSample s;
  FlatCoefficients flat;
  SharpStep sharp;
  DdimCoefficients ddim;
  bool inject_noise = true;
};

inline std::vector<PlannedStep> plan_steps(SolverKind solver, const NoiseSchedule &sched,
                                           const StepSchedule &steps, bool suppress_final_noise) {
  if (steps.N == 0 || steps.steps.size() != steps.N)
    throw invalid_argument("steps", "step schedule is empty or inconsistent");
  if (std::abs(steps.T - sched.T()) > 1e-12 * sched.T())
    throw invalid_argument("steps.T", "step schedule total time does not match the noise schedule");
  const auto ts = steps.times();
  std::vector<PlannedStep> plan(steps.N);
  for (std::size_t n = 0; n < steps.N; ++n) {
    PlannedStep &p = plan[n];
    p.t = ts[n];
    p.h = steps.steps[n];
    p.s = sched.eval(p.t);
    p.inject_noise = !(suppress_final_noise && n + 1 == steps.N);
    switch (solver) {
    case SolverKind::Taylor2:
      p.flat = taylor_flat_coeffs(p.s, p.h, 2);
      break;
    case SolverKind::Taylor3:
      p.flat = taylor_flat_coeffs(p.s, p.h, 3);
      break;
    case SolverKind::ItoTaylor:
      p.sharp = taylor_sharp_step(p.s, p.h);
      break;
    case SolverKind::DDIM:
      p.ddim = ddim_coeffs(p.s.nu, sched.nu(ts[n + 1]));
      break;
    case SolverKind::EulerMaruyama:
    case SolverKind::Euler:
    case SolverKind::Heun:
    case SolverKind::RK4:
      detail::check_nu(p.s.nu);
      break;
    }
  }
  return plan;
}

namespace detail {

// Address of the draws for trajectory `traj`, step `n` (1-based; 0 is the
// start), dimension `dim`.
inline std::pair<double, double> step_normals(const rng::Stream &stream, std::uint64_t traj,
                                              std::size_t n, std::size_t dim) {
  return stream.normal_pair(traj, static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(dim));
}

} // namespace detail

// Draws x_T for one trajectory.
inline Vec draw_start(const StartDistribution &start, const NoiseSchedule &sched, std::size_t d,
                      const rng::Stream &stream, std::uint64_t traj) {
  if (const auto *f = std::get_if<FixedStart>(&start)) {
    if (f->x.size() != d)
      throw invalid_argument("start.x", "dimension mismatch");
    return f->x;
  }
  Vec x(d);
  for (std::size_t i = 0; i < d; ++i)
    x[i] = detail::step_normals(stream, traj, 0, i).first;
  if (const auto *m = std::get_if<ExactMarginalStart>(&start)) {
    if (m->x0.size() != d)
      throw invalid_argument("start.x0", "dimension mismatch");
    const double nuT = sched.nu(sched.T());
    const double a = std::sqrt(1 - nuT), sd = std::sqrt(nuT);
    for (std::size_t i = 0; i < d; ++i)
      x[i] = a * m->x0[i] + sd * x[i];
  }
  return x;
}

template <ScoreSource F>
SampleRun sample_one(SolverKind solver, const NoiseSchedule &sched,
                     const std::vector<PlannedStep> &plan, const F &score, std::size_t d,
                     std::uint64_t traj, std::uint64_t seed, const SampleOptions &opts) {
  const rng::Stream stream(seed, rng::Domain::sampler);
  SampleRun run{solver, traj, {}, draw_start(opts.start, sched, d, stream, traj),
                nfe_per_step(solver) * plan.size(), seed};
  Vec &x = run.final;
  Vec S(d), f(d);
  if (opts.record_trajectory)
    run.trajectory.push_back({0, sched.T(), 0.0, x});

  const auto tab = solver == SolverKind::Heun  ? ButcherTableau::heun()
                   : solver == SolverKind::RK4 ? ButcherTableau::classical_rk4()
                                               : ButcherTableau{};
  auto flat_drift = [&](std::span<const double> xs, double ts, std::span<double> out) {
    const ScheduleSample s = sched.eval(ts);
    Vec Ss(d);
    score.evaluate(xs, s, Ss);
    pf_ode_drift(xs, Ss, s, out);
  };

  for (std::size_t n = 0; n < plan.size(); ++n) {
    const PlannedStep &p = plan[n];
    const double h = p.h;
    switch (solver) {
    case SolverKind::Euler:
      score.evaluate(x, p.s, S);
      pf_ode_drift(x, S, p.s, f);
      for (std::size_t i = 0; i < d; ++i)
        x[i] -= h * f[i];
      break;
    case SolverKind::Heun:
    case SolverKind::RK4:
      rk_step(tab, flat_drift, std::span<double>(x), p.t, h);
      break;
    case SolverKind::DDIM:
      score.evaluate(x, p.s, S);
      for (std::size_t i = 0; i < d; ++i)
        x[i] = p.ddim.rho * x[i] + p.ddim.mu * S[i];
      break;
    case SolverKind::Taylor2:
    case SolverKind::Taylor3: {
      score.evaluate(x, p.s, S);
      const double inv = 1 / std::sqrt(p.s.nu);
      for (std::size_t i = 0; i < d; ++i)
        x[i] = p.flat.rho * x[i] + p.flat.mu * S[i] * inv;
      break;
    }
    case SolverKind::EulerMaruyama: {
      score.evaluate(x, p.s, S);
      rsde_drift(x, S, p.s, f);
      const double g = std::sqrt(h * p.s.beta);
      for (std::size_t i = 0; i < d; ++i) {
        x[i] -= h * f[i];
        if (p.inject_noise)
          x[i] += g * detail::step_normals(stream, traj, n + 1, i).first;
      }
      break;
    }
    case SolverKind::ItoTaylor: {
      score.evaluate(x, p.s, S);
      const double inv = 1 / std::sqrt(p.s.nu);
      for (std::size_t i = 0; i < d; ++i) {
        double noise = 0;
        if (p.inject_noise) {
          const auto [u1, u2] = detail::step_normals(stream, traj, n + 1, i);
          const auto [w, z] = CorrelatedNoise::from_normals(u1, u2);
          noise = p.sharp.noise_term(w, z);
        }
        x[i] = p.sharp.rho * x[i] + p.sharp.mu * S[i] * inv + noise;
      }
      break;
    }
    }
    if (opts.clip)
      for (double &v : x)
        v = std::clamp(v, opts.clip->lo, opts.clip->hi);
    if (opts.record_trajectory)
      run.trajectory.push_back({n + 1, std::max(0.0, p.t - h), h, x});
  }
  return run;
}

// Runs `batch` independent trajectories from t = T down to 0. Trajectory i
// draws only from the stream addresses (i, step, dim), so the output does not
// depend on batch size or thread count.
template <ScoreSource F>
std::vector<SampleRun> sample(SolverKind solver, const NoiseSchedule &sched,
                              const StepSchedule &steps, const F &score, std::size_t d,
                              std::size_t batch, std::uint64_t seed,
                              const SampleOptions &opts = {}) {
  if (d == 0)
    throw invalid_argument("dim", "must be positive");
  if (score.dim() != d)
    throw invalid_argument("dim", "score field has dimension " + std::to_string(score.dim()) +
                                      " but samples have " + std::to_string(d));
  if (batch == 0)
    throw invalid_argument("batch", "must be positive");
  if (opts.clip && !(opts.clip->lo < opts.clip->hi))
    throw invalid_argument("clip", "lower bound must be below upper bound");
  const auto plan = plan_steps(solver, sched, steps, opts.suppress_final_noise);
  std::vector<SampleRun> runs(batch);
  parallel_for(batch, opts.threads, [&](std::size_t i) {
    runs[i] = sample_one(solver, sched, plan, score, d, i, seed, opts);
  });
  return runs;
}

} // namespace dsl
