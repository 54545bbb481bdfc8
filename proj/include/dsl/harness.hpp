#pragma once

// Experiment configuration, convergence-order estimation and CSV reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dsl/csv.hpp"
#include "dsl/error.hpp"
#include "dsl/parallel.hpp"
#include "dsl/rng.hpp"
#include "dsl/samplers.hpp"
#include "dsl/schedules.hpp"
#include "dsl/score_field.hpp"
#include "dsl/spa_diagnostics.hpp"

namespace dsl {

// ---------------------------------------------------------------------------
// Configuration

struct ScheduleSpec {
  std::string kind = "tanh"; // tanh | linear | cosine
  double nu0 = 1e-4;         // tanh only
  double nuT = 0.99;         // tanh only
  double T = 1.0;
  double beta0 = 0.1;  // linear only
  double beta1 = 9.95; // linear only
  double threshold = 20.0; // cosine only

  bool operator==(const ScheduleSpec &) const = default;
};

struct StepSpec {
  std::string kind = "constant"; // constant | exponential
  std::size_t N = 8;
  double terminal_ratio = 0.1;

  bool operator==(const StepSpec &) const = default;
};

struct OracleSpec {
  std::string kind = "delta"; // delta | gaussian | mixture | idx | csv
  std::vector<double> x0{0.7};   // delta; one value is broadcast to every dimension
  std::vector<double> mean{0.0}; // gaussian; broadcast like x0
  double var = 1.0;              // gaussian
  std::string dataset;           // idx | csv path
  std::size_t points = 100;      // mixture: synthetic points in [0, 1]^d

  bool operator==(const OracleSpec &) const = default;
};

struct ExperimentConfig {
  std::string solver = "euler";
  ScheduleSpec schedule;
  StepSpec steps;
  OracleSpec oracle;
  std::size_t dim = 1;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  std::optional<std::pair<double, double>> clip;
  std::string out;

  bool operator==(const ExperimentConfig &) const = default;
};

// Named synthesis conditions: tanh schedules with the given (nu0, nuT), T = 1.
inline ScheduleSpec preset_schedule(const std::string &name) {
  ScheduleSpec s;
  s.kind = "tanh";
  s.T = 1.0;
  if (name == "cond-i") {
    s.nu0 = 5e-4;
    s.nuT = 0.995;
  } else if (name == "cond-ii") {
    s.nu0 = 1e-4;
    s.nuT = 0.99;
  } else {
    throw invalid_argument("preset", "unknown preset '" + name + "' (expected cond-i or cond-ii)");
  }
  return s;
}

inline nlohmann::json to_json(const ExperimentConfig &c) {
  nlohmann::json j;
  j["solver"] = c.solver;
  j["schedule"] = {{"kind", c.schedule.kind},   {"nu0", c.schedule.nu0},
                   {"nuT", c.schedule.nuT},     {"T", c.schedule.T},
                   {"beta0", c.schedule.beta0}, {"beta1", c.schedule.beta1},
                   {"threshold", c.schedule.threshold}};
  j["steps"] = {{"kind", c.steps.kind}, {"N", c.steps.N}, {"terminal_ratio", c.steps.terminal_ratio}};
  j["oracle"] = {{"kind", c.oracle.kind}, {"x0", c.oracle.x0},           {"mean", c.oracle.mean},
                 {"var", c.oracle.var},   {"dataset", c.oracle.dataset}, {"points", c.oracle.points}};
  j["dim"] = c.dim;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  j["clip"] = c.clip ? nlohmann::json::array({c.clip->first, c.clip->second}) : nlohmann::json(nullptr);
  j["out"] = c.out;
  return j;
}

namespace detail {

template <class T>
void read_field(const nlohmann::json &obj, const char *key, const std::string &path, T &dst) {
  if (!obj.contains(key))
    return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw invalid_argument(path + key, "has the wrong type");
  }
}

inline const nlohmann::json &section(const nlohmann::json &j, const char *key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key))
    return empty;
  if (!j.at(key).is_object())
    throw invalid_argument(key, "must be an object");
  return j.at(key);
}

} // namespace detail

// Missing keys keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json &j) {
  if (!j.is_object())
    throw invalid_argument("config", "must be a JSON object");
  ExperimentConfig c;
  detail::read_field(j, "solver", "", c.solver);
  const auto &s = detail::section(j, "schedule");
  detail::read_field(s, "kind", "schedule.", c.schedule.kind);
  detail::read_field(s, "nu0", "schedule.", c.schedule.nu0);
  detail::read_field(s, "nuT", "schedule.", c.schedule.nuT);
  detail::read_field(s, "T", "schedule.", c.schedule.T);
  detail::read_field(s, "beta0", "schedule.", c.schedule.beta0);
  detail::read_field(s, "beta1", "schedule.", c.schedule.beta1);
  detail::read_field(s, "threshold", "schedule.", c.schedule.threshold);
  const auto &st = detail::section(j, "steps");
  detail::read_field(st, "kind", "steps.", c.steps.kind);
  detail::read_field(st, "N", "steps.", c.steps.N);
  detail::read_field(st, "terminal_ratio", "steps.", c.steps.terminal_ratio);
  const auto &o = detail::section(j, "oracle");
  detail::read_field(o, "kind", "oracle.", c.oracle.kind);
  detail::read_field(o, "x0", "oracle.", c.oracle.x0);
  detail::read_field(o, "mean", "oracle.", c.oracle.mean);
  detail::read_field(o, "var", "oracle.", c.oracle.var);
  detail::read_field(o, "dataset", "oracle.", c.oracle.dataset);
  detail::read_field(o, "points", "oracle.", c.oracle.points);
  detail::read_field(j, "dim", "", c.dim);
  detail::read_field(j, "batch", "", c.batch);
  detail::read_field(j, "seed", "", c.seed);
  if (j.contains("clip") && !j.at("clip").is_null()) {
    const auto &cl = j.at("clip");
    if (!cl.is_array() || cl.size() != 2 || !cl[0].is_number() || !cl[1].is_number())
      throw invalid_argument("clip", "must be null or [lo, hi]");
    c.clip = std::make_pair(cl[0].get<double>(), cl[1].get<double>());
  }
  detail::read_field(j, "out", "", c.out);
  return c;
}

inline std::string emit_config(const ExperimentConfig &c) { return to_json(c).dump(2) + "\n"; }

inline ExperimentConfig parse_config(const std::string &text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw format_error(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Building blocks from a configuration

inline SolverKind solver_from(const ExperimentConfig &c) {
  const auto k = parse_solver(c.solver);
  if (!k)
    throw invalid_argument("solver", "unknown solver '" + c.solver + "'");
  return *k;
}

inline NoiseSchedule schedule_from(const ScheduleSpec &s) {
  if (s.kind == "tanh")
    return fit_tanh_schedule(s.nu0, s.nuT, s.T);
  if (s.kind == "linear")
    return NoiseSchedule(Linear{s.beta0, s.beta1}, s.T);
  if (s.kind == "cosine")
    return NoiseSchedule(Cosine{s.threshold}, s.T);
  throw invalid_argument("schedule", "unknown schedule kind '" + s.kind + "'");
}

inline StepSchedule steps_from(const StepSpec &s, double T) {
  if (s.kind == "constant")
    return make_step_schedule(ConstantSteps{}, s.N, T);
  if (s.kind == "exponential")
    return make_step_schedule(ExponentialSteps{s.terminal_ratio}, s.N, T);
  throw invalid_argument("step-schedule", "unknown step schedule '" + s.kind + "'");
}

inline Vec broadcast(const std::vector<double> &v, std::size_t d, const char *field) {
  if (v.size() == d)
    return v;
  if (v.size() == 1)
    return Vec(d, v[0]);
  throw invalid_argument(field, "has " + std::to_string(v.size()) + " values for dimension " +
                                    std::to_string(d));
}

inline PointCloudData dataset_from(const ExperimentConfig &c) {
  const auto &o = c.oracle;
  if (o.kind == "mixture")
    return synthetic_cube_points(o.points, c.dim, c.seed);
  if (o.kind == "idx")
    return load_idx(o.dataset);
  if (o.kind == "csv")
    return load_points_csv(o.dataset);
  throw invalid_argument("oracle", "oracle '" + o.kind + "' has no dataset");
}

inline ScoreField oracle_from(const ExperimentConfig &c) {
  if (c.dim == 0)
    throw invalid_argument("dim", "must be positive");
  const auto &o = c.oracle;
  if (o.kind == "delta")
    return ScoreField(DeltaScore(broadcast(o.x0, c.dim, "oracle.x0")), "delta");
  if (o.kind == "gaussian")
    return ScoreField(GaussianScore(broadcast(o.mean, c.dim, "oracle.mean"), o.var), "gaussian");
  if (o.kind == "mixture" || o.kind == "idx" || o.kind == "csv") {
    auto data = std::make_shared<const PointCloudData>(dataset_from(c));
    if (data->dim() != c.dim)
      throw invalid_argument("dim", "dataset has dimension " + std::to_string(data->dim()));
    return ScoreField(MixtureScore(data), o.kind);
  }
  throw invalid_argument("oracle", "unknown oracle '" + o.kind + "'");
}

inline SampleOptions sample_options_from(const ExperimentConfig &c) {
  SampleOptions o;
  if (c.clip)
    o.clip = ClipRange{c.clip->first, c.clip->second};
  return o;
}

// ---------------------------------------------------------------------------
// Sample CSV

// Without recorded trajectories only the final state is written, as step N.
inline void write_samples_csv(std::ostream &os, const std::vector<SampleRun> &runs,
                              std::size_t d) {
  os << "run_id,step,t,h";
  for (std::size_t i = 0; i < d; ++i)
    os << ",dim" << i;
  os << '\n';
  auto line = [&](std::size_t id, std::size_t step, double t, double h, const Vec &x) {
    os << id << ',' << step << ',' << csv::num(t) << ',' << csv::num(h);
    for (double v : x)
      os << ',' << csv::num(v);
    os << '\n';
  };
  for (const auto &r : runs) {
    if (!r.trajectory.empty()) {
      for (const auto &c : r.trajectory)
        line(r.run_id, c.step, c.t, c.h, c.x);
    } else {
      line(r.run_id, r.nfe / nfe_per_step(r.solver), 0.0, 0.0, r.final);
    }
  }
}

inline void write_summary_csv(std::ostream &os, const std::vector<SampleRun> &runs) {
  os << "run_id,solver,N,nfe,final_norm\n";
  for (const auto &r : runs) {
    double n2 = 0;
    for (double v : r.final)
      n2 += v * v;
    os << r.run_id << ',' << solver_name(r.solver) << ',' << r.nfe / nfe_per_step(r.solver) << ','
       << r.nfe << ',' << csv::num(std::sqrt(n2)) << '\n';
  }
}

inline void write_schedule_csv(std::ostream &os, const NoiseSchedule &sched, std::size_t points) {
  if (points < 2)
    throw invalid_argument("points", "need at least 2 points");
  os << "t,lambda,nu,beta,beta_d1,beta_d2\n";
  for (std::size_t k = 0; k < points; ++k) {
    const double t = sched.T() * static_cast<double>(k) / static_cast<double>(points - 1);
    const ScheduleSample s = sched.eval(t);
    const double v[] = {s.t, s.lambda, s.nu, s.beta, s.beta_d1, s.beta_d2};
    csv::row(os, v);
  }
}

// ---------------------------------------------------------------------------
// Convergence order

inline constexpr double error_floor = 1e-12;

struct SlopeFit {
  double slope = 0;
  double r2 = 0;
  std::size_t used = 0;
};

// Least-squares slope of log(error) against log(h); errors below the floor
// are excluded.
inline SlopeFit fit_loglog(const std::vector<double> &h, const std::vector<double> &err) {
  if (h.size() != err.size())
    throw invalid_argument("errors", "one error per step size required");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (err[i] >= error_floor && std::isfinite(err[i]) && h[i] > 0) {
      lx.push_back(std::log(h[i]));
      ly.push_back(std::log(err[i]));
    }
  if (lx.size() < 3)
    throw insufficient_data("only " + std::to_string(lx.size()) +
                            " errors above the 1e-12 floor; need 3 to fit a slope");
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  SlopeFit f;
  f.slope = sxy / sxx;
  f.r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 1.0;
  f.used = lx.size();
  return f;
}

enum class Reference { ClosedForm, FineStep };

struct OrderSeries {
  std::string metric; // state | mean | variance
  std::vector<double> errors;
  SlopeFit fit;
};

struct OrderEstimate {
  SolverKind solver = SolverKind::Euler;
  std::vector<std::size_t> N_list;
  std::vector<double> h_list; // nominal T/N, strictly decreasing
  std::vector<OrderSeries> series;

  const OrderSeries &metric(const std::string &name) const {
    for (const auto &s : series)
      if (s.metric == name)
        return s;
    throw invalid_argument("metric", "no series named " + name);
  }
  double slope() const { return series.front().fit.slope; }
  double r2() const { return series.front().fit.r2; }
};

struct OrderOptions {
  Reference reference = Reference::ClosedForm;
  // Stochastic solvers: moment-matched driving noise (see weak_moments_matched).
  bool moment_matching = true;
  unsigned threads = 0;
};

// Sample mean and (population) variance of the terminal states of a 1-dim
// stochastic solver on delta data at x0, from `batch` trajectories.
struct WeakMoments {
  double mean = 0;
  double variance = 0;
};

namespace detail {

// Deterministic parallel sums: fixed blocks, combined in order, so the
// result does not depend on the thread count.
template <std::size_t K, class F>
std::array<double, K> block_sums(std::size_t n, unsigned threads, F &&term) {
  constexpr std::size_t block = 8192;
  const std::size_t nb = (n + block - 1) / block;
  std::vector<std::array<double, K>> partial(nb);
  parallel_for(nb, threads, [&](std::size_t b) {
    std::array<double, K> acc{};
    const std::size_t hi = std::min(n, (b + 1) * block);
    for (std::size_t i = b * block; i < hi; ++i) {
      const std::array<double, K> v = term(i);
      for (std::size_t k = 0; k < K; ++k)
        acc[k] += v[k];
    }
    partial[b] = acc;
  });
  std::array<double, K> total{};
  for (const auto &p : partial)
    for (std::size_t k = 0; k < K; ++k)
      total[k] += p[k];
  return total;
}

} // namespace detail

// Lockstep simulation of `batch` trajectories in which each step's standard
// normals are projected to be orthogonal to the constant vector and to the
// centered state (and u2 also to u1), then rescaled to unit sample variance.
// The same is done to the start draws. Because delta-data dynamics are linear
// in x, the sample mean and variance then follow the exact moment recursion of
// the scheme and the Monte Carlo noise of both moments is removed.
inline WeakMoments weak_moments_matched(SolverKind solver, const NoiseSchedule &sched,
                                        const StepSchedule &steps, double x0, std::size_t batch,
                                        std::uint64_t seed, unsigned threads = 0) {
  if (!is_stochastic(solver))
    throw invalid_argument("solver", "weak moments are defined for stochastic solvers");
  if (batch < 4)
    throw invalid_argument("batch", "moment matching needs at least 4 trajectories");
  const auto plan = plan_steps(solver, sched, steps, false);
  const rng::Stream stream(seed, rng::Domain::order);
  const std::size_t B = batch;
  const double nB = static_cast<double>(B);
  Vec x(B), u1(B), u2(B);

  parallel_for(B, threads, [&](std::size_t i) { u1[i] = stream.normal_pair(i, 0, 0).first; });
  {
    const auto s = detail::block_sums<2>(B, threads, [&](std::size_t i) {
      return std::array<double, 2>{u1[i], u1[i] * u1[i]};
    });
    const double m = s[0] / nB, sd = std::sqrt(s[1] / nB - m * m);
    const double nuT = sched.nu(sched.T());
    const double a = std::sqrt(1 - nuT) * x0, b = std::sqrt(nuT);
    parallel_for(B, threads, [&](std::size_t i) { x[i] = a + b * (u1[i] - m) / sd; });
  }

  for (std::size_t n = 0; n < plan.size(); ++n) {
    const PlannedStep &p = plan[n];
    parallel_for(B, threads, [&](std::size_t i) {
      const auto [a, b] = stream.normal_pair(i, static_cast<std::uint32_t>(n + 1), 0);
      u1[i] = a;
      u2[i] = b;
    });
    // centered state c = x - mx
    const auto s1 = detail::block_sums<5>(B, threads, [&](std::size_t i) {
      return std::array<double, 5>{x[i], x[i] * x[i], u1[i], u2[i], x[i] * u1[i]};
    });
    const double mx = s1[0] / nB;
    const double cc = s1[1] - nB * mx * mx;
    if (!(cc > 0))
      throw domain_error("state has collapsed; cannot match moments");
    const double mu1 = s1[2] / nB, mu2 = s1[3] / nB;
    const double k1 = (s1[4] - mx * s1[2]) / cc; // <u1, c> / <c, c>
    // w = u1 - mu1 - k1 c
    const auto s2 = detail::block_sums<4>(B, threads, [&](std::size_t i) {
      const double w = u1[i] - mu1 - k1 * (x[i] - mx);
      return std::array<double, 4>{w * w, u2[i] * w, x[i] * u2[i], 0.0};
    });
    const double ww = s2[0];
    const double k2c = (s2[2] - mx * s1[3]) / cc; // <u2, c> / <c, c>
    const double k2w = s2[1] / ww;                // <u2, w> / <w, w>
    const double wscale = std::sqrt(nB / ww);
    const auto s3 = detail::block_sums<1>(B, threads, [&](std::size_t i) {
      const double w = u1[i] - mu1 - k1 * (x[i] - mx);
      const double v = u2[i] - mu2 - k2c * (x[i] - mx) - k2w * w;
      return std::array<double, 1>{v * v};
    });
    const double vscale = std::sqrt(nB / s3[0]);
    const double inv_sqrt_nu = 1 / std::sqrt(p.s.nu);
    const double a0 = std::sqrt(1 - p.s.nu) * x0;
    parallel_for(B, threads, [&](std::size_t i) {
      const double wr = u1[i] - mu1 - k1 * (x[i] - mx);
      const double v = (u2[i] - mu2 - k2c * (x[i] - mx) - k2w * wr) * vscale;
      const double w = wr * wscale;
      const double S = (x[i] - a0) * inv_sqrt_nu;
      if (solver == SolverKind::EulerMaruyama) {
        const double f = -0.5 * p.s.beta * x[i] + p.s.beta * inv_sqrt_nu * S;
        x[i] = x[i] - p.h * f + std::sqrt(p.h * p.s.beta) * w;
      } else {
        const auto [ww_, z] = CorrelatedNoise::from_normals(w, v);
        x[i] = p.sharp.rho * x[i] + p.sharp.mu * S * inv_sqrt_nu + p.sharp.noise_term(ww_, z);
      }
    });
  }
  const auto s = detail::block_sums<2>(B, threads, [&](std::size_t i) {
    return std::array<double, 2>{x[i], x[i] * x[i]};
  });
  const double m = s[0] / nB;
  return {m, s[1] / nB - m * m};
}

// Plain Monte Carlo moments through the ordinary sampler.
inline WeakMoments weak_moments_plain(SolverKind solver, const NoiseSchedule &sched,
                                      const StepSchedule &steps, double x0, std::size_t batch,
                                      std::uint64_t seed, unsigned threads = 0) {
  SampleOptions o;
  o.start = ExactMarginalStart{{x0}};
  o.suppress_final_noise = false;
  o.threads = threads;
  const auto runs = sample(solver, sched, steps, DeltaScore({x0}), 1, batch, seed, o);
  double s = 0, s2 = 0;
  for (const auto &r : runs) {
    s += r.final[0];
    s2 += r.final[0] * r.final[0];
  }
  const double n = static_cast<double>(batch), m = s / n;
  return {m, s2 / n - m * m};
}

// Exact PF-ODE solution from x_T for delta data at x0:
// x(t) = sqrt(1 - nu_t) x0 + sqrt(nu_t / nu_T) (x_T - sqrt(1 - nu_T) x0).
inline Vec delta_flow_solution(const NoiseSchedule &sched, const Vec &x0, const Vec &xT, double t) {
  const double nuT = sched.nu(sched.T()), nut = sched.nu(t);
  const double a = std::sqrt(1 - nut), aT = std::sqrt(1 - nuT), r = std::sqrt(nut / nuT);
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = a * x0[i] + r * (xT[i] - aT * x0[i]);
  return out;
}

// Runs the solver with N = N0 * 2^i steps, i = 0..halvings, with N0 from
// cfg.steps. Deterministic solvers start from x_T = 1 in every dimension and
// measure the relative error of the final state. Stochastic solvers run the
// 1-dim delta oracle from its exact marginal and measure the weak errors of
// the terminal mean and variance.
inline OrderEstimate estimate_order(const ExperimentConfig &cfg, std::size_t halvings,
                                    const OrderOptions &opts = {}) {
  if (halvings < 3)
    throw invalid_argument("halvings", "need at least 3 halvings (4 grid points)");
  const SolverKind solver = solver_from(cfg);
  const NoiseSchedule sched = schedule_from(cfg.schedule);
  OrderEstimate est;
  est.solver = solver;
  for (std::size_t i = 0; i <= halvings; ++i) {
    const std::size_t N = cfg.steps.N << i;
    est.N_list.push_back(N);
    est.h_list.push_back(sched.T() / static_cast<double>(N));
  }
  if (is_stochastic(solver)) {
    if (cfg.oracle.kind != "delta")
      throw invalid_argument("oracle", "weak order is measured against delta data");
    const double x0 = cfg.oracle.x0.at(0);
    const double nu0 = sched.nu(0);
    const double mean_ref = std::sqrt(1 - nu0) * x0;
    OrderSeries me{"mean", {}, {}}, ve{"variance", {}, {}};
    for (std::size_t N : est.N_list) {
      StepSpec ss = cfg.steps;
      ss.N = N;
      const StepSchedule steps = steps_from(ss, sched.T());
      const WeakMoments w =
          opts.moment_matching
              ? weak_moments_matched(solver, sched, steps, x0, cfg.batch, cfg.seed, opts.threads)
              : weak_moments_plain(solver, sched, steps, x0, cfg.batch, cfg.seed, opts.threads);
      me.errors.push_back(std::abs(w.mean - mean_ref));
      ve.errors.push_back(std::abs(w.variance - nu0));
    }
    me.fit = fit_loglog(est.h_list, me.errors);
    ve.fit = fit_loglog(est.h_list, ve.errors);
    est.series = {me, ve};
    return est;
  }
  if (cfg.oracle.kind != "delta" && opts.reference == Reference::ClosedForm)
    throw invalid_argument("reference", "closed-form reference needs the delta oracle");
  const ScoreField score = oracle_from(cfg);
  const Vec xT(cfg.dim, 1.0);
  SampleOptions so;
  so.start = FixedStart{xT};
  so.threads = 1;
  OrderSeries se{"state", {}, {}};
  for (std::size_t N : est.N_list) {
    StepSpec ss = cfg.steps;
    ss.N = N;
    const StepSchedule steps = steps_from(ss, sched.T());
    const Vec x = sample(solver, sched, steps, score, cfg.dim, 1, cfg.seed, so).front().final;
    Vec ref;
    if (opts.reference == Reference::ClosedForm) {
      ref = delta_flow_solution(sched, broadcast(cfg.oracle.x0, cfg.dim, "oracle.x0"), xT, 0.0);
    } else {
      StepSpec fine = cfg.steps;
      fine.N = N * 32;
      ref = sample(SolverKind::RK4, sched, steps_from(fine, sched.T()), score, cfg.dim, 1, cfg.seed,
                   so)
                .front()
                .final;
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      num += (x[i] - ref[i]) * (x[i] - ref[i]);
      den += ref[i] * ref[i];
    }
    se.errors.push_back(den > 0 ? std::sqrt(num / den) : std::sqrt(num));
  }
  se.fit = fit_loglog(est.h_list, se.errors);
  est.series = {se};
  return est;
}

inline void write_order_csv(std::ostream &os, const OrderEstimate &e) {
  os << "solver,metric,N,h,error,slope,r2\n";
  for (const auto &s : e.series)
    for (std::size_t i = 0; i < e.h_list.size(); ++i)
      os << solver_name(e.solver) << ',' << s.metric << ',' << e.N_list[i] << ','
         << csv::num(e.h_list[i]) << ',' << csv::num(s.errors[i]) << ',' << csv::num(s.fit.slope)
         << ',' << csv::num(s.fit.r2) << '\n';
}

} // namespace dsl
