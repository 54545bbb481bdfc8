#pragma once

// Command-line front end. Exit codes: 0 success, 2 configuration error,
// 1 runtime error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dsl/error.hpp"
#include "dsl/fpe_lab.hpp"
#include "dsl/harness.hpp"
#include "dsl/samplers.hpp"
#include "dsl/spa_diagnostics.hpp"
#include "dsl/symderiv.hpp"

namespace dsl::cli {

// Raw flag values; only flags actually given override the configuration.
struct CommonFlags {
  std::string config_path, preset;
  std::string solver, schedule, step_schedule, oracle, dataset, clip, out, x0;
  double nu0 = 0, nuT = 0, T = 0;
  std::size_t steps = 0, dim = 0, batch = 0, points = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::vector<CLI::Option *> opts;

  bool given(const std::string &name) const {
    for (auto *o : opts)
      if (o->get_name() == name)
        return o->count() > 0;
    return false;
  }
};

inline void add_common(CLI::App *app, CommonFlags &f) {
  auto add = [&](CLI::Option *o) { f.opts.push_back(o); };
  add(app->add_option("--config", f.config_path, "JSON experiment configuration"));
  add(app->add_option("--preset", f.preset, "named schedule: cond-i | cond-ii"));
  add(app->add_option("--solver", f.solver,
                      "euler | heun | rk4 | ddim | taylor2 | taylor3 | euler-maruyama | ito-taylor"));
  add(app->add_option("--schedule", f.schedule, "tanh | linear | cosine"));
  add(app->add_option("--nu0", f.nu0, "tanh schedule nu at t = 0"));
  add(app->add_option("--nuT", f.nuT, "tanh schedule nu at t = T"));
  add(app->add_option("--T", f.T, "total time"));
  add(app->add_option("--steps", f.steps, "number of refinement steps"));
  add(app->add_option("--step-schedule", f.step_schedule, "constant | exponential"));
  add(app->add_option("--oracle", f.oracle, "delta | gaussian | mixture | idx | csv"));
  add(app->add_option("--dataset", f.dataset, "IDX or CSV point file"));
  add(app->add_option("--points", f.points, "synthetic mixture size"));
  add(app->add_option("--x0", f.x0, "delta data point, comma-separated or one broadcast value"));
  add(app->add_option("--dim", f.dim, "data dimension"));
  add(app->add_option("--batch", f.batch, "number of trajectories"));
  add(app->add_option("--seed", f.seed, "random seed"));
  add(app->add_option("--clip", f.clip, "clip range lo,hi"));
  add(app->add_option("--out", f.out, "output path (stdout when omitted)"));
  add(app->add_option("--threads", f.threads, "worker threads (default: DSL_THREADS or all cores)"));
}

inline std::vector<double> parse_list(const std::string &text, const char *field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size())
        throw std::invalid_argument(cell);
    } catch (const std::exception &) {
      throw invalid_argument(field, "'" + cell + "' is not a number");
    }
  }
  if (out.empty())
    throw invalid_argument(field, "empty list");
  return out;
}

inline std::string read_text(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw invalid_argument("config", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ExperimentConfig resolve(const CommonFlags &f, ExperimentConfig c) {
  if (f.given("--config"))
    c = parse_config(read_text(f.config_path));
  if (f.given("--preset"))
    c.schedule = preset_schedule(f.preset);
  if (f.given("--solver"))
    c.solver = f.solver;
  if (f.given("--schedule"))
    c.schedule.kind = f.schedule;
  if (f.given("--nu0"))
    c.schedule.nu0 = f.nu0;
  if (f.given("--nuT"))
    c.schedule.nuT = f.nuT;
  if (f.given("--T"))
    c.schedule.T = f.T;
  if (f.given("--steps"))
    c.steps.N = f.steps;
  if (f.given("--step-schedule"))
    c.steps.kind = f.step_schedule;
  if (f.given("--oracle"))
    c.oracle.kind = f.oracle;
  if (f.given("--dataset"))
    c.oracle.dataset = f.dataset;
  if (f.given("--points"))
    c.oracle.points = f.points;
  if (f.given("--x0"))
    c.oracle.x0 = parse_list(f.x0, "x0");
  if (f.given("--dim"))
    c.dim = f.dim;
  if (f.given("--batch"))
    c.batch = f.batch;
  if (f.given("--seed"))
    c.seed = f.seed;
  if (f.given("--clip")) {
    const auto v = parse_list(f.clip, "clip");
    if (v.size() != 2)
      throw invalid_argument("clip", "expected lo,hi");
    c.clip = std::make_pair(v[0], v[1]);
  }
  if (f.given("--out"))
    c.out = f.out;
  return c;
}

// Writes to the configured path, or to stdout when none is set. The summary
// line goes to stdout after a file write and to stderr otherwise.
class Output {
public:
  explicit Output(const std::string &path) : path_(path) {}
  std::ostream &stream() { return path_.empty() ? std::cout : buf_; }
  void finish(const std::string &summary) {
    if (path_.empty()) {
      std::cout.flush();
      std::cerr << summary << '\n';
      return;
    }
    std::ofstream f(path_, std::ios::binary);
    if (!f)
      throw std::runtime_error("cannot write " + path_);
    f << buf_.str();
    if (!f)
      throw std::runtime_error("write failed for " + path_);
    std::cout << summary << " -> " << path_ << '\n';
  }

private:
  std::string path_;
  std::ostringstream buf_;
};

inline std::string sibling_path(const std::string &out, const std::string &suffix) {
  const auto dot = out.rfind('.');
  const auto slash = out.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return out + suffix;
  return out.substr(0, dot) + suffix + out.substr(dot);
}

inline int cli_main(int argc, const char *const *argv) {
  CLI::App app{"Diffusion sampler toolkit: samplers, order studies, diagnostics"};
  app.require_subcommand(1);

  CommonFlags sample_f, order_f, dump_f, spa_f, sym_f, fpe_f;

  auto *sample_cmd = app.add_subcommand("sample", "run a sampler and write final samples");
  add_common(sample_cmd, sample_f);
  bool trajectory = false;
  sample_cmd->add_flag("--trajectory", trajectory, "write every step, not only the final state");

  auto *order_cmd = app.add_subcommand("order", "estimate the convergence order of a solver");
  add_common(order_cmd, order_f);
  std::size_t halvings = 6;
  std::string reference = "closed";
  bool plain_mc = false;
  order_cmd->add_option("--halvings", halvings, "number of step-size halvings");
  order_cmd->add_option("--reference", reference, "closed | fine");
  order_cmd->add_flag("--plain-mc", plain_mc, "stochastic solvers: plain Monte Carlo moments");

  auto *dump_cmd = app.add_subcommand("schedule-dump", "tabulate a noise schedule");
  add_common(dump_cmd, dump_f);
  std::size_t dump_points = 101;
  dump_cmd->add_option("--samples", dump_points, "number of evenly spaced times");

  auto *spa_cmd = app.add_subcommand("spa-sweep", "single-point approximation diagnostics");
  add_common(spa_cmd, spa_f);
  std::string grid = "0.001,0.01,0.1,0.3,0.5,0.7,0.9,0.95,0.99,0.999";
  std::size_t trials = 100, max_points = 10000;
  std::string raw_out;
  spa_cmd->add_option("--grid", grid, "comma-separated noise levels");
  spa_cmd->add_option("--trials", trials, "trials per noise level");
  spa_cmd->add_option("--max-points", max_points, "dataset subsample cap");
  spa_cmd->add_option("--raw", raw_out, "per-trial CSV path");

  auto *sym_cmd = app.add_subcommand("symdiff-dump", "print the symbolic operator table");
  add_common(sym_cmd, sym_f);

  auto *fpe_cmd = app.add_subcommand("fpe-demo", "Langevin particles versus Fokker-Planck grid");
  add_common(fpe_cmd, fpe_f);
  std::size_t particles = 100000, fpe_steps = 400, grid_n = 64, every = 50;
  double fpe_h = 5e-5, extent = 2.0, sigma = 0.1, diffusion = 5.0;
  std::string grid_out;
  fpe_cmd->add_option("--particles", particles, "Langevin particle count");
  fpe_cmd->add_option("--dt", fpe_h, "time step");
  fpe_cmd->add_option("--n-steps", fpe_steps, "number of time steps");
  fpe_cmd->add_option("--grid-n", grid_n, "cells per side");
  fpe_cmd->add_option("--extent", extent, "grid half-width L");
  fpe_cmd->add_option("--every", every, "snapshot cadence in steps");
  fpe_cmd->add_option("--sigma", sigma, "well width");
  fpe_cmd->add_option("--D", diffusion, "diffusion constant");
  fpe_cmd->add_option("--grid-out", grid_out, "CSV path for the final FPE grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (sample_cmd->parsed()) {
      ExperimentConfig cfg;
      cfg.solver = "ddim";
      cfg = resolve(sample_f, cfg);
      const SolverKind solver = solver_from(cfg);
      const NoiseSchedule sched = schedule_from(cfg.schedule);
      const StepSchedule steps = steps_from(cfg.steps, sched.T());
      const ScoreField score = oracle_from(cfg);
      SampleOptions so = sample_options_from(cfg);
      so.record_trajectory = trajectory;
      so.threads = sample_f.threads;
      const auto runs = sample(solver, sched, steps, score, cfg.dim, cfg.batch, cfg.seed, so);
      Output out(cfg.out);
      write_samples_csv(out.stream(), runs, cfg.dim);
      if (!cfg.out.empty()) {
        Output summary(sibling_path(cfg.out, "_summary"));
        write_summary_csv(summary.stream(), runs);
        summary.finish("summary: " + std::to_string(runs.size()) + " runs");
      } else {
        write_summary_csv(std::cerr, runs);
      }
      out.finish("sample: solver=" + std::string(solver_name(solver)) +
                 " runs=" + std::to_string(runs.size()) + " N=" + std::to_string(steps.N) +
                 " nfe=" + std::to_string(runs.front().nfe));
      return 0;
    }
    if (order_cmd->parsed()) {
      ExperimentConfig cfg = resolve(order_f, ExperimentConfig{});
      const SolverKind solver = solver_from(cfg);
      if (is_stochastic(solver) && !order_f.given("--batch") && !order_f.given("--config"))
        cfg.batch = 100000;
      OrderOptions oo;
      if (reference == "closed")
        oo.reference = Reference::ClosedForm;
      else if (reference == "fine")
        oo.reference = Reference::FineStep;
      else
        throw invalid_argument("reference", "expected closed or fine");
      oo.moment_matching = !plain_mc;
      oo.threads = order_f.threads;
      const OrderEstimate est = estimate_order(cfg, halvings, oo);
      Output out(cfg.out);
      write_order_csv(out.stream(), est);
      std::string line = "order: solver=" + std::string(solver_name(solver));
      for (const auto &s : est.series)
        line += " " + s.metric + "_slope=" + csv::num(s.fit.slope);
      out.finish(line);
      return 0;
    }
    if (dump_cmd->parsed()) {
      ExperimentConfig cfg = resolve(dump_f, ExperimentConfig{});
      const NoiseSchedule sched = schedule_from(cfg.schedule);
      Output out(cfg.out);
      write_schedule_csv(out.stream(), sched, dump_points);
      out.finish("schedule-dump: kind=" + sched.kind_name() + " rows=" + std::to_string(dump_points));
      return 0;
    }
    if (spa_cmd->parsed()) {
      ExperimentConfig defaults;
      defaults.oracle.kind = "mixture";
      defaults.dim = 32;
      ExperimentConfig cfg = resolve(spa_f, defaults);
      if (cfg.oracle.kind == "idx" || cfg.oracle.kind == "csv") {
        if (!spa_f.given("--dim"))
          cfg.dim = 0;
      }
      const PointCloudData data = cfg.oracle.kind == "mixture" || cfg.oracle.kind == "idx" ||
                                          cfg.oracle.kind == "csv"
                                      ? dataset_from(cfg)
                                      : throw invalid_argument("oracle", "spa-sweep needs a dataset oracle");
      if (cfg.dim != 0 && data.dim() != cfg.dim)
        throw invalid_argument("dim", "dataset has dimension " + std::to_string(data.dim()));
      SpaSweepOptions so;
      so.max_points = max_points;
      so.threads = spa_f.threads;
      const auto res = spa_sweep(data, parse_list(grid, "grid"), trials, cfg.seed, so);
      Output out(cfg.out);
      write_spa_csv(out.stream(), res.rows);
      if (!raw_out.empty()) {
        Output raw(raw_out);
        write_spa_trials_csv(raw.stream(), res.trials);
        raw.finish("spa-sweep: raw trials");
      }
      out.finish("spa-sweep: points=" + std::to_string(res.points_used) +
                 " grid=" + std::to_string(res.rows.size()) + " trials=" + std::to_string(trials));
      return 0;
    }
    if (sym_cmd->parsed()) {
      ExperimentConfig cfg = resolve(sym_f, ExperimentConfig{});
      Output out(cfg.out);
      out.stream() << sym::symdiff_dump();
      out.finish("symdiff-dump: operator table and coefficient series");
      return 0;
    }
    if (fpe_cmd->parsed()) {
      ExperimentConfig cfg = resolve(fpe_f, ExperimentConfig{});
      const GmmPotential pot = GmmPotential::five_well(sigma, diffusion);
      const FpeResult fpe =
          fpe_evolve(pot, standard_normal_grid(extent, grid_n), fpe_h, fpe_steps, every);
      const auto snaps =
          langevin_simulate(pot, particles, fpe_h, fpe_steps, cfg.seed, every, fpe_f.threads);
      Output out(cfg.out);
      out.stream() << "step,t,tv_distance,fpe_mass\n";
      double final_tv = 0;
      for (std::size_t k = 0; k < snaps.size() && k < fpe.snapshots.size(); ++k) {
        const auto &g = fpe.snapshots[k].grid;
        final_tv = tv_distance(bin_particles(snaps[k].particles, extent, grid_n), g);
        out.stream() << snaps[k].step << ',' << csv::num(snaps[k].t) << ',' << csv::num(final_tv)
                     << ',' << csv::num(g.mass()) << '\n';
      }
      if (!grid_out.empty()) {
        Output go(grid_out);
        write_grid_csv(go.stream(), fpe.snapshots.back().grid);
        go.finish("fpe-demo: final grid");
      }
      out.finish("fpe-demo: final_tv=" + csv::num(final_tv) +
                 " max_mass_drift=" + csv::num(fpe.max_step_mass_drift) +
                 " max_clamp=" + csv::num(fpe.max_clamp_correction));
      return 0;
    }
  } catch (const dsl::invalid_argument &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dsl::format_error &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dsl::unsupported_schedule &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

} // namespace dsl::cli
