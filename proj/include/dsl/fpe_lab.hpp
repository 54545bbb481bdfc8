#pragma once

// Langevin particles versus the Fokker-Planck equation on a 2-D potential.
//
//     dx = -grad U dt + sqrt(2D) dB     <->     dp/dt = div(grad U p) + D lap p
//
// Both start from N(0, I). The grid scheme is conservative: cell-centered
// densities on [-L, L]^2, fluxes on faces, zero flux through the boundary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "dsl/csv.hpp"
#include "dsl/error.hpp"
#include "dsl/parallel.hpp"
#include "dsl/rng.hpp"

namespace dsl {

using Point2 = std::array<double, 2>;

// U = -log sum_k exp(-|x - c_k|^2 / (2 sigma^2)). With no centers U = 0.
struct GmmPotential {
  std::vector<Point2> centers;
  double sigma = 0.1;
  double D = 5.0;

  // Five wells on the unit circle at angles 2 k pi / 5.
  static GmmPotential five_well(double sigma = 0.1, double D = 5.0) {
    GmmPotential p{{}, sigma, D};
    for (int k = 1; k <= 5; ++k) {
      const double a = 2 * k * std::numbers::pi / 5;
      p.centers.push_back({std::cos(a), std::sin(a)});
    }
    p.validate();
    return p;
  }

  static GmmPotential flat(double D) {
    GmmPotential p{{}, 1.0, D};
    p.validate();
    return p;
  }

  void validate() const {
    if (!(sigma > 0))
      throw invalid_argument("sigma", "must be positive");
    if (!(D >= 0))
      throw invalid_argument("D", "must be nonnegative");
  }

  double U(const Point2 &x) const {
    if (centers.empty())
      return 0.0;
    double top = -std::numeric_limits<double>::infinity();
    std::array<double, 16> e{};
    std::vector<double> big;
    double *ev = centers.size() <= e.size() ? e.data() : (big.resize(centers.size()), big.data());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double dx = x[0] - centers[k][0], dy = x[1] - centers[k][1];
      ev[k] = -(dx * dx + dy * dy) / (2 * sigma * sigma);
      top = std::max(top, ev[k]);
    }
    double s = 0;
    for (std::size_t k = 0; k < centers.size(); ++k)
      s += std::exp(ev[k] - top);
    return -(top + std::log(s));
  }

  // grad U = sum_k w_k (x - c_k) / sigma^2 with softmax weights w_k.
  Point2 grad(const Point2 &x) const {
    if (centers.empty())
      return {0.0, 0.0};
    double top = -std::numeric_limits<double>::infinity();
    std::array<double, 16> e{};
    std::vector<double> big;
    double *ev = centers.size() <= e.size() ? e.data() : (big.resize(centers.size()), big.data());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double dx = x[0] - centers[k][0], dy = x[1] - centers[k][1];
      ev[k] = -(dx * dx + dy * dy) / (2 * sigma * sigma);
      top = std::max(top, ev[k]);
    }
    double s = 0, gx = 0, gy = 0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double w = std::exp(ev[k] - top);
      s += w;
      gx += w * (x[0] - centers[k][0]);
      gy += w * (x[1] - centers[k][1]);
    }
    const double inv = 1 / (s * sigma * sigma);
    return {gx * inv, gy * inv};
  }
};

// Cell-centered values on [-L, L]^2; values[i * n + j] is cell (x_i, y_j).
struct DensityGrid {
  double L = 2.0;
  std::size_t n = 64;
  std::vector<double> values;

  DensityGrid() = default;
  DensityGrid(double L_, std::size_t n_) : L(L_), n(n_), values(n_ * n_, 0.0) {
    if (!(L > 0))
      throw invalid_argument("L", "must be positive");
    if (n < 2)
      throw invalid_argument("n", "grid needs at least 2 cells per side");
  }

  double cell() const noexcept { return 2 * L / static_cast<double>(n); }
  double center(std::size_t i) const noexcept { return -L + cell() * (static_cast<double>(i) + 0.5); }
  double &at(std::size_t i, std::size_t j) { return values[i * n + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }

  double mass() const {
    double s = 0;
    for (double v : values)
      s += v;
    return s * cell() * cell();
  }

  void normalize() {
    const double m = mass();
    if (!(m > 0))
      throw domain_error("density grid has no mass");
    for (double &v : values)
      v /= m;
  }
};

// N(0, I) sampled at cell centers, renormalized to unit mass on the grid.
inline DensityGrid standard_normal_grid(double L = 2.0, std::size_t n = 64) {
  DensityGrid g(L, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = g.center(i), y = g.center(j);
      g.at(i, j) = std::exp(-0.5 * (x * x + y * y));
    }
  g.normalize();
  return g;
}

// exp(-U/D) at cell centers, renormalized on the grid.
inline DensityGrid stationary_grid(const GmmPotential &pot, double L = 2.0, std::size_t n = 64) {
  if (!(pot.D > 0))
    throw invalid_argument("D", "stationary density needs D > 0");
  DensityGrid g(L, n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      g.at(i, j) = -pot.U({g.center(i), g.center(j)}) / pot.D;
      top = std::max(top, g.at(i, j));
    }
  for (double &v : g.values)
    v = std::exp(v - top);
  g.normalize();
  return g;
}

// ---------------------------------------------------------------------------
// Fokker-Planck

struct FpeSnapshot {
  std::size_t step = 0;
  double t = 0;
  DensityGrid grid;
};

struct FpeResult {
  std::vector<FpeSnapshot> snapshots;
  double max_step_mass_drift = 0;  // relative, before clamping
  double max_clamp_correction = 0; // negative mass removed per step
};

// Largest stable h for the explicit scheme: the smaller of cell^2/(4D) and
// cell / max |grad U| over the faces.
inline double fpe_max_stable_h(const GmmPotential &pot, double L, std::size_t n) {
  const DensityGrid g(L, n);
  const double dx = g.cell();
  double gmax = 0;
  for (std::size_t i = 0; i <= n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double xf = -L + dx * static_cast<double>(i), yc = g.center(j);
      const Point2 gx = pot.grad({xf, yc}), gy = pot.grad({yc, xf});
      gmax = std::max({gmax, std::abs(gx[0]), std::abs(gy[1])});
    }
  double h = std::numeric_limits<double>::infinity();
  if (pot.D > 0)
    h = std::min(h, dx * dx / (4 * pot.D));
  if (gmax > 0)
    h = std::min(h, dx / gmax);
  return h;
}

// Explicit flux-form update. Face flux F = -grad U p_face - D dp/dn with
// p_face the mean of the two neighbors. Negative values after a step are set
// to 0 and the grid is rescaled to the mass it had before the step.
inline FpeResult fpe_evolve(const GmmPotential &pot, DensityGrid grid, double h,
                            std::size_t n_steps, std::size_t snapshot_every = 50) {
  pot.validate();
  if (!(h > 0))
    throw invalid_argument("h", "must be positive");
  const double hmax = fpe_max_stable_h(pot, grid.L, grid.n);
  if (h > hmax)
    throw invalid_argument("h", "explicit scheme is unstable; use h <= " + csv::num(hmax));
  const std::size_t n = grid.n;
  const double dx = grid.cell(), D = pot.D;
  // gxf[i*n + j]: x-component of grad U on the face between cells (i, j) and (i+1, j).
  std::vector<double> gxf((n - 1) * n), gyf(n * (n - 1));
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      gxf[i * n + j] = pot.grad({-grid.L + dx * static_cast<double>(i + 1), grid.center(j)})[0];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j + 1 < n; ++j)
      gyf[i * (n - 1) + j] =
          pot.grad({grid.center(i), -grid.L + dx * static_cast<double>(j + 1)})[1];

  FpeResult out;
  if (snapshot_every > 0)
    out.snapshots.push_back({0, 0.0, grid});
  std::vector<double> div(n * n);
  for (std::size_t step = 1; step <= n_steps; ++step) {
    const double m0 = grid.mass();
    std::fill(div.begin(), div.end(), 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double a = grid.at(i, j), b = grid.at(i + 1, j);
        const double f = -gxf[i * n + j] * 0.5 * (a + b) - D * (b - a) / dx;
        div[i * n + j] += f;
        div[(i + 1) * n + j] -= f;
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j + 1 < n; ++j) {
        const double a = grid.at(i, j), b = grid.at(i, j + 1);
        const double f = -gyf[i * (n - 1) + j] * 0.5 * (a + b) - D * (b - a) / dx;
        div[i * n + j] += f;
        div[i * n + j + 1] -= f;
      }
    const double k = h / dx;
    double negative = 0;
    for (std::size_t c = 0; c < n * n; ++c) {
      double v = grid.values[c] - k * div[c];
      if (v < 0) {
        negative -= v;
        v = 0;
      }
      grid.values[c] = v;
    }
    const double cell2 = dx * dx;
    negative *= cell2;
    const double m1 = grid.mass();
    out.max_step_mass_drift =
        std::max(out.max_step_mass_drift, std::abs(m1 - negative - m0) / m0);
    out.max_clamp_correction = std::max(out.max_clamp_correction, negative);
    if (negative > 0)
      for (double &v : grid.values)
        v *= m0 / m1;
    if (snapshot_every > 0 && (step % snapshot_every == 0 || step == n_steps))
      out.snapshots.push_back({step, h * static_cast<double>(step), grid});
  }
  if (snapshot_every == 0)
    out.snapshots.push_back({n_steps, h * static_cast<double>(n_steps), grid});
  return out;
}

// ---------------------------------------------------------------------------
// Langevin

struct ParticleSnapshot {
  std::size_t step = 0;
  double t = 0;
  std::vector<Point2> particles;
};

// Euler-Maruyama on dx = -grad U dt + sqrt(2D) dB. Particle p draws its
// start from stream address (p, 0, 0) and the noise of step s from (p, s, 0).
inline std::vector<ParticleSnapshot> langevin_simulate(const GmmPotential &pot,
                                                       std::size_t n_particles, double h,
                                                       std::size_t n_steps, std::uint64_t seed,
                                                       std::size_t snapshot_every = 50,
                                                       unsigned threads = 0) {
  pot.validate();
  if (!(h > 0))
    throw invalid_argument("h", "must be positive");
  if (n_particles == 0)
    throw invalid_argument("n_particles", "must be positive");
  std::vector<std::size_t> marks;
  if (snapshot_every > 0)
    for (std::size_t s = 0; s <= n_steps; s += snapshot_every)
      marks.push_back(s);
  if (marks.empty() || marks.back() != n_steps)
    marks.push_back(n_steps);
  std::vector<ParticleSnapshot> snaps(marks.size());
  for (std::size_t k = 0; k < marks.size(); ++k)
    snaps[k] = {marks[k], h * static_cast<double>(marks[k]), std::vector<Point2>(n_particles)};

  const rng::Stream stream(seed, rng::Domain::langevin);
  const double noise = std::sqrt(2 * pot.D * h);
  parallel_for(n_particles, threads, [&](std::size_t p) {
    const auto [a, b] = stream.normal_pair(p, 0, 0);
    Point2 x{a, b};
    std::size_t next = 0;
    if (marks[next] == 0)
      snaps[next++].particles[p] = x;
    for (std::size_t s = 1; s <= n_steps; ++s) {
      const Point2 g = pot.grad(x);
      const auto [u, v] = stream.normal_pair(p, static_cast<std::uint32_t>(s), 0);
      x[0] += -h * g[0] + noise * u;
      x[1] += -h * g[1] + noise * v;
      if (next < marks.size() && marks[next] == s)
        snaps[next++].particles[p] = x;
    }
  });
  return snaps;
}

// Fraction of particles per grid cell, plus the fraction outside the grid.
struct Histogram {
  DensityGrid cells; // cell probabilities, not densities
  double outside = 0;
};

inline Histogram bin_particles(const std::vector<Point2> &particles, double L, std::size_t n) {
  Histogram hst{DensityGrid(L, n), 0.0};
  const double dx = hst.cells.cell();
  const double w = 1.0 / static_cast<double>(particles.size());
  for (const auto &p : particles) {
    const double fi = std::floor((p[0] + L) / dx), fj = std::floor((p[1] + L) / dx);
    if (fi < 0 || fj < 0 || fi >= static_cast<double>(n) || fj >= static_cast<double>(n)) {
      hst.outside += w;
      continue;
    }
    hst.cells.at(static_cast<std::size_t>(fi), static_cast<std::size_t>(fj)) += w;
  }
  return hst;
}

// Total variation between binned particles and a grid density; particle
// mass outside the grid counts fully.
inline double tv_distance(const Histogram &hst, const DensityGrid &grid) {
  if (hst.cells.n != grid.n || hst.cells.L != grid.L)
    throw invalid_argument("grid", "histogram and density grid differ in shape");
  const double cell2 = grid.cell() * grid.cell();
  double s = 0;
  for (std::size_t c = 0; c < grid.values.size(); ++c)
    s += std::abs(hst.cells.values[c] - grid.values[c] * cell2);
  return 0.5 * (s + hst.outside);
}

inline void write_grid_csv(std::ostream &os, const DensityGrid &g) {
  os << "x,y,p\n";
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.n; ++j)
      os << csv::num(g.center(i)) << ',' << csv::num(g.center(j)) << ',' << csv::num(g.at(i, j))
         << '\n';
}

inline void write_particles_csv(std::ostream &os, const ParticleSnapshot &s) {
  os << "step,id,x,y\n";
  for (std::size_t p = 0; p < s.particles.size(); ++p)
    os << s.step << ',' << p << ',' << csv::num(s.particles[p][0]) << ','
       << csv::num(s.particles[p][1]) << '\n';
}

} // namespace dsl
