#pragma once

// How far the exact score of a point cloud is from the single-point score
// of the data point that generated the noisy sample.
//
// For x_t ~ N(sqrt(1-nu) x0_i, nu I) the exact score of the noised cloud and
// the single-point score (x_t - sqrt(1-nu) x0_i)/sqrt(nu) share the factor
// sqrt(nu) with the log-density gradients, so relative error and cosine
// similarity are the same in either convention.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dsl/csv.hpp"
#include "dsl/error.hpp"
#include "dsl/parallel.hpp"
#include "dsl/rng.hpp"
#include "dsl/score_field.hpp"

namespace dsl {

// ---------------------------------------------------------------------------
// Dataset ingestion

// IDX files: big-endian magic 0x00000801 (vector of bytes) or 0x00000803
// (stack of 2-D images), then one 32-bit big-endian size per dimension,
// then the unsigned bytes. Pixels are scaled to [0, 1].
inline PointCloudData parse_idx(std::span<const unsigned char> bytes) {
  auto need = [&](std::size_t offset, std::size_t count, const char *what) {
    if (bytes.size() < offset + count)
      throw format_error(std::string("truncated IDX file: missing ") + what, bytes.size());
  };
  auto be32 = [&](std::size_t off) {
    return (std::uint32_t{bytes[off]} << 24) | (std::uint32_t{bytes[off + 1]} << 16) |
           (std::uint32_t{bytes[off + 2]} << 8) | std::uint32_t{bytes[off + 3]};
  };
  need(0, 4, "magic number");
  const std::uint32_t magic = be32(0);
  if (magic != 0x00000803u && magic != 0x00000801u)
    throw format_error("bad IDX magic number", 0);
  const std::size_t ndims = magic & 0xffu;
  need(4, 4 * ndims, "dimension sizes");
  std::vector<std::size_t> sizes(ndims);
  for (std::size_t i = 0; i < ndims; ++i)
    sizes[i] = be32(4 + 4 * i);
  const std::size_t n = sizes[0];
  std::size_t d = 1;
  for (std::size_t i = 1; i < ndims; ++i)
    d *= sizes[i];
  if (n == 0 || d == 0)
    throw format_error("IDX file declares an empty array", 4);
  const std::size_t header = 4 + 4 * ndims;
  need(header, n * d, "pixel data");
  std::vector<double> flat(n * d);
  for (std::size_t i = 0; i < n * d; ++i)
    flat[i] = bytes[header + i] / 255.0;
  return PointCloudData(std::move(flat), d);
}

inline std::vector<unsigned char> read_file_bytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline PointCloudData load_idx(const std::string &path) {
  const auto bytes = read_file_bytes(path);
  return parse_idx(bytes);
}

// One point per line, comma-separated. A first line that does not parse as
// numbers is taken as a header.
inline PointCloudData load_points_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  std::vector<double> flat;
  std::size_t dim = 0, lineno = 0, offset = 0;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    ++lineno;
    if (line.empty())
      continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos)
          numeric = false;
      } catch (const std::exception &) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (lineno == 1)
        continue;
      throw format_error("non-numeric value on line " + std::to_string(lineno), line_offset);
    }
    if (dim == 0)
      dim = row.size();
    else if (row.size() != dim)
      throw format_error("line " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                             " values, expected " + std::to_string(dim),
                         line_offset);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  if (flat.empty())
    throw format_error("no data rows", 0);
  return PointCloudData(std::move(flat), dim);
}

// n points uniform in [0, 1]^d.
inline PointCloudData synthetic_cube_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  if (n == 0)
    throw invalid_argument("points", "must be positive");
  if (d == 0)
    throw invalid_argument("dim", "must be positive");
  const rng::Stream stream(seed, rng::Domain::dataset);
  std::vector<double> flat(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; j += 2) {
      const auto [u, v] = stream.uniform_pair(i, static_cast<std::uint32_t>(j / 2), 0);
      flat[i * d + j] = u;
      if (j + 1 < d)
        flat[i * d + j + 1] = v;
    }
  return PointCloudData(std::move(flat), d);
}

// ---------------------------------------------------------------------------
// Metrics

inline double spa_bound_rel_l2(double nu) { return std::sqrt((1 - nu) / nu); }

inline double spa_bound_cossim(double nu) {
  return 1 - 0.5 * (1 + std::sqrt((1 - nu) / nu)) * (1 - nu) / nu;
}

struct SpaReport {
  double nu = 0;
  double rel_l2 = 0;
  double cossim = 1;
  double entropy_nats = 0;
  double bound_rel_l2 = 0;
  double bound_cossim = 0;
  std::size_t index = 0; // data point the sample was drawn around
};

inline double entropy_nats(std::span<const double> q) {
  double h = 0;
  for (double p : q)
    if (p > 0)
      h -= p * std::log(p);
  return std::max(0.0, h);
}

// x_t ~ N(sqrt(1-nu) x0_index, nu I) from the stream addresses (trial, 1, j/2).
inline Vec spa_draw(const PointCloudData &data, std::size_t index, double nu,
                    const rng::Stream &stream, std::uint64_t trial) {
  if (!(nu > 0 && nu < 1))
    throw invalid_argument("nu", "must lie in (0, 1)");
  if (index >= data.size())
    throw invalid_argument("index", "out of range");
  const std::size_t d = data.dim();
  const auto x0 = data.point(index);
  const double a = std::sqrt(1 - nu), sd = std::sqrt(nu);
  Vec x(d);
  for (std::size_t j = 0; j < d; j += 2) {
    const auto [u, v] = stream.normal_pair(trial, 1, static_cast<std::uint32_t>(j / 2));
    x[j] = a * x0[j] + sd * u;
    if (j + 1 < d)
      x[j + 1] = a * x0[j + 1] + sd * v;
  }
  return x;
}

// Compares exact and single-point scores at the sample drawn by spa_draw.
inline SpaReport spa_point_metrics(const PointCloudData &data, std::size_t index, double nu,
                                   const rng::Stream &stream, std::uint64_t trial = 0) {
  const Vec x = spa_draw(data, index, nu, stream, trial);
  const std::size_t d = data.dim();
  const auto x0 = data.point(index);
  const double a = std::sqrt(1 - nu), sd = std::sqrt(nu);
  const Vec q = posterior_weights(x, nu, data);
  const Vec single = score_delta(x, nu, x0);
  Vec mean(d, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (q[i] == 0)
      continue;
    const auto p = data.point(i);
    for (std::size_t j = 0; j < d; ++j)
      mean[j] += q[i] * p[j];
  }
  double n_single = 0, n_exact = 0, n_diff = 0, dot = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const double e = (x[j] - a * mean[j]) / sd;
    n_single += single[j] * single[j];
    n_exact += e * e;
    n_diff += (e - single[j]) * (e - single[j]);
    dot += e * single[j];
  }
  if (n_single == 0 || n_exact == 0)
    throw domain_error("score vanishes at the drawn sample; metrics undefined");
  SpaReport r;
  r.nu = nu;
  r.index = index;
  r.rel_l2 = std::sqrt(n_diff / n_single);
  r.cossim = std::clamp(dot / std::sqrt(n_single * n_exact), -1.0, 1.0);
  r.entropy_nats = entropy_nats(q);
  r.bound_rel_l2 = spa_bound_rel_l2(nu);
  r.bound_cossim = spa_bound_cossim(nu);
  return r;
}

// ---------------------------------------------------------------------------
// Sweep

struct SpaRow {
  double nu = 0;
  double rel_l2_mean = 0, rel_l2_p5 = 0, rel_l2_p95 = 0;
  double cossim_mean = 0, cossim_p5 = 0, cossim_p95 = 0;
  double entropy_mean = 0;
  double bound_rel_l2 = 0, bound_cossim = 0;
};

struct SpaSweepOptions {
  std::size_t max_points = 10000; // subsample cap for the brute-force score
  unsigned threads = 0;
};

struct SpaSweepResult {
  std::vector<SpaRow> rows;
  std::vector<SpaReport> trials; // grid-major
  std::size_t points_used = 0;
};

// Linear-interpolated percentile, q in [0, 100].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty())
    throw invalid_argument("values", "percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Deterministic subset of at most `cap` points (partial Fisher-Yates).
inline PointCloudData subsample(const PointCloudData &data, std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || data.size() <= cap)
    return data;
  const rng::Stream stream(seed, rng::Domain::subsample);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < cap; ++i) {
    const double u = stream.uniform_pair(i, 0, 0).first;
    const std::size_t j = i + std::min(idx.size() - i - 1,
                                       static_cast<std::size_t>(u * static_cast<double>(idx.size() - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<double> flat;
  std::vector<double> weights;
  flat.reserve(cap * data.dim());
  for (std::size_t i : idx) {
    const auto p = data.point(i);
    flat.insert(flat.end(), p.begin(), p.end());
    if (!data.uniform())
      weights.push_back(data.weight(i));
  }
  return PointCloudData(std::move(flat), data.dim(), std::move(weights));
}

inline SpaSweepResult spa_sweep(const PointCloudData &data, const std::vector<double> &nu_grid,
                                std::size_t trials, std::uint64_t seed,
                                const SpaSweepOptions &opts = {}) {
  if (nu_grid.empty())
    throw invalid_argument("nu_grid", "grid is empty");
  for (double nu : nu_grid)
    if (!(nu > 0 && nu < 1))
      throw invalid_argument("nu_grid", "values must lie in (0, 1)");
  if (trials == 0)
    throw invalid_argument("trials", "must be positive");
  const PointCloudData used = subsample(data, opts.max_points, seed);
  const rng::Stream stream(seed, rng::Domain::spa);
  SpaSweepResult out;
  out.points_used = used.size();
  out.trials.resize(nu_grid.size() * trials);
  parallel_for(out.trials.size(), opts.threads, [&](std::size_t k) {
    const std::size_t g = k / trials;
    const double u = stream.uniform_pair(k, 0, 0).first;
    const std::size_t index =
        std::min(used.size() - 1, static_cast<std::size_t>(u * static_cast<double>(used.size())));
    out.trials[k] = spa_point_metrics(used, index, nu_grid[g], stream, k);
  });
  for (std::size_t g = 0; g < nu_grid.size(); ++g) {
    std::vector<double> rel, cos;
    double ent = 0;
    for (std::size_t j = 0; j < trials; ++j) {
      const SpaReport &r = out.trials[g * trials + j];
      rel.push_back(r.rel_l2);
      cos.push_back(r.cossim);
      ent += r.entropy_nats;
    }
    const double n = static_cast<double>(trials);
    SpaRow row;
    row.nu = nu_grid[g];
    row.rel_l2_mean = std::accumulate(rel.begin(), rel.end(), 0.0) / n;
    row.rel_l2_p5 = percentile(rel, 5);
    row.rel_l2_p95 = percentile(rel, 95);
    row.cossim_mean = std::accumulate(cos.begin(), cos.end(), 0.0) / n;
    row.cossim_p5 = percentile(cos, 5);
    row.cossim_p95 = percentile(cos, 95);
    row.entropy_mean = ent / n;
    row.bound_rel_l2 = spa_bound_rel_l2(row.nu);
    row.bound_cossim = spa_bound_cossim(row.nu);
    out.rows.push_back(row);
  }
  return out;
}

inline void write_spa_csv(std::ostream &os, const std::vector<SpaRow> &rows) {
  os << "nu,rel_l2_mean,rel_l2_p5,rel_l2_p95,cossim_mean,cossim_p5,cossim_p95,entropy_mean,"
        "bound_rel_l2,bound_cossim\n";
  for (const auto &r : rows) {
    const double v[] = {r.nu,        r.rel_l2_mean, r.rel_l2_p5,   r.rel_l2_p95,   r.cossim_mean,
                        r.cossim_p5, r.cossim_p95,  r.entropy_mean, r.bound_rel_l2, r.bound_cossim};
    csv::row(os, v);
  }
}

inline void write_spa_trials_csv(std::ostream &os, const std::vector<SpaReport> &trials) {
  os << "nu,index,rel_l2,cossim,entropy_nats\n";
  for (const auto &r : trials)
    os << csv::num(r.nu) << ',' << r.index << ',' << csv::num(r.rel_l2) << ','
       << csv::num(r.cossim) << ',' << csv::num(r.entropy_nats) << '\n';
}

} // namespace dsl
