#pragma once

// Score sources in the network convention
//
//     S(x, t) = -sqrt(nu_t) * grad_x log p(x, t).
//
// Every solver in the library consumes S in this convention. A sign or
// sqrt(nu) scale slip here silently turns a sampler into a divergent one, so
// the oracles below are the only place where S is formed from data.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsl/error.hpp"
#include "dsl/schedules.hpp"

namespace dsl {

using Vec = std::vector<double>;

// Discrete data distribution: points stored row-major, optional weights.
class PointCloudData {
public:
  PointCloudData() = default;

  PointCloudData(std::vector<double> flat, std::size_t dim, std::vector<double> weights = {})
      : flat_(std::move(flat)), dim_(dim), weights_(std::move(weights)) {
    if (dim_ == 0)
      throw invalid_argument("dim", "points must have positive dimension");
    if (flat_.empty())
      throw invalid_argument("points", "dataset is empty");
    if (flat_.size() % dim_ != 0)
      throw invalid_argument("points", "flat buffer is not a multiple of the dimension");
    if (!weights_.empty()) {
      if (weights_.size() != size())
        throw invalid_argument("weights", "one weight per point required");
      double total = 0;
      for (double w : weights_) {
        if (!(w >= 0))
          throw invalid_argument("weights", "must be nonnegative");
        total += w;
      }
      if (!(total > 0))
        throw invalid_argument("weights", "must not all be zero");
      for (double &w : weights_)
        w /= total;
    }
  }

  static PointCloudData from_points(const std::vector<Vec> &points,
                                    std::vector<double> weights = {}) {
    if (points.empty())
      throw invalid_argument("points", "dataset is empty");
    const std::size_t d = points.front().size();
    std::vector<double> flat;
    flat.reserve(points.size() * d);
    for (const auto &p : points) {
      if (p.size() != d)
        throw invalid_argument("points", "all points must share one dimension");
      flat.insert(flat.end(), p.begin(), p.end());
    }
    return PointCloudData(std::move(flat), d, std::move(weights));
  }

  std::size_t size() const noexcept { return dim_ ? flat_.size() / dim_ : 0; }
  std::size_t dim() const noexcept { return dim_; }
  bool uniform() const noexcept { return weights_.empty(); }

  std::span<const double> point(std::size_t i) const {
    return {flat_.data() + i * dim_, dim_};
  }

  // Normalized weight of point i (uniform when none were given).
  double weight(std::size_t i) const noexcept {
    return weights_.empty() ? 1.0 / static_cast<double>(size()) : weights_[i];
  }

  const std::vector<double> &flat() const noexcept { return flat_; }
  const std::vector<double> &weights() const noexcept { return weights_; }

private:
  std::vector<double> flat_;
  std::size_t dim_ = 0;
  std::vector<double> weights_;
};

namespace detail {

inline void require_positive_nu(double nu) {
  if (!(nu > 0))
    throw singularity_error("score is singular at nu = " + std::to_string(nu));
}

inline void require_same_dim(std::size_t a, std::size_t b, const char *field) {
  if (a != b)
    throw invalid_argument(field, "dimension " + std::to_string(b) + " does not match " +
                                      std::to_string(a));
}

} // namespace detail

// Single data point x0: S = (x - sqrt(1-nu) x0) / sqrt(nu).
inline Vec score_delta(std::span<const double> x, double nu, std::span<const double> x0) {
  detail::require_positive_nu(nu);
  detail::require_same_dim(x.size(), x0.size(), "x0");
  const double a = std::sqrt(1 - nu), inv = 1 / std::sqrt(nu);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = (x[i] - a * x0[i]) * inv;
  return out;
}

inline Vec score_delta(std::span<const double> x, double t, std::span<const double> x0,
                       const NoiseSchedule &sched) {
  return score_delta(x, sched.nu(t), x0);
}

// Gaussian data N(mean, var I): the marginal is N(sqrt(1-nu) mean, ((1-nu)var + nu) I).
inline Vec score_gaussian(std::span<const double> x, double nu, std::span<const double> mean,
                          double var) {
  detail::require_positive_nu(nu);
  detail::require_same_dim(x.size(), mean.size(), "mean");
  if (!(var >= 0))
    throw invalid_argument("var", "must be nonnegative");
  const double a = std::sqrt(1 - nu);
  const double scale = std::sqrt(nu) / ((1 - nu) * var + nu);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = scale * (x[i] - a * mean[i]);
  return out;
}

inline Vec score_gaussian(std::span<const double> x, double t, std::span<const double> mean,
                          double var, const NoiseSchedule &sched) {
  return score_gaussian(x, sched.nu(t), mean, var);
}

// Posterior responsibilities q(x0_i | x): softmax over i of
// log w_i - |x - sqrt(1-nu) x0_i|^2 / (2 nu), stabilized by max-subtraction.
inline Vec posterior_weights(std::span<const double> x, double nu, const PointCloudData &data) {
  detail::require_positive_nu(nu);
  if (data.size() == 0)
    throw invalid_argument("data", "dataset is empty");
  detail::require_same_dim(x.size(), data.dim(), "data");
  const double a = std::sqrt(1 - nu);
  const std::size_t n = data.size(), d = data.dim();
  Vec logit(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = data.point(i);
    double dist2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = x[j] - a * p[j];
      dist2 += r * r;
    }
    const double w = data.weight(i);
    logit[i] = (w > 0 ? std::log(w) : -std::numeric_limits<double>::infinity()) -
               dist2 / (2 * nu);
    top = std::max(top, logit[i]);
  }
  double total = 0;
  for (double &l : logit) {
    l = std::exp(l - top);
    total += l;
  }
  for (double &l : logit)
    l /= total;
  return logit;
}

inline Vec posterior_weights(std::span<const double> x, double t, const PointCloudData &data,
                             const NoiseSchedule &sched) {
  return posterior_weights(x, sched.nu(t), data);
}

// Exact score of the noised point cloud, brute force over all points.
inline Vec score_mixture_exact(std::span<const double> x, double nu,
                               const PointCloudData &data) {
  const Vec q = posterior_weights(x, nu, data);
  const double a = std::sqrt(1 - nu), inv = 1 / std::sqrt(nu);
  const std::size_t d = data.dim();
  Vec mean(d, 0.0); // posterior mean of x0
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (q[i] == 0)
      continue;
    const auto p = data.point(i);
    for (std::size_t j = 0; j < d; ++j)
      mean[j] += q[i] * p[j];
  }
  Vec out(d);
  for (std::size_t j = 0; j < d; ++j)
    out[j] = (x[j] - a * mean[j]) * inv;
  return out;
}

inline Vec score_mixture_exact(std::span<const double> x, double t, const PointCloudData &data,
                               const NoiseSchedule &sched) {
  return score_mixture_exact(x, sched.nu(t), data);
}

// ---------------------------------------------------------------------------
// Score sources consumed by the samplers.

template <class F>
concept ScoreSource = requires(const F &f, std::span<const double> x, const ScheduleSample &s,
                               std::span<double> out) {
  { f.dim() } -> std::convertible_to<std::size_t>;
  f.evaluate(x, s, out);
};

class DeltaScore {
public:
  explicit DeltaScore(Vec x0) : x0_(std::move(x0)) {
    if (x0_.empty())
      throw invalid_argument("x0", "must have positive dimension");
  }
  std::size_t dim() const noexcept { return x0_.size(); }
  const Vec &point() const noexcept { return x0_; }
  void evaluate(std::span<const double> x, const ScheduleSample &s, std::span<double> out) const {
    detail::require_positive_nu(s.nu);
    const double a = std::sqrt(1 - s.nu), inv = 1 / std::sqrt(s.nu);
    for (std::size_t i = 0; i < x0_.size(); ++i)
      out[i] = (x[i] - a * x0_[i]) * inv;
  }

private:
  Vec x0_;
};

class GaussianScore {
public:
  GaussianScore(Vec mean, double var) : mean_(std::move(mean)), var_(var) {
    if (mean_.empty())
      throw invalid_argument("mean", "must have positive dimension");
    if (!(var_ >= 0))
      throw invalid_argument("var", "must be nonnegative");
  }
  std::size_t dim() const noexcept { return mean_.size(); }
  double variance() const noexcept { return var_; }
  const Vec &mean() const noexcept { return mean_; }
  void evaluate(std::span<const double> x, const ScheduleSample &s, std::span<double> out) const {
    detail::require_positive_nu(s.nu);
    const double a = std::sqrt(1 - s.nu);
    const double scale = std::sqrt(s.nu) / ((1 - s.nu) * var_ + s.nu);
    for (std::size_t i = 0; i < mean_.size(); ++i)
      out[i] = scale * (x[i] - a * mean_[i]);
  }

private:
  Vec mean_;
  double var_;
};

class MixtureScore {
public:
  explicit MixtureScore(std::shared_ptr<const PointCloudData> data) : data_(std::move(data)) {
    if (!data_ || data_->size() == 0)
      throw invalid_argument("data", "dataset is empty");
  }
  std::size_t dim() const noexcept { return data_->dim(); }
  const PointCloudData &data() const noexcept { return *data_; }
  void evaluate(std::span<const double> x, const ScheduleSample &s, std::span<double> out) const {
    const Vec r = score_mixture_exact(x, s.nu, *data_);
    std::copy(r.begin(), r.end(), out.begin());
  }

private:
  std::shared_ptr<const PointCloudData> data_;
};

// Type-erased score field. Wraps any ScoreSource, or an externally supplied
// evaluator (the slot a trained network would plug into).
class ScoreField {
public:
  using Evaluator =
      std::function<void(std::span<const double> x, const ScheduleSample &s, std::span<double> out)>;

  ScoreField(std::size_t dim, std::string kind, Evaluator eval)
      : dim_(dim), kind_(std::move(kind)), eval_(std::move(eval)) {
    if (dim_ == 0)
      throw invalid_argument("dim", "must be positive");
    if (!eval_)
      throw invalid_argument("evaluator", "must be callable");
  }

  template <ScoreSource F>
  ScoreField(F source, std::string kind) : dim_(source.dim()), kind_(std::move(kind)) {
    if (dim_ == 0)
      throw invalid_argument("dim", "must be positive");
    eval_ = [src = std::move(source)](std::span<const double> x, const ScheduleSample &s,
                                      std::span<double> out) { src.evaluate(x, s, out); };
  }

  std::size_t dim() const noexcept { return dim_; }
  const std::string &kind() const noexcept { return kind_; }

  void evaluate(std::span<const double> x, const ScheduleSample &s, std::span<double> out) const {
    eval_(x, s, out);
  }

  Vec score(std::span<const double> x, double t, const NoiseSchedule &sched) const {
    detail::require_same_dim(dim_, x.size(), "x");
    Vec out(dim_);
    evaluate(x, sched.eval(t), out);
    return out;
  }

private:
  std::size_t dim_;
  std::string kind_;
  Evaluator eval_;
};

} // namespace dsl
