#pragma once

// Term-rewriting engine for the ideal-derivative calculus.
//
// Expressions live in a closed ring: finite sums of rational multiples of
//
//     x^a S^b nu^p prod_n (beta^(n))^{q_n}
//
// with integer a, b >= 0 and rational p, q_n. Every Expr is kept in this
// normal form (a sorted map from monomial to nonzero coefficient), so two
// expressions are equal exactly when their maps are equal.
//
// Time runs forward inside the engine. The rewrite rules are
//
//     dS/dx = nu^{-1/2}
//     dS/dt = beta / (2 sqrt(nu)) (x - S / sqrt(nu))
//     dnu/dt = (1 - nu) beta
//     d beta^(n)/dt = beta^(n+1)
//
// and the reversed-time operators carry the sign:
//
//     Lflat  e = -de/dt - fflat  de/dx
//     Lsharp e = -de/dt - fsharp de/dx + (beta/2) d2e/dx2
//     Gsharp e = sqrt(beta) de/dx

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsl/error.hpp"

namespace dsl::sym {

// ---------------------------------------------------------------------------
// Exact rationals

class Rational {
public:
  constexpr Rational() = default;
  constexpr Rational(std::int64_t n) : num_(n), den_(1) {} // NOLINT: implicit from integers
  Rational(std::int64_t n, std::int64_t d) { assign(n, d); }

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }
  bool is_zero() const noexcept { return num_ == 0; }
  bool is_integer() const noexcept { return den_ == 1; }
  double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

  std::string str() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
  }

  friend Rational operator+(const Rational &a, const Rational &b) {
    return from128(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                   static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator-(const Rational &a) { return from128(-static_cast<__int128>(a.num_), a.den_); }
  friend Rational operator-(const Rational &a, const Rational &b) { return a + (-b); }
  friend Rational operator*(const Rational &a, const Rational &b) {
    return from128(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator/(const Rational &a, const Rational &b) {
    if (b.num_ == 0)
      throw std::domain_error("rational division by zero");
    return from128(static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_);
  }
  Rational &operator+=(const Rational &o) { return *this = *this + o; }
  Rational &operator-=(const Rational &o) { return *this = *this - o; }
  Rational &operator*=(const Rational &o) { return *this = *this * o; }

  friend bool operator==(const Rational &a, const Rational &b) noexcept {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend bool operator<(const Rational &a, const Rational &b) noexcept {
    return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
  }

  // Exact square root, if the rational is a perfect square.
  std::optional<Rational> sqrt_exact() const {
    if (num_ < 0)
      return std::nullopt;
    const auto isqrt = [](std::int64_t v) -> std::optional<std::int64_t> {
      auto r = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(v))));
      for (std::int64_t c = std::max<std::int64_t>(0, r - 2); c <= r + 2; ++c)
        if (static_cast<__int128>(c) * c == v)
          return c;
      return std::nullopt;
    };
    const auto n = isqrt(num_), d = isqrt(den_);
    if (!n || !d)
      return std::nullopt;
    return Rational(*n, *d);
  }

private:
  static Rational from128(__int128 n, __int128 d) {
    if (d == 0)
      throw std::domain_error("rational with zero denominator");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    __int128 a = n < 0 ? -n : n, b = d;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) {
      n /= a;
      d /= a;
    }
    constexpr __int128 lim = INT64_MAX;
    if (n > lim || n < -lim || d > lim)
      throw std::overflow_error("rational coefficient overflows 64 bits");
    Rational r;
    r.num_ = static_cast<std::int64_t>(n);
    r.den_ = static_cast<std::int64_t>(d);
    return r;
  }

  void assign(std::int64_t n, std::int64_t d) { *this = from128(n, d); }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

// ---------------------------------------------------------------------------
// Monomials

struct Monomial {
  int x = 0;                  // power of x
  int s = 0;                  // power of S
  Rational nu;                // power of nu
  std::vector<Rational> beta; // beta[n]: power of the n-th derivative of beta

  Rational beta_pow(std::size_t n) const { return n < beta.size() ? beta[n] : Rational(0); }

  void set_beta_pow(std::size_t n, Rational p) {
    if (beta.size() <= n)
      beta.resize(n + 1);
    beta[n] = p;
    while (!beta.empty() && beta.back().is_zero())
      beta.pop_back();
  }

  bool is_one() const noexcept { return x == 0 && s == 0 && nu.is_zero() && beta.empty(); }

  friend Monomial operator*(const Monomial &a, const Monomial &b) {
    Monomial m;
    m.x = a.x + b.x;
    m.s = a.s + b.s;
    m.nu = a.nu + b.nu;
    for (std::size_t n = 0; n < std::max(a.beta.size(), b.beta.size()); ++n)
      m.set_beta_pow(n, a.beta_pow(n) + b.beta_pow(n));
    return m;
  }

  friend bool operator==(const Monomial &a, const Monomial &b) noexcept {
    return a.x == b.x && a.s == b.s && a.nu == b.nu && a.beta == b.beta;
  }
};

// Normal-form order: degree in S, degree in x, beta multi-index (higher
// powers of lower derivatives first), then nu power.
struct MonomialOrder {
  bool operator()(const Monomial &a, const Monomial &b) const noexcept {
    if (a.s != b.s)
      return a.s < b.s;
    if (a.x != b.x)
      return a.x < b.x;
    const std::size_t n = std::max(a.beta.size(), b.beta.size());
    for (std::size_t i = 0; i < n; ++i) {
      const Rational pa = a.beta_pow(i), pb = b.beta_pow(i);
      if (!(pa == pb))
        return pb < pa;
    }
    return a.nu < b.nu;
  }
};

inline std::string beta_atom_name(std::size_t n) {
  return n == 0 ? "beta" : "beta_d" + std::to_string(n);
}

// ---------------------------------------------------------------------------
// Expressions

struct RewriteStats {
  std::size_t ideal_x = 0;  // dS/dx
  std::size_t ideal_t = 0;  // dS/dt
  std::size_t nu_dot = 0;   // dnu/dt
  std::size_t beta_dot = 0; // d beta^(n)/dt
  std::size_t x_rule = 0;   // dx/dx

  std::size_t total() const noexcept { return ideal_x + ideal_t + nu_dot + beta_dot + x_rule; }
};

class Expr {
public:
  using Terms = std::map<Monomial, Rational, MonomialOrder>;

  Expr() = default;
  Expr(Rational c) { // NOLINT: constants convert implicitly
    if (!c.is_zero())
      terms_.emplace(Monomial{}, c);
  }
  Expr(std::int64_t c) : Expr(Rational(c)) {} // NOLINT

  static Expr term(const Monomial &m, Rational c) {
    Expr e;
    e.add_term(m, c);
    return e;
  }
  static Expr x() { return term(Monomial{1, 0, {}, {}}, 1); }
  static Expr S() { return term(Monomial{0, 1, {}, {}}, 1); }
  static Expr nu(Rational p = 1) { return term(Monomial{0, 0, p, {}}, 1); }
  static Expr beta(std::size_t n = 0, Rational p = 1) {
    Monomial m;
    m.set_beta_pow(n, p);
    return term(m, 1);
  }

  const Terms &terms() const noexcept { return terms_; }
  bool is_zero() const noexcept { return terms_.empty(); }
  std::size_t size() const noexcept { return terms_.size(); }

  void add_term(const Monomial &m, Rational c) {
    if (c.is_zero())
      return;
    auto [it, inserted] = terms_.emplace(m, c);
    if (!inserted) {
      it->second += c;
      if (it->second.is_zero())
        terms_.erase(it);
    }
  }

  friend Expr operator+(Expr a, const Expr &b) {
    for (const auto &[m, c] : b.terms_)
      a.add_term(m, c);
    return a;
  }
  friend Expr operator-(const Expr &a) {
    Expr r;
    for (const auto &[m, c] : a.terms_)
      r.terms_.emplace(m, -c);
    return r;
  }
  friend Expr operator-(const Expr &a, const Expr &b) { return a + (-b); }
  friend Expr operator*(const Expr &a, const Expr &b) {
    Expr r;
    for (const auto &[ma, ca] : a.terms_)
      for (const auto &[mb, cb] : b.terms_)
        r.add_term(ma * mb, ca * cb);
    return r;
  }
  Expr &operator+=(const Expr &o) { return *this = *this + o; }
  Expr &operator-=(const Expr &o) { return *this = *this - o; }
  Expr &operator*=(const Expr &o) { return *this = *this * o; }

  friend bool operator==(const Expr &a, const Expr &b) noexcept { return a.terms_ == b.terms_; }

  // Part of the expression multiplying x^a S^b, with x and S removed.
  Expr coefficient(int xa, int sb) const {
    Expr r;
    for (const auto &[m, c] : terms_)
      if (m.x == xa && m.s == sb) {
        Monomial k = m;
        k.x = 0;
        k.s = 0;
        r.add_term(k, c);
      }
    return r;
  }

  std::set<std::string> atoms() const {
    std::set<std::string> out;
    for (const auto &[m, c] : terms_) {
      if (m.x)
        out.insert("x");
      if (m.s)
        out.insert("S");
      if (!m.nu.is_zero())
        out.insert("nu");
      for (std::size_t n = 0; n < m.beta.size(); ++n)
        if (!m.beta[n].is_zero())
          out.insert(beta_atom_name(n));
    }
    return out;
  }

private:
  Terms terms_;
};

// e^p. Rational exponents need a single-monomial base; nonnegative integer
// exponents work for any expression.
inline Expr pow(const Expr &e, Rational p) {
  if (p.is_integer() && p.num() >= 0) {
    Expr r = 1;
    for (std::int64_t i = 0; i < p.num(); ++i)
      r *= e;
    return r;
  }
  if (e.size() != 1)
    throw std::domain_error("rational power of a sum is outside the normal-form ring");
  const auto &[m, c] = *e.terms().begin();
  const Rational xp = Rational(m.x) * p, sp = Rational(m.s) * p;
  if (!xp.is_integer() || !sp.is_integer() || xp.num() < 0 || sp.num() < 0)
    throw std::domain_error("power would give x or S a non-polynomial exponent");
  Rational coeff;
  if (p.is_integer()) {
    coeff = 1;
    const std::int64_t k = p.num() < 0 ? -p.num() : p.num();
    for (std::int64_t i = 0; i < k; ++i)
      coeff *= c;
    if (p.num() < 0)
      coeff = Rational(1) / coeff;
  } else if (p == Rational(1, 2) || p == Rational(-1, 2)) {
    const auto r = c.sqrt_exact();
    if (!r)
      throw std::domain_error("coefficient " + c.str() + " has no rational square root");
    coeff = p.num() < 0 ? Rational(1) / *r : *r;
  } else if (c == Rational(1)) {
    coeff = 1;
  } else {
    throw std::domain_error("unsupported rational power of coefficient " + c.str());
  }
  Monomial k;
  k.x = static_cast<int>(xp.num());
  k.s = static_cast<int>(sp.num());
  k.nu = m.nu * p;
  for (std::size_t n = 0; n < m.beta.size(); ++n)
    k.set_beta_pow(n, m.beta[n] * p);
  return Expr::term(k, coeff);
}

// ---------------------------------------------------------------------------
// Differentiation

enum class Var { x, t };

namespace detail {

inline Monomial with_x(Monomial m, int dx) {
  m.x += dx;
  return m;
}
inline Monomial with_s(Monomial m, int ds) {
  m.s += ds;
  return m;
}
inline Monomial with_nu(Monomial m, Rational dp) {
  m.nu += dp;
  return m;
}
inline Monomial with_beta(Monomial m, std::size_t n, Rational dp) {
  m.set_beta_pow(n, m.beta_pow(n) + dp);
  return m;
}

} // namespace detail

inline Expr differentiate(const Expr &e, Var var, RewriteStats *stats = nullptr) {
  RewriteStats local;
  RewriteStats &st = stats ? *stats : local;
  Expr out;
  for (const auto &[m, c] : e.terms()) {
    if (var == Var::x) {
      if (m.x > 0) {
        out.add_term(detail::with_x(m, -1), c * m.x);
        ++st.x_rule;
      }
      if (m.s > 0) {
        out.add_term(detail::with_nu(detail::with_s(m, -1), Rational(-1, 2)), c * m.s);
        ++st.ideal_x;
      }
      continue;
    }
    // var == t
    if (m.s > 0) {
      // b S^{b-1} * beta/2 (nu^{-1/2} x - nu^{-1} S)
      const Monomial base = detail::with_beta(detail::with_s(m, -1), 0, 1);
      const Rational k = c * m.s * Rational(1, 2);
      out.add_term(detail::with_nu(detail::with_x(base, 1), Rational(-1, 2)), k);
      out.add_term(detail::with_nu(detail::with_s(base, 1), -1), -k);
      ++st.ideal_t;
    }
    if (!m.nu.is_zero()) {
      // p nu^{p-1} (1 - nu) beta = p beta nu^{p-1} - p beta nu^p
      const Monomial base = detail::with_beta(m, 0, 1);
      out.add_term(detail::with_nu(base, -1), c * m.nu);
      out.add_term(base, -(c * m.nu));
      ++st.nu_dot;
    }
    for (std::size_t n = 0; n < m.beta.size(); ++n) {
      const Rational q = m.beta[n];
      if (q.is_zero())
        continue;
      out.add_term(detail::with_beta(detail::with_beta(m, n, -1), n + 1, 1), c * q);
      ++st.beta_dot;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Drifts and operators

inline Expr fflat() {
  return Rational(-1, 2) * Expr::beta() * Expr::x() +
         Rational(1, 2) * Expr::beta() * Expr::nu(Rational(-1, 2)) * Expr::S();
}

inline Expr fsharp() {
  return Rational(-1, 2) * Expr::beta() * Expr::x() +
         Expr::beta() * Expr::nu(Rational(-1, 2)) * Expr::S();
}

// Diffusion coefficient g = sqrt(beta).
inline Expr g() { return Expr::beta(0, Rational(1, 2)); }

enum class Operator { Lflat, Lsharp, Gsharp };

inline Expr apply_operator(Operator op, const Expr &e, RewriteStats *stats = nullptr) {
  const Expr ex = differentiate(e, Var::x, stats);
  switch (op) {
  case Operator::Lflat:
    return -differentiate(e, Var::t, stats) - fflat() * ex;
  case Operator::Lsharp:
    return -differentiate(e, Var::t, stats) - fsharp() * ex +
           Rational(1, 2) * Expr::beta() * differentiate(ex, Var::x, stats);
  case Operator::Gsharp:
    return g() * ex;
  }
  return {};
}

// Drops every term containing a beta derivative of order >= `from`; a
// negative power of such a derivative is singular and rejected.
inline Expr zero_beta_derivatives(const Expr &e, std::size_t from = 1) {
  Expr out;
  for (const auto &[m, c] : e.terms()) {
    bool vanishes = false;
    for (std::size_t n = from; n < m.beta.size(); ++n) {
      if (m.beta[n] < Rational(0))
        throw std::domain_error("term has a negative power of " + beta_atom_name(n));
      if (!m.beta[n].is_zero())
        vanishes = true;
    }
    if (!vanishes)
      out.add_term(m, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::string render_power(const std::string &atom, const Rational &p) {
  if (p == Rational(1))
    return atom;
  if (p.is_integer() && p.num() > 0)
    return atom + "^" + p.str();
  return atom + "^(" + p.str() + ")";
}

// Coefficient and x/S-free factors of one term, e.g. "-1/4*beta^2*nu^(-1)".
inline std::string render_term(const Monomial &m, const Rational &c) {
  std::vector<std::string> f;
  for (std::size_t n = 0; n < m.beta.size(); ++n)
    if (!m.beta[n].is_zero())
      f.push_back(render_power(beta_atom_name(n), m.beta[n]));
  if (!m.nu.is_zero())
    f.push_back(render_power("nu", m.nu));
  std::string body;
  for (std::size_t i = 0; i < f.size(); ++i)
    body += (i ? "*" : "") + f[i];
  if (body.empty())
    return c.str();
  if (c == Rational(1))
    return body;
  if (c == Rational(-1))
    return "-" + body;
  return c.str() + "*" + body;
}

inline std::string join_signed(const std::vector<std::string> &parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string &p = parts[i];
    if (i == 0)
      out = p;
    else if (!p.empty() && p[0] == '-')
      out += " - " + p.substr(1);
    else
      out += " + " + p;
  }
  return out;
}

inline std::string render_xs(int x, int s) {
  std::string r;
  if (x)
    r += render_power("x", x);
  if (s)
    r += std::string(r.empty() ? "" : "*") + render_power("S", s);
  return r;
}

} // namespace detail

// Canonical one-line rendering, grouped by powers of x and S.
inline std::string render(const Expr &e) {
  if (e.is_zero())
    return "0";
  std::vector<std::string> groups;
  auto it = e.terms().begin();
  while (it != e.terms().end()) {
    const int x = it->first.x, s = it->first.s;
    std::vector<std::string> parts;
    for (; it != e.terms().end() && it->first.x == x && it->first.s == s; ++it)
      parts.push_back(detail::render_term(it->first, it->second));
    const std::string xs = detail::render_xs(x, s);
    if (xs.empty()) {
      groups.push_back(detail::join_signed(parts));
    } else if (parts.size() == 1) {
      const std::string &p = parts[0];
      groups.push_back(p == "1" ? xs : p == "-1" ? "-" + xs : p + "*" + xs);
    } else {
      groups.push_back("(" + detail::join_signed(parts) + ")*" + xs);
    }
  }
  return detail::join_signed(groups);
}

// ---------------------------------------------------------------------------
// Numeric evaluation

using Bindings = std::map<std::string, double>;

inline Bindings make_bindings(double x, double S, double nu, std::vector<double> beta_derivs) {
  Bindings b{{"x", x}, {"S", S}, {"nu", nu}};
  for (std::size_t n = 0; n < beta_derivs.size(); ++n)
    b[beta_atom_name(n)] = beta_derivs[n];
  return b;
}

namespace detail {

inline double lookup(const Bindings &b, const std::string &name) {
  const auto it = b.find(name);
  if (it == b.end())
    throw invalid_argument(name, "atom is unbound");
  return it->second;
}

inline double rpow(double base, const Rational &p, const std::string &name) {
  if (p.is_zero())
    return 1.0;
  if (base < 0 && !p.is_integer())
    throw domain_error("negative " + name + " raised to fractional power " + p.str());
  if (base == 0 && p < Rational(0))
    throw domain_error("zero " + name + " raised to negative power " + p.str());
  if (p.is_integer())
    return std::pow(base, static_cast<double>(p.num()));
  return std::pow(base, p.to_double());
}

} // namespace detail

inline double eval_expr(const Expr &e, const Bindings &b) {
  double total = 0;
  for (const auto &[m, c] : e.terms()) {
    double v = c.to_double();
    if (m.x)
      v *= detail::rpow(detail::lookup(b, "x"), m.x, "x");
    if (m.s)
      v *= detail::rpow(detail::lookup(b, "S"), m.s, "S");
    if (!m.nu.is_zero())
      v *= detail::rpow(detail::lookup(b, "nu"), m.nu, "nu");
    for (std::size_t n = 0; n < m.beta.size(); ++n)
      if (!m.beta[n].is_zero()) {
        const std::string name = beta_atom_name(n);
        v *= detail::rpow(detail::lookup(b, name), m.beta[n], name);
      }
    total += v;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Truncated power series in h

class HSeries {
public:
  explicit HSeries(std::size_t max_order = 4) : c_(max_order + 1) {}

  std::size_t max_order() const noexcept { return c_.size() - 1; }
  const Expr &operator[](std::size_t k) const { return c_.at(k); }
  Expr &operator[](std::size_t k) { return c_.at(k); }

  friend HSeries operator+(HSeries a, const HSeries &b) {
    a.require_same(b);
    for (std::size_t k = 0; k < a.c_.size(); ++k)
      a.c_[k] += b.c_[k];
    return a;
  }
  friend HSeries operator-(HSeries a, const HSeries &b) {
    a.require_same(b);
    for (std::size_t k = 0; k < a.c_.size(); ++k)
      a.c_[k] -= b.c_[k];
    return a;
  }
  friend HSeries operator*(const HSeries &a, const HSeries &b) {
    a.require_same(b);
    HSeries r(a.max_order());
    for (std::size_t i = 0; i < a.c_.size(); ++i) {
      if (a.c_[i].is_zero())
        continue;
      for (std::size_t j = 0; i + j < a.c_.size(); ++j)
        if (!b.c_[j].is_zero())
          r.c_[i + j] += a.c_[i] * b.c_[j];
    }
    return r;
  }
  friend HSeries operator*(const Expr &s, HSeries a) {
    for (auto &c : a.c_)
      c = s * c;
    return a;
  }

  friend bool operator==(const HSeries &a, const HSeries &b) { return a.c_ == b.c_; }

  // a0 (1 + u)^p for p in {1/2, -1}, with u = (a - a0)/a0. The constant
  // term must be one monomial free of x and S.
  HSeries sqrt() const { return binomial(Rational(1, 2)); }
  HSeries reciprocal() const { return binomial(Rational(-1)); }

  double eval(const Bindings &b, double h) const {
    double total = 0, hk = 1;
    for (const auto &c : c_) {
      total += eval_expr(c, b) * hk;
      hk *= h;
    }
    return total;
  }

private:
  void require_same(const HSeries &o) const {
    if (o.max_order() != max_order())
      throw std::invalid_argument("series truncation orders differ");
  }

  HSeries binomial(Rational p) const {
    const Expr &a0 = c_[0];
    if (a0.size() != 1)
      throw std::domain_error("series constant term must be a single nonzero monomial");
    const Monomial &m0 = a0.terms().begin()->first;
    if (m0.x != 0 || m0.s != 0)
      throw std::domain_error("series constant term must not contain x or S");
    const Expr inv0 = pow(a0, Rational(-1));
    HSeries u(max_order());
    for (std::size_t k = 1; k < c_.size(); ++k)
      u.c_[k] = c_[k] * inv0;
    // sum_j binom(p, j) u^j; u has no constant term so j <= max_order suffices.
    HSeries acc(max_order()), upow(max_order());
    upow.c_[0] = 1;
    Rational binom = 1;
    for (std::size_t j = 0; j <= max_order(); ++j) {
      acc = acc + binom * upow;
      binom = binom * (p - Rational(static_cast<std::int64_t>(j))) /
              Rational(static_cast<std::int64_t>(j + 1));
      upow = upow * u;
    }
    return pow(a0, p) * acc;
  }

  std::vector<Expr> c_;
};

// ---------------------------------------------------------------------------
// Generated coefficients

struct FlatSeries {
  HSeries rho; // x_{t-h} = rho x + mu S / sqrt(nu)
  HSeries mu;
};

// 1 + sum_{k=1}^{order} h^k/k! Lflat^{k-1}(-fflat), split into x and S/sqrt(nu) parts.
inline FlatSeries gen_flat_coefficients(int order) {
  if (order != 2 && order != 3)
    throw unsupported_schedule("symbolic Taylor coefficients are generated for orders 2 and 3");
  const auto n = static_cast<std::size_t>(order);
  FlatSeries out{HSeries(n), HSeries(n)};
  out.rho[0] = 1;
  Expr term = -fflat();
  Rational fact = 1;
  const Expr sqrt_nu = Expr::nu(Rational(1, 2));
  for (std::size_t k = 1; k <= n; ++k) {
    fact = fact * Rational(static_cast<std::int64_t>(k));
    const Rational w = Rational(1) / fact;
    out.rho[k] = w * term.coefficient(1, 0);
    out.mu[k] = w * sqrt_nu * term.coefficient(0, 1);
    if (k < n)
      term = apply_operator(Operator::Lflat, term);
  }
  return out;
}

// Quasi-Ito-Taylor step:
//   x_{t-h} = rho x + mu S/sqrt(nu) + c_w sqrt(h) w + c_wz h^{3/2} (w - z) + c_z h^{3/2} z.
struct SharpSymbolic {
  HSeries rho;
  HSeries mu;
  Expr c_w;  // g
  Expr c_wz; // Lsharp g
  Expr c_z;  // Gsharp(-fsharp)
};

inline SharpSymbolic gen_sharp_coefficients() {
  SharpSymbolic out{HSeries(2), HSeries(2), g(), apply_operator(Operator::Lsharp, g()),
                    apply_operator(Operator::Gsharp, -fsharp())};
  const Expr sqrt_nu = Expr::nu(Rational(1, 2));
  const Expr t1 = -fsharp();
  const Expr t2 = Rational(1, 2) * apply_operator(Operator::Lsharp, t1);
  out.rho[0] = 1;
  out.rho[1] = t1.coefficient(1, 0);
  out.rho[2] = t2.coefficient(1, 0);
  out.mu[1] = sqrt_nu * t1.coefficient(0, 1);
  out.mu[2] = sqrt_nu * t2.coefficient(0, 1);
  return out;
}

struct DdimSeries {
  HSeries nu_prev; // nu_{t-h}
  HSeries rho;     // sqrt((1 - nu_{t-h}) / (1 - nu_t))
  HSeries mu;      // coefficient of S (not S/sqrt(nu))
};

// Taylor expansion of the DDIM step coefficients around h = 0.
//   nu_{t-h} = sum (-h)^k/k! D^k nu
//   (1 - nu_{t-h}) / (1 - nu_t) = sum (-h)^k/k! q_k, q_0 = 1, q_{k+1} = D q_k - beta q_k
//   mu = sqrt(nu_{t-h}) - sqrt(nu) rho
inline DdimSeries expand_ddim(std::size_t order = 4) {
  if (order < 3)
    throw std::invalid_argument("DDIM expansion needs order >= 3");
  DdimSeries out{HSeries(order), HSeries(order), HSeries(order)};
  Expr dnu = Expr::nu(), q = 1;
  Rational w = 1; // (-1)^k / k!
  for (std::size_t k = 0; k <= order; ++k) {
    out.nu_prev[k] = w * dnu;
    out.rho[k] = w * q;
    dnu = differentiate(dnu, Var::t);
    q = differentiate(q, Var::t) - Expr::beta() * q;
    w = w * Rational(-1) / Rational(static_cast<std::int64_t>(k + 1));
  }
  out.rho = out.rho.sqrt();
  out.mu = out.nu_prev.sqrt() - Expr::nu(Rational(1, 2)) * out.rho;
  return out;
}

// ---------------------------------------------------------------------------
// Operator table

struct TableEntry {
  std::string name;
  Expr value;
};

inline std::vector<TableEntry> operator_table(RewriteStats *stats = nullptr) {
  const Expr mf = -fflat(), ms = -fsharp(), gg = g();
  const auto L = [&](const Expr &e) { return apply_operator(Operator::Lsharp, e, stats); };
  const auto G = [&](const Expr &e) { return apply_operator(Operator::Gsharp, e, stats); };
  const auto Lf = [&](const Expr &e) { return apply_operator(Operator::Lflat, e, stats); };
  return {
      {"Lflat(-fflat)", Lf(mf)},
      {"Lsharp(-fsharp)", L(ms)},
      {"Gsharp(-fsharp)", G(ms)},
      {"Lsharp(g)", L(gg)},
      {"Gsharp(g)", G(gg)},
      {"Lflat Lflat(-fflat)", Lf(Lf(mf))},
      {"Lsharp Lsharp(-fsharp)", L(L(ms))},
      {"Lsharp Gsharp(-fsharp)", L(G(ms))},
      {"Gsharp Lsharp(-fsharp)", G(L(ms))},
      {"Gsharp Gsharp(-fsharp)", G(G(ms))},
      {"Lsharp Lsharp(g)", L(L(gg))},
      {"Lsharp Gsharp(g)", L(G(gg))},
      {"Gsharp Lsharp(g)", G(L(gg))},
      {"Gsharp Gsharp(g)", G(G(gg))},
  };
}

namespace detail {

inline void dump_series(std::ostringstream &os, const std::string &name, const HSeries &s,
                        std::size_t upto) {
  for (std::size_t k = 0; k <= std::min(upto, s.max_order()); ++k)
    os << name << "[h^" << k << "] = " << render(s[k]) << '\n';
}

} // namespace detail

// Text dump of the operator table and the coefficient series.
inline std::string symdiff_dump() {
  std::ostringstream os;
  os << "# operator table (reversed time; g = sqrt(beta))\n";
  for (const auto &e : operator_table())
    os << e.name << " = " << render(e.value) << '\n';
  os << "\n# quasi-Taylor step: x' = rho x + mu S/sqrt(nu)\n";
  const FlatSeries flat = gen_flat_coefficients(3);
  detail::dump_series(os, "rho_flat", flat.rho, 3);
  detail::dump_series(os, "mu_flat", flat.mu, 3);
  os << "\n# quasi-Ito-Taylor step: x' = rho x + mu S/sqrt(nu) + c_w sqrt(h) w"
        " + c_wz h^(3/2) (w - z) + c_z h^(3/2) z\n";
  const SharpSymbolic sharp = gen_sharp_coefficients();
  detail::dump_series(os, "rho_sharp", sharp.rho, 2);
  detail::dump_series(os, "mu_sharp", sharp.mu, 2);
  os << "c_w = " << render(sharp.c_w) << '\n';
  os << "c_wz = " << render(sharp.c_wz) << '\n';
  os << "c_z = " << render(sharp.c_z) << '\n';
  os << "\n# DDIM step: x' = rho x + mu S\n";
  const DdimSeries ddim = expand_ddim(4);
  detail::dump_series(os, "nu_prev", ddim.nu_prev, 3);
  detail::dump_series(os, "rho_ddim", ddim.rho, 3);
  detail::dump_series(os, "mu_ddim", ddim.mu, 3);
  const HSeries mu_scaled = Expr::nu(Rational(1, 2)) * ddim.mu;
  os << "\n# DDIM minus quasi-Taylor (order 3)\n";
  for (std::size_t k = 0; k <= 3; ++k) {
    os << "rho_diff[h^" << k << "] = " << render(ddim.rho[k] - flat.rho[k]) << '\n';
    os << "mu_diff[h^" << k << "] = " << render(mu_scaled[k] - flat.mu[k]) << '\n';
  }
  return os.str();
}

} // namespace dsl::sym
