#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dsl/rng.hpp"
#include "dsl/samplers.hpp"
#include "dsl/symderiv.hpp"
#include "expected_table.hpp"

using namespace dsl::sym;

namespace {

const Expr X = Expr::x(), S = Expr::S(), B = Expr::beta(0), B1 = Expr::beta(1),
           B2 = Expr::beta(2);
Expr nu(std::int64_t n, std::int64_t d = 1) { return Expr::nu(Rational(n, d)); }
Expr beta(std::int64_t n, std::int64_t d = 1) { return Expr::beta(0, Rational(n, d)); }
Expr r(std::int64_t n, std::int64_t d) { return Rational(n, d); }

dsl::sym::Bindings bind(const dsl::ScheduleSample &s, double x = 0, double Sv = 0) {
  return make_bindings(x, Sv, s.nu, {s.beta, s.beta_d1, s.beta_d2});
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace

TEST(Rational, NormalFormAndArithmetic) {
  EXPECT_EQ(Rational(2, 4), Rational(1, 2));
  EXPECT_EQ(Rational(3, -6).str(), "-1/2");
  EXPECT_EQ(Rational(1, 3) + Rational(1, 6), Rational(1, 2));
  EXPECT_EQ(Rational(9, 4).sqrt_exact(), Rational(3, 2));
  EXPECT_FALSE(Rational(2).sqrt_exact().has_value());
  EXPECT_THROW(Rational(1) / Rational(0), std::domain_error);
  EXPECT_THROW(Rational(INT64_MAX) * Rational(2), std::overflow_error);
}

TEST(Differentiate, Rules) {
  EXPECT_TRUE(differentiate(Expr(5), Var::x).is_zero());
  EXPECT_EQ(differentiate(S, Var::x), nu(-1, 2));
  EXPECT_EQ(differentiate(Expr::nu(), Var::t), (1 - Expr::nu()) * B);
  EXPECT_EQ(differentiate(X, Var::x), Expr(1));
  EXPECT_TRUE(differentiate(X, Var::t).is_zero());
  EXPECT_EQ(differentiate(B1, Var::t), B2);
  // dS/dt under the ideal derivative stays on the base atoms.
  const auto atoms = differentiate(S, Var::t).atoms();
  for (const auto &a : atoms)
    EXPECT_TRUE(a == "x" || a == "S" || a == "nu" || a == "beta") << a;
}

TEST(Differentiate, MixedPartialsCommute) {
  for (const Expr &e : {S, fflat(), fsharp(), S * S * X, nu(-1, 2) * S * X + B * X * X}) {
    const Expr xt = differentiate(differentiate(e, Var::x), Var::t);
    const Expr tx = differentiate(differentiate(e, Var::t), Var::x);
    EXPECT_EQ(xt, tx) << render(e);
  }
}

TEST(Operators, TableMatchesHandDerivation) {
  const auto expect = expected::operator_table();
  const auto table = operator_table();
  ASSERT_EQ(table.size(), expect.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    EXPECT_EQ(table[i].name, expect[i].first);
    EXPECT_EQ(table[i].value, expect[i].second)
        << table[i].name << ": got " << render(table[i].value) << ", expected "
        << render(expect[i].second);
  }
}

TEST(Operators, ZeroIdentities) {
  const Expr gg = g();
  const auto L = [](const Expr &e) { return apply_operator(Operator::Lsharp, e); };
  const auto G = [](const Expr &e) { return apply_operator(Operator::Gsharp, e); };
  EXPECT_TRUE(G(gg).is_zero());
  EXPECT_TRUE(L(G(gg)).is_zero());
  EXPECT_TRUE(G(L(gg)).is_zero());
  EXPECT_TRUE(G(G(gg)).is_zero());
}

TEST(Operators, TableClosesOverKnownAtoms) {
  const std::set<std::string> allowed{"x", "S", "nu", "beta", "beta_d1", "beta_d2", "beta_d3"};
  for (const auto &e : operator_table())
    for (const auto &a : e.value.atoms())
      EXPECT_TRUE(allowed.count(a)) << e.name << " contains " << a;
}

// Repeated application stays polynomial: the normal form of L^k(-fsharp) has
// at most a handful of monomials per power of beta.
TEST(Operators, RewritingTerminatesWithBoundedWork) {
  RewriteStats stats;
  Expr e = -fsharp();
  for (int k = 1; k <= 6; ++k) {
    e = apply_operator(Operator::Lsharp, e, &stats);
    EXPECT_LT(e.size(), 200u) << k;
  }
  EXPECT_GT(stats.total(), 0u);
  EXPECT_LT(stats.total(), 20000u);
  RewriteStats table_stats;
  operator_table(&table_stats);
  EXPECT_GT(table_stats.ideal_x, 0u);
  EXPECT_GT(table_stats.nu_dot, 0u);
}

TEST(Coefficients, FlatHandEntries) {
  const auto two = gen_flat_coefficients(2);
  EXPECT_EQ(two.rho[2], r(1, 4) * (r(1, 2) * beta(2) - B1));
  const auto three = gen_flat_coefficients(3);
  EXPECT_EQ(three.mu[3],
            r(1, 4) * (r(1, 12) * beta(3) * (-1 + 3 * nu(-1) - 3 * nu(-2)) +
                       r(1, 2) * B * B1 * nu(-1) - r(1, 3) * B2));
  EXPECT_EQ(zero_beta_derivatives(two.rho[0] + two.rho[1] + two.rho[2]),
            1 + r(1, 2) * B + r(1, 8) * beta(2));
  EXPECT_THROW(gen_flat_coefficients(4), dsl::unsupported_schedule);
}

TEST(Coefficients, DdimExpansion) {
  const auto d = expand_ddim(4);
  EXPECT_EQ(d.nu_prev[1], (Expr::nu() - 1) * B);
  EXPECT_EQ(d.rho[2], r(1, 4) * (r(1, 2) * beta(2) - B1));
  const auto flat = gen_flat_coefficients(3);
  const HSeries mu_scaled = Expr::nu(Rational(1, 2)) * d.mu;
  for (std::size_t k = 0; k <= 3; ++k) {
    EXPECT_TRUE((d.rho[k] - flat.rho[k]).is_zero()) << k;
    EXPECT_TRUE((mu_scaled[k] - flat.mu[k]).is_zero()) << k;
  }
  // The agreement stops at h^3.
  EXPECT_FALSE(d.rho[4].is_zero());
}

TEST(Coefficients, MatchHandCodedAtRandomPoints) {
  const auto sched = dsl::fit_tanh_schedule(1e-4, 0.99, 1.0);
  const auto f2 = gen_flat_coefficients(2), f3 = gen_flat_coefficients(3);
  const auto sh = gen_sharp_coefficients();
  const dsl::rng::Stream st(8, dsl::rng::Domain::test);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto [u, v] = st.uniform_pair(i, 0, 0);
    const double t = 0.02 + 0.98 * u, h = 0.1 * v;
    const auto s = sched.eval(t);
    const auto b = bind(s);
    const auto c2 = dsl::taylor_flat_coeffs(s, h, 2), c3 = dsl::taylor_flat_coeffs(s, h, 3);
    const auto sp = dsl::taylor_sharp_step(s, h);
    EXPECT_LT(rel(f2.rho.eval(b, h), c2.rho), 1e-12);
    EXPECT_LT(rel(f2.mu.eval(b, h), c2.mu), 1e-12);
    EXPECT_LT(rel(f3.rho.eval(b, h), c3.rho), 1e-12);
    EXPECT_LT(rel(f3.mu.eval(b, h), c3.mu), 1e-12);
    EXPECT_LT(rel(sh.rho.eval(b, h), sp.rho), 1e-12);
    EXPECT_LT(rel(sh.mu.eval(b, h), sp.mu), 1e-12);
    const double h32 = h * std::sqrt(h);
    EXPECT_LT(rel(eval_expr(sh.c_w, b) * std::sqrt(h), sp.noise.c_w), 1e-12);
    EXPECT_LT(rel(eval_expr(sh.c_wz, b) * h32, sp.noise.c_wz), 1e-12);
    EXPECT_LT(rel(eval_expr(sh.c_z, b) * h32, sp.noise.c_z), 1e-12);
  }
}

TEST(HSeries, SqrtAndReciprocal) {
  HSeries a(3);
  a[0] = Expr::nu();
  a[1] = B;
  a[2] = B1 * X;
  const HSeries root = a.sqrt();
  EXPECT_EQ(root * root, a);
  HSeries one(3);
  one[0] = 1;
  EXPECT_EQ(a * a.reciprocal(), one);
  HSeries bad(3);
  bad[0] = X;
  EXPECT_THROW(bad.sqrt(), std::domain_error);
}

TEST(Eval, Examples) {
  EXPECT_DOUBLE_EQ(eval_expr(nu(-1, 2), make_bindings(0, 0, 0.25, {})), 2.0);
  const double x = 1, Sv = 0.5, b = 1, b1 = 0.2, nuv = 0.5;
  const double hand = (b * b / 4 - b1 / 2) * x +
                      (b1 / (2 * std::sqrt(nuv)) - b * b / (4 * std::pow(nuv, 1.5))) * Sv;
  const Expr e = operator_table()[0].value;
  EXPECT_NEAR(eval_expr(e, make_bindings(x, Sv, nuv, {b, b1})), hand, 1e-14);
  // Equal normal forms built two ways evaluate identically.
  const Expr p = (X + S) * (X + S), q = X * X + 2 * X * S + S * S;
  EXPECT_EQ(eval_expr(p, make_bindings(0.3, 0.7, 0.1, {})),
            eval_expr(q, make_bindings(0.3, 0.7, 0.1, {})));
}

TEST(Eval, Errors) {
  try {
    eval_expr(B1 * X, make_bindings(1, 1, 0.5, {1.0}));
    FAIL();
  } catch (const dsl::invalid_argument &e) {
    EXPECT_EQ(e.field(), "beta_d1");
  }
  EXPECT_THROW(eval_expr(nu(1, 2), make_bindings(0, 0, -0.5, {})), dsl::domain_error);
  EXPECT_THROW(eval_expr(nu(-1), make_bindings(0, 0, 0.0, {})), dsl::domain_error);
}

TEST(Render, NormalForm) {
  EXPECT_EQ(render(Expr()), "0");
  EXPECT_EQ(render(operator_table()[3].value), "-1/2*beta^(-1/2)*beta_d1");
}

TEST(Dump, MatchesGoldenFile) {
  std::ifstream in(std::string(DSL_GOLDEN_DIR) + "/symdiff_dump.txt");
  ASSERT_TRUE(in) << "missing golden file";
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(symdiff_dump(), ss.str());
}
