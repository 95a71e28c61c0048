#include <gtest/gtest.h>

#include <random>

#include "qtx/symbolic.hpp"

using namespace qtx::sym;

namespace {

const Expr x = symbol("x"), y = symbol("y"), n = symbol("n");

std::int64_t floor_div_ref(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// Random expression over x, y, n built from the supported node kinds.
Expr random_expr(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> pick(0, depth > 0 ? 7 : 1);
  std::uniform_int_distribution<int> small(-3, 3);
  const Expr leaves[] = {x, y, n};
  switch (pick(rng)) {
    case 0:
      return leaves[std::uniform_int_distribution<int>(0, 2)(rng)];
    case 1:
      return Expr(small(rng));
    case 2:
      return random_expr(rng, depth - 1) + random_expr(rng, depth - 1);
    case 3:
      return random_expr(rng, depth - 1) - random_expr(rng, depth - 1);
    case 4:
      return Expr(small(rng)) * random_expr(rng, depth - 1);
    case 5:
      return min(random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    case 6:
      return max(random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    default:
      return std::uniform_int_distribution<int>(0, 1)(rng) ? ceil_div(random_expr(rng, depth - 1), Expr(2))
                                                            : floor_div(random_expr(rng, depth - 1), Expr(3));
  }
}

}  // namespace

TEST(Symbolic, CanonicalFormIsOrderIndependent) {
  EXPECT_EQ((x + y).str(), (y + x).str());
  EXPECT_EQ(x * y, y * x);
  EXPECT_EQ(x - x, Expr(0));
  EXPECT_EQ((x + 1) * (x + 1), x * x + 2 * x + 1);
  EXPECT_EQ(min(x, y), min(y, x));
  EXPECT_EQ(max(min(x, y), n), max(n, min(y, x)));
}

TEST(Symbolic, ConstantFolding) {
  EXPECT_EQ(ceil_div(Expr(7), Expr(2)), Expr(4));
  EXPECT_EQ(floor_div(Expr(7), Expr(2)), Expr(3));
  EXPECT_EQ(ceil_div(Expr(-7), Expr(2)), Expr(-3));
  EXPECT_EQ(floor_div(Expr(-7), Expr(2)), Expr(-4));
  EXPECT_EQ(min(Expr(3), Expr(5)), Expr(3));
  EXPECT_EQ(max(Expr(3), Expr(5)), Expr(5));
  EXPECT_EQ(ceil_div(x, Expr(1)), x);
  EXPECT_THROW(floor_div(x, Expr(0)), std::invalid_argument);
}

TEST(Symbolic, BoundsDecideMinMax) {
  Bounds b{{"x", {1.0, 1e18}}, {"y", {0.0, 1e18}}};
  EXPECT_EQ(min(x, x + y, b), x);
  EXPECT_EQ(max(x, x + y, b), x + y);
  EXPECT_EQ(min(x, Expr(0), b), Expr(0));
  // No bound on n: stays symbolic.
  EXPECT_NE(min(x, n, b), x);
  EXPECT_NE(min(x, n, b), n);
}

TEST(Symbolic, NestedMinFlattens) {
  const Expr m = min(min(x, y), n);
  EXPECT_EQ(m, min(x, min(y, n)));
  EXPECT_EQ(eval(m, {{"x", 4}, {"y", -2}, {"n", 9}}), -2);
}

TEST(Symbolic, HalvesMerge) {
  const Bounds none;
  EXPECT_EQ(simplify(floor_div(n, Expr(2)) + ceil_div(n, Expr(2)), none), n);
  EXPECT_EQ(simplify(x + floor_div(n, Expr(2)) + ceil_div(n, Expr(2)) - n, none), x);
  // Unequal coefficients are left alone.
  const Expr e = 2 * floor_div(n, Expr(2)) + ceil_div(n, Expr(2));
  EXPECT_EQ(simplify(e, none), e);
  for (std::int64_t v = -9; v <= 9; ++v) EXPECT_EQ(eval(floor_div(n, Expr(2)) + ceil_div(n, Expr(2)), {{"n", v}}), v);
}

TEST(Symbolic, SubstituteAndSymbols) {
  const Expr e = min(x + 2 * y, n) + floor_div(x, Expr(3));
  EXPECT_EQ(symbols_of(e), (std::set<std::string>{"n", "x", "y"}));
  const Expr s = substitute(e, {{"y", Expr(1)}, {"x", Expr(4)}});
  EXPECT_EQ(symbols_of(s), (std::set<std::string>{"n"}));
  EXPECT_EQ(eval(s, {{"n", 100}}), 7);
  EXPECT_EQ(eval(s, {{"n", 2}}), 3);
  EXPECT_THROW(eval(e, {{"x", 1}}), std::invalid_argument);
}

TEST(Symbolic, Intervals) {
  const Bounds b{{"x", {1.0, 5.0}}, {"y", {-2.0, 3.0}}};
  const auto i = interval_of(2 * x - y, b);
  EXPECT_DOUBLE_EQ(i.lo, -1.0);
  EXPECT_DOUBLE_EQ(i.hi, 12.0);
  EXPECT_TRUE(provably_nonnegative(x - 1, b));
  EXPECT_FALSE(provably_nonnegative(y, b));
}

TEST(Symbolic, DivisionAgreesWithIntegerReference) {
  for (std::int64_t a = -20; a <= 20; ++a)
    for (std::int64_t d : {1, 2, 3, 5, -2}) {
      EXPECT_EQ(eval(floor_div(x, Expr(d)), {{"x", a}}), floor_div_ref(a, d));
      EXPECT_EQ(eval(ceil_div(x, Expr(d)), {{"x", a}}), -floor_div_ref(-a, d));
    }
}

// simplify never changes the value, with or without bounds that hold for the sampled environment.
TEST(Symbolic, SimplifyPreservesValue) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::int64_t> val(0, 12);
  const Bounds b{{"x", {0.0, 12.0}}, {"y", {0.0, 12.0}}, {"n", {0.0, 12.0}}};
  for (int rep = 0; rep < 300; ++rep) {
    const Expr e = random_expr(rng, 3);
    const Expr s = simplify(e, b);
    for (int k = 0; k < 5; ++k) {
      const Env env{{"x", val(rng)}, {"y", val(rng)}, {"n", val(rng)}};
      ASSERT_EQ(eval(s, env), eval(e, env)) << e.str() << "  vs  " << s.str();
    }
  }
}

TEST(Symbolic, SimplifyIsIdempotent) {
  std::mt19937_64 rng(23);
  const Bounds b{{"x", {0.0, 1e9}}, {"n", {1.0, 1e9}}};
  for (int rep = 0; rep < 200; ++rep) {
    const Expr s = simplify(random_expr(rng, 3), b);
    EXPECT_EQ(simplify(s, b), s);
  }
}
