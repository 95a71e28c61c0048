#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qtx/qtx.hpp"

using namespace qtx;
using namespace qtx::ir;
using sym::symbol;

namespace {

MapScope one_dim(const std::string& d, Expr n) {
  MapScope s;
  s.label = "m";
  s.dims.push_back({d, {Expr(0), std::move(n)}});
  return s;
}

std::vector<std::int64_t> values_of(const MapScope& s, const std::string& d, const Env& globals = {}) {
  std::vector<std::int64_t> out;
  for (const auto& pt : enumerate_points(s, globals)) out.push_back(pt.at(d));
  std::sort(out.begin(), out.end());
  return out;
}

std::int64_t ev(const Expr& e, const Env& env) { return sym::eval(e, env); }

}  // namespace

TEST(TileMap, TileEqualToExtentGivesOneTile) {
  const auto t = tile_map(one_dim("E", Expr(5)), {{"E", Expr(5)}});
  ASSERT_EQ(t.dims.size(), 1u);
  EXPECT_EQ(t.dims[0].symbol, "t_E");
  EXPECT_EQ(t.dims[0].range.upper, Expr(1));
  EXPECT_EQ(values_of(t, "E"), (std::vector<std::int64_t>{0, 1, 2, 3, 4}));
}

TEST(TileMap, EvenSplit) {
  const auto t = tile_map(one_dim("E", Expr(6)), {{"E", Expr(2)}});
  EXPECT_EQ(t.dims[0].range.upper, Expr(3));
  const auto& inner = t.nested.at(0).dims.at(0);
  EXPECT_EQ(ev(inner.range.lower, {{"t_E", 2}}), 4);
  EXPECT_EQ(ev(inner.range.upper, {{"t_E", 2}}), 6);
}

TEST(TileMap, RaggedLastTileIsClipped) {
  const auto t = tile_map(one_dim("E", Expr(7)), {{"E", Expr(3)}});
  EXPECT_EQ(t.dims[0].range.upper, Expr(3));
  const auto& inner = t.nested.at(0).dims.at(0);
  EXPECT_EQ(ev(inner.range.lower, {{"t_E", 2}}), 6);
  EXPECT_EQ(ev(inner.range.upper, {{"t_E", 2}}), 7);
  EXPECT_EQ(values_of(t, "E").size(), 7u);
}

TEST(TileMap, RejectsBadTiles) {
  EXPECT_THROW(tile_map(one_dim("E", Expr(4)), {{"E", Expr(0)}}), std::invalid_argument);
  EXPECT_THROW(tile_map(one_dim("E", Expr(4)), {{"E", Expr(5)}}), std::invalid_argument);
  EXPECT_THROW(tile_map(one_dim("E", Expr(4)), {{"x", Expr(2)}}), std::invalid_argument);
}

TEST(TileMap, MemletsMoveInward) {
  MapScope s = one_dim("E", symbol("N"));
  s.tasklets = {"t"};
  s.memlets.push_back(read("A", {Index::of(symbol("E"))}));
  const auto t = tile_map(s, {{"E", symbol("s")}});
  EXPECT_TRUE(t.memlets.empty());
  EXPECT_EQ(t.nested.at(0).memlets.size(), 1u);
  EXPECT_EQ(t.nested.at(0).tasklets, s.tasklets);
}

// Every point of the original map is visited exactly once after tiling.
TEST(TileMap, IterationMultisetPreserved) {
  for (std::int64_t n = 1; n <= 64; ++n) {
    std::vector<std::int64_t> want(static_cast<std::size_t>(n));
    std::iota(want.begin(), want.end(), 0);
    for (std::int64_t s = 1; s <= n; ++s) {
      ASSERT_EQ(values_of(tile_map(one_dim("E", Expr(n)), {{"E", Expr(s)}}), "E"), want) << n << "/" << s;
      if (n % s == 0) {
        ASSERT_EQ(values_of(tile_map(one_dim("E", Expr(n)), {{"E", Expr(s)}}, TileMode::ExactDivision), "E"), want);
      }
    }
  }
}

TEST(TileMap, SymbolicTilesMatchConcreteEnumeration) {
  MapScope s;
  s.label = "m";
  s.dims = {{"E", {Expr(0), symbol("N_E")}}, {"a", {Expr(0), symbol("N_A")}}};
  const auto t = tile_map(s, {{"E", symbol("s_E")}, {"a", symbol("s_A")}});
  for (std::int64_t ne : {4, 5}) {
    for (std::int64_t na : {3, 6}) {
      const auto pts = enumerate_points(t, {{"N_E", ne}, {"N_A", na}, {"s_E", 2}, {"s_A", 3}});
      std::set<std::pair<std::int64_t, std::int64_t>> seen;
      for (const auto& p : pts) seen.insert({p.at("E"), p.at("a")});
      EXPECT_EQ(pts.size(), static_cast<std::size_t>(ne * na));
      EXPECT_EQ(seen.size(), pts.size());
    }
  }
}

namespace {

/// k over an outer tile of size s_kz, q over [0, s_qz).
MapScope tiled_kq() {
  MapScope s;
  s.label = "kq";
  s.dims = {{"k", {symbol("t_k") * symbol("s_kz"), (symbol("t_k") + 1) * symbol("s_kz")}},
            {"q", {Expr(0), symbol("s_qz")}}};
  return s;
}

sym::Bounds kq_bounds() {
  const double inf = std::numeric_limits<double>::infinity();
  return {{"N_kz", {1.0, inf}}, {"s_kz", {1.0, inf}}, {"s_qz", {1.0, inf}}, {"t_k", {0.0, inf}}};
}

}  // namespace

TEST(Propagate, DifferenceIndex) {
  const auto [r, total, unique] =
      propagate_index(tiled_kq(), Index::of(symbol("k") - symbol("q")), symbol("N_kz"), kq_bounds());
  EXPECT_EQ(r.lower, symbol("t_k") * symbol("s_kz") - symbol("s_qz") + 1);
  EXPECT_EQ(r.upper, (symbol("t_k") + 1) * symbol("s_kz"));
  EXPECT_EQ(total, symbol("s_kz") + symbol("s_qz") - 1);
  EXPECT_EQ(unique, sym::min(symbol("N_kz"), symbol("s_kz") + symbol("s_qz") - 1));
  EXPECT_EQ(ev(unique, {{"N_kz", 7}, {"s_kz", 3}, {"s_qz", 7}}), 7);
}

TEST(Propagate, IdentityIndexGivesTileSize) {
  const auto [r, total, unique] = propagate_index(tiled_kq(), Index::of(symbol("k")), symbol("N_kz"), kq_bounds());
  EXPECT_EQ(total, symbol("s_kz"));
  EXPECT_EQ(ev(unique, {{"N_kz", 9}, {"s_kz", 3}}), 3);
  EXPECT_EQ(ev(r.lower, {{"t_k", 2}, {"s_kz", 3}}), 6);
}

// Distinct counts agree with brute-force enumeration of (index mod extent).
TEST(Propagate, CountsMatchEnumeration) {
  const Index diff = Index::of(symbol("k") - symbol("q")), shifted = Index::of(symbol("k") + 2);
  const auto [r1, t1, u_diff] = propagate_index(tiled_kq(), diff, symbol("N_kz"), kq_bounds());
  const auto [r2, t2, u_shift] = propagate_index(tiled_kq(), shifted, symbol("N_kz"), kq_bounds());
  for (std::int64_t n = 1; n <= 16; ++n)
    for (std::int64_t sk = 1; sk <= n; ++sk)
      for (std::int64_t sq = 1; sq <= n; ++sq)
        for (std::int64_t t = 0; t * sk < n; ++t) {
          const Env env{{"N_kz", n}, {"s_kz", sk}, {"s_qz", sq}, {"t_k", t}};
          ASSERT_EQ(ev(u_diff, env), static_cast<std::int64_t>(oracle::distinct_differences(n, t * sk, sk, 0, sq)));
          std::set<std::int64_t> seen;
          for (std::int64_t k = t * sk; k < (t + 1) * sk; ++k) seen.insert((k + 2) % n);
          ASSERT_EQ(ev(u_shift, env), static_cast<std::int64_t>(seen.size()));
          ASSERT_EQ(ev(r1.upper, env) - ev(r1.lower, env), ev(t1, env));
        }
}

TEST(Propagate, NonAffineIndexThrows) {
  const auto b = kq_bounds();
  for (const Expr& e : {symbol("k") * symbol("q"), 2 * symbol("k"), sym::floor_div(symbol("k"), Expr(2))}) {
    try {
      propagate_index(tiled_kq(), Index::of(e), symbol("N_kz"), b);
      FAIL() << e.str();
    } catch (const PropagationError& err) {
      EXPECT_NE(std::string(err.what()).find("cannot propagate"), std::string::npos);
    }
  }
}

TEST(Propagate, IndirectionNeedsModel) {
  try {
    propagate_index(tiled_kq(), Index::indirect("f(a,b)"), symbol("N_A"), kq_bounds());
    FAIL();
  } catch (const PropagationError& err) {
    EXPECT_NE(std::string(err.what()).find("cannot propagate f(a,b)"), std::string::npos);
  }
  EXPECT_THROW(propagate_all(sse_graph()), PropagationError);
}

TEST(Volume, IdentityAccessMovesWholeArray) {
  Graph g;
  g.globals = {"N"};
  g.bounds = {{"N", {1.0, std::numeric_limits<double>::infinity()}}};
  g.arrays.push_back({"A", {symbol("N")}, 8});
  g.root = one_dim("k", symbol("N"));
  g.root.memlets.push_back(read("A", {Index::of(symbol("k"))}));
  const auto v = volume_between_maps(propagate_all(g));
  EXPECT_EQ(v.at("A"), 8 * symbol("N"));
  EXPECT_THROW(volume_between_maps(g), std::invalid_argument);
}

// The tiled SSE graph reproduces the closed-form per-process volumes of G and D at divisible tilings
// whose halos stay inside the device. Larger tiles saturate at the full array.
TEST(Volume, TiledSseMatchesClosedForm) {
  const Graph g = tiled_sse_graph();
  EXPECT_NO_THROW(check_bindings(g));
  const auto v = volume_between_maps(g);
  SimParams p = *preset("tiny");
  p.n_kz = 3;
  p.n_qz = 2;
  p.n_E = 24;
  p.n_w = 2;
  p.n_A = 32;
  p.n_B = 4;
  p.n_orb = 2;
  for (auto [te, ta] : {std::pair<std::int64_t, std::int64_t>{6, 2}, {2, 2}, {2, 4}, {3, 2}, {4, 8}}) {
    const Env env{{"N_kz", 3}, {"N_qz", 2}, {"N_E", 24}, {"N_w", 2}, {"N_A", 32}, {"N_B", 4}, {"N_orb", 2},
                  {"s_E", 24 / te}, {"s_A", 32 / ta}, {"t_E", 0}, {"t_a", 0}};
    const CommPlan c = dace_volume(p, static_cast<std::size_t>(te), static_cast<std::size_t>(ta));
    const double g_bytes = static_cast<double>(ev(v.at("G_lesser") + v.at("G_greater"), env));
    const double d_bytes = static_cast<double>(ev(v.at("D_lesser") + v.at("D_greater"), env));
    EXPECT_DOUBLE_EQ(g_bytes, c.per_process.electron_G) << te << "x" << ta;
    EXPECT_DOUBLE_EQ(2.0 * d_bytes, c.per_process.phonon_D_Pi) << te << "x" << ta;
    EXPECT_EQ(ev(v.at("Sigma_lesser"), env), 16 * 3 * (24 / te) * (32 / ta) * 4);
  }
  const Env whole{{"N_kz", 3}, {"N_qz", 2}, {"N_E", 24}, {"N_w", 2}, {"N_A", 32}, {"N_B", 4}, {"N_orb", 2},
                  {"s_E", 24}, {"s_A", 32}, {"t_E", 0}, {"t_a", 0}};
  EXPECT_EQ(ev(v.at("G_lesser"), whole), 16 * 3 * 24 * 32 * 4);
  EXPECT_EQ(ev(v.at("D_greater"), whole), 16 * 2 * 2 * 32 * 4 * 9);
}

// Random affine subscripts in a two-level map: symbolic distinct counts against enumeration.
TEST(Volume, RandomAffineAgainstBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> c(-1, 1), c0(-3, 3), sz(1, 6);
  const double inf = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < 60; ++rep) {
    const int a1 = c(rng), a2 = c(rng), b0 = c0(rng);
    const Expr x = symbol("x"), y = symbol("y");
    Graph g;
    g.globals = {"N", "M", "S", "Y"};
    g.bounds = {{"N", {1.0, inf}}, {"M", {1.0, inf}}, {"S", {1.0, inf}}, {"Y", {1.0, inf}}, {"t", {0.0, inf}}};
    g.arrays.push_back({"A", {symbol("N")}, 16});
    g.arrays.push_back({"B", {symbol("N"), symbol("M")}, 4});
    g.root = one_dim("t", Expr(4));
    MapScope inner;
    inner.label = "inner";
    inner.dims = {{"x", {symbol("t") * symbol("S"), (symbol("t") + 1) * symbol("S")}}, {"y", {Expr(0), symbol("Y")}}};
    inner.memlets.push_back(read("A", {Index::of(a1 * x + a2 * y + b0)}));
    inner.memlets.push_back(read("B", {Index::of(x + b0), Index::of(y - 1)}));
    g.root.nested.push_back(inner);
    const auto v = volume_between_maps(propagate_all(g));
    for (int k = 0; k < 4; ++k) {
      const std::int64_t N = sz(rng) + 2, M = sz(rng), S = sz(rng), Y = sz(rng), t = k % 3;
      std::set<std::int64_t> ia;
      std::set<std::pair<std::int64_t, std::int64_t>> ib;
      for (std::int64_t xv = t * S; xv < (t + 1) * S; ++xv)
        for (std::int64_t yv = 0; yv < Y; ++yv) {
          ia.insert(((a1 * xv + a2 * yv + b0) % N + N) % N);
          ib.insert({((xv + b0) % N + N) % N, ((yv - 1) % M + M) % M});
        }
      const Env env{{"N", N}, {"M", M}, {"S", S}, {"Y", Y}, {"t", t}};
      ASSERT_EQ(ev(v.at("A"), env), 16 * static_cast<std::int64_t>(ia.size())) << a1 << " " << a2 << " " << b0;
      ASSERT_EQ(ev(v.at("B"), env), 4 * static_cast<std::int64_t>(ib.size()));
    }
  }
}

TEST(Graph, BindingsChecked) {
  EXPECT_NO_THROW(check_bindings(sse_graph()));
  Graph g = sse_graph();
  g.root.memlets.push_back(read("G_lesser", {Index::of(symbol("z")), Index::of(symbol("E")), Index::of(symbol("a")),
                                             Index::of(Expr(0)), Index::of(Expr(0))}));
  EXPECT_THROW(check_bindings(g), std::invalid_argument);
}

TEST(Graph, JsonListsMapsAndPropagatedMemlets) {
  const auto j = to_json(tiled_sse_graph());
  std::set<std::string> maps;
  for (const auto& n : j["nodes"])
    if (n["kind"] == "map") maps.insert(n["label"].get<std::string>());
  EXPECT_EQ(maps, (std::set<std::string>{"sse", "sse_tiles"}));
  ASSERT_EQ(j["memlets"].size(), 14u);
  for (const auto& m : j["memlets"]) EXPECT_TRUE(m.contains("propagated"));
}
