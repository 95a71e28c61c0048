#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "symbolic.hpp"

namespace qtx::ir {

using sym::Expr;

/// Half-open [lower, upper).
struct SymRange {
  Expr lower;
  Expr upper;
  Expr length() const { return upper - lower; }
};

struct MapDim {
  std::string symbol;
  SymRange range;
};

/// Propagated range and access counts for a non-affine index, supplied by hand.
/// Always an approximation.
struct IndirectionModel {
  SymRange range;
  Expr total;
  Expr unique;
  std::string note;
  bool approximation = true;
};

/// One subscript of a memlet: an affine expression or an indirection such as f(a, b).
struct Index {
  std::optional<Expr> affine;
  std::string label;  // printed form of an indirection
  std::optional<IndirectionModel> model;

  static Index of(Expr e) { return Index{std::move(e), {}, {}}; }
  static Index indirect(std::string label, std::optional<IndirectionModel> m = std::nullopt) {
    return Index{std::nullopt, std::move(label), std::move(m)};
  }
  /// Whole slice [lo, hi) of a dimension, e.g. the orbital indices of a block.
  static Index span(Expr lo, Expr hi) {
    const Expr len = hi - lo;
    return Index{std::nullopt, "[" + lo.str() + ", " + hi.str() + ")", IndirectionModel{{lo, hi}, len, len, "slice", false}};
  }
  std::string str() const { return affine ? affine->str() : label; }
};

struct Propagated {
  std::vector<SymRange> ranges;
  Expr total;   // product of per-dimension range lengths
  Expr unique;  // product of per-dimension distinct counts
};

struct Memlet {
  std::string array;
  std::vector<Index> subset;
  bool write = false;
  bool accumulate = false;  // conflict resolution by summation
  std::optional<Propagated> propagated;
};

inline Memlet read(std::string array, std::vector<Index> subset) {
  return Memlet{std::move(array), std::move(subset), false, false, std::nullopt};
}
/// Write with summation conflict resolution.
inline Memlet accumulate(std::string array, std::vector<Index> subset) {
  return Memlet{std::move(array), std::move(subset), true, true, std::nullopt};
}

struct ArrayDesc {
  std::string name;
  std::vector<Expr> shape;
  std::int64_t element_bytes = 16;
};

struct MapScope {
  std::string label;
  std::vector<MapDim> dims;
  std::vector<std::string> tasklets;
  std::vector<Memlet> memlets;
  std::vector<MapScope> nested;
};

struct Graph {
  std::vector<ArrayDesc> arrays;
  MapScope root;
  std::set<std::string> globals;
  sym::Bounds bounds;

  const ArrayDesc& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw std::invalid_argument("unknown array: " + name);
  }
};

class PropagationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- binding check ----

namespace detail {

inline void check_scope(const MapScope& s, std::set<std::string> bound) {
  auto need = [&](const Expr& e, const std::string& where) {
    for (const auto& name : sym::symbols_of(e))
      if (!bound.count(name)) throw std::invalid_argument("unbound symbol '" + name + "' in " + where);
  };
  for (const auto& d : s.dims) {
    need(d.range.lower, s.label + "." + d.symbol);
    need(d.range.upper, s.label + "." + d.symbol);
    bound.insert(d.symbol);
  }
  for (const auto& m : s.memlets)
    for (const auto& ix : m.subset) {
      if (ix.affine) need(*ix.affine, s.label + " memlet " + m.array);
      if (ix.model) {
        need(ix.model->range.lower, s.label + " model " + ix.label);
        need(ix.model->range.upper, s.label + " model " + ix.label);
      }
    }
  for (const auto& n : s.nested) check_scope(n, bound);
}

}  // namespace detail

/// Throws when a memlet or range uses a symbol that no enclosing scope or global binds.
inline void check_bindings(const Graph& g) { detail::check_scope(g.root, g.globals); }

// ---- tiling ----

enum class TileMode {
  Clip,           // inner upper bound min((t+1)*s, N)
  ExactDivision,  // assumes s divides N; inner upper bound (t+1)*s
};

/// Splits each listed dimension d of `scope` into an outer t_d over ceil(N/s) tiles and an inner d over
/// [t_d*s_d, (t_d+1)*s_d). Unlisted dimensions stay in the inner map. Memlets and tasklets move inward.
/// Tile sizes given as constants are checked against constant extents.
inline MapScope tile_map(const MapScope& scope, const std::map<std::string, Expr>& tiles,
                         TileMode mode = TileMode::Clip, const sym::Bounds& bounds = {}) {
  for (const auto& [name, s] : tiles) {
    bool found = false;
    for (const auto& d : scope.dims) found = found || d.symbol == name;
    if (!found) throw std::invalid_argument("tile_map: no dimension " + name);
    if (s.is_constant() && s.constant_value() < 1) throw std::invalid_argument("tile_map: tile size must be >= 1");
  }
  MapScope outer, inner;
  outer.label = scope.label + "_tiles";
  inner.label = scope.label;
  inner.tasklets = scope.tasklets;
  inner.memlets = scope.memlets;
  inner.nested = scope.nested;
  for (const auto& d : scope.dims) {
    auto it = tiles.find(d.symbol);
    if (it == tiles.end()) {
      inner.dims.push_back(d);
      continue;
    }
    const Expr& s = it->second;
    const Expr extent = d.range.length();
    if (s.is_constant() && extent.is_constant() && s.constant_value() > extent.constant_value()) {
      throw std::invalid_argument("tile_map: tile size exceeds extent of " + d.symbol);
    }
    const std::string t = "t_" + d.symbol;
    outer.dims.push_back({t, {Expr(0), sym::ceil_div(extent, s)}});
    const Expr lo = d.range.lower + sym::symbol(t) * s;
    Expr hi = d.range.lower + (sym::symbol(t) + 1) * s;
    if (mode == TileMode::Clip) hi = sym::min(hi, d.range.upper, bounds);
    inner.dims.push_back({d.symbol, {lo, hi}});
  }
  outer.nested.push_back(std::move(inner));
  return outer;
}

// ---- enumeration ----

using sym::Env;

/// All iteration points of `scope` and its nested scopes; each point binds every map symbol.
inline std::vector<Env> enumerate_points(const MapScope& scope, const Env& globals) {
  std::vector<Env> out;
  std::function<void(std::size_t, Env)> rec = [&](std::size_t d, Env env) {
    if (d == scope.dims.size()) {
      if (scope.nested.empty()) {
        out.push_back(env);
        return;
      }
      for (const auto& n : scope.nested) {
        auto pts = enumerate_points(n, env);
        out.insert(out.end(), pts.begin(), pts.end());
      }
      return;
    }
    const auto lo = sym::eval(scope.dims[d].range.lower, env), hi = sym::eval(scope.dims[d].range.upper, env);
    for (std::int64_t v = lo; v < hi; ++v) {
      env[scope.dims[d].symbol] = v;
      rec(d + 1, env);
    }
  };
  rec(0, globals);
  return out;
}

// ---- memlet propagation ----

namespace detail {

struct Linear {
  Expr constant;                            // part free of the map symbols
  std::map<std::string, std::int64_t> coef;  // per map symbol
};

inline Linear decompose(const Expr& e, const std::map<std::string, SymRange>& dims, const std::string& what) {
  Linear lin;
  e.for_each_term([&](const Expr::Monomial& m, std::int64_t c) {
    std::size_t inner = 0;
    std::string name;
    for (const auto& a : m) {
      if (a->kind == sym::Atom::Kind::Symbol) {
        if (dims.count(a->name)) {
          ++inner;
          name = a->name;
        }
      } else {
        for (const auto& x : a->args)
          for (const auto& s : sym::symbols_of(x))
            if (dims.count(s)) throw PropagationError("cannot propagate non-affine index " + what);
      }
    }
    if (inner == 0) {
      Expr t(c);
      for (const auto& a : m) t = t * Expr::atom(a);
      lin.constant = lin.constant + t;
    } else if (inner == 1 && m.size() == 1) {
      lin.coef[name] += c;
    } else {
      throw PropagationError("cannot propagate non-affine index " + what);
    }
  });
  return lin;
}

}  // namespace detail

/// Range of one subscript over the dims of `scope`, with its total and distinct access counts.
/// Subscripts are taken modulo the array extent, so the distinct count is min(extent, range length).
inline std::tuple<SymRange, Expr, Expr> propagate_index(const MapScope& scope, const Index& ix, const Expr& extent,
                                                        const sym::Bounds& bounds) {
  if (!ix.affine) {
    if (!ix.model) throw PropagationError("cannot propagate " + ix.label + ": no indirection model");
    const auto& m = *ix.model;
    return {{sym::simplify(m.range.lower, bounds), sym::simplify(m.range.upper, bounds)}, sym::simplify(m.total, bounds),
            sym::min(extent, m.unique, bounds)};
  }
  std::map<std::string, SymRange> dims;
  for (const auto& d : scope.dims) dims[d.symbol] = d.range;
  for (const auto& d : scope.dims)
    for (const auto* bound : {&d.range.lower, &d.range.upper})
      for (const auto& s : sym::symbols_of(*bound))
        if (dims.count(s)) throw PropagationError("cannot propagate over dependent range of " + d.symbol);
  const auto lin = detail::decompose(*ix.affine, dims, ix.str());
  Expr lo = lin.constant, hi = lin.constant;
  for (const auto& [name, c] : lin.coef) {
    if (c == 0) continue;
    if (c != 1 && c != -1) throw PropagationError("cannot propagate non-unit stride in " + ix.str());
    const auto& r = dims.at(name);
    if (c > 0) {
      lo = lo + r.lower;
      hi = hi + (r.upper - 1);
    } else {
      lo = lo - (r.upper - 1);
      hi = hi - r.lower;
    }
  }
  hi = hi + 1;
  SymRange range{sym::simplify(lo, bounds), sym::simplify(hi, bounds)};
  const Expr total = sym::simplify(range.length(), bounds);
  return {range, total, sym::min(extent, total, bounds)};
}

inline Propagated propagate_memlet(const MapScope& scope, const Memlet& m, const Graph& g) {
  const auto& arr = g.array(m.array);
  if (arr.shape.size() != m.subset.size()) throw std::invalid_argument("memlet rank mismatch for " + m.array);
  Propagated p{{}, Expr(1), Expr(1)};
  for (std::size_t d = 0; d < m.subset.size(); ++d) {
    auto [r, t, u] = propagate_index(scope, m.subset[d], arr.shape[d], g.bounds);
    p.ranges.push_back(r);
    p.total = p.total * t;
    p.unique = p.unique * u;
  }
  return p;
}

/// Returns a copy of `g` with every memlet of every scope propagated across that scope's dims.
inline Graph propagate_all(const Graph& g) {
  Graph out = g;
  std::function<void(MapScope&)> rec = [&](MapScope& s) {
    for (auto& m : s.memlets) m.propagated = propagate_memlet(s, m, g);
    for (auto& n : s.nested) rec(n);
  };
  rec(out.root);
  return out;
}

/// Bytes per array crossing the boundary of the innermost map. Memlets on the same array are merged
/// into the per-dimension hull of their propagated ranges before counting distinct elements.
inline std::map<std::string, Expr> volume_between_maps(const Graph& g) {
  const MapScope* inner = &g.root;
  while (!inner->nested.empty()) inner = &inner->nested.front();
  std::map<std::string, std::vector<SymRange>> hull;
  std::map<std::string, std::vector<const Memlet*>> by_array;
  for (const auto& m : inner->memlets) {
    if (!m.propagated) throw std::invalid_argument("volume_between_maps: unpropagated memlet on " + m.array);
    by_array[m.array].push_back(&m);
  }
  std::map<std::string, Expr> out;
  for (const auto& [name, ms] : by_array) {
    const auto& arr = g.array(name);
    if (ms.size() == 1) {
      out[name] = sym::simplify(ms[0]->propagated->unique * arr.element_bytes, g.bounds);
      continue;
    }
    Expr count(1);
    for (std::size_t d = 0; d < arr.shape.size(); ++d) {
      Expr lo = ms[0]->propagated->ranges[d].lower, hi = ms[0]->propagated->ranges[d].upper;
      Expr single_unique;
      bool same = true;
      for (const auto* m : ms) {
        const auto& r = m->propagated->ranges[d];
        same = same && r.lower == lo && r.upper == hi;
        lo = sym::min(lo, r.lower, g.bounds);
        hi = sym::max(hi, r.upper, g.bounds);
      }
      // Identical ranges (including hand-modelled ones) keep their own distinct count.
      const auto& ix = ms[0]->subset[d];
      if (same && !ix.affine && ix.model) {
        count = count * sym::min(arr.shape[d], ix.model->unique, g.bounds);
      } else {
        count = count * sym::min(arr.shape[d], hi - lo, g.bounds);
      }
    }
    out[name] = sym::simplify(count * arr.element_bytes, g.bounds);
  }
  return out;
}

// ---- serialization ----

inline nlohmann::json to_json(const Graph& g) {
  using nlohmann::json;
  json nodes = json::array(), memlets = json::array();
  for (const auto& a : g.arrays) {
    json shape = json::array();
    for (const auto& s : a.shape) shape.push_back(s.str());
    nodes.push_back({{"kind", "array"}, {"name", a.name}, {"shape", shape}, {"element_bytes", a.element_bytes}});
  }
  std::function<void(const MapScope&, const std::string&)> rec = [&](const MapScope& s, const std::string& parent) {
    json dims = json::array();
    for (const auto& d : s.dims) dims.push_back({{"symbol", d.symbol}, {"lower", d.range.lower.str()}, {"upper", d.range.upper.str()}});
    nodes.push_back({{"kind", "map"}, {"label", s.label}, {"parent", parent}, {"dims", dims}});
    for (const auto& t : s.tasklets) nodes.push_back({{"kind", "tasklet"}, {"label", t}, {"parent", s.label}});
    for (const auto& m : s.memlets) {
      json sub = json::array();
      for (const auto& ix : m.subset) sub.push_back(ix.str());
      json j{{"scope", s.label}, {"array", m.array}, {"subset", sub}, {"write", m.write}, {"accumulate", m.accumulate}};
      if (m.propagated) {
        json ranges = json::array();
        for (const auto& r : m.propagated->ranges) ranges.push_back({r.lower.str(), r.upper.str()});
        j["propagated"] = {{"ranges", ranges}, {"total", m.propagated->total.str()}, {"unique", m.propagated->unique.str()}};
      }
      memlets.push_back(j);
    }
    for (const auto& n : s.nested) rec(n, s.label);
  };
  rec(g.root, "");
  return {{"nodes", nodes}, {"memlets", memlets}};
}

// ---- the scattering self-energy map ----

/// Bounds of the size symbols used by the SSE graph: counts >= 1, tile indices >= 0.
inline sym::Bounds sse_bounds() {
  const double inf = std::numeric_limits<double>::infinity();
  sym::Bounds b;
  for (const char* n : {"N_kz", "N_qz", "N_E", "N_w", "N_A", "N_B", "N_orb", "s_E", "s_A"}) b[n] = {1.0, inf};
  for (const char* n : {"t_E", "t_a"}) b[n] = {0.0, inf};
  return b;
}

/// Neighbor indirection f(a, b) over an atom tile [t_a*s_A, (t_a+1)*s_A): the tile widened by the
/// neighbor halo on both sides, s_A * N_B accesses, min(N_A, s_A + N_B) distinct atoms.
inline IndirectionModel neighbor_model() {
  using sym::symbol;
  const Expr lo = symbol("t_a") * symbol("s_A") - sym::ceil_div(symbol("N_B"), 2);
  const Expr hi = (symbol("t_a") + 1) * symbol("s_A") + sym::floor_div(symbol("N_B"), 2);
  return {{lo, hi}, symbol("s_A") * symbol("N_B"), sym::min(symbol("N_A"), symbol("s_A") + symbol("N_B")),
          "neighbor indirection f(a,b)"};
}

/// Untiled 8-D map over (k_z, E, q_z, w, a, b, i, j) reading G and D, accumulating Sigma and Pi.
/// Frequency w shifts the energy index by w + 1 grid steps. f(a, b) carries no model yet.
inline Graph sse_graph() {
  using sym::symbol;
  const Expr N_kz = symbol("N_kz"), N_qz = symbol("N_qz"), N_E = symbol("N_E"), N_w = symbol("N_w");
  const Expr N_A = symbol("N_A"), N_B = symbol("N_B"), N_orb = symbol("N_orb");
  const Expr k = symbol("k"), E = symbol("E"), q = symbol("q"), w = symbol("w"), a = symbol("a"), b = symbol("b");
  const Expr i = symbol("i"), j = symbol("j");
  Graph g;
  g.globals = {"N_kz", "N_qz", "N_E", "N_w", "N_A", "N_B", "N_orb"};
  g.bounds = sse_bounds();
  const std::vector<Expr> el{N_kz, N_E, N_A, N_orb, N_orb};
  const std::vector<Expr> ph{N_qz, N_w, N_A, N_B + 1, Expr(3), Expr(3)};
  for (const char* n : {"G_lesser", "G_greater", "Sigma_lesser", "Sigma_greater"}) g.arrays.push_back({n, el, 16});
  for (const char* n : {"D_lesser", "D_greater", "Pi_lesser", "Pi_greater"}) g.arrays.push_back({n, ph, 16});

  MapScope& m = g.root;
  m.label = "sse";
  for (auto [s, n] : std::vector<std::pair<const char*, Expr>>{
           {"k", N_kz}, {"E", N_E}, {"q", N_qz}, {"w", N_w}, {"a", N_A}, {"b", N_B}, {"i", Expr(3)}, {"j", Expr(3)}}) {
    m.dims.push_back({s, {Expr(0), n}});
  }
  m.tasklets = {"sigma_update", "pi_update"};
  const auto orb = Index::span(Expr(0), N_orb);
  const auto f = Index::indirect("f(a,b)");
  for (const char* t : {"lesser", "greater"}) {
    const std::string G = std::string("G_") + t, D = std::string("D_") + t;
    m.memlets.push_back(read(G, {Index::of(k - q), Index::of(E - w - 1), f, orb, orb}));
    m.memlets.push_back(read(G, {Index::of(k + q), Index::of(E + w + 1), Index::of(a), orb, orb}));
    m.memlets.push_back(read(G, {Index::of(k), Index::of(E), f, orb, orb}));
    m.memlets.push_back(read(D, {Index::of(q), Index::of(w), f, Index::of(b), Index::of(i), Index::of(j)}));
    m.memlets.push_back(read(D, {Index::of(q), Index::of(w), Index::of(a), Index::of(b), Index::of(i), Index::of(j)}));
    m.memlets.push_back(accumulate(std::string("Sigma_") + t, {Index::of(k), Index::of(E), Index::of(a), orb, orb}));
    m.memlets.push_back(accumulate(std::string("Pi_") + t,
                                   {Index::of(q), Index::of(w), Index::of(a), Index::of(b), Index::of(i), Index::of(j)}));
  }
  return g;
}

/// Sets `model` on every indirect subscript labelled `label`.
inline Graph attach_model(const Graph& g, const std::string& label, const IndirectionModel& model) {
  Graph out = g;
  std::function<void(MapScope&)> rec = [&](MapScope& s) {
    for (auto& m : s.memlets)
      for (auto& ix : m.subset)
        if (!ix.affine && ix.label == label) ix.model = model;
    for (auto& n : s.nested) rec(n);
  };
  rec(out.root);
  return out;
}

/// SSE map tiled over energies (s_E) and atoms (s_A), with the neighbor model attached and all
/// memlets propagated. Tiles are assumed to divide the extents.
inline Graph tiled_sse_graph() {
  Graph g = sse_graph();
  g.root = tile_map(g.root, {{"E", sym::symbol("s_E")}, {"a", sym::symbol("s_A")}}, TileMode::ExactDivision, g.bounds);
  g.globals.insert("s_E");
  g.globals.insert("s_A");
  return propagate_all(attach_model(g, "f(a,b)", neighbor_model()));
}

}  // namespace qtx::ir
