#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qtx::sym {

class Expr;

/// Non-polynomial leaf of an expression: a symbol or a min/max/ceil-div/floor-div node.
struct Atom {
  enum class Kind { Symbol, Min, Max, CeilDiv, FloorDiv };
  Kind kind = Kind::Symbol;
  std::string name;
  std::vector<Expr> args;
  std::string key;  // canonical printed form, used for ordering and equality
};
using AtomPtr = std::shared_ptr<const Atom>;

/// Integer polynomial over atoms, kept in canonical sum-of-monomials form.
/// Structurally equal inputs give equal `str()` and compare equal.
class Expr {
 public:
  using Monomial = std::vector<AtomPtr>;  // sorted by key, repeats allowed

  Expr() = default;
  Expr(std::int64_t c) {  // NOLINT(google-explicit-constructor)
    if (c != 0) terms_[{}] = {{}, c};
  }
  Expr(int c) : Expr(static_cast<std::int64_t>(c)) {}  // NOLINT(google-explicit-constructor)

  static Expr atom(AtomPtr a) {
    Expr e;
    e.terms_[{a->key}] = {{a}, 1};
    return e;
  }

  bool is_constant() const { return terms_.empty() || (terms_.size() == 1 && terms_.begin()->first.empty()); }
  std::int64_t constant_value() const {
    auto it = terms_.find({});
    return it == terms_.end() ? 0 : it->second.second;
  }

  std::string str() const {
    if (terms_.empty()) return "0";
    std::string out;
    bool first = true;
    auto emit = [&](const std::vector<std::string>&, const std::pair<Monomial, std::int64_t>& t) {
      std::int64_t c = t.second;
      if (!first) out += c < 0 ? " - " : " + ";
      else if (c < 0) out += "-";
      first = false;
      const std::int64_t mag = c < 0 ? -c : c;
      if (t.first.empty()) {
        out += std::to_string(mag);
        return;
      }
      if (mag != 1) out += std::to_string(mag) + "*";
      for (std::size_t i = 0; i < t.first.size(); ++i) out += (i ? "*" : "") + t.first[i]->key;
    };
    // Constant term last.
    for (const auto& [k, t] : terms_)
      if (!k.empty()) emit(k, t);
    if (auto it = terms_.find({}); it != terms_.end()) emit(it->first, it->second);
    return out;
  }

  bool operator==(const Expr& o) const { return str() == o.str(); }

  friend Expr operator+(const Expr& a, const Expr& b) {
    Expr r = a;
    for (const auto& [k, t] : b.terms_) r.add_term(k, t.first, t.second);
    return r;
  }
  friend Expr operator-(const Expr& a) {
    Expr r = a;
    for (auto& [k, t] : r.terms_) t.second = -t.second;
    return r;
  }
  friend Expr operator-(const Expr& a, const Expr& b) { return a + (-b); }
  friend Expr operator*(const Expr& a, const Expr& b) {
    Expr r;
    for (const auto& [ka, ta] : a.terms_)
      for (const auto& [kb, tb] : b.terms_) {
        Monomial m = ta.first;
        m.insert(m.end(), tb.first.begin(), tb.first.end());
        std::sort(m.begin(), m.end(), [](const AtomPtr& x, const AtomPtr& y) { return x->key < y->key; });
        std::vector<std::string> k;
        for (const auto& at : m) k.push_back(at->key);
        r.add_term(k, m, ta.second * tb.second);
      }
    return r;
  }

  template <typename F>
  void for_each_term(F&& f) const {
    for (const auto& [k, t] : terms_) f(t.first, t.second);
  }

 private:
  void add_term(const std::vector<std::string>& k, const Monomial& m, std::int64_t c) {
    auto it = terms_.find(k);
    if (it == terms_.end()) {
      if (c != 0) terms_[k] = {m, c};
      return;
    }
    it->second.second += c;
    if (it->second.second == 0) terms_.erase(it);
  }

  std::map<std::vector<std::string>, std::pair<Monomial, std::int64_t>> terms_;
};

// ---- symbol bounds and interval evaluation ----

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};
using Bounds = std::map<std::string, Interval>;

inline Interval interval_of(const Expr& e, const Bounds& b);

namespace detail {

inline double mul_bound(double x, double y) {
  if (x == 0.0 || y == 0.0) return 0.0;  // 0 * inf treated as 0
  return x * y;
}
inline Interval mul(const Interval& x, const Interval& y) {
  const double c[] = {mul_bound(x.lo, y.lo), mul_bound(x.lo, y.hi), mul_bound(x.hi, y.lo), mul_bound(x.hi, y.hi)};
  return {*std::min_element(std::begin(c), std::end(c)), *std::max_element(std::begin(c), std::end(c))};
}

inline Interval atom_interval(const Atom& a, const Bounds& b) {
  const double inf = std::numeric_limits<double>::infinity();
  switch (a.kind) {
    case Atom::Kind::Symbol: {
      auto it = b.find(a.name);
      return it == b.end() ? Interval{} : it->second;
    }
    case Atom::Kind::Min: {
      Interval r{inf, inf};
      for (const auto& x : a.args) {
        const auto i = interval_of(x, b);
        r.lo = std::min(r.lo, i.lo);
        r.hi = std::min(r.hi, i.hi);
      }
      return r;
    }
    case Atom::Kind::Max: {
      Interval r{-inf, -inf};
      for (const auto& x : a.args) {
        const auto i = interval_of(x, b);
        r.lo = std::max(r.lo, i.lo);
        r.hi = std::max(r.hi, i.hi);
      }
      return r;
    }
    case Atom::Kind::CeilDiv:
    case Atom::Kind::FloorDiv: {
      const auto n = interval_of(a.args[0], b), d = interval_of(a.args[1], b);
      if (d.lo < 1.0) return {};
      // Positive divisor: quotient is monotone in the numerator.
      const double lo = n.lo >= 0 ? n.lo / d.hi : n.lo / d.lo;
      const double hi = n.hi >= 0 ? n.hi / d.lo : n.hi / d.hi;
      if (a.kind == Atom::Kind::CeilDiv) return {std::ceil(lo), std::ceil(hi)};
      return {std::floor(lo), std::floor(hi)};
    }
  }
  return {};
}

}  // namespace detail

inline Interval interval_of(const Expr& e, const Bounds& b) {
  Interval r{0.0, 0.0};
  e.for_each_term([&](const Expr::Monomial& m, std::int64_t c) {
    Interval t{static_cast<double>(c), static_cast<double>(c)};
    for (const auto& a : m) t = detail::mul(t, detail::atom_interval(*a, b));
    r.lo += t.lo;
    r.hi += t.hi;
  });
  return r;
}

/// True when e >= 0 is provable from the symbol bounds.
inline bool provably_nonnegative(const Expr& e, const Bounds& b) { return interval_of(e, b).lo >= 0.0; }

// ---- constructors ----

inline Expr symbol(const std::string& name) {
  auto a = std::make_shared<Atom>();
  a->kind = Atom::Kind::Symbol;
  a->name = name;
  a->key = name;
  return Expr::atom(a);
}

namespace detail {

inline Expr make_atom(Atom::Kind kind, std::vector<Expr> args) {
  const char* fn = kind == Atom::Kind::Min ? "min" : kind == Atom::Kind::Max ? "max"
                   : kind == Atom::Kind::CeilDiv ? "ceildiv" : "floordiv";
  auto a = std::make_shared<Atom>();
  a->kind = kind;
  a->args = std::move(args);
  a->key = std::string(fn) + "(";
  for (std::size_t i = 0; i < a->args.size(); ++i) a->key += (i ? ", " : "") + a->args[i].str();
  a->key += ")";
  return Expr::atom(a);
}

inline std::optional<AtomPtr> single_atom(const Expr& e) {
  std::optional<AtomPtr> out;
  int n = 0;
  e.for_each_term([&](const Expr::Monomial& m, std::int64_t c) {
    ++n;
    if (m.size() == 1 && c == 1) out = m[0];
  });
  return n == 1 ? out : std::nullopt;
}

/// floordiv(x, 2) + ceildiv(x, 2) -> x, for terms with equal coefficients.
inline Expr merge_halves(const Expr& e) {
  std::map<std::string, std::pair<AtomPtr, std::int64_t>> floors, ceils;
  e.for_each_term([&](const Expr::Monomial& m, std::int64_t c) {
    if (m.size() != 1) return;
    const auto& a = m[0];
    const bool half = a->args.size() == 2 && a->args[1].is_constant() && a->args[1].constant_value() == 2;
    if (!half) return;
    if (a->kind == Atom::Kind::FloorDiv) floors[a->args[0].str()] = {a, c};
    if (a->kind == Atom::Kind::CeilDiv) ceils[a->args[0].str()] = {a, c};
  });
  Expr out = e;
  for (const auto& [num, f] : floors) {
    auto it = ceils.find(num);
    if (it == ceils.end()) continue;
    if (it->second.second != f.second) continue;
    const std::int64_t c = f.second;
    out = out - Expr(c) * Expr::atom(f.first) - Expr(c) * Expr::atom(it->second.first) + Expr(c) * f.first->args[0];
  }
  return out;
}

/// Flattens nested min (or max) args, drops duplicates and args dominated under the bounds.
inline Expr minmax(Atom::Kind kind, const std::vector<Expr>& in, const Bounds& b) {
  std::vector<Expr> flat;
  for (const auto& x : in) {
    auto at = single_atom(x);
    if (at && (*at)->kind == kind) {
      flat.insert(flat.end(), (*at)->args.begin(), (*at)->args.end());
    } else {
      flat.push_back(merge_halves(x));
    }
  }
  std::vector<Expr> keep;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < flat.size() && !dominated; ++j) {
      if (i == j) continue;
      // For min, flat[i] is redundant when flat[i] - flat[j] >= 0; for max, when flat[j] - flat[i] >= 0.
      const Expr diff = kind == Atom::Kind::Min ? flat[i] - flat[j] : flat[j] - flat[i];
      if (provably_nonnegative(diff, b)) {
        // Ties: keep the one with the smaller index.
        dominated = !(diff.is_constant() && diff.constant_value() == 0 && i < j);
      }
    }
    if (!dominated) keep.push_back(flat[i]);
  }
  if (keep.size() == 1) return keep[0];
  std::sort(keep.begin(), keep.end(), [](const Expr& x, const Expr& y) { return x.str() < y.str(); });
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  if (keep.size() == 1) return keep[0];
  return make_atom(kind, keep);
}

inline std::int64_t ceil_div_i(std::int64_t n, std::int64_t d) {
  const std::int64_t q = n / d, r = n % d;
  return (r != 0 && ((r > 0) == (d > 0))) ? q + 1 : q;
}
inline std::int64_t floor_div_i(std::int64_t n, std::int64_t d) {
  const std::int64_t q = n / d, r = n % d;
  return (r != 0 && ((r < 0) != (d < 0))) ? q - 1 : q;
}

inline Expr division(Atom::Kind kind, const Expr& n, const Expr& d) {
  if (d.is_constant() && d.constant_value() == 0) throw std::invalid_argument("symbolic division by zero");
  if (d.is_constant() && d.constant_value() == 1) return n;
  if (n.is_constant() && d.is_constant()) {
    return kind == Atom::Kind::CeilDiv ? Expr(ceil_div_i(n.constant_value(), d.constant_value()))
                                       : Expr(floor_div_i(n.constant_value(), d.constant_value()));
  }
  return make_atom(kind, {n, d});
}

}  // namespace detail

inline Expr min(const Expr& a, const Expr& b, const Bounds& bounds = {}) {
  return detail::minmax(Atom::Kind::Min, {a, b}, bounds);
}
inline Expr max(const Expr& a, const Expr& b, const Bounds& bounds = {}) {
  return detail::minmax(Atom::Kind::Max, {a, b}, bounds);
}
inline Expr ceil_div(const Expr& n, const Expr& d) { return detail::division(Atom::Kind::CeilDiv, n, d); }
inline Expr floor_div(const Expr& n, const Expr& d) { return detail::division(Atom::Kind::FloorDiv, n, d); }

// ---- rewriting and evaluation ----

/// Rebuilds e bottom-up, replacing symbols via `subst` and re-simplifying min/max under `bounds`.
inline Expr rebuild(const Expr& e, const std::map<std::string, Expr>& subst, const Bounds& bounds) {
  Expr out;
  e.for_each_term([&](const Expr::Monomial& m, std::int64_t c) {
    Expr t(c);
    for (const auto& a : m) {
      Expr f;
      switch (a->kind) {
        case Atom::Kind::Symbol: {
          auto it = subst.find(a->name);
          f = it == subst.end() ? symbol(a->name) : it->second;
          break;
        }
        case Atom::Kind::Min:
        case Atom::Kind::Max: {
          std::vector<Expr> args;
          for (const auto& x : a->args) args.push_back(rebuild(x, subst, bounds));
          f = detail::minmax(a->kind, args, bounds);
          break;
        }
        case Atom::Kind::CeilDiv:
        case Atom::Kind::FloorDiv:
          f = detail::division(a->kind, rebuild(a->args[0], subst, bounds), rebuild(a->args[1], subst, bounds));
          break;
      }
      t = t * f;
    }
    out = out + t;
  });
  return out;
}

inline Expr simplify(const Expr& e, const Bounds& bounds) { return detail::merge_halves(rebuild(e, {}, bounds)); }
inline Expr substitute(const Expr& e, const std::map<std::string, Expr>& subst) { return rebuild(e, subst, {}); }

inline std::set<std::string> symbols_of(const Expr& e) {
  std::set<std::string> out;
  e.for_each_term([&](const Expr::Monomial& m, std::int64_t) {
    for (const auto& a : m) {
      if (a->kind == Atom::Kind::Symbol) {
        out.insert(a->name);
      } else {
        for (const auto& x : a->args) {
          const auto s = symbols_of(x);
          out.insert(s.begin(), s.end());
        }
      }
    }
  });
  return out;
}

using Env = std::map<std::string, std::int64_t>;

inline std::int64_t eval(const Expr& e, const Env& env) {
  const Expr v = substitute(e, [&] {
    std::map<std::string, Expr> s;
    for (const auto& [k, x] : env) s[k] = Expr(x);
    return s;
  }());
  if (!v.is_constant()) throw std::invalid_argument("eval: unbound symbol in " + v.str());
  return v.constant_value();
}

}  // namespace qtx::sym
