#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"

namespace qtx {

inline constexpr double kTiB = 1099511627776.0;  // 2^40

enum class Scheme { OmenStyle, TiledAllToAll };

inline const char* to_string(Scheme s) { return s == Scheme::OmenStyle ? "omen" : "tiled"; }

struct ByteBreakdown {
  double electron_G = 0.0;
  double phonon_D_Pi = 0.0;
  double electron_Sigma = 0.0;

  double total() const { return electron_G + phonon_D_Pi + electron_Sigma; }
};

struct CommPlan {
  Scheme scheme = Scheme::OmenStyle;
  std::size_t P = 1;
  std::size_t T_E = 0;  // tiled scheme only
  std::size_t T_A = 0;
  ByteBreakdown per_process;
  double total_bytes = 0.0;

  double total_tib() const { return total_bytes / kTiB; }
};

class InfeasiblePartition : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
inline double dbl(std::size_t v) { return static_cast<double>(v); }
}  // namespace detail

/// Momentum/energy decomposition with N_qz*N_w exchange rounds.
/// Per process: 64 (N_kz N_E / P) N_qz N_w N_A N_orb^2 bytes received for G,
/// 64 N_qz N_w N_A N_B N_3D^2 bytes sent and received for D and Pi.
inline CommPlan omen_volume(const SimParams& p, std::size_t P) {
  using detail::dbl;
  if (P < 1) throw std::invalid_argument("omen_volume: P must be >= 1");
  CommPlan c;
  c.scheme = Scheme::OmenStyle;
  c.P = P;
  c.per_process.electron_G =
      64.0 * (dbl(p.n_kz) * dbl(p.n_E) / dbl(P)) * dbl(p.n_qz) * dbl(p.n_w) * dbl(p.n_A) * dbl(p.n_orb) * dbl(p.n_orb);
  c.per_process.phonon_D_Pi = 64.0 * dbl(p.n_qz) * dbl(p.n_w) * dbl(p.n_A) * dbl(p.n_B) * dbl(p.n_3D) * dbl(p.n_3D);
  c.total_bytes = c.per_process.total() * dbl(P);
  return c;
}

/// Energy/atom tiling with one all-to-all. Per process:
/// 64 N_kz (N_E/T_E + 2 N_w)(N_A/T_A + N_B) N_orb^2 bytes for G and Sigma (split evenly between them),
/// 64 N_qz N_w (N_A/T_A + N_B) N_B N_3D^2 bytes for D and Pi.
inline CommPlan dace_volume(const SimParams& p, std::size_t T_E, std::size_t T_A) {
  using detail::dbl;
  if (T_E < 1 || T_A < 1) throw std::invalid_argument("dace_volume: T_E and T_A must be >= 1");
  CommPlan c;
  c.scheme = Scheme::TiledAllToAll;
  c.T_E = T_E;
  c.T_A = T_A;
  c.P = T_E * T_A;
  const double atoms = dbl(p.n_A) / dbl(T_A) + dbl(p.n_B);
  const double electron =
      64.0 * dbl(p.n_kz) * (dbl(p.n_E) / dbl(T_E) + 2.0 * dbl(p.n_w)) * atoms * dbl(p.n_orb) * dbl(p.n_orb);
  c.per_process.electron_G = electron / 2.0;
  c.per_process.electron_Sigma = electron / 2.0;
  c.per_process.phonon_D_Pi = 64.0 * dbl(p.n_qz) * dbl(p.n_w) * atoms * dbl(p.n_B) * dbl(p.n_3D) * dbl(p.n_3D);
  c.total_bytes = c.per_process.total() * dbl(c.P);
  return c;
}

/// All (T_E, T_A) with T_E * T_A = P, T_E <= N_E and T_A <= N_A.
inline std::vector<std::pair<std::size_t, std::size_t>> feasible_tilings(const SimParams& p, std::size_t P) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t te = 1; te <= P; ++te) {
    if (P % te != 0) continue;
    const std::size_t ta = P / te;
    if (te <= p.n_E && ta <= p.n_A) out.emplace_back(te, ta);
  }
  return out;
}

/// Exhaustive search over feasible factor pairs. Ties go to the smallest T_A, then the smallest T_E.
inline CommPlan optimize_tiles(const SimParams& p, std::size_t P) {
  if (P < 1) throw std::invalid_argument("optimize_tiles: P must be >= 1");
  std::optional<CommPlan> best;
  for (const auto& [te, ta] : feasible_tilings(p, P)) {
    const CommPlan c = dace_volume(p, te, ta);
    const bool better = !best || c.total_bytes < best->total_bytes ||
                        (c.total_bytes == best->total_bytes &&
                         (c.T_A < best->T_A || (c.T_A == best->T_A && c.T_E < best->T_E)));
    if (better) best = c;
  }
  if (!best) {
    throw InfeasiblePartition("no factorization of P=" + std::to_string(P) + " with T_E <= " + std::to_string(p.n_E) +
                              " and T_A <= " + std::to_string(p.n_A));
  }
  return *best;
}

// ---- CSV report ----

inline std::string comm_csv_header() { return "scheme,P,T_E,T_A,bytes_G,bytes_D_Pi,total_TiB"; }

/// `label` replaces the scheme name in the first column when given.
inline std::string comm_csv_row(const CommPlan& c, const std::string& label = "") {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.0f,%.0f,%.6f", label.empty() ? to_string(c.scheme) : label.c_str(),
                c.P, c.T_E, c.T_A,
                (c.per_process.electron_G + c.per_process.electron_Sigma) * static_cast<double>(c.P),
                c.per_process.phonon_D_Pi * static_cast<double>(c.P), c.total_tib());
  return buf;
}

}  // namespace qtx
