#pragma once

#include <cstdint>

#include "params.hpp"

namespace qtx {

/// Per-invocation flop accumulator. A complex multiply-add counts as 8 real flop.
///
/// `gemm` holds the small matrix-matrix products the analytic model counts;
/// `aux` holds everything else (scalar-matrix scaling, traces).
struct FlopCounter {
  std::uint64_t gemm = 0;
  std::uint64_t aux = 0;

  static constexpr std::uint64_t kFlopPerComplexFma = 8;

  void add_gemm(std::size_t m, std::size_t n, std::size_t k) { gemm += kFlopPerComplexFma * m * n * k; }
  void add_aux(std::size_t fmas) { aux += kFlopPerComplexFma * fmas; }
  std::uint64_t total() const { return gemm + aux; }

  FlopCounter& operator+=(const FlopCounter& o) {
    gemm += o.gemm;
    aux += o.aux;
    return *this;
  }
};

inline void count_gemm(FlopCounter* c, std::size_t m, std::size_t n, std::size_t k) {
  if (c) c->add_gemm(m, n, k);
}
inline void count_aux(FlopCounter* c, std::size_t fmas) {
  if (c) c->add_aux(fmas);
}

namespace detail {
inline double d(std::size_t v) { return static_cast<double>(v); }
}  // namespace detail

/// Original loop nest: 64 N_A N_B N_3D N_kz N_qz N_E N_w N_orb^3.
inline double sse_flops_omen(const SimParams& p) {
  using detail::d;
  return 64.0 * d(p.n_A) * d(p.n_B) * d(p.n_3D) * d(p.n_kz) * d(p.n_qz) * d(p.n_E) * d(p.n_w) * d(p.n_orb) *
         d(p.n_orb) * d(p.n_orb);
}

/// After redundancy removal: 32 N_A N_B N_3D N_kz N_qz N_E N_w N_orb^3 + 32 N_A N_B N_3D N_kz N_E N_orb^3.
inline double sse_flops_dace(const SimParams& p) {
  using detail::d;
  const double common = 32.0 * d(p.n_A) * d(p.n_B) * d(p.n_3D) * d(p.n_kz) * d(p.n_E) * d(p.n_orb) * d(p.n_orb) * d(p.n_orb);
  return common * d(p.n_qz) * d(p.n_w) + common;
}

struct FlopReport {
  double sse_omen = 0.0;
  double sse_dace = 0.0;
  // Instrumented counts; zero when no kernel was run.
  std::uint64_t counted_reference = 0;
  std::uint64_t counted_batched = 0;
};

}  // namespace qtx
