#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "device.hpp"
#include "gf_solver.hpp"
#include "params.hpp"
#include "perf_model.hpp"
#include "tensor.hpp"

namespace qtx {

/// Preprocessed phonon input of the electron self-energy, [n_qz, n_w, n_A, n_B, n_3D, n_3D]:
/// D_ba - D_bb - D_aa + D_ab per (a, neighbor slot b, i, j).
using CombinedD = LesserGreater<6>;

enum class SseVariant { Reference, Fissioned, RedundancyRemoved, LayoutTransformed, BatchedFused };
enum class PiVariant { Reference, Hoisted };
enum class LayoutTag { GridMajor, AtomMajor };

inline const char* to_string(SseVariant v) {
  switch (v) {
    case SseVariant::Reference: return "Reference";
    case SseVariant::Fissioned: return "Fissioned";
    case SseVariant::RedundancyRemoved: return "RedundancyRemoved";
    case SseVariant::LayoutTransformed: return "LayoutTransformed";
    case SseVariant::BatchedFused: return "BatchedFused";
  }
  return "?";
}

inline constexpr SseVariant kAllSseVariants[] = {SseVariant::Reference, SseVariant::Fissioned,
                                                 SseVariant::RedundancyRemoved, SseVariant::LayoutTransformed,
                                                 SseVariant::BatchedFused};

// ---- grid offsets shared by every kernel ----
// Momentum wraps modulo n_kz; energy terms that leave the grid are dropped.

struct SourcePoint {
  std::size_t k;
  std::size_t e;
};

/// Source of G in the electron self-energy: (k - q mod n_kz, e - offset).
inline std::optional<SourcePoint> sigma_source(std::size_t k, std::size_t e, std::size_t q, std::size_t offset,
                                               std::size_t n_kz) {
  if (e < offset) return std::nullopt;
  return SourcePoint{wrap_index(static_cast<std::int64_t>(k) - static_cast<std::int64_t>(q), n_kz), e - offset};
}

/// Source of the shifted G in the phonon self-energy: (k + q mod n_kz, e + offset).
inline std::optional<SourcePoint> pi_source(std::size_t k, std::size_t e, std::size_t q, std::size_t offset,
                                            std::size_t n_kz, std::size_t n_E) {
  if (e + offset >= n_E) return std::nullopt;
  return SourcePoint{(k + q) % n_kz, e + offset};
}

struct SseOptions {
  unsigned threads = 1;
  FlopCounter* counter = nullptr;
};

namespace detail {

inline void check_sse_shapes(const ElectronTensor& G, const Tensor<6>& Dc, const Tensor<5>& dH, const NeighborMap& nm,
                             const EnergyGrid& grid) {
  const std::size_t n_A = G.extent(2), no = G.extent(3);
  if (dH.extent(0) != n_A || dH.extent(1) != nm.n_B || dH.extent(3) != no || dH.extent(4) != no) {
    throw std::invalid_argument("sse: dH shape mismatch");
  }
  if (Dc.extent(1) != grid.frequency_map.size() || Dc.extent(2) != n_A || Dc.extent(3) != nm.n_B ||
      Dc.extent(4) != dH.extent(2) || Dc.extent(5) != dH.extent(2)) {
    throw std::invalid_argument("sse: combined D shape mismatch");
  }
  if (Dc.extent(0) > G.extent(0)) throw std::invalid_argument("sse: n_qz exceeds n_kz");
  if (nm.n_A != n_A || G.extent(1) != grid.values.size()) throw std::invalid_argument("sse: grid/neighbor mismatch");
  for (auto f : nm.idx)
    if (f >= n_A) throw std::invalid_argument("sse: invalid neighbor index " + std::to_string(f));
}

/// weight * sum_j Dc[q,w,a,b,i,j] * dH[a,b,j]
inline MatrixC combined_dhd(const Tensor<6>& Dc, const Tensor<5>& dH, std::size_t q, std::size_t w, std::size_t a,
                            std::size_t b, std::size_t i, cplx weight, FlopCounter* c) {
  const std::size_t n3 = dH.extent(2), no = dH.extent(3);
  MatrixC out = MatrixC::Zero(no, no);
  for (std::size_t j = 0; j < n3; ++j) out += (weight * Dc(q, w, a, b, i, j)) * block_map(dH.at(a, b, j), no, no);
  count_aux(c, n3 * no * no);
  return out;
}

}  // namespace detail

/// One (k,E,q,w,a,b,i) update of the reference loop nest:
///   sigma += (G[src] @ dH[a,b,i]) @ (i*w_w * sum_j D[q,w,a,b,i,j] dH[a,b,j]).
/// Every code path that must match the reference bitwise goes through here.
inline void sigma_point_update(MapC sigma, const cplx* g_src, const Tensor<6>& Dc, const Tensor<5>& dH, std::size_t q,
                               std::size_t w, std::size_t a, std::size_t b, std::size_t i, cplx weight,
                               FlopCounter* c) {
  const std::size_t no = dH.extent(3);
  const MatrixC dhg = block_map(g_src, no, no) * block_map(dH.at(a, b, i), no, no);
  count_gemm(c, no, no, no);
  const MatrixC dhd = detail::combined_dhd(Dc, dH, q, w, a, b, i, weight, c);
  sigma.noalias() += dhg * dhd;
  count_gemm(c, no, no, no);
}

/// Reference loop nest over (k, E, q, w, a, b, i) for an output box of energies and atoms.
/// `g(k, e, atom)` returns a pointer to the n_orb x n_orb block of G.
template <typename GFetch>
void sigma_reference_box(GFetch&& g, const Tensor<6>& Dc, const Tensor<5>& dH, const NeighborMap& nm,
                         const EnergyGrid& grid, std::size_t n_kz, std::size_t e0, std::size_t e1, std::size_t a0,
                         std::size_t a1, ElectronTensor& out, FlopCounter* c) {
  const std::size_t n_qz = Dc.extent(0), n_w = Dc.extent(1), n3 = dH.extent(2), no = dH.extent(3);
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = e0; e < e1; ++e)
      for (std::size_t q = 0; q < n_qz; ++q)
        for (std::size_t w = 0; w < n_w; ++w) {
          const auto src = sigma_source(k, e, q, grid.frequency_map[w].offset, n_kz);
          if (!src) continue;
          const cplx weight = kI * grid.frequency_map[w].weight;
          for (std::size_t a = a0; a < a1; ++a)
            for (std::size_t b = 0; b < nm.n_B; ++b)
              for (std::size_t i = 0; i < n3; ++i)
                sigma_point_update(block_map(out.at(k, e, a), no, no), g(src->k, src->e, nm(a, b)), Dc, dH, q, w, a, b,
                                   i, weight, c);
        }
}

/// Electron self-energy for one of lesser/greater with the reference loop nest.
inline ElectronTensor sse_sigma_reference_single(const ElectronTensor& G, const Tensor<6>& Dc, const Tensor<5>& dH,
                                                 const NeighborMap& nm, const EnergyGrid& grid,
                                                 const SseOptions& opt = {}) {
  detail::check_sse_shapes(G, Dc, dH, nm, grid);
  ElectronTensor out(G.shape());
  const std::size_t n_kz = G.extent(0), n_E = G.extent(1), n_A = G.extent(2);
  // Output-disjoint chunks over energies; counters are merged in chunk order.
  std::vector<FlopCounter> counters(n_E);
  parallel_for(n_E, opt.threads, [&](std::size_t e) {
    sigma_reference_box([&](std::size_t k, std::size_t ee, std::size_t f) { return G.at(k, ee, f); }, Dc, dH, nm, grid,
                        n_kz, e, e + 1, 0, n_A, out, opt.counter ? &counters[e] : nullptr);
  });
  if (opt.counter)
    for (const auto& c : counters) *opt.counter += c;
  return out;
}

// ---- Fissioned: three separate maps with full intermediate tensors ----

/// dHG[k,E,q,w,a,b,i] = G[k-q, E-off(w), f(a,b)] @ dH[a,b,i]; zero where the energy source is off-grid.
inline Tensor<9> fissioned_dhg(const ElectronTensor& G, const Tensor<5>& dH, const NeighborMap& nm,
                               const EnergyGrid& grid, std::size_t n_qz, FlopCounter* c = nullptr) {
  const std::size_t n_kz = G.extent(0), n_E = G.extent(1), n_A = G.extent(2), no = G.extent(3);
  const std::size_t n_w = grid.frequency_map.size(), n3 = dH.extent(2);
  Tensor<9> t({n_kz, n_E, n_qz, n_w, n_A, nm.n_B, n3, no, no});
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = 0; e < n_E; ++e)
      for (std::size_t q = 0; q < n_qz; ++q)
        for (std::size_t w = 0; w < n_w; ++w) {
          const auto src = sigma_source(k, e, q, grid.frequency_map[w].offset, n_kz);
          if (!src) continue;
          for (std::size_t a = 0; a < n_A; ++a)
            for (std::size_t b = 0; b < nm.n_B; ++b)
              for (std::size_t i = 0; i < n3; ++i) {
                block_map(t.at(k, e, q, w, a, b, i), no, no).noalias() =
                    block_map(G.at(src->k, src->e, nm(a, b)), no, no) * block_map(dH.at(a, b, i), no, no);
                count_gemm(c, no, no, no);
              }
        }
  return t;
}

/// dHD[q,w,a,b,i] = sum_j D[q,w,a,b,i,j] dH[a,b,j] (frequency weight not applied).
inline Tensor<7> combined_dhd_tensor(const Tensor<6>& Dc, const Tensor<5>& dH, FlopCounter* c = nullptr) {
  const std::size_t n_qz = Dc.extent(0), n_w = Dc.extent(1), n_A = Dc.extent(2), n_B = Dc.extent(3);
  const std::size_t n3 = dH.extent(2), no = dH.extent(3);
  Tensor<7> t({n_qz, n_w, n_A, n_B, n3, no, no});
  for (std::size_t q = 0; q < n_qz; ++q)
    for (std::size_t w = 0; w < n_w; ++w)
      for (std::size_t a = 0; a < n_A; ++a)
        for (std::size_t b = 0; b < n_B; ++b)
          for (std::size_t i = 0; i < n3; ++i)
            block_map(t.at(q, w, a, b, i), no, no) = detail::combined_dhd(Dc, dH, q, w, a, b, i, cplx{1.0, 0.0}, c);
  return t;
}

/// dHG[k,E,a,b,i] = G[k,E,f(a,b)] @ dH[a,b,i]; the (q,w) dimensions only shifted the G index.
inline Tensor<7> redundancy_removed_dhg(const ElectronTensor& G, const Tensor<5>& dH, const NeighborMap& nm,
                                        FlopCounter* c = nullptr) {
  const std::size_t n_kz = G.extent(0), n_E = G.extent(1), n_A = G.extent(2), no = G.extent(3), n3 = dH.extent(2);
  Tensor<7> t({n_kz, n_E, n_A, nm.n_B, n3, no, no});
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = 0; e < n_E; ++e)
      for (std::size_t a = 0; a < n_A; ++a)
        for (std::size_t b = 0; b < nm.n_B; ++b)
          for (std::size_t i = 0; i < n3; ++i) {
            block_map(t.at(k, e, a, b, i), no, no).noalias() =
                block_map(G.at(k, e, nm(a, b)), no, no) * block_map(dH.at(a, b, i), no, no);
            count_gemm(c, no, no, no);
          }
  return t;
}

// ---- layout transformation ----

/// [k, E, a, o, o] -> [a, k, E, o, o]
inline Tensor<5> to_atom_major(const ElectronTensor& g) {
  const std::size_t n_kz = g.extent(0), n_E = g.extent(1), n_A = g.extent(2), no = g.extent(3);
  Tensor<5> t({n_A, n_kz, n_E, no, no});
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = 0; e < n_E; ++e)
      for (std::size_t a = 0; a < n_A; ++a) std::copy_n(g.at(k, e, a), no * no, t.at(a, k, e));
  return t;
}

/// [a, k, E, o, o] -> [k, E, a, o, o]
inline ElectronTensor to_grid_major(const Tensor<5>& t) {
  const std::size_t n_A = t.extent(0), n_kz = t.extent(1), n_E = t.extent(2), no = t.extent(3);
  ElectronTensor g({n_kz, n_E, n_A, no, no});
  for (std::size_t a = 0; a < n_A; ++a)
    for (std::size_t k = 0; k < n_kz; ++k)
      for (std::size_t e = 0; e < n_E; ++e) std::copy_n(t.at(a, k, e), no * no, g.at(k, e, a));
  return g;
}

/// AtomMajor dHG[a,b,i,k,E] from one (n_kz*n_E*n_orb) x n_orb by n_orb x n_orb product per (a,b,i).
inline Tensor<7> atom_major_dhg(const Tensor<5>& g_am, const Tensor<5>& dH, const NeighborMap& nm,
                                FlopCounter* c = nullptr) {
  const std::size_t n_A = g_am.extent(0), n_kz = g_am.extent(1), n_E = g_am.extent(2), no = g_am.extent(3);
  const std::size_t n3 = dH.extent(2), rows = n_kz * n_E * no;
  Tensor<7> t({n_A, nm.n_B, n3, n_kz, n_E, no, no});
  for (std::size_t a = 0; a < n_A; ++a)
    for (std::size_t b = 0; b < nm.n_B; ++b)
      for (std::size_t i = 0; i < n3; ++i) {
        block_map(t.at(a, b, i), rows, no).noalias() =
            block_map(g_am.at(nm(a, b)), rows, no) * block_map(dH.at(a, b, i), no, no);
        count_gemm(c, rows, no, no);
      }
  return t;
}

namespace detail {

inline ElectronTensor sigma_fissioned(const ElectronTensor& G, const Tensor<6>& Dc, const Tensor<5>& dH,
                                      const NeighborMap& nm, const EnergyGrid& grid, FlopCounter* c) {
  const std::size_t n_kz = G.extent(0), n_E = G.extent(1), n_A = G.extent(2), no = G.extent(3);
  const std::size_t n_qz = Dc.extent(0), n_w = Dc.extent(1), n3 = dH.extent(2);
  const Tensor<9> dhg = fissioned_dhg(G, dH, nm, grid, n_qz, c);
  const Tensor<7> dhd = combined_dhd_tensor(Dc, dH, c);
  ElectronTensor out(G.shape());
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = 0; e < n_E; ++e)
      for (std::size_t q = 0; q < n_qz; ++q)
        for (std::size_t w = 0; w < n_w; ++w) {
          if (!sigma_source(k, e, q, grid.frequency_map[w].offset, n_kz)) continue;
          const cplx weight = kI * grid.frequency_map[w].weight;
          for (std::size_t a = 0; a < n_A; ++a)
            for (std::size_t b = 0; b < nm.n_B; ++b)
              for (std::size_t i = 0; i < n3; ++i) {
                block_map(out.at(k, e, a), no, no).noalias() +=
                    weight * (block_map(dhg.at(k, e, q, w, a, b, i), no, no) * block_map(dhd.at(q, w, a, b, i), no, no));
                count_gemm(c, no, no, no);
              }
        }
  return out;
}

/// Bottom map shared by RedundancyRemoved and LayoutTransformed; `dhg(k,e,a,b,i)` returns a block pointer.
template <typename DhgFetch>
ElectronTensor sigma_from_dhg(DhgFetch&& dhg, const Tensor<7>& dhd, const ElectronTensor::Shape& shape,
                              const NeighborMap& nm, const EnergyGrid& grid, FlopCounter* c) {
  const std::size_t n_kz = shape[0], n_E = shape[1], n_A = shape[2], no = shape[3];
  const std::size_t n_qz = dhd.extent(0), n_w = dhd.extent(1), n3 = dhd.extent(4);
  ElectronTensor out(shape);
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = 0; e < n_E; ++e)
      for (std::size_t q = 0; q < n_qz; ++q)
        for (std::size_t w = 0; w < n_w; ++w) {
          const auto src = sigma_source(k, e, q, grid.frequency_map[w].offset, n_kz);
          if (!src) continue;
          const cplx weight = kI * grid.frequency_map[w].weight;
          for (std::size_t a = 0; a < n_A; ++a)
            for (std::size_t b = 0; b < nm.n_B; ++b)
              for (std::size_t i = 0; i < n3; ++i) {
                block_map(out.at(k, e, a), no, no).noalias() +=
                    weight * (block_map(dhg(src->k, src->e, a, b, i), no, no) * block_map(dhd.at(q, w, a, b, i), no, no));
                count_gemm(c, no, no, no);
              }
        }
  return out;
}

/// Per-(a,b) fused kernel: transients hold dHG over (i, k, E) and weighted dHD over (q, w, i) for one (a,b).
/// The frequency sum for each (k, E, q) is one n_orb x (n_orb * n_w * n_3D) x n_orb product.
/// dHG is formed only for source energies below n_E - min offset; the others are never read.
inline ElectronTensor sigma_batched_fused(const ElectronTensor& G, const Tensor<6>& Dc, const Tensor<5>& dH,
                                          const NeighborMap& nm, const EnergyGrid& grid, FlopCounter* c) {
  const std::size_t n_kz = G.extent(0), n_E = G.extent(1), n_A = G.extent(2), no = G.extent(3);
  const std::size_t n_qz = Dc.extent(0), n_w = Dc.extent(1), n3 = dH.extent(2), rows = n_kz * n_E * no;
  const Tensor<5> g_am = to_atom_major(G);
  ElectronTensor out(G.shape());
  std::size_t min_off = n_E;
  for (const auto& f : grid.frequency_map) min_off = std::min(min_off, f.offset);
  const std::size_t used_E = n_E > min_off ? n_E - min_off : 0;

  MatrixC dhg_ab(n3 * rows, no);                 // [i][k][E] blocks
  std::vector<MatrixC> dhd_ab(n_qz * n_w * n3);  // [q][w][i]
  MatrixC lhs(no, no * n_w * n3), rhs(no * n_w * n3, no);

  for (std::size_t a = 0; a < n_A; ++a)
    for (std::size_t b = 0; b < nm.n_B; ++b) {
      const auto g_f = block_map(g_am.at(nm(a, b)), rows, no);
      const auto used = static_cast<Eigen::Index>(used_E * no);
      for (std::size_t i = 0; i < n3; ++i)
        for (std::size_t k = 0; k < n_kz && used > 0; ++k) {
          const auto r0 = static_cast<Eigen::Index>(k * n_E * no);
          dhg_ab.middleRows(static_cast<Eigen::Index>(i * rows) + r0, used).noalias() =
              g_f.middleRows(r0, used) * block_map(dH.at(a, b, i), no, no);
          count_gemm(c, used_E * no, no, no);
        }
      for (std::size_t q = 0; q < n_qz; ++q)
        for (std::size_t w = 0; w < n_w; ++w)
          for (std::size_t i = 0; i < n3; ++i)
            dhd_ab[(q * n_w + w) * n3 + i] =
                detail::combined_dhd(Dc, dH, q, w, a, b, i, kI * grid.frequency_map[w].weight, c);

      for (std::size_t k = 0; k < n_kz; ++k)
        for (std::size_t e = 0; e < n_E; ++e)
          for (std::size_t q = 0; q < n_qz; ++q) {
            std::size_t cols = 0;
            for (std::size_t w = 0; w < n_w; ++w) {
              const auto src = sigma_source(k, e, q, grid.frequency_map[w].offset, n_kz);
              if (!src) continue;
              for (std::size_t i = 0; i < n3; ++i) {
                const auto row0 = static_cast<Eigen::Index>(i * rows + (src->k * n_E + src->e) * no);
                lhs.middleCols(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(no)) =
                    dhg_ab.middleRows(row0, static_cast<Eigen::Index>(no));
                rhs.middleRows(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(no)) =
                    dhd_ab[(q * n_w + w) * n3 + i];
                cols += no;
              }
            }
            if (cols == 0) continue;
            const auto nc = static_cast<Eigen::Index>(cols);
            block_map(out.at(k, e, a), no, no).noalias() += lhs.leftCols(nc) * rhs.topRows(nc);
            count_gemm(c, no, no, cols);
          }
    }
  return out;
}

inline ElectronTensor sigma_single(SseVariant v, const ElectronTensor& G, const Tensor<6>& Dc, const Tensor<5>& dH,
                                   const NeighborMap& nm, const EnergyGrid& grid, const SseOptions& opt) {
  check_sse_shapes(G, Dc, dH, nm, grid);
  FlopCounter* c = opt.counter;
  switch (v) {
    case SseVariant::Reference:
      return sse_sigma_reference_single(G, Dc, dH, nm, grid, opt);
    case SseVariant::Fissioned:
      return sigma_fissioned(G, Dc, dH, nm, grid, c);
    case SseVariant::RedundancyRemoved: {
      const Tensor<7> dhg = redundancy_removed_dhg(G, dH, nm, c);
      const Tensor<7> dhd = combined_dhd_tensor(Dc, dH, c);
      return sigma_from_dhg([&](std::size_t k, std::size_t e, std::size_t a, std::size_t b,
                                std::size_t i) { return dhg.at(k, e, a, b, i); },
                            dhd, G.shape(), nm, grid, c);
    }
    case SseVariant::LayoutTransformed: {
      const Tensor<7> dhg = atom_major_dhg(to_atom_major(G), dH, nm, c);
      const Tensor<7> dhd = combined_dhd_tensor(Dc, dH, c);
      return sigma_from_dhg([&](std::size_t k, std::size_t e, std::size_t a, std::size_t b,
                                std::size_t i) { return dhg.at(a, b, i, k, e); },
                            dhd, G.shape(), nm, grid, c);
    }
    case SseVariant::BatchedFused:
      return sigma_batched_fused(G, Dc, dH, nm, grid, c);
  }
  throw std::invalid_argument("unknown SSE variant");
}

}  // namespace detail

/// Electron scattering self-energy (lesser and greater) with the chosen kernel variant.
inline ElectronSelfEnergy sse_sigma(SseVariant v, const ElectronGreens& G, const CombinedD& Dc, const Tensor<5>& dH,
                                    const NeighborMap& nm, const EnergyGrid& grid, const SseOptions& opt = {}) {
  return {detail::sigma_single(v, G.lesser, Dc.lesser, dH, nm, grid, opt),
          detail::sigma_single(v, G.greater, Dc.greater, dH, nm, grid, opt)};
}

inline ElectronSelfEnergy sse_sigma_reference(const ElectronGreens& G, const CombinedD& Dc, const Tensor<5>& dH,
                                              const NeighborMap& nm, const EnergyGrid& grid,
                                              const SseOptions& opt = {}) {
  return sse_sigma(SseVariant::Reference, G, Dc, dH, nm, grid, opt);
}

// ---- D preprocessing ----

/// Slot of atom `from` whose neighbor is `to`, if any.
inline std::optional<std::size_t> reverse_slot(const NeighborMap& nm, std::size_t from, std::size_t to) {
  for (std::size_t b = 0; b < nm.n_B; ++b)
    if (nm(from, b) == to) return b;
  return std::nullopt;
}

inline Tensor<6> preprocess_D(const PhononTensor& D, const NeighborMap& nm) {
  const std::size_t n_qz = D.extent(0), n_w = D.extent(1), n_A = D.extent(2), n3 = D.extent(4);
  if (D.extent(3) != nm.n_B + 1 || nm.n_A != n_A) throw std::invalid_argument("preprocess_D: missing neighbor slot");
  Tensor<6> out({n_qz, n_w, n_A, nm.n_B, n3, n3});
  for (std::size_t a = 0; a < n_A; ++a)
    for (std::size_t b = 0; b < nm.n_B; ++b) {
      const std::size_t f = nm(a, b);
      const auto back = reverse_slot(nm, f, a);
      if (!back) {
        throw std::invalid_argument("preprocess_D: missing neighbor slot (atom " + std::to_string(f) +
                                    " has no slot for " + std::to_string(a) + ")");
      }
      for (std::size_t q = 0; q < n_qz; ++q)
        for (std::size_t w = 0; w < n_w; ++w)
          for (std::size_t i = 0; i < n3; ++i)
            for (std::size_t j = 0; j < n3; ++j)
              out(q, w, a, b, i, j) =
                  D(q, w, f, *back + 1, i, j) - D(q, w, f, 0, i, j) - D(q, w, a, 0, i, j) + D(q, w, a, b + 1, i, j);
    }
  return out;
}

inline CombinedD preprocess_D(const PhononGreens& D, const NeighborMap& nm) {
  return {preprocess_D(D.lesser, nm), preprocess_D(D.greater, nm)};
}

// ---- phonon self-energy ----

/// One (q, w, k, E, a, b) contribution to a neighbor slot of the phonon self-energy:
///   t_ij = tr(dH[a,b,i] G_shift[a] dH[a,b,j] G[f(a,b)]),  Pi[a, b+1] += +i*w_E*t.
/// The diagonal slot carries the same integrand with -i; see finalize_pi_diagonal.
/// `y` holds the precomputed dH[a,b,j] @ G[f(a,b)] products.
inline void pi_point_update(Tensor<6>& pi, const cplx* g_shift, const std::vector<MatrixC>& y, const Tensor<5>& dH,
                            std::size_t q, std::size_t w, std::size_t a, std::size_t b, double energy_weight,
                            FlopCounter* c) {
  const std::size_t n3 = dH.extent(2), no = dH.extent(3);
  std::vector<MatrixC> x(n3);
  for (std::size_t i = 0; i < n3; ++i) {
    x[i].noalias() = block_map(dH.at(a, b, i), no, no) * block_map(g_shift, no, no);
    count_gemm(c, no, no, no);
  }
  for (std::size_t i = 0; i < n3; ++i)
    for (std::size_t j = 0; j < n3; ++j) {
      const cplx t = (x[i].cwiseProduct(y[j].transpose())).sum();
      count_aux(c, no * no);
      pi(q, w, a, b + 1, i, j) += kI * energy_weight * t;
    }
}

/// Pi[q, w, a, 0] = -sum_b Pi[q, w, a, b+1] for atoms [a0, a1).
inline void finalize_pi_diagonal(Tensor<6>& pi, std::size_t a0, std::size_t a1) {
  const std::size_t n_qz = pi.extent(0), n_w = pi.extent(1), slots = pi.extent(3), n3 = pi.extent(4);
  for (std::size_t q = 0; q < n_qz; ++q)
    for (std::size_t w = 0; w < n_w; ++w)
      for (std::size_t a = a0; a < a1; ++a)
        for (std::size_t i = 0; i < n3; ++i)
          for (std::size_t j = 0; j < n3; ++j) {
            cplx sum{};
            for (std::size_t b = 1; b < slots; ++b) sum += pi(q, w, a, b, i, j);
            pi(q, w, a, 0, i, j) = -sum;
          }
}
inline void finalize_pi_diagonal(Tensor<6>& pi) { finalize_pi_diagonal(pi, 0, pi.extent(2)); }

inline std::vector<MatrixC> pi_y_products(const cplx* g_neighbor, const Tensor<5>& dH, std::size_t a, std::size_t b,
                                          FlopCounter* c) {
  const std::size_t n3 = dH.extent(2), no = dH.extent(3);
  std::vector<MatrixC> y(n3);
  for (std::size_t j = 0; j < n3; ++j) {
    y[j].noalias() = block_map(dH.at(a, b, j), no, no) * block_map(g_neighbor, no, no);
    count_gemm(c, no, no, no);
  }
  return y;
}

/// Reference loop nest over (q, w, k, E, a, b) for atoms [a0, a1) and energies [e0, e1).
/// Fills neighbor slots only.
/// `gs(k,e,atom)` fetches the shifted-type tensor (G^> for Pi^>), `gn(k,e,atom)` the other type.
template <typename FetchShift, typename FetchOther>
void pi_reference_box(FetchShift&& gs, FetchOther&& gn, const Tensor<5>& dH, const NeighborMap& nm,
                      const EnergyGrid& grid, std::size_t n_kz, std::size_t n_E, std::size_t e0, std::size_t e1,
                      std::size_t a0, std::size_t a1, Tensor<6>& pi, FlopCounter* c) {
  const std::size_t n_qz = pi.extent(0), n_w = pi.extent(1);
  for (std::size_t q = 0; q < n_qz; ++q)
    for (std::size_t w = 0; w < n_w; ++w)
      for (std::size_t k = 0; k < n_kz; ++k)
        for (std::size_t e = e0; e < e1; ++e) {
          const auto src = pi_source(k, e, q, grid.frequency_map[w].offset, n_kz, n_E);
          if (!src) continue;
          for (std::size_t a = a0; a < a1; ++a)
            for (std::size_t b = 0; b < nm.n_B; ++b) {
              const auto y = pi_y_products(gn(k, e, nm(a, b)), dH, a, b, c);
              pi_point_update(pi, gs(src->k, src->e, a), y, dH, q, w, a, b, grid.energy_weight, c);
            }
        }
}

/// Hoisted loop nest: dH[a,b,j] @ G[k,E,f] is formed once per (k,E,a,b) and reused over (q, w).
template <typename FetchShift, typename FetchOther>
void pi_hoisted_box(FetchShift&& gs, FetchOther&& gn, const Tensor<5>& dH, const NeighborMap& nm,
                    const EnergyGrid& grid, std::size_t n_kz, std::size_t n_E, std::size_t e0, std::size_t e1,
                    std::size_t a0, std::size_t a1, Tensor<6>& pi, FlopCounter* c) {
  const std::size_t n_qz = pi.extent(0), n_w = pi.extent(1);
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = e0; e < e1; ++e)
      for (std::size_t a = a0; a < a1; ++a)
        for (std::size_t b = 0; b < nm.n_B; ++b) {
          bool any = false;
          for (std::size_t w = 0; w < n_w && !any; ++w) any = e + grid.frequency_map[w].offset < n_E;
          if (!any) continue;
          const auto y = pi_y_products(gn(k, e, nm(a, b)), dH, a, b, c);
          for (std::size_t q = 0; q < n_qz; ++q)
            for (std::size_t w = 0; w < n_w; ++w) {
              const auto src = pi_source(k, e, q, grid.frequency_map[w].offset, n_kz, n_E);
              if (!src) continue;
              pi_point_update(pi, gs(src->k, src->e, a), y, dH, q, w, a, b, grid.energy_weight, c);
            }
        }
}

/// Phonon scattering self-energy: slot 0 (diagonal) with prefactor -i, neighbor slots with +i.
inline PhononSelfEnergy sse_pi(const ElectronGreens& G, const Tensor<5>& dH, const NeighborMap& nm,
                               const EnergyGrid& grid, std::size_t n_qz, PiVariant variant = PiVariant::Reference,
                               const SseOptions& opt = {}) {
  const std::size_t n_kz = G.lesser.extent(0), n_E = G.lesser.extent(1), n_A = G.lesser.extent(2);
  const std::size_t n3 = dH.extent(2);
  if (G.greater.shape() != G.lesser.shape()) throw std::invalid_argument("sse_pi: shape mismatch");
  if (dH.extent(0) != n_A || dH.extent(1) != nm.n_B || nm.n_A != n_A) throw std::invalid_argument("sse_pi: dH shape mismatch");
  for (auto f : nm.idx)
    if (f >= n_A) throw std::invalid_argument("sse_pi: invalid neighbor index " + std::to_string(f));
  if (n_qz > n_kz) throw std::invalid_argument("sse_pi: n_qz exceeds n_kz");
  const PhononTensor::Shape shape{n_qz, grid.frequency_map.size(), n_A, nm.n_B + 1, n3, n3};
  PhononSelfEnergy out{PhononTensor(shape), PhononTensor(shape)};
  auto fetch = [](const ElectronTensor& t) {
    return [&t](std::size_t k, std::size_t e, std::size_t a) { return t.at(k, e, a); };
  };
  auto run = [&](const ElectronTensor& shifted, const ElectronTensor& other, PhononTensor& pi) {
    if (variant == PiVariant::Reference) {
      pi_reference_box(fetch(shifted), fetch(other), dH, nm, grid, n_kz, n_E, 0, n_E, 0, n_A, pi, opt.counter);
    } else {
      pi_hoisted_box(fetch(shifted), fetch(other), dH, nm, grid, n_kz, n_E, 0, n_E, 0, n_A, pi, opt.counter);
    }
  };
  run(G.lesser, G.greater, out.lesser);
  run(G.greater, G.lesser, out.greater);
  finalize_pi_diagonal(out.lesser);
  finalize_pi_diagonal(out.greater);
  return out;
}

}  // namespace qtx
