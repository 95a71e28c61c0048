#pragma once

// Brute-force references used by the tests. Nothing here calls the library kernels;
// loops are written out element by element.

#include <complex>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "qtx/qtx.hpp"

namespace oracle {

using qtx::cplx;
using qtx::Tensor;

template <std::size_t R>
Tensor<R> random_tensor(const typename Tensor<R>::Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<R> t(shape);
  for (auto& v : t.data()) v = {u(rng), u(rng)};
  return t;
}

inline qtx::ElectronGreens random_electron(const qtx::SimParams& p, std::mt19937_64& rng) {
  const qtx::ElectronTensor::Shape s{p.n_kz, p.n_E, p.n_A, p.n_orb, p.n_orb};
  qtx::ElectronGreens g{random_tensor<5>(s, rng), random_tensor<5>(s, rng)};
  return g;
}

inline qtx::PhononGreens random_phonon(const qtx::SimParams& p, std::mt19937_64& rng) {
  const qtx::PhononTensor::Shape s{p.n_qz, p.n_w, p.n_A, p.n_B + 1, p.n_3D, p.n_3D};
  qtx::PhononGreens d{random_tensor<6>(s, rng), random_tensor<6>(s, rng)};
  return d;
}

inline Tensor<6> random_combined(const qtx::SimParams& p, std::mt19937_64& rng) {
  return random_tensor<6>({p.n_qz, p.n_w, p.n_A, p.n_B, p.n_3D, p.n_3D}, rng);
}

inline Tensor<5> random_dH(const qtx::SimParams& p, std::mt19937_64& rng) {
  return random_tensor<5>({p.n_A, p.n_B, p.n_3D, p.n_orb, p.n_orb}, rng);
}

/// Electron self-energy from the scalar 8-deep loop nest plus orbital sums.
/// sigma[k,e,a](r,c) = i w_w sum G[k-q, e-off, f](r,x) dH[a,b,i](x,y) D[q,w,a,b,i,j] dH[a,b,j](y,c)
inline Tensor<5> sigma(const Tensor<5>& G, const Tensor<6>& D, const Tensor<5>& dH, const qtx::NeighborMap& nm,
                       const qtx::EnergyGrid& grid) {
  const std::size_t n_kz = G.extent(0), n_E = G.extent(1), n_A = G.extent(2), no = G.extent(3);
  const std::size_t n_qz = D.extent(0), n_w = D.extent(1), n_B = D.extent(3), n3 = D.extent(4);
  Tensor<5> out(G.shape());
  for (std::size_t k = 0; k < n_kz; ++k)
    for (std::size_t e = 0; e < n_E; ++e)
      for (std::size_t q = 0; q < n_qz; ++q)
        for (std::size_t w = 0; w < n_w; ++w) {
          const std::size_t off = grid.frequency_map[w].offset;
          if (off > e) continue;
          const std::size_t ks = (k + n_kz - q % n_kz) % n_kz, es = e - off;
          const cplx pref = cplx(0.0, 1.0) * grid.frequency_map[w].weight;
          for (std::size_t a = 0; a < n_A; ++a)
            for (std::size_t b = 0; b < n_B; ++b)
              for (std::size_t i = 0; i < n3; ++i)
                for (std::size_t j = 0; j < n3; ++j)
                  for (std::size_t r = 0; r < no; ++r)
                    for (std::size_t c = 0; c < no; ++c) {
                      cplx acc = 0.0;
                      for (std::size_t x = 0; x < no; ++x)
                        for (std::size_t y = 0; y < no; ++y)
                          acc += G(ks, es, nm(a, b), r, x) * dH(a, b, i, x, y) * dH(a, b, j, y, c);
                      out(k, e, a, r, c) += pref * D(q, w, a, b, i, j) * acc;
                    }
        }
  return out;
}

/// Phonon self-energy, one of lesser/greater. `gs` is taken at (k+q, e+off) on atom a,
/// `gn` at (k, e) on atom f(a,b). Neighbor slots carry +i w_E tr(...), slot 0 minus their sum.
inline Tensor<6> pi(const Tensor<5>& gs, const Tensor<5>& gn, const Tensor<5>& dH, const qtx::NeighborMap& nm,
                    const qtx::EnergyGrid& grid, std::size_t n_qz) {
  const std::size_t n_kz = gs.extent(0), n_E = gs.extent(1), n_A = gs.extent(2), no = gs.extent(3);
  const std::size_t n_w = grid.frequency_map.size(), n_B = nm.n_B, n3 = dH.extent(2);
  Tensor<6> out({n_qz, n_w, n_A, n_B + 1, n3, n3});
  for (std::size_t q = 0; q < n_qz; ++q)
    for (std::size_t w = 0; w < n_w; ++w)
      for (std::size_t k = 0; k < n_kz; ++k)
        for (std::size_t e = 0; e < n_E; ++e) {
          const std::size_t off = grid.frequency_map[w].offset;
          if (e + off >= n_E) continue;
          const std::size_t kp = (k + q) % n_kz, ep = e + off;
          for (std::size_t a = 0; a < n_A; ++a)
            for (std::size_t b = 0; b < n_B; ++b)
              for (std::size_t i = 0; i < n3; ++i)
                for (std::size_t j = 0; j < n3; ++j) {
                  // tr(dH_i Gs dH_j Gn)
                  cplx tr = 0.0;
                  for (std::size_t r = 0; r < no; ++r)
                    for (std::size_t x = 0; x < no; ++x)
                      for (std::size_t y = 0; y < no; ++y)
                        for (std::size_t z = 0; z < no; ++z)
                          tr += dH(a, b, i, r, x) * gs(kp, ep, a, x, y) * dH(a, b, j, y, z) * gn(k, e, nm(a, b), z, r);
                  out(q, w, a, b + 1, i, j) += cplx(0.0, 1.0) * grid.energy_weight * tr;
                }
        }
  for (std::size_t q = 0; q < n_qz; ++q)
    for (std::size_t w = 0; w < n_w; ++w)
      for (std::size_t a = 0; a < n_A; ++a)
        for (std::size_t i = 0; i < n3; ++i)
          for (std::size_t j = 0; j < n3; ++j) {
            cplx s = 0.0;
            for (std::size_t b = 1; b <= n_B; ++b) s += out(q, w, a, b, i, j);
            out(q, w, a, 0, i, j) = -s;
          }
  return out;
}

/// D[f, back] - D[f, self] - D[a, self] + D[a, b] with `back` found by linear scan.
inline Tensor<6> combine_D(const Tensor<6>& D, const qtx::NeighborMap& nm) {
  const std::size_t n_qz = D.extent(0), n_w = D.extent(1), n_A = D.extent(2), n3 = D.extent(4);
  Tensor<6> out({n_qz, n_w, n_A, nm.n_B, n3, n3});
  for (std::size_t q = 0; q < n_qz; ++q)
    for (std::size_t w = 0; w < n_w; ++w)
      for (std::size_t a = 0; a < n_A; ++a)
        for (std::size_t b = 0; b < nm.n_B; ++b) {
          const std::size_t f = nm(a, b);
          std::size_t back = nm.n_B;
          for (std::size_t c = 0; c < nm.n_B; ++c)
            if (nm(f, c) == a) {
              back = c;
              break;
            }
          for (std::size_t i = 0; i < n3; ++i)
            for (std::size_t j = 0; j < n3; ++j)
              out(q, w, a, b, i, j) = D(q, w, f, back + 1, i, j) - D(q, w, f, 0, i, j) - D(q, w, a, 0, i, j) +
                                      D(q, w, a, b + 1, i, j);
        }
  return out;
}

/// Gauss-Jordan inverse with partial pivoting.
inline qtx::MatrixC inverse(const qtx::MatrixC& m) {
  const Eigen::Index n = m.rows();
  qtx::MatrixC a = m, inv = qtx::MatrixC::Identity(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index piv = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    a.row(c).swap(a.row(piv));
    inv.row(c).swap(inv.row(piv));
    const cplx d = a(c, c);
    a.row(c) /= d;
    inv.row(c) /= d;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == c) continue;
      const cplx f = a(r, c);
      if (f == cplx{}) continue;
      a.row(r) -= f * a.row(c);
      inv.row(r) -= f * inv.row(c);
    }
  }
  return inv;
}

inline double rel_frobenius(const qtx::MatrixC& x, const qtx::MatrixC& ref) {
  return (x - ref).norm() / std::max(ref.norm(), 1e-300);
}

/// Number of distinct (k - q) mod n over k in [k0, k0+sk), q in [q0, q0+sq).
inline std::size_t distinct_differences(std::int64_t n, std::int64_t k0, std::int64_t sk, std::int64_t q0,
                                        std::int64_t sq) {
  std::set<std::int64_t> s;
  for (std::int64_t k = k0; k < k0 + sk; ++k)
    for (std::int64_t q = q0; q < q0 + sq; ++q) s.insert(((k - q) % n + n) % n);
  return s.size();
}

}  // namespace oracle
