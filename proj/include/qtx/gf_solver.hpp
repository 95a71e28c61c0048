#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "device.hpp"
#include "params.hpp"
#include "tensor.hpp"

namespace qtx {

using ElectronTensor = Tensor<5>;  // [n_kz, n_E, n_A, n_orb, n_orb]
using PhononTensor = Tensor<6>;    // [n_qz, n_w, n_A, n_B + 1, n_3D, n_3D]; slot 0 = self

template <std::size_t R>
struct LesserGreater {
  Tensor<R> lesser;
  Tensor<R> greater;
};

using ElectronGreens = LesserGreater<5>;
using PhononGreens = LesserGreater<6>;
using ElectronSelfEnergy = LesserGreater<5>;  // diagonal atom blocks only
using PhononSelfEnergy = LesserGreater<6>;    // self + n_B neighbor connections

inline ElectronGreens make_electron(const SimParams& p) {
  const ElectronTensor::Shape s{p.n_kz, p.n_E, p.n_A, p.n_orb, p.n_orb};
  return {ElectronTensor(s), ElectronTensor(s)};
}
inline PhononGreens make_phonon(const SimParams& p) {
  const PhononTensor::Shape s{p.n_qz, p.n_w, p.n_A, p.n_B + 1, p.n_3D, p.n_3D};
  return {PhononTensor(s), PhononTensor(s)};
}

class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense solution of one grid point. The advanced function is stored as the transpose of the retarded one.
struct DensePoint {
  MatrixC retarded;
  MatrixC advanced;
  MatrixC lesser;
  MatrixC greater;
};

/// Diagonal RGF blocks (bnum blocks of atoms_per_block * n_orb rows each).
struct RgfPoint {
  std::vector<MatrixC> retarded;
  std::vector<MatrixC> lesser;
  std::vector<MatrixC> greater;
};

namespace detail {

inline MatrixC checked_inverse(const MatrixC& a, const char* what) {
  Eigen::PartialPivLU<MatrixC> lu(a);
  MatrixC inv = lu.inverse();
  const double res = (a * inv - MatrixC::Identity(a.rows(), a.cols())).norm() /
                     std::sqrt(static_cast<double>(a.rows()));
  if (!std::isfinite(res) || res > 1e-6) {
    throw SingularSystemError(std::string(what) + ": singular system (residual " + std::to_string(res) + ")");
  }
  return inv;
}

inline DensePoint dense_solve(const MatrixC& a, const MatrixC& sigma_l, const MatrixC& sigma_g) {
  DensePoint pt;
  pt.retarded = checked_inverse(a, "dense solve");
  pt.advanced = pt.retarded.transpose();
  pt.lesser = pt.retarded * sigma_l * pt.advanced;
  pt.greater = pt.retarded * sigma_g * pt.advanced;
  return pt;
}

}  // namespace detail

/// System matrix E*S(k) - H(k) - Sigma^R + i*eta*I.
inline MatrixC electron_system(const DeviceMatrices& dev, const MatrixC& sigma_R, double E, std::size_t kz, double eta) {
  const auto n = dev.H.at(kz).rows();
  return E * dev.S[kz] - dev.H[kz] - sigma_R + cplx{0.0, eta} * MatrixC::Identity(n, n);
}

/// (omega^2 + i*eta) I - Phi(q) - Pi^R.
inline MatrixC phonon_system(const DeviceMatrices& dev, const MatrixC& pi_R, double omega, std::size_t qz, double eta) {
  const auto n = dev.Phi.at(qz).rows();
  return cplx{omega * omega, eta} * MatrixC::Identity(n, n) - dev.Phi[qz] - pi_R;
}

inline DensePoint solve_point_dense(const DeviceMatrices& dev, const MatrixC& sigma_R, const MatrixC& sigma_l,
                                    const MatrixC& sigma_g, double E, std::size_t kz, double eta) {
  return detail::dense_solve(electron_system(dev, sigma_R, E, kz, eta), sigma_l, sigma_g);
}

inline DensePoint solve_phonon_point(const DeviceMatrices& dev, const MatrixC& pi_R, const MatrixC& pi_l,
                                     const MatrixC& pi_g, double omega, std::size_t qz, double eta) {
  return detail::dense_solve(phonon_system(dev, pi_R, omega, qz, eta), pi_l, pi_g);
}

enum class RgfStrategy {
  Dense,              // every coupling product evaluated
  SkipZeroCouplings,  // products with an all-zero coupling block are skipped
};

/// Block-tridiagonal recursive solve returning the diagonal blocks of G^R and G^<>.
///
/// Forward pass over left-connected blocks:
///   g_i = (A_ii - A_{i,i-1} g_{i-1} A_{i-1,i})^-1
///   x_i = g_i (S_i + A_{i,i-1} x_{i-1} A_{i,i-1}^T) g_i^T
/// Backward pass:
///   G_ii = g_i + g_i A_{i,i+1} G_{i+1} A_{i+1,i} g_i
///   M_i  = g_i A_{i,i+1} G_{i+1} A_{i+1,i}
///   X_ii = x_i + M_i x_i + x_i M_i^T + g_i A_{i,i+1} X_{i+1} A_{i,i+1}^T g_i^T
/// which is X = G S G^T for block-diagonal S. Off-block entries of S are ignored.
inline RgfPoint rgf_solve(const MatrixC& a, const MatrixC& sigma_l, const MatrixC& sigma_g, std::size_t bnum,
                          RgfStrategy strategy = RgfStrategy::Dense) {
  if (bnum == 0 || a.rows() % static_cast<Eigen::Index>(bnum) != 0) {
    throw std::invalid_argument("rgf: matrix size not divisible by bnum");
  }
  const Eigen::Index bs = a.rows() / static_cast<Eigen::Index>(bnum);
  const auto nb = static_cast<Eigen::Index>(bnum);
  auto blk = [&](const MatrixC& m, Eigen::Index i, Eigen::Index j) -> MatrixC { return m.block(i * bs, j * bs, bs, bs); };

  std::vector<MatrixC> up(bnum), down(bnum);  // A_{i,i+1}, A_{i+1,i}
  std::vector<bool> zero(bnum, false);
  for (Eigen::Index i = 0; i + 1 < nb; ++i) {
    up[i] = blk(a, i, i + 1);
    down[i] = blk(a, i + 1, i);
    zero[i] = strategy == RgfStrategy::SkipZeroCouplings && up[i].isZero(0.0) && down[i].isZero(0.0);
  }

  std::vector<MatrixC> g(bnum), xl(bnum), xg(bnum);
  for (Eigen::Index i = 0; i < nb; ++i) {
    MatrixC aii = blk(a, i, i);
    MatrixC sl = blk(sigma_l, i, i);
    MatrixC sg = blk(sigma_g, i, i);
    if (i > 0 && !zero[i - 1]) {
      aii -= down[i - 1] * g[i - 1] * up[i - 1];
      sl += down[i - 1] * xl[i - 1] * down[i - 1].transpose();
      sg += down[i - 1] * xg[i - 1] * down[i - 1].transpose();
    }
    g[i] = detail::checked_inverse(aii, "rgf forward block");
    xl[i] = g[i] * sl * g[i].transpose();
    xg[i] = g[i] * sg * g[i].transpose();
  }

  RgfPoint out;
  out.retarded.resize(bnum);
  out.lesser.resize(bnum);
  out.greater.resize(bnum);
  out.retarded[bnum - 1] = g[bnum - 1];
  out.lesser[bnum - 1] = xl[bnum - 1];
  out.greater[bnum - 1] = xg[bnum - 1];
  for (Eigen::Index i = nb - 2; i >= 0; --i) {
    if (zero[i]) {
      out.retarded[i] = g[i];
      out.lesser[i] = xl[i];
      out.greater[i] = xg[i];
      continue;
    }
    const MatrixC gu = g[i] * up[i];
    const MatrixC m = gu * out.retarded[i + 1] * down[i];
    out.retarded[i] = g[i] + m * g[i];
    const MatrixC gut = gu.transpose();
    out.lesser[i] = xl[i] + m * xl[i] + xl[i] * m.transpose() + gu * out.lesser[i + 1] * gut;
    out.greater[i] = xg[i] + m * xg[i] + xg[i] * m.transpose() + gu * out.greater[i + 1] * gut;
  }
  return out;
}

inline RgfPoint solve_point_rgf(const DeviceMatrices& dev, const MatrixC& sigma_R, const MatrixC& sigma_l,
                                const MatrixC& sigma_g, double E, std::size_t kz, std::size_t bnum, double eta,
                                RgfStrategy strategy = RgfStrategy::Dense) {
  return rgf_solve(electron_system(dev, sigma_R, E, kz, eta), sigma_l, sigma_g, bnum, strategy);
}

/// Elementwise (greater - lesser) / 2.
template <std::size_t R>
Tensor<R> retarded_from_lesser_greater(const Tensor<R>& lesser, const Tensor<R>& greater) {
  if (lesser.shape() != greater.shape()) throw std::invalid_argument("retarded_from_lesser_greater: shape mismatch");
  Tensor<R> out(lesser.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 0.5 * (greater.data()[i] - lesser.data()[i]);
  return out;
}

template <std::size_t R>
Tensor<R> retarded_from_lesser_greater(const LesserGreater<R>& se) {
  return retarded_from_lesser_greater(se.lesser, se.greater);
}

// ---- layout helpers between per-point matrices and the tensors ----

/// Block-diagonal matrix assembled from the electron tensor at (k, E).
inline MatrixC electron_point_matrix(const ElectronTensor& t, std::size_t k, std::size_t e) {
  const std::size_t n_A = t.extent(2), no = t.extent(3);
  MatrixC m = MatrixC::Zero(n_A * no, n_A * no);
  for (std::size_t a = 0; a < n_A; ++a) m.block(a * no, a * no, no, no) = block_map(t.at(k, e, a), no, no);
  return m;
}

/// Phonon matrix at (q, w): slot 0 on the diagonal block, slot b+1 accumulated into block (a, f(a,b)).
inline MatrixC phonon_point_matrix(const PhononTensor& t, const NeighborMap& nm, std::size_t q, std::size_t w) {
  const std::size_t n_A = t.extent(2), d = t.extent(4);
  MatrixC m = MatrixC::Zero(n_A * d, n_A * d);
  for (std::size_t a = 0; a < n_A; ++a) {
    m.block(a * d, a * d, d, d) += block_map(t.at(q, w, a, 0), d, d);
    for (std::size_t b = 0; b < nm.n_B; ++b) {
      m.block(a * d, nm(a, b) * d, d, d) += block_map(t.at(q, w, a, b + 1), d, d);
    }
  }
  return m;
}

inline void store_phonon_point(PhononTensor& t, const NeighborMap& nm, std::size_t q, std::size_t w, const MatrixC& m) {
  const std::size_t n_A = t.extent(2), d = t.extent(4);
  for (std::size_t a = 0; a < n_A; ++a) {
    block_map(t.at(q, w, a, 0), d, d) = m.block(a * d, a * d, d, d);
    for (std::size_t b = 0; b < nm.n_B; ++b) block_map(t.at(q, w, a, b + 1), d, d) = m.block(a * d, nm(a, b) * d, d, d);
  }
}

// ---- reservoir (absorbing boundary) terms ----

inline double fermi(double E, double mu, double kT) { return 1.0 / (1.0 + std::exp((E - mu) / kT)); }
inline double bose(double omega, double kT) { return 1.0 / std::expm1(omega / kT); }

/// Lesser/greater partners of the -i*eta retarded boundary term, so that (greater - lesser)/2 = -i*eta.
struct BoundaryTerms {
  cplx lesser;
  cplx greater;
};
inline BoundaryTerms electron_boundary(double E, const SimParams& p) {
  const double f = fermi(E, p.mu, p.kT);
  return {cplx{0.0, 2.0 * p.eta * f}, cplx{0.0, -2.0 * p.eta * (1.0 - f)}};
}
inline BoundaryTerms phonon_boundary(double omega, const SimParams& p) {
  const double n = bose(omega, p.kT);
  return {cplx{0.0, -2.0 * p.eta * n}, cplx{0.0, -2.0 * p.eta * (1.0 + n)}};
}

struct GfOptions {
  bool inject_boundary = true;
  bool use_rgf = true;
  RgfStrategy strategy = RgfStrategy::Dense;
  unsigned threads = 1;
};

struct GfPhaseResult {
  ElectronGreens electron;
  PhononGreens phonon;
};

class PointSolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solves every (k_z, E) electron point and every (q_z, w) phonon point independently.
inline GfPhaseResult gf_phase(const Device& device, const SimParams& p, const EnergyGrid& grid,
                              const ElectronSelfEnergy& sigma, const PhononSelfEnergy& pi, const GfOptions& opt = {}) {
  const auto& dev = device.matrices;
  GfPhaseResult out{make_electron(p), make_phonon(p)};
  if (sigma.lesser.shape() != out.electron.lesser.shape() || sigma.greater.shape() != out.electron.lesser.shape() ||
      pi.lesser.shape() != out.phonon.lesser.shape() || pi.greater.shape() != out.phonon.lesser.shape()) {
    throw std::invalid_argument("gf_phase: self-energy tensor shape mismatch");
  }
  const ElectronTensor sigma_R = retarded_from_lesser_greater(sigma);
  const PhononTensor pi_R = retarded_from_lesser_greater(pi);
  const std::size_t no = p.n_orb;
  const std::size_t per = p.n_A / p.bnum;

  parallel_for(p.n_kz * p.n_E, opt.threads, [&](std::size_t idx) {
    const std::size_t k = idx / p.n_E, e = idx % p.n_E;
    const double E = grid.values[e];
    MatrixC sl = electron_point_matrix(sigma.lesser, k, e);
    MatrixC sg = electron_point_matrix(sigma.greater, k, e);
    if (opt.inject_boundary) {
      const auto bt = electron_boundary(E, p);
      sl.diagonal().array() += bt.lesser;
      sg.diagonal().array() += bt.greater;
    }
    const MatrixC sr = electron_point_matrix(sigma_R, k, e);
    try {
      if (opt.use_rgf) {
        const auto pt = solve_point_rgf(dev, sr, sl, sg, E, k, p.bnum, p.eta, opt.strategy);
        for (std::size_t a = 0; a < p.n_A; ++a) {
          const std::size_t bi = a / per, off = (a % per) * no;
          block_map(out.electron.lesser.at(k, e, a), no, no) = pt.lesser[bi].block(off, off, no, no);
          block_map(out.electron.greater.at(k, e, a), no, no) = pt.greater[bi].block(off, off, no, no);
        }
      } else {
        const auto pt = solve_point_dense(dev, sr, sl, sg, E, k, p.eta);
        for (std::size_t a = 0; a < p.n_A; ++a) {
          block_map(out.electron.lesser.at(k, e, a), no, no) = pt.lesser.block(a * no, a * no, no, no);
          block_map(out.electron.greater.at(k, e, a), no, no) = pt.greater.block(a * no, a * no, no, no);
        }
      }
    } catch (const std::exception& ex) {
      throw PointSolveError("electron point (k_z=" + std::to_string(k) + ", E=" + std::to_string(e) + "): " + ex.what());
    }
  });

  parallel_for(p.n_qz * p.n_w, opt.threads, [&](std::size_t idx) {
    const std::size_t q = idx / p.n_w, w = idx % p.n_w;
    const double omega = grid.omega(w);
    MatrixC pl = phonon_point_matrix(pi.lesser, device.neighbors, q, w);
    MatrixC pg = phonon_point_matrix(pi.greater, device.neighbors, q, w);
    if (opt.inject_boundary) {
      const auto bt = phonon_boundary(omega, p);
      pl.diagonal().array() += bt.lesser;
      pg.diagonal().array() += bt.greater;
    }
    const MatrixC pr = phonon_point_matrix(pi_R, device.neighbors, q, w);
    try {
      const auto pt = solve_phonon_point(dev, pr, pl, pg, omega, q, p.eta);
      store_phonon_point(out.phonon.lesser, device.neighbors, q, w, pt.lesser);
      store_phonon_point(out.phonon.greater, device.neighbors, q, w, pt.greater);
    } catch (const std::exception& ex) {
      throw PointSolveError("phonon point (q_z=" + std::to_string(q) + ", w=" + std::to_string(w) + "): " + ex.what());
    }
  });
  return out;
}

}  // namespace qtx
