#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"
#include "tensor.hpp"

namespace qtx {

/// Neighbor indirection f(a,b): the b-th neighbor of atom a on a 1-D chain.
///
/// Slot b points to offset d_b = -1, +1, -2, +2, ... relative to a. An offset that
/// leaves the chain is reflected (a - d_b), so every entry stays within
/// ceil(n_B/2) of its atom. Duplicate entries are allowed at the chain ends.
struct NeighborMap {
  std::size_t n_A = 0;
  std::size_t n_B = 0;
  std::vector<std::size_t> idx;

  std::size_t operator()(std::size_t a, std::size_t b) const { return idx[a * n_B + b]; }

  static std::int64_t slot_offset(std::size_t b) {
    const auto mag = static_cast<std::int64_t>(b / 2 + 1);
    return (b % 2 == 0) ? -mag : mag;
  }

  static NeighborMap chain(std::size_t n_A, std::size_t n_B) {
    if (n_B >= n_A) throw std::invalid_argument("n_B must be < n_A");
    NeighborMap m{n_A, n_B, std::vector<std::size_t>(n_A * n_B)};
    const auto na = static_cast<std::int64_t>(n_A);
    for (std::size_t a = 0; a < n_A; ++a) {
      for (std::size_t b = 0; b < n_B; ++b) {
        const std::int64_t d = slot_offset(b);
        std::int64_t c = static_cast<std::int64_t>(a) + d;
        if (c < 0 || c >= na) c = static_cast<std::int64_t>(a) - d;
        m.idx[a * n_B + b] = static_cast<std::size_t>(c);
      }
    }
    return m;
  }

  /// Largest |f(a,b) - a| over the map.
  std::size_t max_distance() const {
    std::size_t m = 0;
    for (std::size_t a = 0; a < n_A; ++a)
      for (std::size_t b = 0; b < n_B; ++b) {
        const auto f = (*this)(a, b);
        m = std::max(m, f > a ? f - a : a - f);
      }
    return m;
  }

  bool operator==(const NeighborMap&) const = default;
};

struct DeviceMatrices {
  std::size_t n_A = 0;
  std::size_t n_orb = 0;
  std::size_t n_3D = 3;
  std::size_t bnum = 1;
  std::vector<MatrixC> H;    // per k_z, (n_A*n_orb)^2
  std::vector<MatrixC> S;    // per k_z, (n_A*n_orb)^2
  std::vector<MatrixC> Phi;  // per q_z, (n_A*n_3D)^2
  Tensor<5> dH;              // [n_A, n_B, n_3D, n_orb, n_orb]

  std::size_t atoms_per_block() const { return n_A / bnum; }

  bool operator==(const DeviceMatrices& o) const {
    auto eq = [](const std::vector<MatrixC>& x, const std::vector<MatrixC>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i].rows() != y[i].rows() || x[i].cols() != y[i].cols() || x[i] != y[i]) return false;
      return true;
    };
    return n_A == o.n_A && n_orb == o.n_orb && n_3D == o.n_3D && bnum == o.bnum && eq(H, o.H) &&
           eq(S, o.S) && eq(Phi, o.Phi) && dH == o.dH;
  }
};

struct Device {
  DeviceMatrices matrices;
  NeighborMap neighbors;
};

/// Atoms a and c share a nonzero block: self, neighbor in either direction, and
/// within adjacent blocks of the bnum partition.
inline bool coupled(const NeighborMap& nm, std::size_t bnum, std::size_t a, std::size_t c) {
  const std::size_t per = nm.n_A / bnum;
  const std::size_t ba = a / per, bc = c / per;
  if ((ba > bc ? ba - bc : bc - ba) > 1) return false;
  if (a == c) return true;
  for (std::size_t b = 0; b < nm.n_B; ++b)
    if (nm(a, b) == c || nm(c, b) == a) return true;
  return false;
}

inline double momentum(std::size_t k, std::size_t n) {
  return -std::numbers::pi + 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(n);
}

namespace detail {

struct BlockRng {
  std::mt19937_64 gen;
  std::uniform_real_distribution<double> uni{-1.0, 1.0};
  cplx next() {
    const double re = uni(gen);
    const double im = uni(gen);
    return {re, im};
  }
};

/// Hermitian matrix M0 + M1 e^{iq} + M1^dagger e^{-iq} for every momentum, sharing the coupling pattern.
inline std::vector<MatrixC> hermitian_family(const NeighborMap& nm, std::size_t bnum, std::size_t blk,
                                             std::size_t n_mom, BlockRng& rng) {
  const std::size_t n = nm.n_A * blk;
  MatrixC m0 = MatrixC::Zero(n, n);
  MatrixC m1 = MatrixC::Zero(n, n);
  for (std::size_t a = 0; a < nm.n_A; ++a) {
    for (std::size_t c = a; c < nm.n_A; ++c) {
      if (!coupled(nm, bnum, a, c)) continue;
      const double decay = 1.0 / (1.0 + static_cast<double>(c - a));
      for (std::size_t r = 0; r < blk; ++r)
        for (std::size_t s = 0; s < blk; ++s) {
          m0(a * blk + r, c * blk + s) = decay * rng.next();
          m1(a * blk + r, c * blk + s) = 0.5 * decay * rng.next();
        }
    }
  }
  // Mirror the upper block triangle; diagonal blocks are Hermitianized.
  MatrixC h0 = m0 + m0.adjoint().eval();
  for (std::size_t a = 0; a < nm.n_A; ++a) h0.block(a * blk, a * blk, blk, blk) *= 0.5;
  MatrixC h1 = m1 + m1.adjoint().eval();
  for (std::size_t a = 0; a < nm.n_A; ++a) h1.block(a * blk, a * blk, blk, blk) *= 0.5;

  std::vector<MatrixC> out;
  for (std::size_t q = 0; q < n_mom; ++q) {
    const double kq = momentum(q, n_mom);
    // Keep the pattern: the momentum-dependent part uses the Hermitian pair h1 with a real phase factor.
    out.push_back(h0 + std::cos(kq) * h1);
  }
  return out;
}

inline double max_row_sum(const std::vector<MatrixC>& ms) {
  double r = 0.0;
  for (const auto& m : ms) r = std::max(r, m.cwiseAbs().rowwise().sum().maxCoeff());
  return r;
}

}  // namespace detail

/// Deterministic synthetic device: block-tridiagonal Hermitian H, near-identity S,
/// dynamical matrix Phi with spectrum in [0, 1], and derivative blocks dH.
inline Device synthesize(const SimParams& p, std::uint64_t seed) {
  require_valid(p);
  if (p.n_B >= p.n_A) throw std::invalid_argument("n_B must be < n_A");
  Device dev;
  dev.neighbors = NeighborMap::chain(p.n_A, p.n_B);
  auto& m = dev.matrices;
  m.n_A = p.n_A;
  m.n_orb = p.n_orb;
  m.n_3D = p.n_3D;
  m.bnum = p.bnum;

  detail::BlockRng rng{std::mt19937_64{seed}};

  // Spectrum of H within [-1, 1].
  m.H = detail::hermitian_family(dev.neighbors, p.bnum, p.n_orb, p.n_kz, rng);
  const double rh = detail::max_row_sum(m.H);
  for (auto& h : m.H) h /= rh;

  // S = I + P with row sums of P at most 0.4, so the smallest eigenvalue is >= 0.6.
  m.S = detail::hermitian_family(dev.neighbors, p.bnum, p.n_orb, p.n_kz, rng);
  const double rs = detail::max_row_sum(m.S);
  for (auto& s : m.S) {
    s *= 0.4 / rs;
    s += MatrixC::Identity(s.rows(), s.cols());
  }

  m.Phi = detail::hermitian_family(dev.neighbors, p.bnum, p.n_3D, p.n_qz, rng);
  const double rp = detail::max_row_sum(m.Phi);
  for (auto& f : m.Phi) {
    f *= 0.5 / rp;
    f += 0.5 * MatrixC::Identity(f.rows(), f.cols());
  }

  m.dH = Tensor<5>({p.n_A, p.n_B, p.n_3D, p.n_orb, p.n_orb});
  for (auto& v : m.dH.data()) v = p.coupling * rng.next();
  return dev;
}

/// Largest |M - M^dagger| entry over every H(k_z) and Phi(q_z).
inline double hermitian_check(const DeviceMatrices& m) {
  double worst = 0.0;
  auto scan = [&](const std::vector<MatrixC>& ms) {
    for (const auto& x : ms) worst = std::max(worst, (x - x.adjoint()).cwiseAbs().maxCoeff());
  };
  scan(m.H);
  scan(m.Phi);
  return worst;
}

// Binary device files: "QTXDEV01" magic, u32 version, u64 dims, then row-major
// little-endian complex128 arrays (H per k_z, S per k_z, Phi per q_z, dH), then the neighbor map as u64.
inline constexpr std::uint32_t kDeviceFormatVersion = 1;

namespace detail {
template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "device files are little-endian");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("device file truncated");
  return v;
}
inline void put_matrices(std::ostream& os, const std::vector<MatrixC>& ms) {
  for (const auto& x : ms) os.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(cplx)));
}
inline std::vector<MatrixC> take_matrices(std::istream& is, std::size_t count, std::size_t n) {
  std::vector<MatrixC> ms(count, MatrixC(n, n));
  for (auto& x : ms) {
    is.read(reinterpret_cast<char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(cplx)));
    if (!is) throw std::runtime_error("device file truncated");
  }
  return ms;
}
}  // namespace detail

inline void save_device(const Device& dev, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  const auto& m = dev.matrices;
  os.write("QTXDEV01", 8);
  detail::put<std::uint32_t>(os, kDeviceFormatVersion);
  for (std::uint64_t v : {m.n_A, m.n_orb, m.n_3D, m.bnum, dev.neighbors.n_B, m.H.size(), m.Phi.size()})
    detail::put<std::uint64_t>(os, v);
  detail::put_matrices(os, m.H);
  detail::put_matrices(os, m.S);
  detail::put_matrices(os, m.Phi);
  os.write(reinterpret_cast<const char*>(m.dH.data().data()), static_cast<std::streamsize>(m.dH.size() * sizeof(cplx)));
  for (auto f : dev.neighbors.idx) detail::put<std::uint64_t>(os, f);
}

inline Device load_device(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "QTXDEV01") throw std::runtime_error("not a device file: " + path);
  if (detail::take<std::uint32_t>(is) != kDeviceFormatVersion) throw std::runtime_error("unsupported device file version");
  Device dev;
  auto& m = dev.matrices;
  m.n_A = detail::take<std::uint64_t>(is);
  m.n_orb = detail::take<std::uint64_t>(is);
  m.n_3D = detail::take<std::uint64_t>(is);
  m.bnum = detail::take<std::uint64_t>(is);
  const auto n_B = detail::take<std::uint64_t>(is);
  const auto n_kz = detail::take<std::uint64_t>(is);
  const auto n_qz = detail::take<std::uint64_t>(is);
  m.H = detail::take_matrices(is, n_kz, m.n_A * m.n_orb);
  m.S = detail::take_matrices(is, n_kz, m.n_A * m.n_orb);
  m.Phi = detail::take_matrices(is, n_qz, m.n_A * m.n_3D);
  m.dH = Tensor<5>({m.n_A, n_B, m.n_3D, m.n_orb, m.n_orb});
  is.read(reinterpret_cast<char*>(m.dH.data().data()), static_cast<std::streamsize>(m.dH.size() * sizeof(cplx)));
  if (!is) throw std::runtime_error("device file truncated");
  dev.neighbors = NeighborMap{m.n_A, n_B, std::vector<std::size_t>(m.n_A * n_B)};
  for (auto& f : dev.neighbors.idx) f = detail::take<std::uint64_t>(is);
  return dev;
}

}  // namespace qtx
