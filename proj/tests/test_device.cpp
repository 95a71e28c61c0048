#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include <Eigen/Eigenvalues>

#include "qtx/qtx.hpp"

using namespace qtx;

namespace {

SimParams params(std::size_t n_A, std::size_t n_B, std::size_t bnum) {
  SimParams p = *preset("tiny");
  p.n_A = n_A;
  p.n_B = n_B;
  p.bnum = bnum;
  return p;
}

bool block_nonzero(const MatrixC& m, std::size_t a, std::size_t c, std::size_t blk) {
  return !m.block(a * blk, c * blk, blk, blk).isZero(0.0);
}

}  // namespace

TEST(Device, SynthesizedInvariantsHold) {
  const SimParams p = params(8, 2, 2);
  const Device d = synthesize(p, 42);
  const auto& m = d.matrices;
  ASSERT_EQ(m.H.size(), p.n_kz);
  ASSERT_EQ(m.S.size(), p.n_kz);
  ASSERT_EQ(m.Phi.size(), p.n_qz);
  EXPECT_LE(hermitian_check(m), 1e-14);
  for (const auto& s : m.S) {
    EXPECT_LE((s - s.adjoint()).cwiseAbs().maxCoeff(), 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(s);
    EXPECT_GE(es.eigenvalues().minCoeff(), 0.5);
  }
  for (const auto& h : m.H) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h);
    EXPECT_GE(es.eigenvalues().minCoeff(), p.e_min);
    EXPECT_LE(es.eigenvalues().maxCoeff(), p.e_max);
  }
  const auto& nm = d.neighbors;
  for (std::size_t a = 0; a < p.n_A; ++a)
    for (std::size_t b = 0; b < p.n_B; ++b) {
      EXPECT_LT(nm(a, b), p.n_A);
      EXPECT_NE(nm(a, b), a);
    }
  const std::array<std::size_t, 5> dh{p.n_A, p.n_B, 3, p.n_orb, p.n_orb};
  EXPECT_EQ(m.dH.shape(), dh);
}

TEST(Device, NeighborCountMustBeBelowAtomCount) {
  try {
    synthesize(params(8, 8, 2), 0);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "n_B must be < n_A");
  }
}

TEST(Device, NeighborLocalityScan) {
  const Device d = synthesize(params(16, 4, 4), 7);
  std::size_t worst = 0;
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = 0; b < 4; ++b) {
      const std::size_t f = d.neighbors(a, b);
      worst = std::max(worst, f > a ? f - a : a - f);
    }
  EXPECT_LE(worst, 4u);
  EXPECT_EQ(worst, d.neighbors.max_distance());
}

TEST(Device, ChainMapValidForAllSmallSizes) {
  for (std::size_t n_A = 2; n_A <= 12; ++n_A)
    for (std::size_t n_B = 1; n_B < n_A; ++n_B) {
      const auto nm = NeighborMap::chain(n_A, n_B);
      for (std::size_t a = 0; a < n_A; ++a)
        for (std::size_t b = 0; b < n_B; ++b) {
          ASSERT_LT(nm(a, b), n_A) << n_A << " " << n_B;
          ASSERT_NE(nm(a, b), a) << n_A << " " << n_B;
        }
      EXPECT_LE(nm.max_distance(), n_B / 2 + 1);
    }
}

TEST(Device, HermitianCheckDetectsPerturbation) {
  Device d = synthesize(params(8, 2, 2), 1);
  d.matrices.H[0](0, 3) += 1.0;
  EXPECT_GE(hermitian_check(d.matrices), 0.5);
}

TEST(Device, HermitianCheckOfIdentityIsZero) {
  DeviceMatrices m;
  m.H = {MatrixC::Identity(4, 4), MatrixC::Identity(4, 4)};
  m.Phi = {MatrixC::Identity(6, 6)};
  EXPECT_EQ(hermitian_check(m), 0.0);
}

TEST(Device, SynthesisIsBitwiseDeterministic) {
  const SimParams p = *preset("small");
  const Device a = synthesize(p, 11), b = synthesize(p, 11);
  EXPECT_TRUE(a.matrices == b.matrices);
  EXPECT_TRUE(a.neighbors == b.neighbors);
  const Device c = synthesize(p, 12);
  EXPECT_FALSE(a.matrices == c.matrices);
}

// Nonzero blocks of H, S and Phi sit exactly where two atoms are neighbors (either direction)
// or identical, and only within adjacent partition blocks.
TEST(Device, BlockSparsityFollowsNeighborMap) {
  for (auto [n_A, n_B, bnum] : {std::tuple{8u, 2u, 2u}, std::tuple{16u, 4u, 4u}, std::tuple{12u, 3u, 3u}}) {
    const SimParams p = params(n_A, n_B, bnum);
    const Device d = synthesize(p, 5);
    const auto& nm = d.neighbors;
    const std::size_t per = n_A / bnum;
    for (std::size_t a = 0; a < n_A; ++a)
      for (std::size_t c = 0; c < n_A; ++c) {
        bool linked = a == c;
        for (std::size_t b = 0; b < n_B; ++b) linked = linked || nm(a, b) == c || nm(c, b) == a;
        const std::size_t ba = a / per, bc = c / per;
        const bool expected = linked && (ba > bc ? ba - bc : bc - ba) <= 1;
        for (const auto& h : d.matrices.H) EXPECT_EQ(block_nonzero(h, a, c, p.n_orb), expected) << a << "," << c;
        for (const auto& s : d.matrices.S)
          if (a != c) EXPECT_EQ(block_nonzero(s, a, c, p.n_orb), expected) << a << "," << c;
        for (const auto& f : d.matrices.Phi) EXPECT_EQ(block_nonzero(f, a, c, 3), expected) << a << "," << c;
      }
  }
}

TEST(Device, BinaryRoundTrip) {
  const Device d = synthesize(*preset("tiny"), 9);
  const auto path = std::filesystem::temp_directory_path() / "qtx_device_roundtrip.bin";
  save_device(d, path.string());
  const Device back = load_device(path.string());
  std::filesystem::remove(path);
  EXPECT_TRUE(back.matrices == d.matrices);
  EXPECT_TRUE(back.neighbors == d.neighbors);
}

TEST(Device, LoadRejectsForeignFile) {
  const auto path = std::filesystem::temp_directory_path() / "qtx_not_a_device.bin";
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    std::fputs("hello world, not a device", f);
    std::fclose(f);
  }
  EXPECT_THROW(load_device(path.string()), std::runtime_error);
  std::filesystem::remove(path);
}
