#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "comm_model.hpp"
#include "device.hpp"
#include "gf_solver.hpp"
#include "params.hpp"
#include "sse_kernel.hpp"
#include "tensor.hpp"

namespace qtx {

// Bytes of one (lesser, greater) pair of complex elements.
inline constexpr std::uint64_t kPairBytes = 2 * sizeof(cplx);

struct Message {
  std::size_t round = 0;
  std::size_t src = 0;
  std::size_t dst = 0;
  std::string tag;
  std::uint64_t bytes = 0;

  bool operator==(const Message&) const = default;
};

/// Every simulated transfer, including rank-local loopback copies.
class MessageLedger {
 public:
  void record(std::size_t round, std::size_t src, std::size_t dst, const std::string& tag, std::uint64_t bytes) {
    entries_.push_back({round, src, dst, tag, bytes});
  }

  const std::vector<Message>& entries() const { return entries_; }

  std::uint64_t total(const std::string& tag = "") const {
    std::uint64_t t = 0;
    for (const auto& m : entries_)
      if (tag.empty() || m.tag == tag) t += m.bytes;
    return t;
  }
  /// Bytes that cross between distinct ranks.
  std::uint64_t remote_total() const {
    std::uint64_t t = 0;
    for (const auto& m : entries_)
      if (m.src != m.dst) t += m.bytes;
    return t;
  }
  std::uint64_t sent_by(std::size_t rank, const std::string& tag = "") const {
    std::uint64_t t = 0;
    for (const auto& m : entries_)
      if (m.src == rank && (tag.empty() || m.tag == tag)) t += m.bytes;
    return t;
  }
  std::uint64_t received_by(std::size_t rank, const std::string& tag = "") const {
    std::uint64_t t = 0;
    for (const auto& m : entries_)
      if (m.dst == rank && (tag.empty() || m.tag == tag)) t += m.bytes;
    return t;
  }

  /// Per round and tag, bytes summed over senders equal bytes summed over receivers.
  bool conserved() const {
    std::map<std::pair<std::size_t, std::string>, std::map<std::size_t, std::uint64_t>> sent, recv;
    for (const auto& m : entries_) {
      sent[{m.round, m.tag}][m.src] += m.bytes;
      recv[{m.round, m.tag}][m.dst] += m.bytes;
    }
    for (const auto& [key, per_src] : sent) {
      std::uint64_t s = 0, r = 0;
      for (const auto& [rank, b] : per_src) s += b;
      for (const auto& [rank, b] : recv[key]) r += b;
      if (s != r) return false;
    }
    return true;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "round,src,dst,tag,bytes\n";
    for (const auto& m : entries_) os << m.round << ',' << m.src << ',' << m.dst << ',' << m.tag << ',' << m.bytes << '\n';
    return os.str();
  }

  nlohmann::json summary(std::size_t ranks) const {
    nlohmann::json tags = nlohmann::json::object(), per_rank = nlohmann::json::array();
    for (const auto& m : entries_) tags[m.tag] = tags.value(m.tag, std::uint64_t{0}) + m.bytes;
    for (std::size_t r = 0; r < ranks; ++r)
      per_rank.push_back({{"rank", r}, {"sent", sent_by(r)}, {"received", received_by(r)}});
    return {{"messages", entries_.size()}, {"total_bytes", total()}, {"remote_bytes", remote_total()},
            {"bytes_by_tag", tags}, {"per_rank", per_rank}, {"conserved", conserved()}};
  }

  bool operator==(const MessageLedger&) const = default;

 private:
  std::vector<Message> entries_;
};

namespace detail {

/// Collects (round, tag, src, dst) -> bytes and emits them in ascending order.
class ExchangeTable {
 public:
  void add(std::size_t round, const std::string& tag, std::size_t src, std::size_t dst, std::uint64_t bytes) {
    table_[{round, tag_index(tag), src, dst}] += bytes;
  }
  void flush(MessageLedger& ledger) {
    for (const auto& [key, bytes] : table_)
      ledger.record(std::get<0>(key), std::get<2>(key), std::get<3>(key), tags_[std::get<1>(key)], bytes);
    table_.clear();
  }

 private:
  std::size_t tag_index(const std::string& tag) {
    for (std::size_t i = 0; i < tags_.size(); ++i)
      if (tags_[i] == tag) return i;
    tags_.push_back(tag);
    return tags_.size() - 1;
  }
  std::vector<std::string> tags_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, std::uint64_t> table_;
};

/// Contiguous block owner of flat index i among P ranks, ceil-division chunks.
inline std::size_t block_owner(std::size_t i, std::size_t n, std::size_t P) { return i / ceil_div(n, P); }

}  // namespace detail

/// Inputs shared by both schemes: G and D from the GF phase plus the device coupling.
struct SseProblem {
  const ElectronGreens& G;
  const PhononGreens& D;
  const Tensor<5>& dH;
  const NeighborMap& nm;
  const EnergyGrid& grid;
};

struct DistResult {
  ElectronSelfEnergy sigma;
  PhononSelfEnergy pi;
  MessageLedger ledger;
  std::size_t ranks = 1;
  std::size_t ownership_violations = 0;  // output elements written by zero or several ranks
};

namespace detail {

inline void check_problem(const SseProblem& in) {
  if (in.G.lesser.shape() != in.G.greater.shape() || in.D.lesser.shape() != in.D.greater.shape()) {
    throw std::invalid_argument("dist_sim: lesser/greater shape mismatch");
  }
  if (in.D.lesser.extent(2) != in.G.lesser.extent(2) || in.D.lesser.extent(3) != in.nm.n_B + 1) {
    throw std::invalid_argument("dist_sim: phonon tensor does not match the device");
  }
}

inline PhononSelfEnergy empty_pi(const SseProblem& in) {
  const auto s = in.D.lesser.shape();
  return {PhononTensor(s), PhononTensor(s)};
}

}  // namespace detail

/// Momentum/energy decomposition. Round r = q*n_w + w:
///  D_bcast   phonon owner of (q, w) sends the combined D slice to every rank;
///  G_minus   each rank receives G at (k - q, E - off) for its (k, E) points;
///  G_plus    each rank receives G at (k + q, E + off);
///  Pi_reduce each rank sends its partial neighbor slots of Pi(q, w) to the phonon owner.
/// Energy indices of the exchanged G wrap around the grid; the kernel skips wrapped terms.
inline DistResult run_omen_scheme(const SseProblem& in, std::size_t P) {
  detail::check_problem(in);
  if (P < 1) throw std::invalid_argument("run_omen_scheme: P must be >= 1");
  const auto& G = in.G;
  const std::size_t n_kz = G.lesser.extent(0), n_E = G.lesser.extent(1), n_A = G.lesser.extent(2),
                    no = G.lesser.extent(3);
  const std::size_t n_qz = in.D.lesser.extent(0), n_w = in.D.lesser.extent(1), n3 = in.dH.extent(2);
  const std::size_t n_pts = n_kz * n_E, n_ph = n_qz * n_w;
  if (P > n_pts) throw InfeasiblePartition("run_omen_scheme: more ranks than (k_z, E) points");

  DistResult out{{ElectronTensor(G.lesser.shape()), ElectronTensor(G.lesser.shape())}, detail::empty_pi(in), {}, P, 0};
  const CombinedD dc = preprocess_D(in.D, in.nm);
  const std::uint64_t g_block = kPairBytes * n_A * no * no;
  const std::uint64_t ph_slice = kPairBytes * n_A * in.nm.n_B * n3 * n3;
  std::vector<int> writes(n_pts, 0);

  for (std::size_t q = 0; q < n_qz; ++q)
    for (std::size_t w = 0; w < n_w; ++w) {
      const std::size_t round = q * n_w + w;
      const std::size_t root = detail::block_owner(round, n_ph, P);
      const std::size_t off = in.grid.frequency_map[w].offset;
      const cplx weight = kI * in.grid.frequency_map[w].weight;
      detail::ExchangeTable ex;
      for (std::size_t r = 0; r < P; ++r) ex.add(round, "D_bcast", root, r, ph_slice);

      std::vector<PhononSelfEnergy> partial;
      for (std::size_t r = 0; r < P; ++r) {
        partial.push_back(detail::empty_pi(in));
        const std::size_t chunk = ceil_div(n_pts, P);
        for (std::size_t idx = r * chunk; idx < std::min(n_pts, (r + 1) * chunk); ++idx) {
          const std::size_t k = idx / n_E, e = idx % n_E;
          const std::size_t km = wrap_index(static_cast<std::int64_t>(k) - static_cast<std::int64_t>(q), n_kz);
          const std::size_t em = wrap_index(static_cast<std::int64_t>(e) - static_cast<std::int64_t>(off), n_E);
          const std::size_t kp = (k + q) % n_kz, ep = (e + off) % n_E;
          ex.add(round, "G_minus", detail::block_owner(km * n_E + em, n_pts, P), r, g_block);
          ex.add(round, "G_plus", detail::block_owner(kp * n_E + ep, n_pts, P), r, g_block);
          if (round == 0) ++writes[idx];

          // Receive buffers hold whole atom columns of the two shifted points.
          const auto sig_src = sigma_source(k, e, q, off, n_kz);
          if (sig_src) {
            for (std::size_t a = 0; a < n_A; ++a)
              for (std::size_t b = 0; b < in.nm.n_B; ++b)
                for (std::size_t i = 0; i < n3; ++i) {
                  sigma_point_update(block_map(out.sigma.lesser.at(k, e, a), no, no), G.lesser.at(km, em, in.nm(a, b)),
                                     dc.lesser, in.dH, q, w, a, b, i, weight, nullptr);
                  sigma_point_update(block_map(out.sigma.greater.at(k, e, a), no, no),
                                     G.greater.at(km, em, in.nm(a, b)), dc.greater, in.dH, q, w, a, b, i, weight,
                                     nullptr);
                }
          }
          if (pi_source(k, e, q, off, n_kz, n_E)) {
            for (std::size_t a = 0; a < n_A; ++a)
              for (std::size_t b = 0; b < in.nm.n_B; ++b) {
                const auto yl = pi_y_products(G.greater.at(k, e, in.nm(a, b)), in.dH, a, b, nullptr);
                pi_point_update(partial[r].lesser, G.lesser.at(kp, ep, a), yl, in.dH, q, w, a, b,
                                in.grid.energy_weight, nullptr);
                const auto yg = pi_y_products(G.lesser.at(k, e, in.nm(a, b)), in.dH, a, b, nullptr);
                pi_point_update(partial[r].greater, G.greater.at(kp, ep, a), yg, in.dH, q, w, a, b,
                                in.grid.energy_weight, nullptr);
              }
          }
        }
        ex.add(round, "Pi_reduce", r, root, ph_slice);
      }
      // Root sums partial neighbor slots in rank order.
      for (std::size_t r = 0; r < P; ++r)
        for (std::size_t a = 0; a < n_A; ++a)
          for (std::size_t b = 1; b <= in.nm.n_B; ++b)
            for (std::size_t i = 0; i < n3; ++i)
              for (std::size_t j = 0; j < n3; ++j) {
                out.pi.lesser(q, w, a, b, i, j) += partial[r].lesser(q, w, a, b, i, j);
                out.pi.greater(q, w, a, b, i, j) += partial[r].greater(q, w, a, b, i, j);
              }
      ex.flush(out.ledger);
    }
  finalize_pi_diagonal(out.pi.lesser);
  finalize_pi_diagonal(out.pi.greater);
  for (int c : writes) out.ownership_violations += (c == 1) ? 0 : 1;
  return out;
}

/// Owned box and halo window of one tiled rank.
struct TileWindow {
  std::size_t e0 = 0, e1 = 0;  // owned energies
  std::size_t a0 = 0, a1 = 0;  // owned atoms
  std::int64_t e_lo = 0;       // first halo energy (may be negative; wraps)
  std::size_t e_len = 0;
  std::int64_t a_lo = 0;  // first halo atom (may be negative; wraps)
  std::size_t a_len = 0;
};

/// Energy halo: max frequency offset on both sides. Atom halo: ceil(n_B/2) below, floor(n_B/2) above.
/// A halo covering the whole extent is replaced by the extent itself.
inline TileWindow tile_window(std::size_t tE, std::size_t tA, std::size_t T_E, std::size_t T_A, std::size_t n_E,
                              std::size_t n_A, std::size_t n_B, std::size_t off_max) {
  const std::size_t sE = ceil_div(n_E, T_E), sA = ceil_div(n_A, T_A);
  TileWindow t;
  t.e0 = std::min(n_E, tE * sE);
  t.e1 = std::min(n_E, (tE + 1) * sE);
  t.a0 = std::min(n_A, tA * sA);
  t.a1 = std::min(n_A, (tA + 1) * sA);
  t.e_len = std::min(n_E, sE + 2 * off_max);
  t.e_lo = t.e_len == n_E ? 0 : static_cast<std::int64_t>(tE * sE) - static_cast<std::int64_t>(off_max);
  t.a_len = std::min(n_A, sA + n_B);
  t.a_lo = t.a_len == n_A ? 0 : static_cast<std::int64_t>(tA * sA) - static_cast<std::int64_t>(ceil_div(n_B, 2));
  return t;
}

/// Energy/atom tiling with T_E * T_A ranks, rank r = tE * T_A + tA.
///  round 0: G_halo and D_halo all-to-all gathers of each rank's window;
///  round 1: Sigma (owned box back to the GF owners) and Pi (partial neighbor slots to the phonon owners).
/// The GF-phase layout is the same block distribution over (k_z, E) and (q_z, w) as the momentum scheme.
inline DistResult run_tiled_scheme(const SseProblem& in, std::size_t T_E, std::size_t T_A) {
  detail::check_problem(in);
  const auto& G = in.G;
  const std::size_t n_kz = G.lesser.extent(0), n_E = G.lesser.extent(1), n_A = G.lesser.extent(2),
                    no = G.lesser.extent(3);
  const std::size_t n_qz = in.D.lesser.extent(0), n_w = in.D.lesser.extent(1), n3 = in.dH.extent(2);
  const std::size_t n_B = in.nm.n_B;
  if (T_E < 1 || T_A < 1 || T_E > n_E || T_A > n_A) {
    throw InfeasiblePartition("run_tiled_scheme: infeasible partition T_E=" + std::to_string(T_E) +
                              ", T_A=" + std::to_string(T_A));
  }
  const std::size_t P = T_E * T_A, n_pts = n_kz * n_E, n_ph = n_qz * n_w;
  const std::size_t off_max = in.grid.max_offset();
  DistResult out{{ElectronTensor(G.lesser.shape()), ElectronTensor(G.lesser.shape())}, detail::empty_pi(in), {}, P, 0};
  const CombinedD dc = preprocess_D(in.D, in.nm);
  std::vector<int> writes(n_pts * n_A, 0);
  detail::ExchangeTable ex;
  std::vector<PhononSelfEnergy> partial;

  for (std::size_t r = 0; r < P; ++r) {
    const std::size_t tE = r / T_A, tA = r % T_A;
    const TileWindow win = tile_window(tE, tA, T_E, T_A, n_E, n_A, n_B, off_max);

    // Gather G over the window: all k_z, wrapped energy and atom ranges.
    Tensor<5> gl({n_kz, win.e_len, win.a_len, no, no}), gg({n_kz, win.e_len, win.a_len, no, no});
    for (std::size_t k = 0; k < n_kz; ++k)
      for (std::size_t el = 0; el < win.e_len; ++el) {
        const std::size_t e = wrap_index(win.e_lo + static_cast<std::int64_t>(el), n_E);
        ex.add(0, "G_halo", detail::block_owner(k * n_E + e, n_pts, P), r, kPairBytes * win.a_len * no * no);
        for (std::size_t al = 0; al < win.a_len; ++al) {
          const std::size_t a = wrap_index(win.a_lo + static_cast<std::int64_t>(al), n_A);
          std::copy_n(G.lesser.at(k, e, a), no * no, gl.at(k, el, al));
          std::copy_n(G.greater.at(k, e, a), no * no, gg.at(k, el, al));
        }
      }
    // Combined D over the same atom window.
    Tensor<6> dl({n_qz, n_w, n_A, n_B, n3, n3}), dg({n_qz, n_w, n_A, n_B, n3, n3});
    for (std::size_t q = 0; q < n_qz; ++q)
      for (std::size_t w = 0; w < n_w; ++w) {
        ex.add(0, "D_halo", detail::block_owner(q * n_w + w, n_ph, P), r, kPairBytes * win.a_len * n_B * n3 * n3);
        for (std::size_t al = 0; al < win.a_len; ++al) {
          const std::size_t a = wrap_index(win.a_lo + static_cast<std::int64_t>(al), n_A);
          std::copy_n(dc.lesser.at(q, w, a), n_B * n3 * n3, dl.at(q, w, a));
          std::copy_n(dc.greater.at(q, w, a), n_B * n3 * n3, dg.at(q, w, a));
        }
      }

    auto local = [&](const Tensor<5>& buf) {
      return [&buf, &win, n_E, n_A](std::size_t k, std::size_t e, std::size_t a) -> const cplx* {
        const std::size_t el = wrap_index(static_cast<std::int64_t>(e) - win.e_lo, n_E);
        const std::size_t al = wrap_index(static_cast<std::int64_t>(a) - win.a_lo, n_A);
        if (el >= win.e_len || al >= win.a_len) throw std::logic_error("tiled scheme: access outside halo window");
        return buf.at(k, el, al);
      };
    };

    sigma_reference_box(local(gl), dl, in.dH, in.nm, in.grid, n_kz, win.e0, win.e1, win.a0, win.a1, out.sigma.lesser,
                        nullptr);
    sigma_reference_box(local(gg), dg, in.dH, in.nm, in.grid, n_kz, win.e0, win.e1, win.a0, win.a1,
                        out.sigma.greater, nullptr);
    partial.push_back(detail::empty_pi(in));
    pi_reference_box(local(gl), local(gg), in.dH, in.nm, in.grid, n_kz, n_E, win.e0, win.e1, win.a0, win.a1,
                     partial.back().lesser, nullptr);
    pi_reference_box(local(gg), local(gl), in.dH, in.nm, in.grid, n_kz, n_E, win.e0, win.e1, win.a0, win.a1,
                     partial.back().greater, nullptr);

    for (std::size_t k = 0; k < n_kz; ++k)
      for (std::size_t e = win.e0; e < win.e1; ++e) {
        ex.add(1, "Sigma", r, detail::block_owner(k * n_E + e, n_pts, P), kPairBytes * (win.a1 - win.a0) * no * no);
        for (std::size_t a = win.a0; a < win.a1; ++a) ++writes[(k * n_E + e) * n_A + a];
      }
    if (win.a1 > win.a0 && win.e1 > win.e0) {
      for (std::size_t i = 0; i < n_ph; ++i)
        ex.add(1, "Pi", r, detail::block_owner(i, n_ph, P), kPairBytes * (win.a1 - win.a0) * n_B * n3 * n3);
    }
  }
  // Reduction of the partial neighbor slots in rank order.
  for (std::size_t r = 0; r < P; ++r) {
    for (std::size_t i = 0; i < out.pi.lesser.size(); ++i) {
      out.pi.lesser.data()[i] += partial[r].lesser.data()[i];
      out.pi.greater.data()[i] += partial[r].greater.data()[i];
    }
  }
  finalize_pi_diagonal(out.pi.lesser);
  finalize_pi_diagonal(out.pi.greater);
  ex.flush(out.ledger);
  for (int c : writes) out.ownership_violations += (c == 1) ? 0 : 1;
  return out;
}

// ---- ledger versus closed-form volumes ----

/// Per-rank bytes as the closed forms count them.
/// Momentum scheme: G = G_minus + G_plus received; D/Pi = D_bcast received + Pi_reduce sent.
inline ByteBreakdown omen_ledger_bytes(const MessageLedger& l, std::size_t rank) {
  ByteBreakdown b;
  b.electron_G = static_cast<double>(l.received_by(rank, "G_minus") + l.received_by(rank, "G_plus"));
  b.phonon_D_Pi = static_cast<double>(l.received_by(rank, "D_bcast") + l.sent_by(rank, "Pi_reduce"));
  return b;
}

/// Tiled scheme: each gathered window counts once on the way in and once for the matching
/// outgoing traffic, so electron (G and Sigma) = 2 x G_halo received and D/Pi = 2 x D_halo received.
inline ByteBreakdown tiled_ledger_bytes(const MessageLedger& l, std::size_t rank) {
  ByteBreakdown b;
  const double g = static_cast<double>(l.received_by(rank, "G_halo"));
  b.electron_G = g;
  b.electron_Sigma = g;
  b.phonon_D_Pi = 2.0 * static_cast<double>(l.received_by(rank, "D_halo"));
  return b;
}

}  // namespace qtx
