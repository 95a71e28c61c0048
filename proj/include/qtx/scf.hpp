#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "device.hpp"
#include "gf_solver.hpp"
#include "params.hpp"
#include "sse_kernel.hpp"

namespace qtx {

struct ScfOptions {
  std::size_t max_iter = 20;
  double tol = 1e-6;
  SseVariant variant = SseVariant::Reference;
  PiVariant pi_variant = PiVariant::Reference;
  GfOptions gf{};
  unsigned threads = 1;
};

struct ScfIteration {
  std::size_t iteration = 0;  // 1-based
  double delta = 0.0;         // relative change of G^<> against the previous pass; 0 on the first
  double max_abs_G = 0.0;
  double max_abs_D = 0.0;
};

struct ScfResult {
  ElectronGreens G;
  PhononGreens D;
  ElectronSelfEnergy sigma;
  PhononSelfEnergy pi;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<ScfIteration> history;
};

namespace detail {

template <std::size_t R>
double max_abs_diff(const Tensor<R>& a, const Tensor<R>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double relative_change(const ElectronGreens& g0, const ElectronGreens& g1) {
  const double num = std::max(max_abs_diff(g0.lesser, g1.lesser), max_abs_diff(g0.greater, g1.greater));
  const double den = std::max(max_abs(g1.lesser), max_abs(g1.greater));
  if (den == 0.0) return num == 0.0 ? 0.0 : num;
  return num / den;
}

}  // namespace detail

/// GF phase and SSE phase alternated until G stops changing.
/// The optional callback sees each iteration record as soon as it is available.
inline ScfResult self_consistent_loop(const Device& device, const SimParams& p, const EnergyGrid& grid,
                                      const ScfOptions& opt = {},
                                      const std::function<void(const ScfIteration&)>& on_iteration = {}) {
  require_valid(p);
  if (opt.max_iter == 0) throw std::invalid_argument("max_iter must be >= 1");
  ScfResult r;
  r.sigma = make_electron(p);
  r.pi = make_phonon(p);
  GfOptions gopt = opt.gf;
  gopt.threads = std::max(gopt.threads, opt.threads);
  SseOptions sopt;
  sopt.threads = opt.threads;

  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    auto gf = gf_phase(device, p, grid, r.sigma, r.pi, gopt);
    ScfIteration rec;
    rec.iteration = it;
    if (it > 1) rec.delta = detail::relative_change(r.G, gf.electron);
    r.G = std::move(gf.electron);
    r.D = std::move(gf.phonon);
    rec.max_abs_G = std::max(max_abs(r.G.lesser), max_abs(r.G.greater));
    rec.max_abs_D = std::max(max_abs(r.D.lesser), max_abs(r.D.greater));
    r.history.push_back(rec);
    r.iterations = it;
    if (on_iteration) on_iteration(rec);
    if (it > 1 && rec.delta <= opt.tol) {
      r.converged = true;
      return r;
    }
    const CombinedD dc = preprocess_D(r.D, device.neighbors);
    r.sigma = sse_sigma(opt.variant, r.G, dc, device.matrices.dH, device.neighbors, grid, sopt);
    r.pi = sse_pi(r.G, device.matrices.dH, device.neighbors, grid, p.n_qz, opt.pi_variant, sopt);
  }
  return r;
}

}  // namespace qtx
