#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace qtx {

/// Simulation parameter set. All quantities are dimensionless grid units.
struct SimParams {
  std::size_t n_kz = 3;
  std::size_t n_qz = 2;
  std::size_t n_E = 8;
  std::size_t n_w = 2;
  std::size_t n_A = 8;
  std::size_t n_B = 2;
  std::size_t n_orb = 2;
  std::size_t n_3D = 3;
  std::size_t bnum = 2;
  double eta = 1e-3;

  // Grid and reservoir settings.
  double e_min = -2.0;
  double e_max = 2.0;
  double mu = 0.0;
  double kT = 0.1;
  // Scale of the synthesized Hamiltonian-derivative blocks (electron-phonon coupling).
  double coupling = 0.005;

  bool operator==(const SimParams&) const = default;
};

struct ValidationReport {
  std::vector<std::string> violations;
  std::vector<std::string> warnings;

  bool ok() const noexcept { return violations.empty(); }
};

namespace detail {
inline void check_range(ValidationReport& r, const char* name, std::size_t v, std::size_t lo, std::size_t hi) {
  if (v < lo || v > hi) {
    r.warnings.push_back(std::string(name) + " outside [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
  }
}
}  // namespace detail

/// Checks invariants (violations) and typical-range membership (warnings only).
inline ValidationReport validate(const SimParams& p) {
  ValidationReport r;
  auto need = [&](bool cond, const std::string& msg) {
    if (!cond) r.violations.push_back(msg);
  };
  need(p.n_kz >= 1, "n_kz must be >= 1");
  need(p.n_qz >= 1, "n_qz must be >= 1");
  need(p.n_E >= 1, "n_E must be >= 1");
  need(p.n_w >= 1, "n_w must be >= 1");
  need(p.n_A >= 1, "n_A must be >= 1");
  need(p.n_B >= 1, "n_B must be >= 1");
  need(p.n_orb >= 1, "n_orb must be >= 1");
  need(p.bnum >= 1, "bnum must be >= 1");
  need(p.n_3D == 3, "n_3D must equal 3");
  if (p.bnum >= 1) need(p.n_A % p.bnum == 0, "n_A must be divisible by bnum");
  need(p.n_qz <= p.n_kz, "n_qz must be <= n_kz");
  need(p.n_w < p.n_E, "n_w must be < n_E");
  need(p.eta > 0.0, "eta must be > 0");
  need(p.e_max > p.e_min, "e_max must exceed e_min");
  need(p.kT > 0.0, "kT must be > 0");

  detail::check_range(r, "n_kz", p.n_kz, 1, 21);
  detail::check_range(r, "n_qz", p.n_qz, 1, 21);
  detail::check_range(r, "n_E", p.n_E, 700, 1500);
  detail::check_range(r, "n_w", p.n_w, 10, 100);
  detail::check_range(r, "n_B", p.n_B, 4, 50);
  detail::check_range(r, "n_orb", p.n_orb, 1, 30);
  return r;
}

inline void require_valid(const SimParams& p) {
  const auto r = validate(p);
  if (!r.ok()) throw std::invalid_argument("invalid parameters: " + r.violations.front());
}

/// A phonon frequency snapped to the energy grid: hbar*omega = offset * spacing.
struct FrequencyPoint {
  std::size_t offset = 1;
  double weight = 0.0;
};

struct EnergyGrid {
  std::vector<double> values;
  double spacing = 0.0;
  std::vector<FrequencyPoint> frequency_map;
  // Quadrature weight of the energy integral in the phonon self-energy.
  double energy_weight = 0.0;

  std::size_t max_offset() const {
    std::size_t m = 0;
    for (const auto& f : frequency_map) m = std::max(m, f.offset);
    return m;
  }
  double omega(std::size_t w) const { return static_cast<double>(frequency_map.at(w).offset) * spacing; }
};

/// Uniform grid on [e_min, e_max]; frequency w maps to offset w+1 with weight 1/(2*pi*n_w).
inline EnergyGrid make_grid(const SimParams& p, std::optional<std::vector<double>> frequency_weights = std::nullopt) {
  require_valid(p);
  EnergyGrid g;
  g.values.resize(p.n_E);
  g.spacing = p.n_E > 1 ? (p.e_max - p.e_min) / static_cast<double>(p.n_E - 1) : (p.e_max - p.e_min);
  for (std::size_t e = 0; e < p.n_E; ++e) g.values[e] = p.e_min + g.spacing * static_cast<double>(e);
  if (frequency_weights && frequency_weights->size() != p.n_w) {
    throw std::invalid_argument("make_grid: expected one weight per frequency");
  }
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t w = 0; w < p.n_w; ++w) {
    const double weight = frequency_weights ? (*frequency_weights)[w] : 1.0 / (two_pi * static_cast<double>(p.n_w));
    g.frequency_map.push_back({w + 1, weight});
  }
  g.energy_weight = 1.0 / (two_pi * static_cast<double>(p.n_E));
  return g;
}

// JSON config: one key per field; unknown keys are rejected.
inline void to_json(nlohmann::json& j, const SimParams& p) {
  j = nlohmann::json{{"n_kz", p.n_kz}, {"n_qz", p.n_qz}, {"n_E", p.n_E},     {"n_w", p.n_w},
                     {"n_A", p.n_A},   {"n_B", p.n_B},   {"n_orb", p.n_orb}, {"n_3D", p.n_3D},
                     {"bnum", p.bnum}, {"eta", p.eta},   {"e_min", p.e_min}, {"e_max", p.e_max},
                     {"mu", p.mu},     {"kT", p.kT},     {"coupling", p.coupling}};
}

inline void from_json(const nlohmann::json& j, SimParams& p) {
  static const std::vector<std::string> known{"n_kz", "n_qz", "n_E",  "n_w",   "n_A", "n_B",  "n_orb",   "n_3D",
                                              "bnum", "eta",  "e_min", "e_max", "mu",  "kT",   "coupling"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown parameter key: " + key);
    }
  }
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) j.at(k).get_to(field);
  };
  get("n_kz", p.n_kz);
  get("n_qz", p.n_qz);
  get("n_E", p.n_E);
  get("n_w", p.n_w);
  get("n_A", p.n_A);
  get("n_B", p.n_B);
  get("n_orb", p.n_orb);
  get("n_3D", p.n_3D);
  get("bnum", p.bnum);
  get("eta", p.eta);
  get("e_min", p.e_min);
  get("e_max", p.e_max);
  get("mu", p.mu);
  get("kT", p.kT);
  get("coupling", p.coupling);
}

/// Named parameter presets. The table presets are for analytic commands only.
inline std::optional<SimParams> preset(const std::string& name, std::size_t n_kz = 3) {
  SimParams p;
  if (name == "tiny") {
    p.n_A = 8; p.n_orb = 2; p.n_B = 2; p.bnum = 2;
    p.n_kz = 3; p.n_E = 8; p.n_qz = 2; p.n_w = 2;
    return p;
  }
  if (name == "small") {
    p.n_A = 32; p.n_orb = 2; p.n_B = 4; p.bnum = 4;
    p.n_kz = 3; p.n_E = 16; p.n_qz = 2; p.n_w = 3;
    return p;
  }
  if (name == "table2" || name == "table3" || name == "table4") {
    p.n_A = 4864; p.n_B = 34; p.n_orb = 12; p.n_E = 706; p.n_w = 70; p.bnum = 19;
    p.n_kz = name == "table4" ? 7 : n_kz;
    p.n_qz = p.n_kz;
    return p;
  }
  return std::nullopt;
}

}  // namespace qtx
