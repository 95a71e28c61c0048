// Command-line driver: simulate | plan | flops | distsim | propagate.
// Exit codes: 0 ok, 1 domain error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qtx/qtx.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qtx;

namespace {

struct Options {
  std::string preset = "tiny";
  std::string config;
  std::uint64_t seed = 1;
  std::size_t nkz = 0;
  std::vector<std::size_t> P;
  std::size_t te = 0, ta = 0;
  std::string scheme = "both";
  std::string out = "qtx_out";
  std::string format = "csv";
  std::size_t max_iter = 20;
  double tol = 1e-6;
  std::optional<double> coupling;
  unsigned threads = 1;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool is_table_preset(const std::string& name) { return name.rfind("table", 0) == 0; }

SimParams load_params(const Options& o) {
  auto p = preset(o.preset, o.nkz ? o.nkz : 3);
  if (!p) throw UsageError("unknown preset '" + o.preset + "' (tiny, small, table2, table3, table4)");
  if (!o.config.empty()) {
    std::ifstream is(o.config);
    if (!is) throw UsageError("cannot open config file " + o.config);
    json j = json::parse(is);
    from_json(j, *p);
  }
  if (o.nkz && !is_table_preset(o.preset)) {
    p->n_kz = o.nkz;
    p->n_qz = std::min(p->n_qz, p->n_kz);
  }
  if (o.coupling) p->coupling = *o.coupling;
  require_valid(*p);
  return *p;
}

json config_echo(const std::string& cmd, const Options& o, const SimParams& p) {
  json j{{"command", cmd}, {"preset", o.preset}, {"seed", o.seed}, {"params", p}};
  if (!o.config.empty()) j["config_file"] = o.config;
  if (!o.P.empty()) j["P"] = o.P;
  if (o.te) j["T_E"] = o.te;
  if (o.ta) j["T_A"] = o.ta;
  return j;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void require_allocatable(const Options& o) {
  if (is_table_preset(o.preset)) {
    throw UsageError("preset '" + o.preset + "' is for analytic commands only (plan, flops)");
  }
}

// ---- simulate ----

int cmd_simulate(const Options& o) {
  require_allocatable(o);
  const SimParams p = load_params(o);
  const Device dev = synthesize(p, o.seed);
  const EnergyGrid grid = make_grid(p);
  ScfOptions so;
  so.max_iter = o.max_iter;
  so.tol = o.tol;
  so.threads = o.threads;
  const ScfResult r = self_consistent_loop(dev, p, grid, so, [](const ScfIteration& it) {
    std::printf("iteration %zu  delta %.3e  max|G| %.4e  max|D| %.4e\n", it.iteration, it.delta, it.max_abs_G,
                it.max_abs_D);
  });

  std::uint64_t h = digest(r.G.lesser);
  h = digest(r.G.greater, h);
  h = digest(r.D.lesser, h);
  h = digest(r.D.greater, h);
  json log = json::array();
  std::ostringstream csv;
  csv << "iteration,delta,max_abs_G,max_abs_D\n";
  for (const auto& it : r.history) {
    log.push_back({{"iteration", it.iteration}, {"delta", it.delta}, {"max_abs_G", it.max_abs_G}, {"max_abs_D", it.max_abs_D}});
    csv << it.iteration << ',' << it.delta << ',' << it.max_abs_G << ',' << it.max_abs_D << '\n';
  }
  const json summary{{"config", config_echo("simulate", o, p)},
                     {"iterations", r.iterations},
                     {"converged", r.converged},
                     {"status", r.converged ? "converged" : "not converged"},
                     {"digest", hex(h)},
                     {"log", log}};
  const fs::path dir(o.out);
  if (o.format == "json") {
    write_file(dir / "simulate_log.json", log.dump(2) + "\n");
  } else {
    write_file(dir / "simulate_log.csv", "# config: " + config_echo("simulate", o, p).dump() + "\n" + csv.str());
  }
  write_file(dir / "simulate_summary.json", summary.dump(2) + "\n");
  std::printf("status: %s after %zu iteration(s)\ndigest: %s\n", r.converged ? "converged" : "not converged",
              r.iterations, hex(h).c_str());
  return 0;
}

// ---- plan ----

struct PlanRow {
  std::size_t nkz;
  std::size_t P;
};

std::vector<PlanRow> plan_rows(const Options& o, const SimParams& p) {
  std::vector<PlanRow> rows;
  if (!o.P.empty()) {
    for (auto P : o.P) rows.push_back({p.n_kz, P});
    return rows;
  }
  if (o.preset == "table3" && !o.nkz) {
    for (std::size_t n : {3, 5, 7, 9, 11}) rows.push_back({n, 256 * n});
  } else if (o.preset == "table3") {
    rows.push_back({o.nkz, 256 * o.nkz});
  } else if (o.preset == "table4") {
    for (std::size_t P : {224, 448, 896, 1792, 2688}) rows.push_back({7, P});
  } else {
    rows.push_back({p.n_kz, 4});
  }
  return rows;
}

int cmd_plan(const Options& o) {
  SimParams base = load_params(o);
  std::vector<std::pair<CommPlan, std::string>> plans;
  json items = json::array();
  for (const auto& row : plan_rows(o, base)) {
    SimParams p = base;
    if (is_table_preset(o.preset)) p = *preset(o.preset, row.nkz);
    const CommPlan om = omen_volume(p, row.P);
    plans.push_back({om, ""});
    json item{{"N_kz", p.n_kz}, {"P", row.P}, {"omen_TiB", om.total_tib()}};
    if (o.te || o.ta) {
      if (o.te * o.ta != row.P) throw std::invalid_argument("T_E * T_A must equal P");
      const CommPlan c = dace_volume(p, o.te, o.ta);
      plans.push_back({c, ""});
      item["tiled_TiB"] = c.total_tib();
      item["T_E"] = c.T_E;
      item["T_A"] = c.T_A;
    } else {
      const CommPlan best = optimize_tiles(p, row.P);
      plans.push_back({best, "tiled_optimal"});
      item["tiled_TiB"] = best.total_tib();
      item["T_E"] = best.T_E;
      item["T_A"] = best.T_A;
      // Tiling with T_E fixed to the momentum count (or 7 for the strong-scaling set).
      const std::size_t te = o.preset == "table4" ? 7 : p.n_kz;
      if (row.P % te == 0 && te <= p.n_E && row.P / te <= p.n_A) {
        CommPlan stated = dace_volume(p, te, row.P / te);
        plans.push_back({stated, "tiled_fixed_TE"});
        item["stated_T_E"] = te;
        item["stated_T_A"] = row.P / te;
        item["stated_TiB"] = stated.total_tib();
      }
    }
    items.push_back(item);
  }
  const json echo = config_echo("plan", o, base);
  std::string text;
  if (o.format == "json") {
    text = json{{"config", echo}, {"rows", items}}.dump(2) + "\n";
  } else {
    text = "# config: " + echo.dump() + "\n" + comm_csv_header() + "\n";
    for (const auto& [c, label] : plans) text += comm_csv_row(c, label) + "\n";
  }
  std::cout << text;
  write_file(fs::path(o.out) / (o.format == "json" ? "plan.json" : "plan.csv"), text);
  return 0;
}

// ---- flops ----

ElectronGreens random_electron(const SimParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ElectronGreens g = make_electron(p);
  for (auto* t : {&g.lesser, &g.greater})
    for (auto& v : t->data()) v = {u(rng), u(rng)};
  return g;
}

PhononGreens random_phonon(const SimParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PhononGreens d = make_phonon(p);
  for (auto* t : {&d.lesser, &d.greater})
    for (auto& v : t->data()) v = {u(rng), u(rng)};
  return d;
}

int cmd_flops(const Options& o) {
  const SimParams base = load_params(o);
  const json echo = config_echo("flops", o, base);
  std::ostringstream csv;
  csv << "# config: " << echo.dump() << "\n";
  csv << "row,N_kz,N_qz,omen_Pflop,dace_Pflop,counted_reference_Pflop,counted_batched_Pflop\n";
  json rows = json::array();
  auto pf = [](double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%.4f", v / 1e15);
    return std::string(b);
  };
  std::vector<SimParams> sets;
  if (is_table_preset(o.preset) && !o.nkz) {
    for (std::size_t n : {3, 5, 7, 9, 11}) sets.push_back(*preset(o.preset, n));
  } else {
    sets.push_back(base);
  }
  for (const auto& p : sets) {
    std::string ref = "n/a", bat = "n/a";
    json row{{"row", "SSE"}, {"N_kz", p.n_kz}, {"N_qz", p.n_qz}, {"omen_flop", sse_flops_omen(p)},
             {"dace_flop", sse_flops_dace(p)}};
    if (!is_table_preset(o.preset)) {
      // Instrumented kernels on random tensors of the requested size.
      std::mt19937_64 rng(o.seed);
      const Device dev = synthesize(p, o.seed);
      const EnergyGrid grid = make_grid(p);
      const ElectronGreens G = random_electron(p, rng);
      const CombinedD dc = preprocess_D(random_phonon(p, rng), dev.neighbors);
      FlopCounter cr, cb;
      SseOptions sr{1, &cr}, sb{1, &cb};
      sse_sigma(SseVariant::Reference, G, dc, dev.matrices.dH, dev.neighbors, grid, sr);
      sse_pi(G, dev.matrices.dH, dev.neighbors, grid, p.n_qz, PiVariant::Reference, sr);
      sse_sigma(SseVariant::BatchedFused, G, dc, dev.matrices.dH, dev.neighbors, grid, sb);
      sse_pi(G, dev.matrices.dH, dev.neighbors, grid, p.n_qz, PiVariant::Hoisted, sb);
      ref = pf(static_cast<double>(cr.gemm));
      bat = pf(static_cast<double>(cb.gemm));
      row["counted_reference_flop"] = cr.gemm;
      row["counted_batched_flop"] = cb.gemm;
    }
    csv << "SSE," << p.n_kz << ',' << p.n_qz << ',' << pf(sse_flops_omen(p)) << ',' << pf(sse_flops_dace(p)) << ','
        << ref << ',' << bat << '\n';
    rows.push_back(row);
  }
  for (const char* gf : {"GF_contour_integral", "GF_RGF"}) {
    csv << gf << ",,," << "n/a (empirical in paper),n/a (empirical in paper),n/a,n/a\n";
    rows.push_back({{"row", gf}, {"omen_flop", "n/a (empirical in paper)"}, {"dace_flop", "n/a (empirical in paper)"}});
  }
  const std::string text = o.format == "json" ? json{{"config", echo}, {"rows", rows}}.dump(2) + "\n" : csv.str();
  std::cout << text;
  write_file(fs::path(o.out) / (o.format == "json" ? "flops.json" : "flops.csv"), text);
  return 0;
}

// ---- distsim ----

int cmd_distsim(const Options& o) {
  require_allocatable(o);
  const SimParams p = load_params(o);
  if (o.scheme != "omen" && o.scheme != "tiled" && o.scheme != "both") throw UsageError("--scheme must be omen, tiled or both");
  const std::size_t P = o.P.empty() ? 4 : o.P.front();
  const std::size_t te = o.te ? o.te : 2, ta = o.ta ? o.ta : 2;
  const Device dev = synthesize(p, o.seed);
  const EnergyGrid grid = make_grid(p);
  // G and D from one GF pass without scattering.
  const auto gf = gf_phase(dev, p, grid, make_electron(p), make_phonon(p), GfOptions{});
  const CombinedD dc = preprocess_D(gf.phonon, dev.neighbors);
  const auto sigma = sse_sigma_reference(gf.electron, dc, dev.matrices.dH, dev.neighbors, grid);
  const auto pi = sse_pi(gf.electron, dev.matrices.dH, dev.neighbors, grid, p.n_qz);
  const SseProblem in{gf.electron, gf.phonon, dev.matrices.dH, dev.neighbors, grid};

  json report{{"config", config_echo("distsim", o, p)}};
  bool equivalent = true;
  auto deviation = [&](const DistResult& d) {
    return std::max({max_rel_diff(d.sigma.lesser, sigma.lesser), max_rel_diff(d.sigma.greater, sigma.greater),
                     max_rel_diff(d.pi.lesser, pi.lesser), max_rel_diff(d.pi.greater, pi.greater)});
  };
  auto rel = [](double a, double b) { return b == 0.0 ? std::abs(a) : std::abs(a - b) / b; };
  const fs::path dir(o.out);
  std::uint64_t omen_total = 0, tiled_total = 0;

  if (o.scheme != "tiled") {
    const DistResult d = run_omen_scheme(in, P);
    const CommPlan m = omen_volume(p, P);
    double worst = 0.0;
    for (std::size_t r = 0; r < P; ++r) {
      const auto b = omen_ledger_bytes(d.ledger, r);
      worst = std::max({worst, rel(b.electron_G, m.per_process.electron_G), rel(b.phonon_D_Pi, m.per_process.phonon_D_Pi)});
    }
    const double dev_max = deviation(d);
    equivalent = equivalent && dev_max <= 1e-10 && d.ownership_violations == 0;
    omen_total = d.ledger.total();
    report["omen"] = {{"P", P}, {"max_rel_deviation", dev_max}, {"ledger", d.ledger.summary(P)},
                      {"model_delta_pct", 100.0 * worst}};
    write_file(dir / "ledger_omen.csv", d.ledger.to_csv());
    std::printf("omen   P=%zu  ledger %llu B  model delta %.3f%%  deviation %.2e\n", P,
                static_cast<unsigned long long>(omen_total), 100.0 * worst, dev_max);
  }
  if (o.scheme != "omen") {
    const DistResult d = run_tiled_scheme(in, te, ta);
    const CommPlan m = dace_volume(p, te, ta);
    double worst = 0.0;
    for (std::size_t r = 0; r < te * ta; ++r) {
      const auto b = tiled_ledger_bytes(d.ledger, r);
      worst = std::max({worst, rel(b.electron_G + b.electron_Sigma, m.per_process.electron_G + m.per_process.electron_Sigma),
                        rel(b.phonon_D_Pi, m.per_process.phonon_D_Pi)});
    }
    const double dev_max = deviation(d);
    equivalent = equivalent && dev_max <= 1e-10 && d.ownership_violations == 0;
    tiled_total = d.ledger.total();
    report["tiled"] = {{"T_E", te}, {"T_A", ta}, {"max_rel_deviation", dev_max}, {"ledger", d.ledger.summary(te * ta)},
                       {"model_delta_pct", 100.0 * worst}};
    write_file(dir / "ledger_tiled.csv", d.ledger.to_csv());
    std::printf("tiled  T_E=%zu T_A=%zu  ledger %llu B  model delta %.3f%%  deviation %.2e\n", te, ta,
                static_cast<unsigned long long>(tiled_total), 100.0 * worst, dev_max);
  }
  if (o.scheme == "both") {
    report["tiled_less_than_omen"] = tiled_total < omen_total;
    std::printf("tiled < omen: %s\n", tiled_total < omen_total ? "yes" : "no");
  }
  report["verdict"] = equivalent ? "EQUIVALENT" : "MISMATCH";
  write_file(dir / "distsim.json", report.dump(2) + "\n");
  std::printf("verdict: %s\n", equivalent ? "EQUIVALENT" : "MISMATCH");
  return equivalent ? 0 : 1;
}

// ---- propagate ----

int cmd_propagate(const Options& o) {
  const SimParams p = load_params(o);
  const ir::Graph g = ir::tiled_sse_graph();
  const auto vol = ir::volume_between_maps(g);
  const std::size_t te = o.te ? o.te : 1, ta = o.ta ? o.ta : 1;
  sym::Env env{{"N_kz", static_cast<std::int64_t>(p.n_kz)}, {"N_qz", static_cast<std::int64_t>(p.n_qz)},
               {"N_E", static_cast<std::int64_t>(p.n_E)},   {"N_w", static_cast<std::int64_t>(p.n_w)},
               {"N_A", static_cast<std::int64_t>(p.n_A)},   {"N_B", static_cast<std::int64_t>(p.n_B)},
               {"N_orb", static_cast<std::int64_t>(p.n_orb)},
               {"s_E", static_cast<std::int64_t>(ceil_div(p.n_E, te))},
               {"s_A", static_cast<std::int64_t>(ceil_div(p.n_A, ta))}};
  json out{{"config", config_echo("propagate", o, p)}};
  json arrays = json::object();
  for (const auto& [name, e] : vol) arrays[name] = {{"bytes", e.str()}, {"instantiated", sym::eval(e, env)}};
  out["volumes"] = arrays;
  if (o.format == "json") {
    out["graph"] = ir::to_json(g);
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "# config: " << out["config"].dump() << "\narray,bytes_per_tile,instantiated\n";
    for (const auto& [name, e] : vol) std::cout << name << ",\"" << e.str() << "\"," << sym::eval(e, env) << "\n";
  }
  write_file(fs::path(o.out) / "propagate.json", out.dump(2) + "\n");
  return 0;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--preset", o.preset, "tiny | small | table2 | table3 | table4");
  sub->add_option("--config", o.config, "JSON parameter file applied over the preset")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "device synthesis seed");
  sub->add_option("--nkz", o.nkz, "momentum points")->check(CLI::PositiveNumber);
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--format", o.format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
  sub->add_option("--threads", o.threads, "worker threads for kernel sections")->check(CLI::PositiveNumber);
  sub->add_option("--coupling", o.coupling, "scale of the electron-phonon coupling blocks")->check(CLI::NonNegativeNumber);
}

void add_tiles(CLI::App* sub, Options& o) {
  sub->add_option("--te", o.te, "energy partitions")->check(CLI::PositiveNumber);
  sub->add_option("--ta", o.ta, "atom partitions")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qtx: electron-phonon self-energy solver and communication planner"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "run the self-consistent GF/SSE loop on a synthesized device");
  add_common(sim, o);
  sim->add_option("--max-iter", o.max_iter, "iteration cap")->check(CLI::PositiveNumber);
  sim->add_option("--tol", o.tol, "relative change of G that counts as converged")->check(CLI::NonNegativeNumber);

  auto* plan = app.add_subcommand("plan", "communication volumes and optimal tiling");
  add_common(plan, o);
  plan->add_option("--p", o.P, "process counts")->check(CLI::PositiveNumber);
  add_tiles(plan, o);

  auto* flops = app.add_subcommand("flops", "SSE flop counts");
  add_common(flops, o);

  auto* dist = app.add_subcommand("distsim", "simulated distributed SSE under both schemes");
  add_common(dist, o);
  dist->add_option("--p", o.P, "ranks for the momentum scheme")->check(CLI::PositiveNumber);
  dist->add_option("--scheme", o.scheme, "omen | tiled | both");
  add_tiles(dist, o);

  auto* prop = app.add_subcommand("propagate", "memlet propagation on the tiled SSE graph");
  add_common(prop, o);
  add_tiles(prop, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) return cmd_simulate(o);
    if (*plan) return cmd_plan(o);
    if (*flops) {
      // Without an explicit preset the flop table uses the published device.
      if (flops->count("--preset") == 0 && o.config.empty() && !o.nkz) o.preset = "table2";
      return cmd_flops(o);
    }
    if (*dist) return cmd_distsim(o);
    if (*prop) return cmd_propagate(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
