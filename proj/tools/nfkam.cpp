// nfkam: orchestrates lattice reduction, condition checks, normal-form
// iteration, degeneracy analysis, and dynamical verification over a model
// config, persisting a deterministic run artifact plus timing data.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nfkam/conditions.hpp"
#include "nfkam/degeneracy.hpp"
#include "nfkam/dynamics.hpp"
#include "nfkam/kamstep.hpp"
#include "nfkam/lattice.hpp"
#include "nfkam/models.hpp"
#include "nfkam/serialize.hpp"

namespace fs = std::filesystem;
using namespace nfkam;

namespace {

constexpr const char* kVersion = "nfkam 0.1.0";

Json dvec(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(fmt_double(v(i)));
  return out;
}

ModelConfig builtin_config(const std::string& name) {
  ModelConfig c;
  c.model = name;
  c.eps = 1e-3;
  if (name == "convex-2dof-resonant") {
    FullModel mod = make_convex_2dof(c.eps, 8, 6);
    c.m = 1;
    c.m0 = 1;
    c.kcut = 8;
    c.dcut = 6;
    c.perturbation = series_to_json(mod.H);
    c.generators = mod.generators;
    c.y0 = {mod.y0(0), mod.y0(1)};
    return c;
  }
  // degree 24 keeps the doubled-angle second-order terms accurate out to
  // |u| = pi, where half the critical points live
  BuiltinModel mod = make_builtin(name, c.eps, 2.0, 6, 24);
  c.m = 1;
  c.m0 = 1;
  c.kcut = 6;
  c.dcut = 24;
  c.omega = {mod.N.omega(0)};
  c.M.assign(3, std::vector<double>(3, 0.0));
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) c.M[a][b] = mod.N.M(a, b);
  c.perturbation = series_to_json(mod.P);
  return c;
}

bool is_builtin(const std::string& name) {
  return name == "appendix-a" || name == "appendix-b-i0" || name == "appendix-b-i1" ||
         name == "convex-2dof-resonant";
}

struct Runner {
  ModelConfig cfg;
  fs::path out;
  bool strict = false;
  std::vector<double> delta_grid;
  int order_cap = 6;

  Json art;
  Json timings = Json::object();
  std::vector<std::string> failures;

  NormalForm N;
  FTSeries P;
  double delta = 0.0;  // numeric grading parameter of the run
  std::optional<ResonanceFrame> frame;
  std::vector<KamStepResult> steps;
  std::vector<FTSeries> rbar_history;

  template <typename F>
  void timed(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    timings[stage] = fmt_double(dt.count());
  }

  KamSchedule schedule() const {
    KamSchedule sch = cfg.profile == "paper"
                          ? paper_schedule(cfg.m, cfg.m0, 1e-3, 0.25)
                          : practical_schedule();
    sch.strict = strict;
    return sch;
  }

  ShiftMode mode() const {
    if (cfg.mode == "plain") return ShiftMode::plain;
    if (cfg.mode == "partial") return ShiftMode::partial;
    if (cfg.mode == "isoenergetic") return ShiftMode::isoenergetic;
    return ShiftMode::none;
  }

  void stage_reduce() {
    PhaseSignature sig(cfg.m, cfg.m0);
    if (cfg.generators.empty()) {
      // already reduced: normal form straight from the config
      delta = cfg.eps;
      Eigen::VectorXd omega(cfg.m);
      if (static_cast<int>(cfg.omega.size()) != cfg.m)
        throw std::invalid_argument("config: omega needs m entries for reduced models");
      for (int i = 0; i < cfg.m; ++i) omega(i) = cfg.omega[i];
      const int nv = sig.vars();
      Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nv, nv);
      if (static_cast<int>(cfg.M.size()) != nv)
        throw std::invalid_argument("config: M must be (m + 2 m0) square");
      for (int a = 0; a < nv; ++a)
        for (int b = 0; b < nv; ++b) M(a, b) = cfg.M[a][b];
      N = NormalForm(sig, cfg.kcut, cfg.dcut, delta, omega, M);
      P = series_from_json(cfg.perturbation, sig, cfg.kcut, cfg.dcut, cfg.grade_denom);
      art["frame"] = nullptr;
      return;
    }
    // lattice reduction of a (d, 0) model at the resonant base point
    const int d = cfg.m + cfg.m0;
    frame = unimodular_completion(cfg.generators);
    if (frame->d != d)
      throw std::invalid_argument("config: generators disagree with m + m0");
    PhaseSignature sigd(d, 0);
    FTSeries H = series_from_json(cfg.perturbation, sigd, cfg.kcut, cfg.dcut,
                                  cfg.grade_denom);
    Eigen::VectorXd y0(d);
    if (static_cast<int>(cfg.y0.size()) != d)
      throw std::invalid_argument("config: y0 needs d entries");
    for (int i = 0; i < d; ++i) y0(i) = cfg.y0[i];
    ReducedHamiltonian red = reduce_at_resonance(H, y0, *frame, cfg.eps);
    delta = std::pow(cfg.eps, 0.25);  // quarter-power relabel of the grading
    const int m = cfg.m, m0 = cfg.m0, nv = sig.vars();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nv, nv);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) M(a, b) = red.Gamma(a, b);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m0; ++b) {
        M(a, sig.v_index(b)) = red.Gamma(a, m + b);
        M(sig.v_index(b), a) = red.Gamma(m + b, a);
      }
    for (int a = 0; a < m0; ++a)
      for (int b = 0; b < m0; ++b)
        M(sig.v_index(a), sig.v_index(b)) = red.Gamma(m + a, m + b);
    N = NormalForm(sig, red.series.fourier_cutoff(), red.series.degree_cutoff(), delta,
                   red.omega_star, M);
    P = sub(red.series, nf_series(N));
    art["frame"] = frame_to_json(*frame);
    art["reduction"] = Json{{"omega_star", dvec(red.omega_star)},
                            {"y0", dvec(red.y0)},
                            {"delta", fmt_double(delta)}};
  }

  void stage_check() {
    const KamSchedule sch = schedule();
    Json cond;
    const DiophantineVerdict dio =
        check_diophantine(N.omega, sch.gamma, sch.tau, std::max(1, cfg.kcut));
    cond["diophantine"] = Json{{"ok", dio.ok},
                               {"min_ratio", fmt_double(dio.min_ratio)},
                               {"worst_k", dio.worst_k},
                               {"gamma", fmt_double(sch.gamma)},
                               {"tau", fmt_double(sch.tau)}};
    if (!dio.ok) failures.push_back("diophantine condition fails on omega");

    ConditionReport iso = check_sub_isoenergetic({N.M}, {N.omega}, cfg.m, cfg.m0);
    Json entries = Json::array();
    for (const auto& e : iso.entries) {
      Json w = Json::array();
      for (double x : e.witness) w.push_back(fmt_double(x));
      entries.push_back(Json{{"name", e.name}, {"holds", e.holds}, {"witness", w},
                             {"note", e.note}});
      if (!e.holds && cfg.mode != "none")
        failures.push_back("condition " + e.name + " fails");
    }
    cond["entries"] = entries;
    cond["n"] = iso.n;
    cond["diagnostic"] = iso.diagnostic;
    art["conditions"] = cond;

    // excluded-measure estimate on a box around omega
    Box box;
    box.lo = N.omega.array() - 0.5;
    box.hi = N.omega.array() + 0.5;
    MeasureEstimate est = excluded_measure(box, {1e-2, 1e-3, 1e-4}, sch.tau,
                                           std::max(1, cfg.kcut), 20000,
                                           static_cast<std::uint64_t>(cfg.seed));
    Json meas;
    Json gj = Json::array(), fj = Json::array(), sj = Json::array();
    for (size_t i = 0; i < est.gammas.size(); ++i) {
      gj.push_back(fmt_double(est.gammas[i]));
      fj.push_back(fmt_double(est.fractions[i]));
      sj.push_back(fmt_double(est.stderrs[i]));
    }
    meas["gammas"] = gj;
    meas["fractions"] = fj;
    meas["stderrs"] = sj;
    meas["slope"] = fmt_double(est.slope);
    meas["censored"] = est.censored;
    meas["samples"] = est.samples;
    art["measure"] = meas;
  }

  void stage_kam(int nsteps) {
    KamSchedule sch = schedule();
    StepOptions opts;
    opts.quadratic_shape = cfg.mode != "none";
    opts.grade_cap = (nsteps + 2) * std::max(1, cfg.grade_denom);
    NormalForm cur = N;
    FTSeries curP = P;
    Json rows = Json::array();
    for (int nu = 0; nu < nsteps; ++nu) {
      KamStepResult st = kam_step(cur, curP, sch, mode(), opts);
      const StepReport& r = st.report;
      rows.push_back(Json{{"nu", nu},
                          {"pre_norm", fmt_double(r.pre_norm)},
                          {"post_norm", fmt_double(r.post_norm)},
                          {"tail_norm", fmt_double(r.tail_norm)},
                          {"min_divisor", fmt_double(r.min_divisor)},
                          {"residual_hom", fmt_double(r.residual_hom)},
                          {"k_eff", r.k_eff},
                          {"omega_drift", dvec(r.omega_drift)}});
      steps.push_back(st);
      rbar_history.push_back(st.rbar2);
      cur = st.N_plus;
      curP = st.P_plus;
      sch = st.next;
      // the practical profile tracks the measured norm instead of the formal
      // mu recursion, which leaves (0, 1) after one step and would floor the
      // truncation order to zero
      if (cfg.profile == "practical")
        sch.mu = std::clamp(st.report.post_norm, 1e-300, 0.9);
    }
    for (size_t i = 1; i < steps.size(); ++i)
      if (steps[i].report.post_norm > steps[i - 1].report.post_norm)
        failures.push_back("perturbation norm is not decreasing at step " +
                           std::to_string(i));
    art["steps"] = rows;
    art["final_omega"] = dvec(steps.empty() ? N.omega : steps.back().N_plus.omega);
  }

  void stage_degeneracy() {
    bool any = false;
    for (const auto& r : rbar_history) any = any || !r.empty();
    Json deg;
    if (!any) {
      deg["note"] = "no averaged record to analyze";
      art["degeneracy"] = deg;
      return;
    }
    AveragedPotential pot = assemble_gbar(rbar_history);
    auto cps = find_critical_points(pot.gbar, delta);
    const NormalForm& Nf = steps.empty() ? N : steps.back().N_plus;
    Json rows = Json::array();
    for (auto& cp : cps) {
      const OrbitType t = classify(cp, Nf);
      const char* tname = t == OrbitType::elliptic     ? "elliptic"
                          : t == OrbitType::hyperbolic ? "hyperbolic"
                          : t == OrbitType::mixed      ? "mixed"
                                                       : "degenerate";
      rows.push_back(Json{{"u", dvec(cp.u)},
                          {"grad_residual", fmt_double(cp.grad_residual)},
                          {"morse_index", cp.morse_index},
                          {"type", tname},
                          {"flagged_close", cp.flagged_close}});
    }
    deg["critical_points"] = rows;
    DegeneracyReport rep = delta_grid.empty()
                               ? detect_order(pot, default_delta_grid(), order_cap)
                               : detect_order(pot, delta_grid, order_cap);
    Json ord;
    ord["a"] = rep.a;
    ord["sigma_bar"] = fmt_double(rep.sigma_bar);
    ord["slope"] = fmt_double(rep.slope);
    ord["fit_residual"] = fmt_double(rep.fit_residual);
    ord["clean"] = rep.clean;
    ord["diagnostic"] = rep.diagnostic;
    Json samples = Json::array();
    for (const auto& [d, det] : rep.samples)
      samples.push_back(Json::array({fmt_double(d), fmt_double(det)}));
    ord["samples"] = samples;
    deg["order"] = ord;
    art["degeneracy"] = deg;
    if (!rep.clean && strict)
      failures.push_back("no clean degeneracy order: " + rep.diagnostic);
  }

  void stage_verify() {
    FTSeries H = add(nf_series(N), P);
    std::vector<TransformRecord> recs;
    for (const auto& s : steps) recs.push_back(s.record);
    const double res = torus_residual(H, delta, recs, N.omega, 4, 1e-2);
    Json tor;
    tor["residual"] = fmt_double(res);

    // one verification orbit from the predicted torus
    const int nv = N.sig.vars();
    Eigen::VectorXd z = Eigen::VectorXd::Zero(N.sig.m + nv);
    z(0) = 0.3;
    Eigen::VectorXd z0 = pull_back(recs, delta, z);
    const double wmax = N.omega.cwiseAbs().maxCoeff();
    const double T = std::max(60.0, 20.0 * 2.0 * std::acos(-1.0) / std::max(wmax, 1e-3));
    Trajectory traj = integrate(H, delta, z0, T, 1e-2);
    double drift = 0.0;
    for (double e : traj.energy) drift = std::max(drift, std::abs(e - traj.energy[0]));
    tor["energy_drift"] = fmt_double(drift);
    Json freqs = Json::array();
    for (int a = 0; a < N.sig.m; ++a) {
      FrequencyEstimate est = frequency_analysis(traj, a);
      freqs.push_back(Json{{"angle", a},
                           {"found", est.found},
                           {"freq", fmt_double(est.found ? est.freq : 0.0)},
                           {"omega", fmt_double(N.omega(a))}});
    }
    tor["frequencies"] = freqs;
    art["torus"] = tor;
    if (res > 1.0) failures.push_back("torus residual out of range");
  }

  int run(const std::string& sub) {
    art["version"] = kVersion;
    art["subcommand"] = sub;
    art["config"] = config_to_json(cfg);
    fs::create_directories(out);
    int code = 0;
    try {
      timed("reduce", [&] { stage_reduce(); });
      if (sub == "check" || sub == "full") timed("check", [&] { stage_check(); });
      if (sub == "kam" || sub == "degeneracy" || sub == "verify" || sub == "full")
        timed("kam", [&] { stage_kam(cfg.steps); });
      if (sub == "degeneracy" || sub == "full")
        timed("degeneracy", [&] { stage_degeneracy(); });
      if (sub == "verify" || sub == "full") timed("verify", [&] { stage_verify(); });
    } catch (const std::exception& e) {
      art["error"] = e.what();
      std::cerr << "stage failure: " << e.what() << "\n";
      code = 1;
    }
    Json gates;
    gates["pass"] = failures.empty() && !art.contains("error");
    gates["failures"] = failures;
    art["gates"] = gates;
    save_json(art, (out / "artifact.json").string());
    save_json(timings, (out / "timings.json").string());
    if (code == 0 && strict && !failures.empty()) code = 1;
    if (code != 0)
      for (const auto& f : failures) std::cerr << "gate: " << f << "\n";
    std::cout << (code == 0 ? "ok" : "failed") << ": artifact written to "
              << (out / "artifact.json").string() << "\n";
    return code;
  }
};

// ---- report emission -----------------------------------------------------

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

std::string norm_decay_csv(const Json& art) {
  std::ostringstream os;
  os << "nu,pre_norm,post_norm,tail_norm,min_divisor\n";
  if (art.contains("steps"))
    for (const auto& r : art["steps"])
      os << r["nu"].get<long long>() << "," << r["pre_norm"].get<std::string>() << ","
         << r["post_norm"].get<std::string>() << "," << r["tail_norm"].get<std::string>()
         << "," << r["min_divisor"].get<std::string>() << "\n";
  return os.str();
}

std::string drift_csv(const Json& art) {
  std::ostringstream os;
  os << "nu,drift_inf\n";
  if (art.contains("steps"))
    for (const auto& r : art["steps"]) {
      double worst = 0.0;
      for (const auto& x : r["omega_drift"])
        worst = std::max(worst, std::abs(std::stod(x.get<std::string>())));
      os << r["nu"].get<long long>() << "," << fmt_double(worst) << "\n";
    }
  return os.str();
}

std::string critical_csv(const Json& art) {
  std::ostringstream os;
  os << "u,grad_residual,morse_index,type,flagged_close\n";
  if (art.contains("degeneracy") && art["degeneracy"].contains("critical_points"))
    for (const auto& r : art["degeneracy"]["critical_points"]) {
      std::string u;
      for (const auto& x : r["u"]) {
        if (!u.empty()) u += ";";
        u += x.get<std::string>();
      }
      os << u << "," << r["grad_residual"].get<std::string>() << ","
         << r["morse_index"].get<long long>() << "," << r["type"].get<std::string>()
         << "," << (r["flagged_close"].get<bool>() ? 1 : 0) << "\n";
    }
  return os.str();
}

std::string measure_csv(const Json& art) {
  std::ostringstream os;
  os << "gamma,fraction,stderr\n";
  if (art.contains("measure")) {
    const Json& m = art["measure"];
    for (size_t i = 0; i < m["gammas"].size(); ++i)
      os << m["gammas"][i].get<std::string>() << ","
         << m["fractions"][i].get<std::string>() << ","
         << m["stderrs"][i].get<std::string>() << "\n";
  }
  return os.str();
}

std::string table_from_csv(const std::string& csv) {
  std::ostringstream os;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) os << cell << "\t";
    os << "\n";
  }
  return os.str();
}

std::string plotdata_from_csv(const std::string& csv, int xcol, int ycol) {
  std::ostringstream os;
  std::istringstream is(csv);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (first) {
      os << "# " << (xcol < (int)cells.size() ? cells[xcol] : "x") << " "
         << (ycol < (int)cells.size() ? cells[ycol] : "y") << "\n";
      first = false;
      continue;
    }
    if (xcol < (int)cells.size() && ycol < (int)cells.size())
      os << cells[xcol] << " " << cells[ycol] << "\n";
  }
  return os.str();
}

int run_report(const std::string& artifact_path, const std::string& format,
               const fs::path& out) {
  if (format != "table" && format != "csv" && format != "plotdata") {
    std::cerr << "unknown report format: " << format << "\n";
    return 2;
  }
  Json art = load_json(artifact_path);
  fs::create_directories(out);
  const std::string norms = norm_decay_csv(art);
  const std::string drifts = drift_csv(art);
  const std::string crit = critical_csv(art);
  const std::string meas = measure_csv(art);
  if (format == "csv") {
    write_file(out / "norm_decay.csv", norms);
    write_file(out / "drift.csv", drifts);
    write_file(out / "critical_points.csv", crit);
    write_file(out / "measure.csv", meas);
  } else if (format == "table") {
    std::ostringstream os;
    os << "norm decay\n" << table_from_csv(norms) << "\n";
    os << "frequency drift\n" << table_from_csv(drifts) << "\n";
    os << "critical points\n" << table_from_csv(crit) << "\n";
    os << "excluded measure\n" << table_from_csv(meas);
    write_file(out / "tables.txt", os.str());
  } else {
    write_file(out / "norm_decay.dat", plotdata_from_csv(norms, 0, 2));
    write_file(out / "drift.dat", plotdata_from_csv(drifts, 0, 1));
    write_file(out / "measure.dat", plotdata_from_csv(meas, 0, 1));
  }
  std::cout << "ok: report written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"computational normal-form engine for resonant invariant tori"};
  app.require_subcommand(1);

  std::string config, outdir = "nfkam-out", mode, profile, delta_grid_arg;
  std::string artifact, format = "table";
  int steps = -1, order_cap = 6;
  long long seed = -1;
  bool strict = false;

  std::vector<CLI::App*> runs;
  for (const char* name : {"reduce", "check", "kam", "degeneracy", "verify", "full"}) {
    CLI::App* sc = app.add_subcommand(name);
    sc->add_option("--config", config, "config file or built-in model name")->required();
    sc->add_option("--out", outdir, "output directory");
    sc->add_option("--steps", steps, "number of normal-form steps");
    sc->add_option("--mode", mode, "shift mode: none|plain|partial|isoenergetic");
    sc->add_option("--profile", profile, "schedule profile: paper|practical");
    sc->add_option("--seed", seed, "run seed");
    sc->add_option("--delta-grid", delta_grid_arg, "comma list of delta samples");
    sc->add_option("--order-cap", order_cap, "largest degeneracy order considered");
    sc->add_flag("--strict", strict, "nonzero exit when any gate fails");
    runs.push_back(sc);
  }
  CLI::App* rep = app.add_subcommand("report");
  rep->add_option("--artifact", artifact, "artifact.json of a finished run")->required();
  rep->add_option("--format", format, "table|csv|plotdata");
  rep->add_option("--out", outdir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int c = app.exit(e);
    return c == 0 ? 0 : 2;
  }

  try {
    if (rep->parsed()) return run_report(artifact, format, outdir);
    Runner r;
    try {
      r.cfg = is_builtin(config) ? builtin_config(config)
                                 : config_from_json(load_json(config));
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    if (steps >= 0) r.cfg.steps = steps;
    if (!mode.empty()) r.cfg.mode = mode;
    if (!profile.empty()) r.cfg.profile = profile;
    if (seed >= 0) r.cfg.seed = seed;
    if (r.cfg.profile != "paper" && r.cfg.profile != "practical") {
      std::cerr << "profile must be paper or practical\n";
      return 2;
    }
    if (r.cfg.mode != "none" && r.cfg.mode != "plain" && r.cfg.mode != "partial" &&
        r.cfg.mode != "isoenergetic") {
      std::cerr << "unknown mode " << r.cfg.mode << "\n";
      return 2;
    }
    r.out = outdir;
    r.strict = strict;
    r.order_cap = order_cap;
    if (!delta_grid_arg.empty()) {
      std::istringstream is(delta_grid_arg);
      std::string tok;
      while (std::getline(is, tok, ',')) r.delta_grid.push_back(std::stod(tok));
    }
    std::string sub;
    for (CLI::App* sc : runs)
      if (sc->parsed()) sub = sc->get_name();
    return r.run(sub);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
