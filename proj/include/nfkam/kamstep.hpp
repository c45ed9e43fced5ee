#ifndef NFKAM_KAMSTEP_HPP
#define NFKAM_KAMSTEP_HPP

#include <optional>

#include "nfkam/normalform.hpp"

namespace nfkam {

// `none` skips the re-centering translation entirely: the formal degenerate
// iteration lets frequencies drift and only pushes the perturbation to higher
// grade.
enum class ShiftMode { plain, partial, isoenergetic, none };

struct TransformRecord {
  FTSeries F;           // generating function; mean-free in x
  Eigen::VectorXd w0;   // translation in (y, z)
  ShiftMode mode = ShiftMode::plain;
  std::vector<int> preserved;  // y-indices whose frequency is restored
  Eigen::MatrixXd T;           // permutation (partial mode)
  Eigen::MatrixXd T1;          // elimination record (partial mode)
  double t = 0.0;              // frequency ratio - 1 (isoenergetic mode)
};

struct StepReport {
  double pre_norm = 0.0;
  double post_norm = 0.0;
  double tail_norm = 0.0;
  double min_divisor = 0.0;
  double residual_hom = 0.0;    // homological defect, weighted norm
  double shift_residual = 0.0;  // Newton residual of the translation
  double energy_residual = 0.0;
  double dropped_linear = 0.0;  // z-linear leftovers not representable in N
  Eigen::VectorXd omega_drift;  // omega_+ - omega
  HConditionReport checks;
  int k_eff = 0;
  int lie_order_used = 0;
};

struct StepOptions {
  int lie_order = 6;
  bool quadratic_shape = true;
  // formal runs can cap the carried eps-grade to keep the algebra small
  int grade_cap = std::numeric_limits<int>::max();
  std::optional<double> e_target;  // isoenergetic energy pin; defaults to N.e
  const FTSeries* h0 = nullptr;    // reference h for the closeness condition
};

struct KamStepResult {
  NormalForm N_plus;
  FTSeries P_plus;
  // degree-<=2-in-(y,v) part of the newly absorbed average, kept for the
  // degeneracy ledger
  FTSeries rbar2;
  TransformRecord record;
  StepReport report;
  KamSchedule next;
};

namespace detail {

// Runs the Lie series past min_order until the increments die out.
inline FTSeries lie_adaptive(const FTSeries& H, const FTSeries& F, int min_order,
                             int* used, int grade_cap = std::numeric_limits<int>::max()) {
  FTSeries sum = H;
  FTSeries term = H;
  double fact = 1.0;
  int j = 0;
  const int cap = std::max(3 * min_order, min_order + 4);
  const double base = max_abs_coeff(H);
  while (j < cap) {
    ++j;
    term = poisson_bracket(term, F, grade_cap);
    if (term.empty()) break;
    fact *= j;
    FTSeries contrib = scale(term, 1.0 / fact);
    sum = add(sum, contrib);
    if (j >= min_order && max_abs_coeff(contrib) <= 1e-15 * (1.0 + base)) break;
  }
  if (used) *used = j;
  return sum;
}

struct PivotData {
  std::vector<int> preserved;
  std::vector<int> kept;  // pivot y's then z's, in solve order
  int rank_m = 0;
  int n = 0;
  Eigen::MatrixXd T, T1;
};

inline PivotData pivot_selection(const Eigen::MatrixXd& M, int m, int m0) {
  const int nv = m + 2 * m0;
  PivotData out;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const double smax = svd.singularValues()(0);
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > 1e-8 * smax) ++out.rank_m;
  out.n = out.rank_m - 2 * m0;
  if (out.n < 0) throw std::runtime_error("pivot_selection: rank M below 2 m0");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M.topRows(m).transpose());
  for (int i = 0; i < out.n; ++i)
    out.preserved.push_back(qr.colsPermutation().indices()(i));
  std::sort(out.preserved.begin(), out.preserved.end());
  out.kept = out.preserved;
  for (int i = m; i < nv; ++i) out.kept.push_back(i);
  std::vector<int> perm = out.kept;
  for (int i = 0; i < m; ++i)
    if (std::find(out.preserved.begin(), out.preserved.end(), i) == out.preserved.end())
      perm.push_back(i);
  out.T = Eigen::MatrixXd::Zero(nv, nv);
  for (int c = 0; c < nv; ++c) out.T(perm[c], c) = 1.0;
  const int nk = out.n + 2 * m0;
  Eigen::MatrixXd C = out.T.transpose() * M * out.T;
  const Eigen::MatrixXd C1 = C.topRows(nk);
  const Eigen::MatrixXd C2 = C.bottomRows(nv - nk);
  Eigen::MatrixXd D1 = Eigen::MatrixXd::Zero(nv - nk, nk);
  if (nv > nk)
    D1 = -(C1 * C1.transpose()).ldlt().solve(C1 * C2.transpose()).transpose();
  out.T1 = Eigen::MatrixXd::Identity(nv, nv);
  out.T1.block(nk, 0, nv - nk, nk) = D1;
  return out;
}

// degree counted over the y and v variables only
inline int yv_degree(const PhaseSignature& sig, const std::vector<int>& j) {
  int d = 0;
  for (int i = 0; i < sig.m; ++i) d += j[sig.y_index(i)];
  for (int i = 0; i < sig.m0; ++i) d += j[sig.v_index(i)];
  return d;
}

}  // namespace detail

// One full iteration: truncate, solve the homological equation, transform,
// re-center the torus, and split the result back into N_+ and P_+. The new
// average is absorbed into (e, omega, M, h) exactly at eps = delta; the only
// discarded content is the z-linear Newton leftover, reported in the step
// record.
inline KamStepResult kam_step(const NormalForm& N, const FTSeries& P,
                              const KamSchedule& sched, ShiftMode mode,
                              const StepOptions& opts = {}) {
  require_same_signature(nf_series(N), P);
  const PhaseSignature sig = N.sig;
  const int m = sig.m, m0 = sig.m0, nv = sig.vars();
  KamStepResult out;
  out.next = schedule_next(sched);
  const DomainParams dom(std::min(1.0, sched.r), std::min(1.0, sched.s));
  out.report.pre_norm = weighted_norm(P, dom, N.delta);

  TruncationResult trunc = build_truncation(P, sched, N.delta, opts.quadratic_shape);
  out.report.tail_norm = trunc.tail_norm;
  out.report.k_eff = trunc.k_eff;
  out.report.checks = trunc.checks;

  HomologicalSolution sol = solve_homological(N, trunc.R, sched);
  out.report.min_divisor = sol.min_divisor;
  out.report.residual_hom = sol.residual;
  out.record.F = sol.F;
  out.record.mode = mode;

  FTSeries Hfull = add(nf_series(N), P);
  FTSeries Hprime = detail::lie_adaptive(Hfull, sol.F, opts.lie_order,
                                         &out.report.lie_order_used, opts.grade_cap);
  FTSeries A = average(Hprime);
  FTSeries Pnew = sub(Hprime, A);

  FTSeries absorbed = sub(A, nf_series(N));
  out.rbar2 = FTSeries(sig, P.fourier_cutoff(), P.degree_cutoff(), P.grade_denom());
  for (const auto& [key, p] : absorbed.terms())
    if (detail::yv_degree(sig, key.j) <= 2) out.rbar2.add_term(key.k, key.j, key.egrade, p.c, p.s);

  // exact-series Newton for the re-centering translation (skipped in the
  // formal mode, which needs no jet of A)
  std::optional<PolyJet> jet;
  if (mode != ShiftMode::none) jet.emplace(A, N.delta);
  Eigen::VectorXd omega_bar = Eigen::VectorXd::Zero(nv);
  omega_bar.head(m) = N.omega;
  Eigen::VectorXd w0 = Eigen::VectorXd::Zero(nv);
  double tpar = 0.0;

  if (mode == ShiftMode::none) {
    // keep w0 = 0
  } else if (mode == ShiftMode::plain) {
    auto G = [&](const Eigen::VectorXd& w) {
      return Eigen::VectorXd(jet->grad(w) - omega_bar);
    };
    auto J = [&](const Eigen::VectorXd& w) { return jet->hess(w); };
    w0 = detail::newton_solve(G, J, w0, 1e-13, 60, &out.report.shift_residual, nullptr,
                              "kam_step: plain shift");
    out.record.preserved.resize(m);
    for (int i = 0; i < m; ++i) out.record.preserved[i] = i;
  } else if (mode == ShiftMode::partial) {
    detail::PivotData piv = detail::pivot_selection(N.M, m, m0);
    out.record.preserved = piv.preserved;
    out.record.T = piv.T;
    out.record.T1 = piv.T1;
    const int nk = static_cast<int>(piv.kept.size());
    auto embed = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(nv);
      for (int i = 0; i < nk; ++i) w(piv.kept[i]) = x(i);
      return w;
    };
    auto G = [&](const Eigen::VectorXd& x) {
      const Eigen::VectorXd full = jet->grad(embed(x)) - omega_bar;
      Eigen::VectorXd g(nk);
      for (int i = 0; i < nk; ++i) g(i) = full(piv.kept[i]);
      return g;
    };
    auto J = [&](const Eigen::VectorXd& x) {
      const Eigen::MatrixXd full = jet->hess(embed(x));
      Eigen::MatrixXd j(nk, nk);
      for (int i = 0; i < nk; ++i)
        for (int c = 0; c < nk; ++c) j(i, c) = full(piv.kept[i], piv.kept[c]);
      return j;
    };
    const Eigen::VectorXd x =
        detail::newton_solve(G, J, Eigen::VectorXd::Zero(nk), 1e-13, 60,
                             &out.report.shift_residual, nullptr, "kam_step: partial shift");
    w0 = embed(x);
  } else {
    const double e_target = opts.e_target.value_or(N.e);
    auto G = [&](const Eigen::VectorXd& xt) {
      const Eigen::VectorXd w = xt.head(nv);
      Eigen::VectorXd g(nv + 1);
      g.head(nv) = jet->grad(w) - (1.0 + xt(nv)) * omega_bar;
      g(nv) = jet->value(w) - e_target;
      return g;
    };
    auto J = [&](const Eigen::VectorXd& xt) {
      const Eigen::VectorXd w = xt.head(nv);
      Eigen::MatrixXd j(nv + 1, nv + 1);
      j.topLeftCorner(nv, nv) = jet->hess(w);
      j.topRightCorner(nv, 1) = -omega_bar;
      j.bottomLeftCorner(1, nv) = jet->grad(w).transpose();
      j(nv, nv) = 0.0;
      return j;
    };
    const Eigen::VectorXd xt =
        detail::newton_solve(G, J, Eigen::VectorXd::Zero(nv + 1), 1e-12, 80,
                             &out.report.shift_residual, nullptr,
                             "kam_step: isoenergetic shift");
    w0 = xt.head(nv);
    tpar = xt(nv);
    out.record.t = tpar;
    out.report.energy_residual = std::abs(jet->value(w0) - e_target);
    out.record.preserved.resize(m);
    for (int i = 0; i < m; ++i) out.record.preserved[i] = i;
  }
  out.record.w0 = w0;

  const std::vector<double> w0v(w0.data(), w0.data() + nv);
  FTSeries Ashift = translate_poly(A, w0v);
  out.P_plus = translate_poly(Pnew, w0v);

  // split the re-centered average into the normal-form slots
  ShiftData sd = extract_shift_data(Ashift, N.delta);
  out.report.dropped_linear = sd.p001.lpNorm<Eigen::Infinity>();
  Eigen::MatrixXd Mplus = (2.0 / N.delta) * sd.pquad;
  Mplus = 0.5 * (Mplus + Mplus.transpose());
  out.N_plus = NormalForm(sig, P.fourier_cutoff(), P.degree_cutoff(), N.delta,
                          sd.p010, Mplus);
  out.N_plus.e = sd.p000;
  FTSeries hplus(sig, P.fourier_cutoff(), P.degree_cutoff(), P.grade_denom());
  for (const auto& [key, p] : Ashift.terms())
    if (abs_sum(key.j) > 2) hplus.add_term(key.k, key.j, key.egrade, p.c, p.s);
  out.N_plus.h = hplus;

  out.report.omega_drift = sd.p010 - N.omega;
  const DomainParams dom_next(std::min(1.0, out.next.r), std::min(1.0, out.next.s));
  out.report.post_norm = weighted_norm(out.P_plus, dom_next, N.delta);
  if (opts.h0) {
    const double hdiff = weighted_norm(sub(out.N_plus.h, *opts.h0), dom_next, N.delta);
    out.report.checks.h3 = hdiff <= std::sqrt(sched.mu0);
  }
  if (sched.strict && !out.report.checks.all())
    throw std::runtime_error("kam_step: smallness conditions violated in strict mode");
  return out;
}

}  // namespace nfkam

#endif
