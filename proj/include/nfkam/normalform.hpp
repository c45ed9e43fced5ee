#ifndef NFKAM_NORMALFORM_HPP
#define NFKAM_NORMALFORM_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nfkam/schedule.hpp"
#include "nfkam/series.hpp"

namespace nfkam {

// Normal form N = e + <omega, y> + (delta/2)<(y,z), M (y,z)> + h, with h the
// x-independent remainder of (y,z)-degree >= 3. The series is the ground
// truth; e and M fold their formal grades at eps = delta, which is exact for
// every evaluation the run performs (the run never changes delta).
struct NormalForm {
  PhaseSignature sig;
  int kcut = 8;
  int dcut = 8;
  double delta = 1.0;
  double e = 0.0;
  Eigen::VectorXd omega;  // m
  Eigen::MatrixXd M;      // (m + 2 m0)^2, symmetric
  FTSeries h;             // x-independent, degree >= 3, graded

  NormalForm() = default;
  NormalForm(PhaseSignature s, int kc, int dc, double d, Eigen::VectorXd om,
             Eigen::MatrixXd m)
      : sig(s), kcut(kc), dcut(dc), delta(d), omega(std::move(om)), M(std::move(m)),
        h(s, kc, dc) {
    if (omega.size() != sig.m || M.rows() != sig.vars() || M.cols() != sig.vars())
      throw std::invalid_argument("NormalForm: dimension mismatch");
    if ((M - M.transpose()).norm() > 1e-12 * (1.0 + M.norm()))
      throw std::invalid_argument("NormalForm: M must be symmetric");
  }
};

// (delta/2)<w, Mw> + h as a graded series (the quadratic at grade 1).
inline FTSeries hhat_series(const NormalForm& N) {
  FTSeries out = N.h;
  const int nv = N.sig.vars();
  FTSeries quad(N.sig, N.kcut, N.dcut);
  std::vector<int> k0(N.sig.m, 0);
  for (int a = 0; a < nv; ++a)
    for (int b = a; b < nv; ++b) {
      const double c = a == b ? 0.5 * N.M(a, a) : N.M(a, b);
      if (c == 0.0) continue;
      std::vector<int> j(nv, 0);
      ++j[a];
      ++j[b];
      quad.add_term(k0, j, 1, c, 0.0);
    }
  return add(out, quad);
}

inline FTSeries nf_series(const NormalForm& N) {
  FTSeries out = hhat_series(N);
  std::vector<int> k0(N.sig.m, 0);
  for (int i = 0; i < N.sig.m; ++i) {
    std::vector<int> j(N.sig.vars(), 0);
    j[N.sig.y_index(i)] = 1;
    out.add_term(k0, j, 0, N.omega(i), 0.0);
  }
  if (N.e != 0.0) out.add_term(k0, std::vector<int>(N.sig.vars(), 0), 0, N.e, 0.0);
  return out;
}

// ---- numeric jets of x-independent series -------------------------------

// Value / gradient / Hessian in the polynomial variables, grades at eps.
class PolyJet {
 public:
  PolyJet(FTSeries A, double eps) : A_(std::move(A)), eps_(eps) {
    const int nv = A_.sig().vars();
    g_.reserve(nv);
    for (int i = 0; i < nv; ++i) g_.push_back(partial_poly(A_, i));
    hh_.resize(nv);
    for (int i = 0; i < nv; ++i)
      for (int j = 0; j < nv; ++j) hh_[i].push_back(partial_poly(g_[i], j));
    x0_.assign(A_.sig().m, 0.0);
  }

  double value(const Eigen::VectorXd& w) const { return eval(A_, w); }
  Eigen::VectorXd grad(const Eigen::VectorXd& w) const {
    Eigen::VectorXd out(g_.size());
    for (size_t i = 0; i < g_.size(); ++i) out(i) = eval(g_[i], w);
    return out;
  }
  Eigen::MatrixXd hess(const Eigen::VectorXd& w) const {
    const int nv = static_cast<int>(g_.size());
    Eigen::MatrixXd out(nv, nv);
    for (int i = 0; i < nv; ++i)
      for (int j = 0; j < nv; ++j) out(i, j) = eval(hh_[i][j], w);
    return out;
  }

 private:
  double eval(const FTSeries& f, const Eigen::VectorXd& w) const {
    std::vector<double> wv(w.data(), w.data() + w.size());
    return evaluate(f, x0_, wv, eps_);
  }
  FTSeries A_;
  double eps_;
  std::vector<FTSeries> g_;
  std::vector<std::vector<FTSeries>> hh_;
  std::vector<double> x0_;
};

// ---- truncation ---------------------------------------------------------

struct TruncationResult {
  FTSeries R;
  FTSeries tail;
  HConditionReport checks;
  double tail_norm = 0.0;
  int k_eff = 0;
};

inline TruncationResult build_truncation(const FTSeries& P, const KamSchedule& sched,
                                         double delta, bool quadratic_shape = true,
                                         int k_override = -1) {
  if (!sched.valid()) throw std::invalid_argument("build_truncation: invalid schedule");
  TruncationResult out;
  const double kp = k_override >= 0 ? k_override : sched.k_plus();
  out.k_eff = kp >= P.fourier_cutoff() ? P.fourier_cutoff()
                                       : static_cast<int>(std::floor(kp));
  auto split = truncate(P, out.k_eff, P.degree_cutoff(), quadratic_shape);
  out.R = std::move(split.head);
  out.tail = std::move(split.tail);
  out.checks = check_h_conditions(sched, P.sig().m, out.k_eff);
  const KamSchedule nxt = schedule_next(sched);
  const double ralpha = std::min(1.0, nxt.r + 7.0 / 8.0 * (sched.r - nxt.r));
  const double salpha = std::min(1.0, sched.alpha() * sched.s);
  out.tail_norm = weighted_norm(out.tail, DomainParams(ralpha, salpha), delta);
  return out;
}

// ---- homological equation -----------------------------------------------

class SmallDivisorError : public std::runtime_error {
 public:
  SmallDivisorError(std::vector<int> kk, double dd)
      : std::runtime_error(message(kk, dd)), k(std::move(kk)), divisor(dd) {}
  std::vector<int> k;
  double divisor;

 private:
  static std::string message(const std::vector<int>& k, double d) {
    std::ostringstream os;
    os << "small divisor |<k, omega>| = " << d << " at k = (";
    for (size_t i = 0; i < k.size(); ++i) os << (i ? "," : "") << k[i];
    os << "): parameter outside the Diophantine set";
    return os.str();
  }
};

struct HomologicalSolution {
  FTSeries F;
  double min_divisor = 0.0;
  double residual = 0.0;  // weighted norm of the defect at the shared truncation
};

namespace detail {

// Solves <omega, dF/dx> = G per Fourier mode; G must be mean-free.
inline FTSeries divisor_solve(const FTSeries& G, const Eigen::VectorXd& omega) {
  FTSeries F(G.sig(), G.fourier_cutoff(), G.degree_cutoff(), G.grade_denom());
  for (const auto& [key, p] : G.terms()) {
    if (FTSeries::is_zero(key.k)) continue;
    double d = 0.0;
    for (int i = 0; i < G.sig().m; ++i) d += key.k[i] * omega(i);
    F.add_term(key.k, key.j, key.egrade, -p.s / d, p.c / d);
  }
  return F;
}

// <partial_y hhat, dF/dx>; the hhat factors are x-independent, so every
// product stays on F's Fourier mode.
inline FTSeries nonlinear_divisor_term(const std::vector<FTSeries>& dyh, const FTSeries& F) {
  FTSeries out(F.sig(), F.fourier_cutoff(), F.degree_cutoff(), F.grade_denom());
  for (int i = 0; i < F.sig().m; ++i)
    if (!dyh[i].empty()) out = add(out, mul(dyh[i], partial_x(F, i)));
  return out;
}

}  // namespace detail

// Solves (706): {N,F} + R - [R] - R' = 0 with R' = dz hhat J dz F, which for
// x-independent hhat collapses to <omega + dy hhat, dF/dx> = R - [R]. The
// divisor <k, omega + Delta> is handled by degree-graded back-substitution:
// each pass multiplies by a factor of polynomial degree >= 1, so the fixed
// point is reached exactly within the degree cutoff.
inline HomologicalSolution solve_homological(const NormalForm& N, const FTSeries& R,
                                             const KamSchedule& sched) {
  HomologicalSolution sol;
  FTSeries Rm = sub(R, average(R));
  sol.min_divisor = std::numeric_limits<double>::infinity();
  for (const auto& [key, p] : Rm.terms()) {
    if (FTSeries::is_zero(key.k)) continue;
    double d = 0.0;
    for (int i = 0; i < R.sig().m; ++i) d += key.k[i] * N.omega(i);
    const double ad = std::abs(d);
    if (ad <= sched.gamma / std::pow(abs_sum(key.k), sched.tau))
      throw SmallDivisorError(key.k, ad);
    sol.min_divisor = std::min(sol.min_divisor, ad);
  }
  if (Rm.empty()) {
    sol.F = FTSeries(R.sig(), R.fourier_cutoff(), R.degree_cutoff(), R.grade_denom());
    sol.min_divisor = 0.0;
    return sol;
  }
  FTSeries hhat = hhat_series(N);
  std::vector<FTSeries> dyh;
  dyh.reserve(N.sig.m);
  for (int i = 0; i < N.sig.m; ++i)
    dyh.push_back(with_cutoffs(partial_y(hhat, i), R.fourier_cutoff(), R.degree_cutoff()));

  FTSeries F = detail::divisor_solve(Rm, N.omega);
  for (int pass = 0; pass <= R.degree_cutoff() + 1; ++pass) {
    FTSeries correction = detail::nonlinear_divisor_term(dyh, F);
    FTSeries Fnew = detail::divisor_solve(sub(Rm, correction), N.omega);
    if (weighted_norm(sub(Fnew, F), DomainParams(0.0, 1.0)) == 0.0) {
      F = std::move(Fnew);
      break;
    }
    F = std::move(Fnew);
  }
  // defect of the solved operator identity at the shared truncation
  FTSeries LF(F.sig(), F.fourier_cutoff(), F.degree_cutoff(), F.grade_denom());
  for (int i = 0; i < F.sig().m; ++i) {
    FTSeries dxF = partial_x(F, i);
    LF = add(LF, scale(dxF, N.omega(i)));
  }
  LF = add(LF, detail::nonlinear_divisor_term(dyh, F));
  sol.residual = weighted_norm(sub(LF, Rm), DomainParams(std::min(1.0, sched.r), sched.s),
                               N.delta);
  sol.F = std::move(F);
  return sol;
}

// ---- Lie transform ------------------------------------------------------

// sum_{j<=order} ad_F^j(H)/j!; the time-1 flow of F applied to H.
inline FTSeries lie_transform(const FTSeries& H, const FTSeries& F, int order) {
  if (order < 0) throw std::invalid_argument("lie_transform: negative order");
  FTSeries sum = H;
  FTSeries term = H;
  double fact = 1.0;
  for (int j = 1; j <= order; ++j) {
    term = poisson_bracket(term, F);
    if (term.empty()) break;
    fact *= j;
    sum = add(sum, scale(term, 1.0 / fact));
  }
  return sum;
}

// ---- frequency shifts ---------------------------------------------------

struct ShiftResult {
  Eigen::VectorXd w0;  // (y0, z0)
  double residual = 0.0;
  int iterations = 0;
};

namespace detail {

inline Eigen::VectorXd newton_solve(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& G,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& J,
    Eigen::VectorXd w, double tol, int max_iter, double* out_res, int* out_iter,
    const char* what) {
  double res = G(w).lpNorm<Eigen::Infinity>();
  int it = 0;
  for (; it < max_iter && res > tol; ++it) {
    Eigen::MatrixXd jac = J(w);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) {
      std::ostringstream os;
      os << what << ": singular Jacobian at iteration " << it;
      throw std::runtime_error(os.str());
    }
    w -= lu.solve(G(w));
    res = G(w).lpNorm<Eigen::Infinity>();
  }
  if (res > tol) {
    std::ostringstream os;
    os << what << ": Newton failed to converge, last residual " << res;
    throw std::runtime_error(os.str());
  }
  if (out_res) *out_res = res;
  if (out_iter) *out_iter = it;
  return w;
}

}  // namespace detail

// Translation data solving delta M w + delta grad h(w) = -(p010, p001).
// (The h gradient is evaluated with the series' own grades at eps = delta,
// i.e. it already carries its delta powers.)
inline ShiftResult frequency_shift_full(const NormalForm& N, const Eigen::VectorXd& p010,
                                        const Eigen::VectorXd& p001) {
  const int nv = N.sig.vars();
  if (p010.size() != N.sig.m || p001.size() != 2 * N.sig.m0)
    throw std::invalid_argument("frequency_shift_full: data dimensions");
  Eigen::VectorXd p(nv);
  p << p010, p001;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(N.M);
  if (!lu.isInvertible())
    throw std::runtime_error(
        "frequency_shift_full: M is singular; use the partial-rank variant");
  PolyJet hj(N.h, N.delta);
  ShiftResult out;
  auto G = [&](const Eigen::VectorXd& w) {
    return Eigen::VectorXd(N.delta * N.M * w + hj.grad(w) + p);
  };
  auto J = [&](const Eigen::VectorXd& w) {
    return Eigen::MatrixXd(N.delta * N.M + hj.hess(w));
  };
  out.w0 = detail::newton_solve(G, J, Eigen::VectorXd::Zero(nv), 1e-13, 50, &out.residual,
                                &out.iterations, "frequency_shift_full");
  return out;
}

struct PartialShiftResult {
  Eigen::VectorXd w0;
  std::vector<int> preserved;  // y-indices restored exactly
  Eigen::MatrixXd T;           // coordinate reordering (permutation)
  Eigen::MatrixXd T1;          // [[I,0],[D1,I]] elimination record
  Eigen::VectorXd drift;       // m components; zero on preserved indices
  double residual = 0.0;
  int rank_m = 0;
  int n = 0;
};

// Property 2.8 pivot selection: rows of (M11 M12) by column-pivoted QR
// magnitude order, ties by lowest row index; the (m - n) non-pivot action
// components of the shift are set to zero and their frequencies drift.
inline PartialShiftResult frequency_shift_partial(const NormalForm& N,
                                                  const Eigen::VectorXd& p010,
                                                  const Eigen::VectorXd& p001) {
  const int m = N.sig.m, m0 = N.sig.m0, nv = N.sig.vars();
  Eigen::VectorXd p(nv);
  p << p010, p001;
  PartialShiftResult out;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(N.M);
  const double smax = svd.singularValues()(0);
  out.rank_m = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > 1e-8 * smax) ++out.rank_m;
  const Eigen::MatrixXd Mzz = N.M.bottomRows(2 * m0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svdz(Mzz);
  int rz = 0;
  for (int i = 0; i < svdz.singularValues().size(); ++i)
    if (svdz.singularValues()(i) > 1e-8 * svdz.singularValues()(0)) ++rz;
  if (rz != 2 * m0)
    throw std::runtime_error(
        "frequency_shift_partial: rank (M21 M22) deficient (assumption A2 fails)");
  out.n = out.rank_m - 2 * m0;
  if (out.n < 0)
    throw std::runtime_error("frequency_shift_partial: rank M below 2 m0");

  if (out.n == m) {
    ShiftResult full = frequency_shift_full(N, p010, p001);
    out.w0 = full.w0;
    out.residual = full.residual;
    out.preserved.resize(m);
    for (int i = 0; i < m; ++i) out.preserved[i] = i;
    out.T = Eigen::MatrixXd::Identity(nv, nv);
    out.T1 = Eigen::MatrixXd::Identity(nv, nv);
    out.drift = Eigen::VectorXd::Zero(m);
    return out;
  }

  const Eigen::MatrixXd A1 = N.M.topRows(m);  // (M11 M12)
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A1.transpose());
  std::vector<int> order(m);
  for (int i = 0; i < m; ++i) order[i] = qr.colsPermutation().indices()(i);
  out.preserved.assign(order.begin(), order.begin() + out.n);
  std::sort(out.preserved.begin(), out.preserved.end());

  // kept coordinate order: pivot y's, then z, then the rest
  std::vector<int> kept;
  for (int i : out.preserved) kept.push_back(i);
  for (int i = m; i < nv; ++i) kept.push_back(i);
  std::vector<int> rest;
  for (int i = 0; i < m; ++i)
    if (std::find(out.preserved.begin(), out.preserved.end(), i) == out.preserved.end())
      rest.push_back(i);
  std::vector<int> perm = kept;
  perm.insert(perm.end(), rest.begin(), rest.end());
  out.T = Eigen::MatrixXd::Zero(nv, nv);
  for (int c = 0; c < nv; ++c) out.T(perm[c], c) = 1.0;

  const int nk = out.n + 2 * m0;
  PolyJet hj(N.h, N.delta);
  auto embed = [&](const Eigen::VectorXd& x1) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(nv);
    for (int i = 0; i < nk; ++i) w(kept[i]) = x1(i);
    return w;
  };
  auto G = [&](const Eigen::VectorXd& x1) {
    const Eigen::VectorXd w = embed(x1);
    const Eigen::VectorXd full = N.delta * N.M * w + hj.grad(w) + p;
    Eigen::VectorXd g(nk);
    for (int i = 0; i < nk; ++i) g(i) = full(kept[i]);
    return g;
  };
  auto J = [&](const Eigen::VectorXd& x1) {
    const Eigen::VectorXd w = embed(x1);
    const Eigen::MatrixXd full = N.delta * N.M + hj.hess(w);
    Eigen::MatrixXd j(nk, nk);
    for (int i = 0; i < nk; ++i)
      for (int c = 0; c < nk; ++c) j(i, c) = full(kept[i], kept[c]);
    return j;
  };
  double res = 0.0;
  int iters = 0;
  const Eigen::VectorXd x1 =
      detail::newton_solve(G, J, Eigen::VectorXd::Zero(nk), 1e-13, 50, &res, &iters,
                           "frequency_shift_partial");
  out.w0 = embed(x1);
  out.residual = res;

  const Eigen::VectorXd full = N.delta * N.M * out.w0 + hj.grad(out.w0) + p;
  out.drift = full.head(m);
  for (int i : out.preserved) out.drift(i) = 0.0;  // restored to Newton tolerance

  // elimination record: D1 = -C2 pinv(C1) for the permuted matrix
  Eigen::MatrixXd C = out.T.transpose() * N.M * out.T;
  const Eigen::MatrixXd C1 = C.topRows(nk);
  const Eigen::MatrixXd C2 = C.bottomRows(nv - nk);
  const Eigen::MatrixXd D1 =
      -(C1 * C1.transpose()).ldlt().solve(C1 * C2.transpose()).transpose();
  out.T1 = Eigen::MatrixXd::Identity(nv, nv);
  out.T1.block(nk, 0, nv - nk, nk) = D1;
  return out;
}

struct ShiftData {
  double p000 = 0.0;
  Eigen::VectorXd p010;
  Eigen::VectorXd p001;
  Eigen::MatrixXd pquad;  // symmetric matrix of the degree-2 form
};

// Numeric k = 0 Taylor data of a series at eps.
inline ShiftData extract_shift_data(const FTSeries& A, double eps) {
  const PhaseSignature& sig = A.sig();
  const int nv = sig.vars(), m = sig.m;
  ShiftData out;
  out.p010 = Eigen::VectorXd::Zero(m);
  out.p001 = Eigen::VectorXd::Zero(2 * sig.m0);
  out.pquad = Eigen::MatrixXd::Zero(nv, nv);
  for (const auto& [key, p] : A.terms()) {
    if (!FTSeries::is_zero(key.k)) continue;
    const int deg = abs_sum(key.j);
    if (deg > 2) continue;
    const double c = p.c * std::pow(eps, key.egrade / static_cast<double>(A.grade_denom()));
    if (deg == 0) {
      out.p000 += c;
    } else if (deg == 1) {
      for (int i = 0; i < nv; ++i)
        if (key.j[i] == 1) (i < m ? out.p010(i) : out.p001(i - m)) += c;
    } else {
      int a = -1, b = -1;
      for (int i = 0; i < nv; ++i) {
        if (key.j[i] == 2) a = b = i;
        if (key.j[i] == 1) (a < 0 ? a : b) = i;
      }
      if (a == b) {
        out.pquad(a, a) += c;
      } else {
        out.pquad(a, b) += 0.5 * c;
        out.pquad(b, a) += 0.5 * c;
      }
    }
  }
  return out;
}

struct IsoShiftResult {
  Eigen::VectorXd w0;
  double t = 0.0;
  double residual = 0.0;
  double energy_residual = 0.0;
  std::vector<int> preserved;  // all y-indices in the full-rank variant
};

// Bordered solve of (935)-(936): the shift equation acquires -t (omega, 0)
// and the energy of the shifted torus is pinned to e_target; the degenerate
// variant (937) additionally zeroes the non-pivot action components.
inline IsoShiftResult frequency_shift_isoenergetic(const NormalForm& N,
                                                   const ShiftData& data,
                                                   bool degenerate = false,
                                                   double e_target = 0.0) {
  const int m = N.sig.m, m0 = N.sig.m0, nv = N.sig.vars();
  Eigen::VectorXd p(nv);
  p << data.p010, data.p001;
  Eigen::VectorXd omega_bar = Eigen::VectorXd::Zero(nv);
  omega_bar.head(m) = N.omega;
  PolyJet hj(N.h, N.delta);

  auto energy = [&](const Eigen::VectorXd& w) {
    const double quad = 0.5 * N.delta * w.dot(N.M * w);
    return N.omega.dot(w.head(m)) + quad + data.p000 + p.dot(w) + w.dot(data.pquad * w) +
           hj.value(w) - e_target;
  };
  auto denergy = [&](const Eigen::VectorXd& w) {
    Eigen::VectorXd g = N.delta * N.M * w + p + 2.0 * data.pquad * w + hj.grad(w);
    g.head(m) += N.omega;
    return g;
  };

  std::vector<int> kept(nv);
  for (int i = 0; i < nv; ++i) kept[i] = i;
  IsoShiftResult out;
  for (int i = 0; i < m; ++i) out.preserved.push_back(i);
  if (degenerate) {
    PartialShiftResult probe = frequency_shift_partial(N, data.p010, data.p001);
    kept.clear();
    for (int i : probe.preserved) kept.push_back(i);
    for (int i = m; i < nv; ++i) kept.push_back(i);
    out.preserved = probe.preserved;
  }
  const int nk = static_cast<int>(kept.size());

  // bordered nondegeneracy at the origin
  {
    Eigen::MatrixXd B(nk + 1, nk + 1);
    for (int i = 0; i < nk; ++i)
      for (int j = 0; j < nk; ++j) B(i, j) = N.delta * N.M(kept[i], kept[j]);
    for (int i = 0; i < nk; ++i) {
      B(i, nk) = -omega_bar(kept[i]);
      B(nk, i) = p(kept[i]) + omega_bar(kept[i]);
    }
    B(nk, nk) = 0.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    if (!lu.isInvertible())
      throw std::runtime_error(
          "frequency_shift_isoenergetic: bordered matrix numerically singular "
          "(assumption A3 fails)");
  }

  auto embed = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(nv);
    for (int i = 0; i < nk; ++i) w(kept[i]) = x(i);
    return w;
  };
  auto G = [&](const Eigen::VectorXd& xt) {
    const Eigen::VectorXd w = embed(xt.head(nk));
    const double t = xt(nk);
    const Eigen::VectorXd full = N.delta * N.M * w + hj.grad(w) + p - t * omega_bar;
    Eigen::VectorXd g(nk + 1);
    for (int i = 0; i < nk; ++i) g(i) = full(kept[i]);
    g(nk) = energy(w);
    return g;
  };
  auto J = [&](const Eigen::VectorXd& xt) {
    const Eigen::VectorXd w = embed(xt.head(nk));
    const Eigen::MatrixXd full = N.delta * N.M + hj.hess(w);
    const Eigen::VectorXd de = denergy(w);
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(nk + 1, nk + 1);
    for (int i = 0; i < nk; ++i)
      for (int c = 0; c < nk; ++c) j(i, c) = full(kept[i], kept[c]);
    for (int i = 0; i < nk; ++i) {
      j(i, nk) = -omega_bar(kept[i]);
      j(nk, i) = de(kept[i]);
    }
    return j;
  };
  double res = 0.0;
  int iters = 0;
  const Eigen::VectorXd xt =
      detail::newton_solve(G, J, Eigen::VectorXd::Zero(nk + 1), 1e-12, 80, &res, &iters,
                           "frequency_shift_isoenergetic");
  out.w0 = embed(xt.head(nk));
  out.t = xt(nk);
  out.residual = res;
  out.energy_residual = std::abs(energy(out.w0));
  return out;
}

}  // namespace nfkam

#endif
