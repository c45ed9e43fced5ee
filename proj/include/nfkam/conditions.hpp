#ifndef NFKAM_CONDITIONS_HPP
#define NFKAM_CONDITIONS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "nfkam/lattice.hpp"
#include "nfkam/rng.hpp"
#include "nfkam/series.hpp"

namespace nfkam {

// ---- Diophantine scan ---------------------------------------------------

struct DiophantineVerdict {
  bool ok = false;
  std::vector<int> worst_k;  // minimizer of |<k,omega>| |k|_1^tau, canonical sign
  double min_ratio = 0.0;    // min |<k,omega>| |k|_1^tau; verdict: min_ratio > gamma
};

namespace detail {

// min over 0 < |k|_1 <= K (first nonzero component positive) of
// |<k,omega>| |k|_1^tau, exact integer enumeration
template <typename Scalar>
inline double dio_min_ratio(const Scalar* omega, int d, double tau, int K,
                            std::vector<int>* argmin = nullptr) {
  std::vector<double> powtab(K + 1, 0.0);
  for (int i = 1; i <= K; ++i) powtab[i] = std::pow(static_cast<double>(i), tau);
  if (d == 2 && !argmin) {  // hot path for the measure sampler
    double best = std::numeric_limits<double>::infinity();
    for (int k1 = 0; k1 <= K; ++k1) {
      const int lim = K - k1;
      for (int k2 = k1 == 0 ? 1 : -lim; k2 <= lim; ++k2) {
        const double dot =
            std::abs(static_cast<double>(k1 * omega[0] + k2 * omega[1]));
        const double r = dot * powtab[k1 + std::abs(k2)];
        if (r < best) best = r;
      }
    }
    return best;
  }
  std::vector<int> k(d, 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(int, int, Scalar)> rec = [&](int pos, int used, Scalar dot) {
    if (pos == d) {
      if (used == 0) return;
      bool leading_neg = false;
      for (int i = 0; i < d; ++i) {
        if (k[i] == 0) continue;
        leading_neg = k[i] < 0;
        break;
      }
      if (leading_neg) return;  // |<k,.>| is even in k
      const double r = static_cast<double>(std::abs(dot)) * powtab[used];
      if (r < best) {
        best = r;
        if (argmin) *argmin = k;
      }
      return;
    }
    const int budget = K - used;
    for (int c = -budget; c <= budget; ++c) {
      k[pos] = c;
      rec(pos + 1, used + std::abs(c), dot + static_cast<Scalar>(c) * omega[pos]);
    }
    k[pos] = 0;
  };
  rec(0, 0, Scalar(0));
  return best;
}

}  // namespace detail

inline DiophantineVerdict check_diophantine(const Eigen::VectorXd& omega, double gamma,
                                            double tau, int K) {
  if (K < 1) throw std::invalid_argument("check_diophantine: K >= 1 required");
  if (gamma <= 0.0) throw std::invalid_argument("check_diophantine: gamma > 0 required");
  DiophantineVerdict v;
  v.min_ratio = detail::dio_min_ratio(omega.data(), static_cast<int>(omega.size()), tau,
                                      K, &v.worst_k);
  v.ok = v.min_ratio > gamma;
  return v;
}

// ---- condition reports --------------------------------------------------

struct ConditionEntry {
  std::string name;
  bool holds = false;
  std::vector<double> witness;  // singular values / determinants backing the verdict
  std::string note;
  int samples = 0;
};

struct ConditionReport {
  std::vector<ConditionEntry> entries;
  int n = -1;  // preserved-frequency count inferred from the rank witnesses
  std::string diagnostic;

  bool all() const {
    for (const auto& e : entries)
      if (!e.holds) return false;
    return true;
  }
  const ConditionEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

constexpr double kRankThreshold = 1e-8;  // relative to the largest singular value

inline int rank_svd(const Eigen::MatrixXd& A, std::vector<double>* sv = nullptr) {
  if (A.rows() == 0 || A.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto& s = svd.singularValues();
  if (sv) sv->assign(s.data(), s.data() + s.size());
  if (s(0) == 0.0) return 0;
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > kRankThreshold * s(0)) ++r;
  return r;
}

// ---- Ruessmann nondegeneracy -------------------------------------------

// rank {d^alpha omega : 0 <= |alpha| <= m-1} = m at 100 sampled lambda.
// Derivatives by nested central differences; noise near the rank threshold
// is flagged in the note.
inline ConditionEntry check_russmann(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& omega, const Box& dom,
    int m, int samples = 100, std::uint64_t seed = 0) {
  const int p = static_cast<int>(dom.lo.size());
  const double h = 1e-3;
  ConditionEntry e;
  e.name = "S1";
  e.samples = samples;
  e.holds = true;

  // multi-indices with |alpha| <= m-1
  std::vector<std::vector<int>> alphas;
  std::vector<int> a(p, 0);
  std::function<void(int, int)> build = [&](int pos, int left) {
    if (pos == p) {
      alphas.push_back(a);
      return;
    }
    for (int c = 0; c <= left; ++c) {
      a[pos] = c;
      build(pos + 1, left - c);
    }
    a[pos] = 0;
  };
  build(0, m - 1);

  std::function<Eigen::VectorXd(const Eigen::VectorXd&, std::vector<int>)> deriv =
      [&](const Eigen::VectorXd& lam, std::vector<int> alpha) -> Eigen::VectorXd {
    for (int i = 0; i < p; ++i)
      if (alpha[i] > 0) {
        --alpha[i];
        Eigen::VectorXd lp = lam, lm = lam;
        lp(i) += h;
        lm(i) -= h;
        return (deriv(lp, alpha) - deriv(lm, alpha)) / (2.0 * h);
      }
    return omega(lam);
  };

  CounterRng rng(seed);
  double worst_gap = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd lam(p);
    for (int i = 0; i < p; ++i)
      lam(i) = rng.uniform(static_cast<std::uint64_t>(s) * p + i, dom.lo(i), dom.hi(i));
    Eigen::MatrixXd D(m, static_cast<int>(alphas.size()));
    for (size_t c = 0; c < alphas.size(); ++c) D.col(static_cast<int>(c)) = deriv(lam, alphas[c]);
    std::vector<double> sv;
    const int r = rank_svd(D, &sv);
    if (s == 0) e.witness = sv;
    const double gap = sv[0] > 0.0 ? sv[std::min<size_t>(m, sv.size()) - 1] / sv[0] : 0.0;
    worst_gap = std::min(worst_gap, gap);
    if (r < m) e.holds = false;
  }
  if (worst_gap > kRankThreshold / 10.0 && worst_gap < kRankThreshold * 10.0)
    e.note = "conditioning: smallest relative singular value near the rank threshold";
  return e;
}

// ---- rank conditions on the resonant surface ----------------------------

// x-averaged u-Hessian of the grade-kappa slice of P1 at y = v = 0, as a
// function of u; S4 takes the infimum of |det| over a u-grid.
inline double s4_min_det(const FTSeries& P1, int kappa, int grid = 64) {
  const PhaseSignature& sig = P1.sig();
  FTSeries bar(sig, P1.fourier_cutoff(), P1.degree_cutoff(), P1.grade_denom());
  for (const auto& [key, p] : P1.terms())
    if (FTSeries::is_zero(key.k) && key.egrade == kappa * P1.grade_denom())
      bar.add_term(key.k, key.j, 0, p.c, p.s);
  std::vector<std::vector<FTSeries>> hh(sig.m0, std::vector<FTSeries>(sig.m0));
  for (int i = 0; i < sig.m0; ++i)
    for (int j = 0; j < sig.m0; ++j) hh[i][j] = partial_u(partial_u(bar, i), j);
  const double pi = std::acos(-1.0);
  std::vector<double> x0(sig.m, 0.0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> idx(sig.m0, 0);
  while (true) {
    std::vector<double> w(sig.vars(), 0.0);
    for (int i = 0; i < sig.m0; ++i)
      w[sig.u_index(i)] = -pi + 2.0 * pi * (idx[i] + 0.5) / grid;
    Eigen::MatrixXd Hm(sig.m0, sig.m0);
    for (int i = 0; i < sig.m0; ++i)
      for (int j = 0; j < sig.m0; ++j) Hm(i, j) = evaluate(hh[i][j], x0, w);
    best = std::min(best, std::abs(Hm.determinant()));
    int c = 0;
    while (c < sig.m0 && ++idx[c] >= grid) idx[c++] = 0;
    if (c == sig.m0) break;
  }
  return best;
}

struct RankConditionInputs {
  const FTSeries* P1 = nullptr;  // reduced-signature perturbation, for S3/S4
  int kappa = 2;                 // grade of the averaged potential in S4
  double sigma_min = 1e-10;      // S4 lower-bound gate
};

inline Eigen::MatrixXd bordered(const Eigen::MatrixXd& A, const Eigen::VectorXd& w) {
  const int n = static_cast<int>(A.rows());
  Eigen::MatrixXd B(n + 1, n + 1);
  B.topLeftCorner(n, n) = A;
  B.topRightCorner(n, 1) = w;
  B.bottomLeftCorner(1, n) = w.transpose();
  B(n, n) = 0.0;
  return B;
}

inline ConditionReport check_rank_conditions(const SmoothHamiltonian& H0,
                                             const ResonanceFrame& frame,
                                             const std::vector<Eigen::VectorXd>& points,
                                             const std::set<std::string>& which,
                                             const RankConditionInputs& in = {}) {
  if (points.empty())
    throw std::invalid_argument("check_rank_conditions: no sample points");
  const int m = frame.m(), m0 = frame.m0, d = frame.d;
  const Eigen::MatrixXd Ks = frame.K_star.cast<double>();
  const Eigen::MatrixXd Kp = frame.K_prime.cast<double>();
  const Eigen::MatrixXd K0 = frame.K0.cast<double>();

  ConditionReport rep;
  auto want = [&](const std::string& s) { return which.empty() || which.count(s) > 0; };

  struct Probe {
    Eigen::MatrixXd Gamma, Bss, Bsp, Bpp;
    Eigen::VectorXd omega_star;
  };
  std::vector<Probe> probes;
  for (const auto& y : points) {
    Probe p;
    const Eigen::MatrixXd H = H0.hess(y);
    p.Gamma = K0.transpose() * H * K0;
    p.Bss = Ks.transpose() * H * Ks;
    p.Bsp = Ks.transpose() * H * Kp;
    p.Bpp = Kp.transpose() * H * Kp;
    p.omega_star = Ks.transpose() * H0.grad(y);
    probes.push_back(std::move(p));
  }

  auto infer_n = [&](int cand, const std::string& cond) {
    if (rep.n < 0)
      rep.n = cand;
    else if (rep.n != cand && rep.diagnostic.empty()) {
      std::ostringstream os;
      os << "inconsistent n inference: " << cond << " implies n = " << cand
         << " but earlier witnesses gave n = " << rep.n;
      rep.diagnostic = os.str();
    }
  };

  if (want("S2")) {
    ConditionEntry e;
    e.name = "S2";
    e.samples = static_cast<int>(probes.size());
    e.holds = true;
    for (const auto& p : probes) {
      std::vector<double> sv;
      const int r = rank_svd(p.Gamma, &sv);
      if (e.witness.empty()) e.witness = sv;
      const int n = r - m0;
      if (n <= 0 || n > m) e.holds = false;
      infer_n(n, "S2");
      Eigen::MatrixXd low(m0, d);
      low << p.Bsp.transpose(), p.Bpp;
      if (rank_svd(low) != m0) e.holds = false;
    }
    rep.entries.push_back(std::move(e));
  }

  if (want("S3") || want("S3'")) {
    // the two forms are equivalent; both ranks are recorded
    ConditionEntry e3, e3p;
    e3.name = "S3";
    e3p.name = "S3'";
    e3.holds = e3p.holds = true;
    e3.samples = e3p.samples = static_cast<int>(probes.size());
    for (const auto& p : probes) {
      Eigen::VectorXd wbar = Eigen::VectorXd::Zero(d);
      wbar.head(m) = p.omega_star;
      const int n = rep.n >= 0 ? rep.n : rank_svd(p.Gamma) - m0;
      if (in.P1) {
        const PhaseSignature& sig = in.P1->sig();
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(d + sig.m0, d + sig.m0);
        K.topLeftCorner(d, d) = p.Gamma;
        // u-Hessian block of the x-averaged perturbation at the origin
        FTSeries bar = average(*in.P1);
        std::vector<double> x0(sig.m, 0.0), w0(sig.vars(), 0.0);
        for (int i = 0; i < sig.m0; ++i)
          for (int j = 0; j < sig.m0; ++j)
            K(d + i, d + j) = evaluate(partial_u(partial_u(bar, i), j), x0, w0, 1.0);
        Eigen::VectorXd wext = Eigen::VectorXd::Zero(d + sig.m0);
        wext.head(m) = p.omega_star;
        std::vector<double> sv;
        const int r = rank_svd(bordered(K, wext), &sv);
        if (e3.witness.empty()) e3.witness = sv;
        if (r != n + 2 * m0 + 1) e3.holds = false;
      } else {
        e3.holds = false;
        e3.note = "S3 needs perturbation data";
      }
      std::vector<double> sv;
      const int r = rank_svd(bordered(p.Gamma, wbar), &sv);
      if (e3p.witness.empty()) e3p.witness = sv;
      if (r != n + m0 + 1) e3p.holds = false;
    }
    if (want("S3")) rep.entries.push_back(std::move(e3));
    if (want("S3'")) rep.entries.push_back(std::move(e3p));
  }

  if (want("S4")) {
    ConditionEntry e;
    e.name = "S4";
    if (in.P1) {
      const double lb = s4_min_det(*in.P1, in.kappa);
      e.witness = {lb};
      e.holds = lb > in.sigma_min;
      e.samples = 1;
    } else {
      e.holds = false;
      e.note = "S4 needs perturbation data";
    }
    rep.entries.push_back(std::move(e));
  }

  if (want("S5")) {
    ConditionEntry e;
    e.name = "S5";
    e.samples = static_cast<int>(probes.size());
    e.holds = true;
    for (const auto& p : probes) {
      std::vector<double> sv;
      const int r = rank_svd(p.Gamma, &sv);
      if (e.witness.empty()) e.witness = sv;
      const int n = r - m0;
      // a nonsingular (m0+n) x (m0+n) minor exists iff rank >= m0+n
      if (n <= 0 || n >= m) e.holds = false;
      if (rank_svd(p.Bpp) != m0) e.holds = false;
    }
    rep.entries.push_back(std::move(e));
  }

  if (want("S6")) {
    ConditionEntry e;
    e.name = "S6";
    e.samples = static_cast<int>(probes.size());
    e.holds = true;
    for (const auto& p : probes) {
      if (rank_svd(p.Bpp) != m0) {
        e.holds = false;
        continue;
      }
      // Schur complement of the K' block
      Eigen::MatrixXd S = p.Bss - p.Bsp * p.Bpp.fullPivLu().solve(p.Bsp.transpose());
      std::vector<double> sv;
      const int n = rank_svd(S, &sv);
      if (e.witness.empty()) e.witness = sv;
      if (n <= 0 || n >= m) e.holds = false;
      infer_n(n, "S6");
    }
    rep.entries.push_back(std::move(e));
  }

  if (want("S7")) {
    ConditionEntry e;
    e.name = "S7";
    e.samples = static_cast<int>(probes.size());
    e.holds = true;
    for (const auto& p : probes) {
      std::vector<double> sv;
      if (rank_svd(p.Gamma, &sv) != d) e.holds = false;
      if (e.witness.empty()) e.witness = sv;
    }
    rep.entries.push_back(std::move(e));
  }

  if (want("S8")) {
    ConditionEntry e;
    e.name = "S8";
    e.samples = static_cast<int>(probes.size());
    e.holds = true;
    for (const auto& p : probes) {
      Eigen::VectorXd wbar = Eigen::VectorXd::Zero(d);
      wbar.head(m) = p.omega_star;
      std::vector<double> sv;
      const int r = rank_svd(bordered(p.Gamma, wbar), &sv);
      if (e.witness.empty()) e.witness = sv;
      if (r != m + m0 + 1) e.holds = false;
    }
    rep.entries.push_back(std::move(e));
  }

  return rep;
}

// (A2)/(A3) on the reduced quadratic form; M is (m + 2m0) square with the
// last 2m0 rows forming (M21 M22).
inline ConditionReport check_sub_isoenergetic(
    const std::vector<Eigen::MatrixXd>& Ms, const std::vector<Eigen::VectorXd>& omegas,
    int m, int m0, const std::set<std::string>& which = {}) {
  if (Ms.empty() || Ms.size() != omegas.size())
    throw std::invalid_argument("check_sub_isoenergetic: sample mismatch");
  ConditionReport rep;
  auto want = [&](const std::string& s) { return which.empty() || which.count(s) > 0; };

  auto infer_n = [&](int cand, const std::string& cond) {
    if (rep.n < 0)
      rep.n = cand;
    else if (rep.n != cand && rep.diagnostic.empty()) {
      std::ostringstream os;
      os << "inconsistent n inference: " << cond << " implies n = " << cand
         << " but earlier witnesses gave n = " << rep.n;
      rep.diagnostic = os.str();
    }
  };

  if (want("A2")) {
    ConditionEntry e;
    e.name = "A2";
    e.samples = static_cast<int>(Ms.size());
    e.holds = true;
    for (const auto& M : Ms) {
      if (M.rows() != m + 2 * m0 || M.cols() != m + 2 * m0)
        throw std::invalid_argument("check_sub_isoenergetic: M dimensions");
      std::vector<double> sv;
      const int r = rank_svd(M, &sv);
      if (e.witness.empty()) e.witness = sv;
      const int n = r - 2 * m0;
      if (n <= 0 || n > m) e.holds = false;
      infer_n(n, "A2");
      if (rank_svd(M.bottomRows(2 * m0)) != 2 * m0) e.holds = false;
    }
    rep.entries.push_back(std::move(e));
  }

  if (want("A3")) {
    ConditionEntry e;
    e.name = "A3";
    e.samples = static_cast<int>(Ms.size());
    e.holds = true;
    for (size_t i = 0; i < Ms.size(); ++i) {
      Eigen::VectorXd wbar = Eigen::VectorXd::Zero(m + 2 * m0);
      wbar.head(m) = omegas[i];
      const int n = rep.n >= 0 ? rep.n : rank_svd(Ms[i]) - 2 * m0;
      std::vector<double> sv;
      const int r = rank_svd(bordered(Ms[i], wbar), &sv);
      if (e.witness.empty()) e.witness = sv;
      if (r != n + 2 * m0 + 1) e.holds = false;
    }
    rep.entries.push_back(std::move(e));
  }

  return rep;
}

// ---- excluded-measure estimate ------------------------------------------

struct MeasureEstimate {
  std::vector<double> gammas;
  std::vector<double> fractions;
  std::vector<double> stderrs;
  double slope = 0.0;       // log(fraction) vs log(gamma)
  double slope_err = 0.0;   // least-squares confidence half-width
  bool censored = false;    // some gamma had zero failures; fit excludes them
  long long samples = 0;
};

inline MeasureEstimate excluded_measure(const Box& box,
                                        std::vector<double> gammas, double tau, int K,
                                        long long samples, std::uint64_t seed = 0) {
  if (samples < 10000)
    throw std::invalid_argument("excluded_measure: need at least 1e4 samples");
  if (gammas.empty()) throw std::invalid_argument("excluded_measure: no gamma values");
  std::sort(gammas.begin(), gammas.end(), std::greater<double>());
  const int d = static_cast<int>(box.lo.size());
  const int ng = static_cast<int>(gammas.size());
  CounterRng rng(seed);

  int nthreads = 1;
  if (const char* env = std::getenv("NFKAM_THREADS")) nthreads = std::max(1, std::atoi(env));
  nthreads = std::min<long long>(nthreads, std::max<long long>(1, samples / 1024));

  // per-thread integer failure counts; the merged totals are independent of
  // the thread count because the per-sample verdicts are
  std::vector<std::vector<long long>> counts(nthreads, std::vector<long long>(ng, 0));
  auto worker = [&](int t) {
    const long long lo = samples * t / nthreads, hi = samples * (t + 1) / nthreads;
    std::vector<double> om(d);
    for (long long i = lo; i < hi; ++i) {
      for (int j = 0; j < d; ++j)
        om[j] = rng.uniform(static_cast<std::uint64_t>(i) * d + j, box.lo(j), box.hi(j));
      const double ratio = detail::dio_min_ratio(om.data(), d, tau, K);
      for (int g = 0; g < ng; ++g)
        if (ratio <= gammas[g]) ++counts[t][g];
    }
  };
  if (nthreads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }

  MeasureEstimate est;
  est.gammas = gammas;
  est.samples = samples;
  for (int g = 0; g < ng; ++g) {
    long long fails = 0;
    for (int t = 0; t < nthreads; ++t) fails += counts[t][g];
    const double p = static_cast<double>(fails) / static_cast<double>(samples);
    est.fractions.push_back(p);
    est.stderrs.push_back(std::sqrt(p * (1.0 - p) / static_cast<double>(samples)));
  }

  // slope fit over the uncensored points
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int g = 0; g < ng; ++g) {
    if (est.fractions[g] <= 0.0) {
      est.censored = true;
      continue;
    }
    const double x = std::log(gammas[g]), y = std::log(est.fractions[g]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n >= 2) {
    est.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icpt = (sy - est.slope * sx) / n;
    double ss = 0.0;
    for (int g = 0; g < ng; ++g) {
      if (est.fractions[g] <= 0.0) continue;
      const double e = std::log(est.fractions[g]) - (icpt + est.slope * std::log(gammas[g]));
      ss += e * e;
    }
    const double varx = sxx - sx * sx / n;
    if (n > 2 && varx > 0.0) est.slope_err = 2.0 * std::sqrt(ss / (n - 2) / varx);
  } else {
    est.censored = true;
  }
  return est;
}

}  // namespace nfkam

#endif
