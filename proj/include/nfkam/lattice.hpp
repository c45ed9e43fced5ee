#ifndef NFKAM_LATTICE_HPP
#define NFKAM_LATTICE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nfkam/series.hpp"

namespace nfkam {

using IMat = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;
using IVec = Eigen::Matrix<long long, Eigen::Dynamic, 1>;

// ---- exact integer linear algebra (matrices here are tiny) --------------

inline long long det_int(const IMat& a) {
  const int n = static_cast<int>(a.rows());
  if (n != a.cols()) throw std::invalid_argument("det_int: square only");
  if (n == 0) return 1;
  if (n == 1) return a(0, 0);
  long long det = 0;
  IMat minor(n - 1, n - 1);
  for (int c = 0; c < n; ++c) {
    for (int i = 1; i < n; ++i)
      for (int j = 0, jj = 0; j < n; ++j)
        if (j != c) minor(i - 1, jj++) = a(i, j);
    const long long cof = det_int(minor);
    det += (c % 2 == 0 ? 1 : -1) * a(0, c) * cof;
  }
  return det;
}

// adj(a) with a * adj(a) = det(a) * I; for unimodular a this is +-inverse.
inline IMat adjugate_int(const IMat& a) {
  const int n = static_cast<int>(a.rows());
  IMat adj(n, n);
  if (n == 1) {
    adj(0, 0) = 1;
    return adj;
  }
  IMat minor(n - 1, n - 1);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      for (int i = 0, ii = 0; i < n; ++i) {
        if (i == r) continue;
        for (int j = 0, jj = 0; j < n; ++j)
          if (j != c) minor(ii, jj++) = a(i, j);
        ++ii;
      }
      adj(c, r) = ((r + c) % 2 == 0 ? 1 : -1) * det_int(minor);
    }
  return adj;
}

inline IMat inverse_unimodular(const IMat& a) {
  const long long d = det_int(a);
  if (d != 1 && d != -1) throw std::invalid_argument("inverse_unimodular: |det| != 1");
  IMat adj = adjugate_int(a);
  return d == 1 ? adj : IMat(-adj);
}

// Smith decomposition U * A * V = S with U, V unimodular and S diagonal with
// the divisibility chain. Returns S.
inline IMat smith_normal_form(IMat S, IMat& U, IMat& V) {
  const int rows = static_cast<int>(S.rows()), cols = static_cast<int>(S.cols());
  U = IMat::Identity(rows, rows);
  V = IMat::Identity(cols, cols);
  const int rank_bound = std::min(rows, cols);
  for (int t = 0; t < rank_bound; ++t) {
    for (;;) {
      // smallest nonzero pivot into (t,t)
      int pr = -1, pc = -1;
      long long best = 0;
      for (int i = t; i < rows; ++i)
        for (int j = t; j < cols; ++j)
          if (S(i, j) != 0 && (pr < 0 || std::abs(S(i, j)) < best)) {
            best = std::abs(S(i, j));
            pr = i;
            pc = j;
          }
      if (pr < 0) return S;  // zero block: done
      S.row(t).swap(S.row(pr));
      U.row(t).swap(U.row(pr));
      S.col(t).swap(S.col(pc));
      V.col(t).swap(V.col(pc));
      bool clean = true;
      for (int i = t + 1; i < rows; ++i) {
        const long long q = S(i, t) / S(t, t);
        if (q != 0) {
          S.row(i) -= q * S.row(t);
          U.row(i) -= q * U.row(t);
        }
        if (S(i, t) != 0) clean = false;
      }
      for (int j = t + 1; j < cols; ++j) {
        const long long q = S(t, j) / S(t, t);
        if (q != 0) {
          S.col(j) -= q * S.col(t);
          V.col(j) -= q * V.col(t);
        }
        if (S(t, j) != 0) clean = false;
      }
      if (!clean) continue;
      // divisibility: S(t,t) must divide the trailing block
      int bi = -1, bj = -1;
      for (int i = t + 1; i < rows && bi < 0; ++i)
        for (int j = t + 1; j < cols; ++j)
          if (S(i, j) % S(t, t) != 0) {
            bi = i;
            bj = j;
            break;
          }
      if (bi < 0) break;
      S.row(t) += S.row(bi);
      U.row(t) += U.row(bi);
      (void)bj;
    }
    if (S(t, t) < 0) {
      S.row(t) = -S.row(t);
      U.row(t) = -U.row(t);
    }
  }
  return S;
}

// ---- resonance frame ----------------------------------------------------

struct ResonanceFrame {
  int d = 0;
  int m0 = 0;
  IMat generators;  // d x m0, columns tau_i
  IMat K_star;      // d x m
  IMat K_prime;     // d x m0
  IMat K0;          // (K_star | K_prime), det = +1
  IMat gen_basis;   // m0 x m0 unimodular with K_prime * gen_basis = generators

  int m() const { return d - m0; }
};

// Completes tau_1..tau_m0 to a unimodular basis of Z^d: K0 = (K_star, K')
// with det K0 = +1 and the K' columns spanning the same subgroup g.
inline ResonanceFrame unimodular_completion(const std::vector<std::vector<long long>>& gens) {
  if (gens.empty()) throw std::invalid_argument("unimodular_completion: no generators");
  const int d = static_cast<int>(gens[0].size());
  const int m0 = static_cast<int>(gens.size());
  if (m0 > d) throw std::invalid_argument("unimodular_completion: too many generators");
  IMat A(d, m0);
  for (int j = 0; j < m0; ++j) {
    if (static_cast<int>(gens[j].size()) != d)
      throw std::invalid_argument("unimodular_completion: ragged generators");
    for (int i = 0; i < d; ++i) A(i, j) = gens[j][i];
  }
  IMat U, V;
  IMat S = smith_normal_form(A, U, V);
  for (int t = 0; t < m0; ++t) {
    if (S(t, t) == 0)
      throw std::runtime_error("unimodular_completion: generators are dependent");
    if (S(t, t) != 1) {
      std::ostringstream msg;
      msg << "unimodular_completion: invariant factor " << S(t, t)
          << " obstructs completion (generator set is not primitive)";
      throw std::runtime_error(msg.str());
    }
  }
  // U A V = (I; 0)  =>  A V = W[:, :m0] with W = U^{-1}
  IMat W = inverse_unimodular(U);
  ResonanceFrame f;
  f.d = d;
  f.m0 = m0;
  f.generators = A;
  f.K_prime = W.leftCols(m0);
  f.K_star = W.rightCols(d - m0);
  f.K0.resize(d, d);
  f.K0 << f.K_star, f.K_prime;
  bool flipped_prime = false;
  if (det_int(f.K0) == -1) {
    if (d > m0) {
      f.K_star.col(0) = -f.K_star.col(0);
      f.K0.leftCols(1) = -f.K0.leftCols(1);
    } else {
      // full-rank resonance: no K_star column to flip, so negate a K' column
      // (the generated subgroup is unchanged) and compensate in gen_basis
      f.K_prime.col(0) = -f.K_prime.col(0);
      f.K0.col(0) = -f.K0.col(0);
      flipped_prime = true;
    }
  }
  if (det_int(f.K0) != 1)
    throw std::logic_error("unimodular_completion: determinant normalization failed");
  // generators = K' * V^{-1}
  f.gen_basis = inverse_unimodular(V);
  if (flipped_prime) f.gen_basis.row(0) = -f.gen_basis.row(0);
  return f;
}

// Gradient/Hessian handle for the integrable part.
struct SmoothHamiltonian {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hess;
};

inline SmoothHamiltonian quadratic_h0(const Eigen::MatrixXd& Q, const Eigen::VectorXd& c) {
  return {[=](const Eigen::VectorXd& y) { return Eigen::VectorXd(Q * y + c); },
          [=](const Eigen::VectorXd&) { return Q; }};
}

// Series-backed handle: gradient and Hessian of the x-independent part.
inline SmoothHamiltonian series_h0(const FTSeries& H) {
  FTSeries H0 = average(H);
  const int d = H.sig().m;
  std::vector<FTSeries> g(d);
  std::vector<std::vector<FTSeries>> h(d, std::vector<FTSeries>(d));
  for (int i = 0; i < d; ++i) {
    g[i] = partial_poly(H0, i);
    for (int j = 0; j < d; ++j) h[i][j] = partial_poly(g[i], j);
  }
  auto at = [d](const FTSeries& f, const Eigen::VectorXd& y) {
    std::vector<double> x(d, 0.0), w(y.data(), y.data() + d);
    return evaluate(f, x, w);
  };
  return {[=](const Eigen::VectorXd& y) {
            Eigen::VectorXd out(d);
            for (int i = 0; i < d; ++i) out(i) = at(g[i], y);
            return out;
          },
          [=](const Eigen::VectorXd& y) {
            Eigen::MatrixXd out(d, d);
            for (int i = 0; i < d; ++i)
              for (int j = 0; j < d; ++j) out(i, j) = at(h[i][j], y);
            return out;
          }};
}

struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

// Newton (Gauss-Newton minimal-norm steps) on <tau_i, grad H0(y)> = 0 from a
// uniform seed grid; deterministic order, duplicates dropped.
inline std::vector<Eigen::VectorXd> resonant_surface_sample(
    const SmoothHamiltonian& H0, const ResonanceFrame& frame, const Box& box,
    int count, std::string* diagnostic = nullptr) {
  const int d = frame.d, m0 = frame.m0;
  const Eigen::MatrixXd T = frame.generators.cast<double>();
  constexpr int kGrid = 16;
  constexpr int kMaxIter = 50;
  constexpr double kTol = 1e-12;
  std::vector<Eigen::VectorXd> found;
  long long nseeds = 1;
  for (int i = 0; i < d; ++i) nseeds *= kGrid;
  for (long long s = 0; s < nseeds && static_cast<int>(found.size()) < count; ++s) {
    Eigen::VectorXd y(d);
    long long idx = s;
    for (int i = 0; i < d; ++i) {
      const int cell = static_cast<int>(idx % kGrid);
      idx /= kGrid;
      y(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * (cell + 0.5) / kGrid;
    }
    bool ok = false;
    for (int it = 0; it < kMaxIter; ++it) {
      const Eigen::VectorXd f = T.transpose() * H0.grad(y);
      if (f.lpNorm<Eigen::Infinity>() <= kTol) {
        ok = true;
        break;
      }
      const Eigen::MatrixXd J = T.transpose() * H0.hess(y);  // m0 x d
      const Eigen::MatrixXd JJt = J * J.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(JJt);
      if (!lu.isInvertible()) break;
      y -= J.transpose() * lu.solve(f);
    }
    if (!ok) continue;
    bool inside = true;
    for (int i = 0; i < d; ++i)
      if (y(i) < box.lo(i) - 1e-9 || y(i) > box.hi(i) + 1e-9) inside = false;
    if (!inside) continue;
    bool dup = false;
    for (const auto& p : found)
      if ((p - y).lpNorm<Eigen::Infinity>() < 1e-8) dup = true;
    if (!dup) found.push_back(y);
  }
  if (found.empty() && diagnostic)
    *diagnostic = "resonant_surface_sample: no surface points found in the box";
  (void)m0;
  return found;
}

// ---- reduction at a resonance -------------------------------------------

struct ReducedHamiltonian {
  Eigen::VectorXd y0;
  Eigen::VectorXd omega_star;  // K_star^T grad H0(y0)
  Eigen::MatrixXd Gamma;       // K0^T hess H0(y0) K0
  double eps = 0.0;
  double dropped_constant = 0.0;
  FTSeries series;  // signature (m, m0), integer grades of the relabeled eps
};

namespace detail {

// Substitutes y -> K0 p in the polynomial part and k -> K0^{-1} k in the
// Fourier part, same (d, 0) signature.
inline FTSeries linear_change(const FTSeries& a, const IMat& K0, int kcut_out) {
  const int d = a.sig().m;
  const IMat K0inv = inverse_unimodular(K0);
  FTSeries out(a.sig(), kcut_out, a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms()) {
    std::vector<int> knew(d, 0);
    for (int i = 0; i < d; ++i) {
      long long acc = 0;
      for (int j = 0; j < d; ++j) acc += K0inv(i, j) * key.k[j];
      knew[i] = static_cast<int>(acc);
    }
    // expand prod_i (sum_j K0(i,j) p_j)^{j_i}
    std::vector<std::pair<std::vector<int>, double>> expansion{
        {std::vector<int>(d, 0), 1.0}};
    for (int i = 0; i < d; ++i)
      for (int rep = 0; rep < key.j[i]; ++rep) {
        std::vector<std::pair<std::vector<int>, double>> next;
        for (const auto& [jprev, coef] : expansion)
          for (int j = 0; j < d; ++j) {
            if (K0(i, j) == 0) continue;
            std::vector<int> jn = jprev;
            ++jn[j];
            next.emplace_back(std::move(jn), coef * static_cast<double>(K0(i, j)));
          }
        // merge duplicates to keep the expansion small
        std::sort(next.begin(), next.end(),
                  [](const auto& x, const auto& y) { return x.first < y.first; });
        std::vector<std::pair<std::vector<int>, double>> merged;
        for (auto& e : next) {
          if (!merged.empty() && merged.back().first == e.first)
            merged.back().second += e.second;
          else
            merged.push_back(std::move(e));
        }
        expansion = std::move(merged);
      }
    for (const auto& [jn, coef] : expansion)
      out.add_term(knew, jn, key.egrade, coef * p.c, coef * p.s);
  }
  out.prune();
  return out;
}

}  // namespace detail

// Reduction of H(x, y) = H0 + eps-graded perturbation at a resonant y0:
// Taylor at y0, y - y0 = K0 p, q = K0^T x, the last m0 angles become the
// Taylor pair (u, v), then p -> eps^{1/4} p with the quarter power relabeled
// as the new formal eps.  Grades come out as 4 e + deg(y,v) - 1.
inline ReducedHamiltonian reduce_at_resonance(const FTSeries& H,
                                              const Eigen::VectorXd& y0,
                                              const ResonanceFrame& frame, double eps,
                                              int kcut_out = -1, int dcut_out = -1) {
  const int d = frame.d, m0 = frame.m0, m = frame.m();
  if (H.sig().m != d || H.sig().m0 != 0)
    throw std::invalid_argument("reduce_at_resonance: H must live on T^d x R^d");
  SmoothHamiltonian h0 = series_h0(degree_slice(H, 0, H.degree_cutoff()));
  // the integrable part is the grade-0 slice
  FTSeries H0part(H.sig(), H.fourier_cutoff(), H.degree_cutoff(), H.grade_denom());
  for (const auto& [key, p] : H.terms())
    if (key.egrade == 0) H0part.add_term(key.k, key.j, key.egrade, p.c, p.s);
  SmoothHamiltonian h0only = series_h0(H0part);
  const Eigen::VectorXd omega = h0only.grad(y0);
  for (int i = 0; i < m0; ++i) {
    double dot = 0.0;
    for (int r = 0; r < d; ++r) dot += frame.generators(r, i) * omega(r);
    if (std::abs(dot) > 1e-8)
      throw std::invalid_argument("reduce_at_resonance: y0 is off the resonant surface");
  }
  ReducedHamiltonian out;
  out.y0 = y0;
  out.eps = eps;
  out.omega_star = frame.K_star.cast<double>().transpose() * omega;
  const Eigen::MatrixXd hess = h0only.hess(y0);
  const Eigen::MatrixXd K0d = frame.K0.cast<double>();
  out.Gamma = K0d.transpose() * hess * K0d;

  const int kco = kcut_out > 0 ? kcut_out : H.fourier_cutoff();
  const int dco = dcut_out > 0 ? dcut_out : H.degree_cutoff();

  std::vector<double> y0v(y0.data(), y0.data() + d);
  FTSeries shifted = translate_poly(with_cutoffs(H, H.fourier_cutoff(), dco), y0v);
  {
    TrigPair c0 = shifted.coeff(std::vector<int>(d, 0), std::vector<int>(d, 0), 0);
    out.dropped_constant = c0.c;
  }
  FTSeries rotated = detail::linear_change(shifted, frame.K0, kco);

  // relabel: p' -> y, p'' -> v, first m angles stay x, last m0 angles -> u
  PhaseSignature sig(m, m0);
  FTSeries res(sig, kco, dco);
  std::map<std::vector<int>, std::pair<FTSeries, FTSeries>> trig_cache;
  for (const auto& [key, p] : rotated.terms()) {
    if (key.egrade == 0 && abs_sum(key.j) == 0 && FTSeries::is_zero(key.k))
      continue;  // the irrelevant constant
    std::vector<int> kx(key.k.begin(), key.k.begin() + m);
    std::vector<int> ku(key.k.begin() + m, key.k.end());
    std::vector<int> jn(sig.vars(), 0);
    int degyv = 0;
    for (int i = 0; i < m; ++i) {
      jn[sig.y_index(i)] = key.j[i];
      degyv += key.j[i];
    }
    for (int i = 0; i < m0; ++i) {
      jn[sig.v_index(i)] = key.j[m + i];
      degyv += key.j[m + i];
    }
    const int grade = 4 * key.egrade + degyv - 1;
    if (std::all_of(ku.begin(), ku.end(), [](int x) { return x == 0; })) {
      res.add_term(kx, jn, grade, p.c, p.s);
      continue;
    }
    // cos(<kx,x> + <ku,u>) etc: Taylor-expand the u part
    auto it = trig_cache.find(ku);
    if (it == trig_cache.end()) {
      std::vector<int> coeffs(sig.vars(), 0);
      for (int i = 0; i < m0; ++i) coeffs[sig.u_index(i)] = ku[i];
      it = trig_cache
               .emplace(ku, std::make_pair(make_cos_linear(sig, kco, dco, coeffs, 0.0, 0),
                                           make_sin_linear(sig, kco, dco, coeffs, 0.0, 0)))
               .first;
    }
    const auto& [cosu, sinu] = it->second;
    FTSeries base_c = make_term(sig, kco, dco, kx, jn, grade, p.c, p.s);
    FTSeries base_s = make_term(sig, kco, dco, kx, jn, grade, p.s, -p.c);
    res = add(res, add(mul(base_c, cosu), mul(base_s, sinu)));
  }
  res.prune();
  out.series = res;
  (void)h0;
  return out;
}

// Exact symplecticity of the lattice change of variables. The torus map needs
// an integer inverse, and the only integer candidate for (K^T)^{-1} is the
// adjugate adj(K^T) (they agree exactly when det K = 1). The defect
//   M^T Omega M - Omega,  M = blockdiag(adj(K^T), K),
// is computed in exact integer arithmetic; it vanishes iff det K = +1.
inline bool check_symplectic_frame(const IMat& K, IMat* defect = nullptr) {
  const long long det = det_int(K);
  if (det == 0) throw std::invalid_argument("check_symplectic_frame: singular K");
  const int d = static_cast<int>(K.rows());
  const IMat A = adjugate_int(K.transpose());
  // M^T Omega M has blocks [[0, A^T K], [-K^T A, 0]]
  IMat top = A.transpose() * K - IMat::Identity(d, d);
  if (defect) {
    *defect = IMat::Zero(2 * d, 2 * d);
    defect->block(0, d, d, d) = top;
    defect->block(d, 0, d, d) = -top.transpose();
  }
  return top.isZero();
}

inline bool check_symplectic_frame(const ResonanceFrame& frame, IMat* defect = nullptr) {
  return check_symplectic_frame(frame.K0, defect);
}

}  // namespace nfkam

#endif
