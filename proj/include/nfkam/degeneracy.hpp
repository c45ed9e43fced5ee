#ifndef NFKAM_DEGENERACY_HPP
#define NFKAM_DEGENERACY_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nfkam/kamstep.hpp"
#include "nfkam/series.hpp"

namespace nfkam {

// Accumulated averaged potential: the graded sum of the per-step absorbed
// quadratic records.
struct AveragedPotential {
  FTSeries gbar;
  std::vector<int> steps;
};

inline AveragedPotential assemble_gbar(const std::vector<FTSeries>& history) {
  if (history.empty())
    throw std::invalid_argument("assemble_gbar: no recorded steps");
  AveragedPotential out;
  out.gbar = history[0];
  out.steps.push_back(0);
  for (size_t i = 1; i < history.size(); ++i) {
    out.gbar = add(out.gbar, history[i]);
    out.steps.push_back(static_cast<int>(i));
  }
  for (const auto& [key, p] : out.gbar.terms())
    if (!FTSeries::is_zero(key.k))
      throw std::invalid_argument("assemble_gbar: record is not x-independent");
  return out;
}

namespace detail {

// u-section helpers: everything evaluated at y = 0, v = 0.
inline std::vector<double> embed_u(const PhaseSignature& sig, const Eigen::VectorXd& u) {
  std::vector<double> w(sig.vars(), 0.0);
  for (int i = 0; i < sig.m0; ++i) w[sig.u_index(i)] = u(i);
  return w;
}

struct USection {
  const PhaseSignature sig;
  std::vector<FTSeries> g;                 // du gbar
  std::vector<std::vector<FTSeries>> hh;   // du^2 gbar
  std::vector<double> x0;

  explicit USection(const FTSeries& gbar) : sig(gbar.sig()) {
    for (int i = 0; i < sig.m0; ++i) g.push_back(partial_u(gbar, i));
    hh.resize(sig.m0);
    for (int i = 0; i < sig.m0; ++i)
      for (int j = 0; j < sig.m0; ++j) hh[i].push_back(partial_u(g[i], j));
    x0.assign(sig.m, 0.0);
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& u, double delta) const {
    Eigen::VectorXd out(sig.m0);
    const std::vector<double> w = embed_u(sig, u);
    for (int i = 0; i < sig.m0; ++i) out(i) = evaluate(g[i], x0, w, delta);
    return out;
  }
  Eigen::MatrixXd hess(const Eigen::VectorXd& u, double delta) const {
    Eigen::MatrixXd out(sig.m0, sig.m0);
    const std::vector<double> w = embed_u(sig, u);
    for (int i = 0; i < sig.m0; ++i)
      for (int j = 0; j < sig.m0; ++j) out(i, j) = evaluate(hh[i][j], x0, w, delta);
    return out;
  }
};

inline double torus_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double twopi = 2.0 * std::acos(-1.0);
  double d = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    double x = std::fmod(std::abs(a(i) - b(i)), twopi);
    x = std::min(x, twopi - x);
    d = std::max(d, x);
  }
  return d;
}

}  // namespace detail

enum class OrbitType { elliptic, hyperbolic, mixed, degenerate };

struct CriticalPoint {
  Eigen::VectorXd u;
  double grad_residual = 0.0;
  Eigen::MatrixXd V;  // du^2 gbar at the point
  int morse_index = 0;
  OrbitType type = OrbitType::degenerate;
  std::vector<std::complex<double>> eigenvalues;
  bool flagged_close = false;  // another root within 1e-4
};

// Newton from a uniform seed grid on the u-torus section (y, v) = (0, 0);
// roots are deduped modulo 2pi and reported in (-pi, pi], lexicographically.
inline std::vector<CriticalPoint> find_critical_points(const FTSeries& gbar,
                                                       double delta,
                                                       int seeds_per_dim = 32) {
  const PhaseSignature& sig = gbar.sig();
  if (sig.m0 < 1) throw std::invalid_argument("find_critical_points: need m0 >= 1");
  const double pi = std::acos(-1.0);
  detail::USection sec(gbar);

  std::vector<CriticalPoint> found;
  std::vector<int> idx(sig.m0, 0);
  while (true) {
    Eigen::VectorXd u(sig.m0);
    for (int i = 0; i < sig.m0; ++i)
      u(i) = -pi + 2.0 * pi * (idx[i] + 0.5) / seeds_per_dim;
    bool ok = true;
    for (int it = 0; it < 50; ++it) {
      const Eigen::VectorXd g = sec.grad(u, delta);
      if (g.lpNorm<Eigen::Infinity>() <= 1e-13) break;
      Eigen::MatrixXd V = sec.hess(u, delta);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(V);
      if (!lu.isInvertible()) {
        ok = false;
        break;
      }
      u -= lu.solve(g);
      if (u.lpNorm<Eigen::Infinity>() > pi + 0.6) {
        ok = false;  // left the chart the Taylor section is valid on
        break;
      }
    }
    if (ok) {
      // residual and Hessian at the converged chart point: the Taylor
      // section is not periodic, so re-evaluating after wrapping a seam
      // root into (-pi, pi] would see an O(delta) chart mismatch
      const double res = sec.grad(u, delta).lpNorm<Eigen::Infinity>();
      const Eigen::MatrixXd V = sec.hess(u, delta);
      for (int i = 0; i < sig.m0; ++i) {
        u(i) = std::remainder(u(i), 2.0 * pi);
        if (u(i) <= -pi + 1e-14) u(i) = pi;
      }
      if (res <= 1e-10) {
        bool dup = false;
        for (const auto& cp : found)
          if (detail::torus_dist(cp.u, u) <= 1e-6) dup = true;
        if (!dup) {
          CriticalPoint cp;
          cp.u = u;
          cp.grad_residual = res;
          cp.V = V;
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cp.V);
          cp.morse_index = 0;
          for (int i = 0; i < sig.m0; ++i)
            if (es.eigenvalues()(i) < 0.0) ++cp.morse_index;
          found.push_back(std::move(cp));
        }
      }
    }
    int c = 0;
    while (c < sig.m0 && ++idx[c] >= seeds_per_dim) idx[c++] = 0;
    if (c == sig.m0) break;
  }
  for (auto& a : found)
    for (const auto& b : found)
      if (&a != &b && detail::torus_dist(a.u, b.u) <= 1e-4) a.flagged_close = true;
  std::sort(found.begin(), found.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
    for (int i = 0; i < a.u.size(); ++i)
      if (a.u(i) != b.u(i)) return a.u(i) < b.u(i);
    return false;
  });
  return found;
}

// Linearized normal flow at the point: udot = M22 v, vdot = -V u. The type
// reads off the eigenvalues of the block matrix; time scaling cannot change
// it.
inline OrbitType classify(CriticalPoint& cp, const Eigen::MatrixXd& M22) {
  const int m0 = static_cast<int>(cp.u.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * m0, 2 * m0);
  A.topRightCorner(m0, m0) = M22;
  A.bottomLeftCorner(m0, m0) = -cp.V;
  Eigen::EigenSolver<Eigen::MatrixXd> es(A);
  cp.eigenvalues.clear();
  bool any_real = false, any_imag = false, any_zero = false;
  const double scale = std::max(1.0, A.norm());
  for (int i = 0; i < 2 * m0; ++i) {
    const std::complex<double> lam = es.eigenvalues()(i);
    cp.eigenvalues.push_back(lam);
    if (std::abs(lam) <= 1e-10 * scale)
      any_zero = true;
    else if (std::abs(lam.real()) > 1e-8 * std::abs(lam))
      any_real = true;
    else
      any_imag = true;
  }
  if (any_zero)
    cp.type = OrbitType::degenerate;
  else if (any_real && any_imag)
    cp.type = OrbitType::mixed;
  else if (any_real)
    cp.type = OrbitType::hyperbolic;
  else
    cp.type = OrbitType::elliptic;
  return cp.type;
}

inline OrbitType classify(CriticalPoint& cp, const NormalForm& N) {
  // linearized normal dynamics: u' = delta M_vv v, v' = -V u
  return classify(cp, Eigen::MatrixXd(N.M.bottomRightCorner(N.sig.m0, N.sig.m0)));
}

struct DegeneracyReport {
  int a = 0;
  double sigma_bar = 0.0;
  double slope = 0.0;
  double fit_residual = 0.0;
  bool clean = false;
  std::string diagnostic;
  std::vector<std::pair<double, double>> samples;  // (delta, min |det V|)
};

inline std::vector<double> default_delta_grid() {
  std::vector<double> g;
  for (int i = 0; i < 7; ++i) g.push_back(std::pow(10.0, -2.0 - 0.5 * i * 2.0 / 3.0));
  return g;
}

// Order detection: fit log |det du^2 gbar| against log delta over the grid;
// the slope is the degeneracy order a, and sigma_bar is the worst
// delta^{-a}-normalized determinant seen.
inline DegeneracyReport detect_order(const AveragedPotential& pot,
                                     std::vector<double> grid = default_delta_grid(),
                                     int order_cap = 6) {
  if (grid.size() < 4)
    throw std::invalid_argument("detect_order: need at least 4 grid points");
  DegeneracyReport rep;
  for (double d : grid) {
    auto cps = find_critical_points(pot.gbar, d);
    double mindet = std::numeric_limits<double>::infinity();
    for (const auto& cp : cps) mindet = std::min(mindet, std::abs(cp.V.determinant()));
    if (cps.empty()) mindet = 0.0;
    rep.samples.emplace_back(d, mindet);
  }
  for (const auto& [d, det] : rep.samples)
    if (det <= 0.0 || !std::isfinite(det)) {
      rep.diagnostic = "NoCleanOrder: vanishing determinant on the grid";
      return rep;
    }
  // least squares in log-log
  const int n = static_cast<int>(rep.samples.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [d, det] : rep.samples) {
    const double x = std::log(d), y = std::log(det);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  rep.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - rep.slope * sx) / n;
  double rms = 0.0;
  for (const auto& [d, det] : rep.samples) {
    const double e = std::log(det) - (icpt + rep.slope * std::log(d));
    rms += e * e;
  }
  rms = std::sqrt(rms / n);
  rep.a = static_cast<int>(std::lround(rep.slope));
  rep.fit_residual = std::max(rms, std::abs(rep.slope - rep.a));
  if (rep.a < 1 || rep.a > order_cap || rep.fit_residual >= 0.05) {
    std::ostringstream os;
    os << "NoCleanOrder: slope " << rep.slope << ", residual " << rep.fit_residual;
    rep.diagnostic = os.str();
    return rep;
  }
  rep.sigma_bar = std::numeric_limits<double>::infinity();
  for (const auto& [d, det] : rep.samples)
    rep.sigma_bar = std::min(rep.sigma_bar, det / std::pow(d, rep.a));
  rep.clean = true;
  return rep;
}

// Re-scaling at a critical point: u is translated so the point is the
// origin, then y -> delta^{(a-1)/2} y, v -> delta^{(a-1)/2} v,
// H -> delta^{(-a+1)/2} H, and delta^{(a+1)/2} is rebranded as the new
// delta. On grades this is the affine map
//   g' = (2 g + d (a-1)(deg_{y,v} - 1)) / (d (a+1))
// over a grade denominator multiplied by (a+1); a = 1 is translation only.
inline FTSeries rescale_at(const CriticalPoint& cp, const FTSeries& H, int a) {
  if (a < 1) throw std::invalid_argument("rescale_at: order must be >= 1");
  const PhaseSignature& sig = H.sig();
  if (cp.u.size() != sig.m0) throw std::invalid_argument("rescale_at: dimension");
  std::vector<double> shift(sig.vars(), 0.0);
  for (int i = 0; i < sig.m0; ++i) shift[sig.u_index(i)] = cp.u(i);
  FTSeries T = translate_poly(H, shift);
  if (a == 1) return T;
  const int d = T.grade_denom();
  FTSeries out(sig, T.fourier_cutoff(), T.degree_cutoff(), d * (a + 1));
  for (const auto& [key, p] : T.terms()) {
    int dyv = 0;
    for (int i = 0; i < sig.m; ++i) dyv += key.j[sig.y_index(i)];
    for (int i = 0; i < sig.m0; ++i) dyv += key.j[sig.v_index(i)];
    const int gnew = 2 * key.egrade + d * (a - 1) * (dyv - 1);
    out.add_term(key.k, key.j, gnew, p.c, p.s);
  }
  return out;
}

}  // namespace nfkam

#endif
