#ifndef NFKAM_SERIES_HPP
#define NFKAM_SERIES_HPP

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nfkam/signature.hpp"

namespace nfkam {

// One sparse term of a Fourier-Taylor series: Fourier wavevector k in the
// angles x, monomial multi-degree j in (y,u,v), and a formal epsilon grade.
// Grades are stored as integers in units of 1/grade_denom of the series, so
// the rescalings that rebrand fractional powers of delta stay exact.
struct TermKey {
  std::vector<int> k;
  std::vector<int> j;
  int egrade = 0;

  bool operator==(const TermKey&) const = default;
  bool operator<(const TermKey& o) const {
    if (egrade != o.egrade) return egrade < o.egrade;
    if (k != o.k) return k < o.k;
    return j < o.j;
  }
};

// Real coefficient pair for the wavevector orbit {k,-k}:
//   c * cos<k,x> + s * sin<k,x>.
// For k = 0 only the cosine slot is used.
struct TrigPair {
  double c = 0.0;
  double s = 0.0;
};

inline int abs_sum(const std::vector<int>& v) {
  int a = 0;
  for (int x : v) a += std::abs(x);
  return a;
}

// Truncated Fourier-Taylor series over a fixed PhaseSignature. Immutable in
// spirit: all operations return fresh series; mutation is confined to the
// builder-style add_term used during construction.
class FTSeries {
 public:
  static constexpr double kPrune = 1e-16;

  FTSeries() = default;
  FTSeries(PhaseSignature sig, int fourier_cutoff, int degree_cutoff,
           int grade_denom = 1)
      : sig_(sig), kcut_(fourier_cutoff), dcut_(degree_cutoff), gden_(grade_denom) {
    if (kcut_ < 0 || dcut_ < 0 || gden_ < 1)
      throw std::invalid_argument("FTSeries: bad cutoffs");
  }

  const PhaseSignature& sig() const { return sig_; }
  int fourier_cutoff() const { return kcut_; }
  int degree_cutoff() const { return dcut_; }
  int grade_denom() const { return gden_; }
  const std::map<TermKey, TrigPair>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }

  // Adds c*cos<k,x>*mono + s*sin<k,x>*mono at the given grade, canonicalizing
  // the orbit representative and dropping anything beyond the cutoffs.
  void add_term(std::vector<int> k, std::vector<int> j, int egrade, double c, double s) {
    if (static_cast<int>(k.size()) != sig_.m || static_cast<int>(j.size()) != sig_.vars())
      throw std::invalid_argument("FTSeries::add_term: index dimensions off");
    for (int d : j)
      if (d < 0) throw std::invalid_argument("FTSeries::add_term: negative degree");
    if (abs_sum(k) > kcut_ || abs_sum(j) > dcut_) return;
    canonicalize(k, s);
    if (is_zero(k)) s = 0.0;
    TermKey key{std::move(k), std::move(j), egrade};
    TrigPair& p = terms_[key];
    p.c += c;
    p.s += s;
    if (std::abs(p.c) < kPrune && std::abs(p.s) < kPrune) terms_.erase(key);
  }

  void prune() {
    for (auto it = terms_.begin(); it != terms_.end();) {
      if (std::abs(it->second.c) < kPrune && std::abs(it->second.s) < kPrune)
        it = terms_.erase(it);
      else
        ++it;
    }
  }

  // Looks up the (cos,sin) pair of a (k, j, egrade) term; zero when absent.
  TrigPair coeff(std::vector<int> k, std::vector<int> j, int egrade = 0) const {
    double sflip = 1.0;
    canonicalize(k, sflip);
    auto it = terms_.find(TermKey{std::move(k), std::move(j), egrade});
    if (it == terms_.end()) return {};
    return {it->second.c, sflip * it->second.s};
  }

  static bool is_zero(const std::vector<int>& k) {
    return std::all_of(k.begin(), k.end(), [](int x) { return x == 0; });
  }

  // Canonical orbit representative: first nonzero component positive.
  static void canonicalize(std::vector<int>& k, double& s) {
    for (int x : k) {
      if (x > 0) return;
      if (x < 0) {
        for (int& y : k) y = -y;
        s = -s;
        return;
      }
    }
  }

 private:
  PhaseSignature sig_;
  int kcut_ = 0;
  int dcut_ = 0;
  int gden_ = 1;
  std::map<TermKey, TrigPair> terms_;
};

inline void require_same_signature(const FTSeries& a, const FTSeries& b) {
  if (!(a.sig() == b.sig()))
    throw std::invalid_argument("FTSeries: signature mismatch");
  if (a.grade_denom() != b.grade_denom())
    throw std::invalid_argument("FTSeries: grade denominator mismatch");
}

inline FTSeries add(const FTSeries& a, const FTSeries& b) {
  require_same_signature(a, b);
  FTSeries out(a.sig(), std::min(a.fourier_cutoff(), b.fourier_cutoff()),
               std::min(a.degree_cutoff(), b.degree_cutoff()), a.grade_denom());
  for (const auto& [key, p] : a.terms()) out.add_term(key.k, key.j, key.egrade, p.c, p.s);
  for (const auto& [key, p] : b.terms()) out.add_term(key.k, key.j, key.egrade, p.c, p.s);
  return out;
}

inline FTSeries scale(const FTSeries& a, double factor) {
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms())
    out.add_term(key.k, key.j, key.egrade, factor * p.c, factor * p.s);
  return out;
}

inline FTSeries sub(const FTSeries& a, const FTSeries& b) {
  return add(a, scale(b, -1.0));
}

// Shifts every grade by delta_grade (in units of the series' grade_denom).
inline FTSeries shift_grade(const FTSeries& a, int delta_grade) {
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms())
    out.add_term(key.k, key.j, key.egrade + delta_grade, p.c, p.s);
  return out;
}

// True truncated product. Product-to-sum on the trig parts:
//   contributions land on k1+k2 and k1-k2 with half amplitudes.
// grade_cap (in grade_denom units) drops formal orders beyond the run's
// horizon; pass a huge value for the plain ring product.
inline FTSeries mul(const FTSeries& a, const FTSeries& b,
                    int grade_cap = std::numeric_limits<int>::max()) {
  require_same_signature(a, b);
  const int m = a.sig().m;
  FTSeries out(a.sig(), std::min(a.fourier_cutoff(), b.fourier_cutoff()),
               std::min(a.degree_cutoff(), b.degree_cutoff()), a.grade_denom());
  std::vector<int> ksum(m), kdif(m), jsum(a.sig().vars());
  for (const auto& [ka, pa] : a.terms()) {
    for (const auto& [kb, pb] : b.terms()) {
      const int grade = ka.egrade + kb.egrade;
      if (grade > grade_cap) continue;
      int jtot = 0;
      for (int i = 0; i < a.sig().vars(); ++i) {
        jsum[i] = ka.j[i] + kb.j[i];
        jtot += jsum[i];
      }
      if (jtot > out.degree_cutoff()) continue;
      for (int i = 0; i < m; ++i) {
        ksum[i] = ka.k[i] + kb.k[i];
        kdif[i] = ka.k[i] - kb.k[i];
      }
      const double c1 = pa.c, s1 = pa.s, c2 = pb.c, s2 = pb.s;
      out.add_term(ksum, jsum, grade, 0.5 * (c1 * c2 - s1 * s2), 0.5 * (c1 * s2 + s1 * c2));
      out.add_term(kdif, jsum, grade, 0.5 * (c1 * c2 + s1 * s2), 0.5 * (s1 * c2 - c1 * s2));
    }
  }
  out.prune();
  return out;
}

// Exact termwise derivative in an angle x_i.
inline FTSeries partial_x(const FTSeries& a, int i) {
  if (i < 0 || i >= a.sig().m) throw std::invalid_argument("partial_x: index");
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms()) {
    const double ki = static_cast<double>(key.k[i]);
    if (key.k[i] == 0) continue;
    // d/dx (c cos + s sin) = -c k sin + s k cos
    out.add_term(key.k, key.j, key.egrade, ki * p.s, -ki * p.c);
  }
  return out;
}

// Exact termwise derivative in polynomial variable `var` (0..m+2m0-1).
inline FTSeries partial_poly(const FTSeries& a, int var) {
  if (var < 0 || var >= a.sig().vars()) throw std::invalid_argument("partial_poly: index");
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms()) {
    if (key.j[var] == 0) continue;
    std::vector<int> j = key.j;
    const double d = static_cast<double>(j[var]);
    --j[var];
    out.add_term(key.k, j, key.egrade, d * p.c, d * p.s);
  }
  return out;
}

inline FTSeries partial_y(const FTSeries& a, int i) { return partial_poly(a, a.sig().y_index(i)); }
inline FTSeries partial_u(const FTSeries& a, int i) { return partial_poly(a, a.sig().u_index(i)); }
inline FTSeries partial_v(const FTSeries& a, int i) { return partial_poly(a, a.sig().v_index(i)); }

// Canonical bracket pairing (x,y) and (u,v):
// {F,G} = sum_i dF/dx_i dG/dy_i - dF/dy_i dG/dx_i
//       + sum_j dF/du_j dG/dv_j - dF/dv_j dG/du_j.
inline FTSeries poisson_bracket(const FTSeries& F, const FTSeries& G,
                                int grade_cap = std::numeric_limits<int>::max()) {
  require_same_signature(F, G);
  FTSeries out(F.sig(), std::min(F.fourier_cutoff(), G.fourier_cutoff()),
               std::min(F.degree_cutoff(), G.degree_cutoff()), F.grade_denom());
  for (int i = 0; i < F.sig().m; ++i) {
    out = add(out, mul(partial_x(F, i), partial_y(G, i), grade_cap));
    out = sub(out, mul(partial_y(F, i), partial_x(G, i), grade_cap));
  }
  for (int j = 0; j < F.sig().m0; ++j) {
    out = add(out, mul(partial_u(F, j), partial_v(G, j), grade_cap));
    out = sub(out, mul(partial_v(F, j), partial_u(G, j), grade_cap));
  }
  return out;
}

// Angle average [F] = x-average: the k = 0 slice.
inline FTSeries average(const FTSeries& a) {
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms())
    if (FTSeries::is_zero(key.k)) out.add_term(key.k, key.j, key.egrade, p.c, p.s);
  return out;
}

// Majorant norm: sum_{k,j} amp * e^{|k|_1 r} * s^{|j|_1}, an upper bound for
// sup |F| on D(r,s). Formal grades are substituted at eps.
inline double weighted_norm(const FTSeries& a, const DomainParams& dom, double eps = 1.0) {
  double total = 0.0;
  for (const auto& [key, p] : a.terms()) {
    const double amp = std::hypot(p.c, p.s);
    const double ew = std::pow(eps, static_cast<double>(key.egrade) / a.grade_denom());
    total += amp * ew * std::exp(abs_sum(key.k) * dom.r) * std::pow(dom.s, abs_sum(key.j));
  }
  return total;
}

struct TruncationSplit {
  FTSeries head;
  FTSeries tail;
};

// Partition F = head + tail: head obeys the new cutoffs (and, with
// quadratic_shape, keeps only (y,z)-degree <= 2); tail is the exact rest.
// Coefficients are moved, never recomputed, so head + tail == F bit for bit.
inline TruncationSplit truncate(const FTSeries& a, int k_new, int d_new,
                                bool quadratic_shape = false) {
  if (k_new > a.fourier_cutoff() || d_new > a.degree_cutoff())
    throw std::invalid_argument("truncate: cutoffs must not grow");
  const int dlim = quadratic_shape ? std::min(d_new, 2) : d_new;
  TruncationSplit out{FTSeries(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom()),
                      FTSeries(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom())};
  for (const auto& [key, p] : a.terms()) {
    const bool kept = abs_sum(key.k) <= k_new && abs_sum(key.j) <= dlim;
    (kept ? out.head : out.tail).add_term(key.k, key.j, key.egrade, p.c, p.s);
  }
  return out;
}

// Numeric value of the represented truncated function at a real phase point.
inline double evaluate(const FTSeries& a, std::span<const double> x,
                       std::span<const double> yuv, double eps = 1.0) {
  if (static_cast<int>(x.size()) != a.sig().m ||
      static_cast<int>(yuv.size()) != a.sig().vars())
    throw std::invalid_argument("evaluate: point dimensions off");
  double total = 0.0;
  for (const auto& [key, p] : a.terms()) {
    double phase = 0.0;
    for (int i = 0; i < a.sig().m; ++i) phase += key.k[i] * x[i];
    double mono = 1.0;
    for (int i = 0; i < a.sig().vars(); ++i)
      for (int d = 0; d < key.j[i]; ++d) mono *= yuv[i];
    const double ew = std::pow(eps, static_cast<double>(key.egrade) / a.grade_denom());
    total += ew * mono * (p.c * std::cos(phase) + p.s * std::sin(phase));
  }
  return total;
}

inline double evaluate(const FTSeries& a, const std::vector<double>& x,
                       const std::vector<double>& yuv, double eps = 1.0) {
  return evaluate(a, std::span<const double>(x), std::span<const double>(yuv), eps);
}

// ---- analytic seeds, expanded to the series cutoffs --------------------

// Monomial c * eps^grade * prod yuv^j * (cos|sin)<k,x>.
inline FTSeries make_term(const PhaseSignature& sig, int kcut, int dcut,
                          std::vector<int> k, std::vector<int> j, int egrade,
                          double c, double s = 0.0) {
  FTSeries out(sig, kcut, dcut);
  out.add_term(std::move(k), std::move(j), egrade, c, s);
  return out;
}

// cos(<coeffs,(y,u,v)> + phase0) as a Taylor polynomial to the degree cutoff.
inline FTSeries make_cos_linear(const PhaseSignature& sig, int kcut, int dcut,
                                const std::vector<int>& coeffs, double phase0,
                                int egrade) {
  if (static_cast<int>(coeffs.size()) != sig.vars())
    throw std::invalid_argument("make_cos_linear: coeff size");
  // cos(t + phase0) = cos(phase0) cos t - sin(phase0) sin t, t = <coeffs,w>.
  FTSeries lin(sig, kcut, dcut);
  std::vector<int> k0(sig.m, 0);
  for (int i = 0; i < sig.vars(); ++i) {
    if (coeffs[i] == 0) continue;
    std::vector<int> j(sig.vars(), 0);
    j[i] = 1;
    lin.add_term(k0, j, 0, static_cast<double>(coeffs[i]), 0.0);
  }
  FTSeries cospart = make_term(sig, kcut, dcut, k0, std::vector<int>(sig.vars(), 0), 0, 1.0);
  FTSeries sinpart(sig, kcut, dcut);
  FTSeries power = cospart;  // t^0
  double fact = 1.0;
  for (int n = 1; n <= dcut; ++n) {
    power = mul(power, lin);
    fact *= n;
    if (power.empty()) break;
    const int r = n % 4;
    // cos: 1, 0, -1, 0 ; sin: 0, 1, 0, -1
    if (r == 0) cospart = add(cospart, scale(power, 1.0 / fact));
    if (r == 2) cospart = add(cospart, scale(power, -1.0 / fact));
    if (r == 1) sinpart = add(sinpart, scale(power, 1.0 / fact));
    if (r == 3) sinpart = add(sinpart, scale(power, -1.0 / fact));
  }
  FTSeries out = add(scale(cospart, std::cos(phase0)), scale(sinpart, -std::sin(phase0)));
  return shift_grade(out, egrade);
}

inline FTSeries make_sin_linear(const PhaseSignature& sig, int kcut, int dcut,
                                const std::vector<int>& coeffs, double phase0,
                                int egrade) {
  // sin(t) = cos(t - pi/2)
  return make_cos_linear(sig, kcut, dcut, coeffs, phase0 - std::acos(-1.0) / 2.0, egrade);
}

// exp(<coeffs,(y,u,v)>) as a Taylor polynomial to the degree cutoff.
inline FTSeries make_exp_linear(const PhaseSignature& sig, int kcut, int dcut,
                                const std::vector<double>& coeffs, int egrade) {
  if (static_cast<int>(coeffs.size()) != sig.vars())
    throw std::invalid_argument("make_exp_linear: coeff size");
  FTSeries lin(sig, kcut, dcut);
  std::vector<int> k0(sig.m, 0);
  for (int i = 0; i < sig.vars(); ++i) {
    if (coeffs[i] == 0.0) continue;
    std::vector<int> j(sig.vars(), 0);
    j[i] = 1;
    lin.add_term(k0, j, 0, coeffs[i], 0.0);
  }
  FTSeries out = make_term(sig, kcut, dcut, k0, std::vector<int>(sig.vars(), 0), 0, 1.0);
  FTSeries power = out;
  double fact = 1.0;
  for (int n = 1; n <= dcut; ++n) {
    power = mul(power, lin);
    fact *= n;
    if (power.empty()) break;
    out = add(out, scale(power, 1.0 / fact));
  }
  return shift_grade(out, egrade);
}

// cos/sin of a pure x harmonic <k,x>.
inline FTSeries make_cos_x(const PhaseSignature& sig, int kcut, int dcut,
                           std::vector<int> k, int egrade = 0) {
  return make_term(sig, kcut, dcut, std::move(k), std::vector<int>(sig.vars(), 0), egrade, 1.0, 0.0);
}
inline FTSeries make_sin_x(const PhaseSignature& sig, int kcut, int dcut,
                           std::vector<int> k, int egrade = 0) {
  return make_term(sig, kcut, dcut, std::move(k), std::vector<int>(sig.vars(), 0), egrade, 0.0, 1.0);
}

// ---- substitutions ------------------------------------------------------

// F(x, w + w0) by exact polynomial re-expansion; w = (y,u,v).
inline FTSeries translate_poly(const FTSeries& a, const std::vector<double>& w0) {
  if (static_cast<int>(w0.size()) != a.sig().vars())
    throw std::invalid_argument("translate_poly: shift size");
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  const int nv = a.sig().vars();
  std::vector<std::vector<double>> binom(a.degree_cutoff() + 1);
  for (int n = 0; n <= a.degree_cutoff(); ++n) {
    binom[n].assign(n + 1, 1.0);
    for (int r = 1; r < n; ++r) binom[n][r] = binom[n - 1][r - 1] + binom[n - 1][r];
  }
  std::vector<int> jout(nv, 0);
  // expand each (w_i + w0_i)^{j_i}
  for (const auto& [key, p] : a.terms()) {
    std::vector<std::pair<std::vector<int>, double>> expansion{{std::vector<int>(nv, 0), 1.0}};
    for (int i = 0; i < nv; ++i) {
      if (key.j[i] == 0) continue;
      std::vector<std::pair<std::vector<int>, double>> next;
      const int n = key.j[i];
      for (const auto& [jprev, coef] : expansion) {
        double pw = 1.0;
        for (int r = n; r >= 0; --r) {
          // term binom(n,r) w^r w0^{n-r}
          std::vector<int> jn = jprev;
          jn[i] += r;
          double w0pow = 1.0;
          for (int t = 0; t < n - r; ++t) w0pow *= w0[i];
          next.emplace_back(std::move(jn), coef * binom[n][r] * w0pow);
          (void)pw;
        }
      }
      expansion = std::move(next);
    }
    for (const auto& [jn, coef] : expansion)
      out.add_term(key.k, jn, key.egrade, coef * p.c, coef * p.s);
  }
  out.prune();
  return out;
}

// Restricts to terms whose total (y,z) degree lies in [dmin, dmax].
inline FTSeries degree_slice(const FTSeries& a, int dmin, int dmax) {
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms()) {
    const int d = abs_sum(key.j);
    if (d >= dmin && d <= dmax) out.add_term(key.k, key.j, key.egrade, p.c, p.s);
  }
  return out;
}

// Copy with new cutoffs (terms beyond them are dropped).
inline FTSeries with_cutoffs(const FTSeries& a, int kcut, int dcut) {
  FTSeries out(a.sig(), kcut, dcut, a.grade_denom());
  for (const auto& [key, p] : a.terms()) out.add_term(key.k, key.j, key.egrade, p.c, p.s);
  return out;
}

inline double max_abs_coeff(const FTSeries& a) {
  double mx = 0.0;
  for (const auto& [key, p] : a.terms()) mx = std::max(mx, std::hypot(p.c, p.s));
  return mx;
}

}  // namespace nfkam

#endif
