#ifndef NFKAM_SCHEDULE_HPP
#define NFKAM_SCHEDULE_HPP

#include <cmath>
#include <stdexcept>

namespace nfkam {

// Per-step KAM smallness data plus the run constants. The "paper" profile
// carries the published constants; the "practical" profile replaces the
// blow-up constants by O(1) values so the schedule is meaningful at machine
// scale while every algebraic identity stays exact.
struct KamSchedule {
  // per-step
  double r = 1.0;
  double s = 0.5;
  double gamma = 0.25;
  double mu = 1e-3;
  int nu = 0;

  // run constants
  double r0 = 1.0;
  double gamma0 = 0.25;
  double mu0 = 1e-3;
  double tau = 3.0;
  double sigma = 1.0 / 12.0;
  double lambda0 = 0.5;
  int eta = 9;  // smallest integer with (1+sigma)^eta > 2 at sigma = 1/12
  double b = 1.0;
  double c0 = 1.0;
  int l0 = 2;
  bool strict = false;

  double alpha() const { return std::cbrt(mu); }
  // ([log 1/mu]+1)^{3 eta}; astronomically large in the paper profile, so it
  // is kept as a double and capped by the series cutoff downstream
  double k_plus() const {
    return std::pow(std::floor(std::log(1.0 / mu)) + 1.0, 3.0 * eta);
  }
  double chi() const { return (b + 2.0) * tau + 5.0 * l0 + 10.0; }

  bool valid() const { return r > 0 && s > 0 && gamma > 0 && mu > 0; }
};

inline KamSchedule practical_schedule(double mu0 = 1e-3, double gamma0 = 0.25,
                                      double r0 = 1.0, double s0 = 0.5) {
  KamSchedule sch;
  sch.r = sch.r0 = r0;
  sch.gamma = sch.gamma0 = gamma0;
  sch.mu = sch.mu0 = mu0;
  sch.s = s0;
  return sch;
}

inline KamSchedule paper_schedule(int m, int m0, double mu0, double gamma0,
                                  double r0 = 1.0, double s0 = 0.5) {
  KamSchedule sch = practical_schedule(mu0, gamma0, r0, s0);
  sch.l0 = m + 2 * m0;
  sch.b = (2.0 * sch.l0 * sch.l0 + 3.0) * (m + 2.0 * m0) * (m + 2.0 * m0);
  sch.c0 = 64.0;
  return sch;
}

struct ScheduleFlags {
  bool contracting = true;  // mu_+ < mu
};

inline KamSchedule schedule_next(const KamSchedule& sch, ScheduleFlags* flags = nullptr) {
  if (!sch.valid()) throw std::invalid_argument("schedule_next: invalid schedule");
  KamSchedule next = sch;
  next.s = sch.alpha() * sch.s / 8.0;
  next.mu = std::pow(64.0 * sch.c0, 1.0 / (1.0 - sch.lambda0)) * std::pow(sch.mu, 1.0 + sch.sigma);
  // r_nu = r_0 (1 - sum_{i=1}^nu 1/2^{i+1}), so both r and gamma decrease to
  // half their initial value.
  next.r = sch.r - sch.r0 / std::pow(2.0, sch.nu + 2);
  next.gamma = sch.gamma - sch.gamma0 / std::pow(2.0, sch.nu + 2);
  next.nu = sch.nu + 1;
  if (flags) flags->contracting = next.mu < sch.mu;
  return next;
}

// Number of lattice points in Z^m with |k|_1 = n.
inline double l1_sphere_count(int m, int n) {
  if (n == 0) return 1.0;
  double total = 0.0;
  for (int j = 1; j <= std::min(m, n); ++j) {
    double binom_mj = 1.0, binom_n = 1.0;
    for (int i = 0; i < j; ++i) binom_mj = binom_mj * (m - i) / (i + 1);
    for (int i = 0; i < j - 1; ++i) binom_n = binom_n * (n - 1 - i) / (i + 1);
    total += std::pow(2.0, j) * binom_mj * binom_n;
  }
  return total;
}

// Gamma(r - r_+) = sum_{0<|k|<=K} |k|^chi e^{-|k| (r - r_+)/8}
inline double gamma_compressor(const KamSchedule& sch, int m, double r_next, int k_eff) {
  const double gap = (sch.r - r_next) / 8.0;
  double total = 0.0;
  for (int n = 1; n <= k_eff; ++n)
    total += l1_sphere_count(m, n) * std::pow(n, sch.chi()) * std::exp(-n * gap);
  return total;
}

// int_K^inf x^a e^{-c x} dx = e^{-cK} sum_{i=0}^a (a!/i!) K^i / c^{a-i+1}.
inline double exp_tail_integral(int a, double c, double K) {
  double acc = std::pow(K, a) / c;
  double fall = 1.0;
  for (int i = a - 1; i >= 0; --i) {
    fall *= (i + 1);
    acc += fall * std::pow(K, i) / std::pow(c, a - i + 1);
  }
  return acc * std::exp(-c * K);
}

struct HConditionReport {
  bool h1 = true, h2 = true, h3 = true, h4 = true, h5 = true, h6 = true, h7 = true;
  double k_plus = 0.0;
  int k_eff = 0;
  double tail_integral = 0.0;
  double gamma_r = 0.0;  // compressor value
  bool all() const { return h1 && h2 && h3 && h4 && h5 && h6 && h7; }
};

// H1, H2, H4-H7 from the schedule alone (H3 needs the h-series history and is
// filled in by the step driver).
inline HConditionReport check_h_conditions(const KamSchedule& sch, int m, int k_eff) {
  HConditionReport rep;
  const KamSchedule nxt = schedule_next(sch);
  rep.k_plus = sch.k_plus();
  rep.k_eff = k_eff;
  const double gap = sch.r - nxt.r;
  rep.h1 = rep.k_plus >= 8.0 * (m + sch.l0) / gap;
  rep.tail_integral = exp_tail_integral(m + sch.l0, gap / 8.0, rep.k_plus);
  rep.h2 = rep.tail_integral <= sch.mu;
  rep.h4 = sch.s * std::pow(rep.k_plus, (sch.l0 + 1.0) * sch.tau + 2.0 * sch.l0) <= sch.gamma;
  rep.gamma_r = gamma_compressor(sch, m, nxt.r, k_eff);
  const double musig = std::pow(sch.mu, sch.sigma);
  rep.h5 = musig * rep.gamma_r < gap / 8.0;
  rep.h6 = musig * rep.gamma_r < sch.alpha() / 8.0;
  rep.h7 = musig * rep.gamma_r * rep.gamma_r * rep.gamma_r <=
           std::pow(nxt.gamma / sch.gamma, sch.b);
  return rep;
}

}  // namespace nfkam

#endif
