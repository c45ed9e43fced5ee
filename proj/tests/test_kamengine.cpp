#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "nfkam/kamstep.hpp"
#include "nfkam/normalform.hpp"
#include "nfkam/rng.hpp"
#include "nfkam/schedule.hpp"
#include "nfkam/series.hpp"

using namespace nfkam;

namespace {

const double kPi = std::acos(-1.0);

FTSeries grade_slice(const FTSeries& a, int gmin, int gmax) {
  FTSeries out(a.sig(), a.fourier_cutoff(), a.degree_cutoff(), a.grade_denom());
  for (const auto& [key, p] : a.terms())
    if (key.egrade >= gmin && key.egrade <= gmax)
      out.add_term(key.k, key.j, key.egrade, p.c, p.s);
  return out;
}

int min_grade(const FTSeries& a) {
  int g = 1 << 20;
  for (const auto& [key, p] : a.terms()) g = std::min(g, key.egrade);
  return g;
}

bool has_mean_terms(const FTSeries& a) {
  for (const auto& [key, p] : a.terms())
    if (FTSeries::is_zero(key.k)) return true;
  return false;
}

// The appendix model pieces: Taylor factors in u and y.
struct AppendixModel {
  PhaseSignature sig{1, 1};
  int K, D;
  double omega;
  FTSeries cu, su, ey, e2y, sinx, cosx;
  AppendixModel(int K_, int D_, double om) : K(K_), D(D_), omega(om) {
    cu = make_cos_linear(sig, K, D, {0, 1, 0}, 0.0, 0);
    su = make_sin_linear(sig, K, D, {0, 1, 0}, 0.0, 0);
    ey = make_exp_linear(sig, K, D, {1.0, 0.0, 0.0}, 0);
    e2y = make_exp_linear(sig, K, D, {2.0, 0.0, 0.0}, 0);
    sinx = make_sin_x(sig, K, D, {1});
    cosx = make_cos_x(sig, K, D, {1});
  }
  NormalForm base_nf(double delta) const {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(3, 3);
    M(2, 2) = 1.0;  // (delta/2) v^2
    return NormalForm(sig, K, D, delta, Eigen::VectorXd::Constant(1, omega), M);
  }
};

// Forward flow of the generator: xdot = F_y, ydot = -F_x, udot = F_v,
// vdot = -F_u; classic fourth-order Runge-Kutta.
struct FlowField {
  std::vector<FTSeries> fy, fx, fu, fv;
  const PhaseSignature sig;
  double eps;
  FlowField(const FTSeries& F, double eps_) : sig(F.sig()), eps(eps_) {
    for (int i = 0; i < sig.m; ++i) {
      fy.push_back(partial_y(F, i));
      fx.push_back(partial_x(F, i));
    }
    for (int i = 0; i < sig.m0; ++i) {
      fu.push_back(partial_u(F, i));
      fv.push_back(partial_v(F, i));
    }
  }
  // state layout: x (m), then (y,u,v)
  std::vector<double> deriv(const std::vector<double>& st) const {
    std::vector<double> x(st.begin(), st.begin() + sig.m);
    std::vector<double> w(st.begin() + sig.m, st.end());
    std::vector<double> d(st.size());
    for (int i = 0; i < sig.m; ++i) {
      d[i] = evaluate(fy[i], x, w, eps);
      d[sig.m + sig.y_index(i)] = -evaluate(fx[i], x, w, eps);
    }
    for (int i = 0; i < sig.m0; ++i) {
      d[sig.m + sig.u_index(i)] = evaluate(fv[i], x, w, eps);
      d[sig.m + sig.v_index(i)] = -evaluate(fu[i], x, w, eps);
    }
    return d;
  }
  std::vector<double> flow(std::vector<double> st, double T, int nsteps) const {
    const double dt = T / nsteps;
    const size_t n = st.size();
    for (int s = 0; s < nsteps; ++s) {
      auto k1 = deriv(st);
      std::vector<double> tmp(n);
      for (size_t i = 0; i < n; ++i) tmp[i] = st[i] + 0.5 * dt * k1[i];
      auto k2 = deriv(tmp);
      for (size_t i = 0; i < n; ++i) tmp[i] = st[i] + 0.5 * dt * k2[i];
      auto k3 = deriv(tmp);
      for (size_t i = 0; i < n; ++i) tmp[i] = st[i] + dt * k3[i];
      auto k4 = deriv(tmp);
      for (size_t i = 0; i < n; ++i)
        st[i] += dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
    return st;
  }
};

}  // namespace

TEST_CASE("schedule updates match the closed-form sequences") {
  KamSchedule sch = practical_schedule(1e-3, 0.25, 1.0, 0.5);
  ScheduleFlags flags;
  KamSchedule s1 = schedule_next(sch, &flags);
  CHECK(s1.r == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s1.mu == doctest::Approx(64.0 * 64.0 * std::pow(1e-3, 13.0 / 12.0)).epsilon(1e-13));
  CHECK(s1.s == doctest::Approx(std::cbrt(1e-3) * 0.5 / 8.0).epsilon(1e-14));
  CHECK(s1.gamma == doctest::Approx(0.25 - 0.25 / 4.0).epsilon(1e-15));
  CHECK(s1.nu == 1);
  // the published constants only contract for extravagantly small mu
  CHECK_FALSE(flags.contracting);
  schedule_next(practical_schedule(1e-50), &flags);
  CHECK(flags.contracting);

  // gamma and r decrease monotonically to half their start
  KamSchedule cur = sch;
  double prev_gamma = cur.gamma;
  for (int i = 0; i < 40; ++i) {
    cur = schedule_next(cur);
    CHECK(cur.gamma < prev_gamma);
    CHECK(cur.gamma > 0.25 / 2.0 - 1e-12);
    prev_gamma = cur.gamma;
  }
  CHECK(cur.gamma == doctest::Approx(0.125).epsilon(1e-9));
  CHECK(cur.r == doctest::Approx(0.5).epsilon(1e-9));

  // non-contracting constants get flagged
  KamSchedule fat = practical_schedule(0.9);
  schedule_next(fat, &flags);
  CHECK_FALSE(flags.contracting);
}

TEST_CASE("l1 sphere count against exhaustive enumeration") {
  for (int m = 1; m <= 3; ++m)
    for (int n = 1; n <= 5; ++n) {
      // enumerate k in [-n, n]^m with |k|_1 == n
      int count = 0;
      std::vector<int> k(m, -n);
      while (true) {
        int a = 0;
        for (int v : k) a += std::abs(v);
        if (a == n) ++count;
        int i = 0;
        while (i < m && ++k[i] > n) k[i++] = -n;
        if (i == m) break;
      }
      CHECK(l1_sphere_count(m, n) == doctest::Approx(count));
    }
}

TEST_CASE("truncation: shapes, tails, and the exact partition") {
  PhaseSignature sig(1, 0);
  KamSchedule sch = practical_schedule();

  SUBCASE("single harmonic keeps degree <= 2, tail gets the rest") {
    FTSeries P(sig, 8, 5);
    P.add_term({1}, {1}, 0, 0.3, 0.0);   // y cos x
    P.add_term({1}, {3}, 0, 0.1, 0.0);   // y^3 cos x
    auto t = build_truncation(P, sch, 1.0, true);
    CHECK(t.R.size() == 1);
    CHECK(t.tail.size() == 1);
    CHECK(weighted_norm(sub(add(t.R, t.tail), P), DomainParams(1.0, 1.0)) == 0.0);
  }
  SUBCASE("harmonic beyond the cutoff goes entirely to the tail") {
    FTSeries P(sig, 8, 5);
    P.add_term({5}, {3}, 0, 0.0, 1.0);  // y^3 sin 5x
    auto t = build_truncation(P, sch, 1.0, false, /*k_override=*/3);
    CHECK(t.R.empty());
    CHECK(weighted_norm(sub(t.tail, P), DomainParams(1.0, 1.0)) == 0.0);
    CHECK(t.k_eff == 3);
  }
  SUBCASE("appendix perturbation: measured tail equals the direct sum") {
    AppendixModel mod(8, 6, 1.3);
    FTSeries P = add(shift_grade(mod.cu, 2),
                     shift_grade(mul(mul(mod.cu, mod.ey), mod.sinx), 1));
    const double delta = 0.1;
    auto t = build_truncation(P, sch, delta, true);
    // everything dropped is of degree > 2; sum the dropped majorant terms by
    // direct inspection of P
    const KamSchedule nxt = schedule_next(sch);
    const double ra = std::min(1.0, nxt.r + 7.0 / 8.0 * (sch.r - nxt.r));
    const double sa = std::min(1.0, sch.alpha() * sch.s);
    double direct = 0.0;
    for (const auto& [key, p] : P.terms())
      if (abs_sum(key.j) > 2)
        direct += std::hypot(p.c, p.s) * std::exp(abs_sum(key.k) * ra) *
                  std::pow(sa, abs_sum(key.j)) * std::pow(delta, key.egrade);
    CHECK(t.tail_norm == doctest::Approx(direct).epsilon(1e-13));
  }
}

TEST_CASE("homological solve: direct per-mode division oracle") {
  PhaseSignature sig(2, 0);
  const int K = 10, D = 4;
  Eigen::VectorXd omega(2);
  omega << 1.0, std::sqrt(2.0);
  NormalForm N(sig, K, D, 0.1, omega, Eigen::MatrixXd::Zero(2, 2));
  KamSchedule sch = practical_schedule();
  sch.gamma = sch.gamma0 = 1e-4;

  CounterRng rng(2024);
  FTSeries R(sig, K, D);
  for (int t = 0; t < 40; ++t) {
    std::vector<int> k{rng.next_int(-K / 2, K / 2), rng.next_int(-K / 2, K / 2)};
    if (k[0] == 0 && k[1] == 0) continue;
    std::vector<int> j{rng.next_int(0, 2), rng.next_int(0, 2)};
    R.add_term(k, j, rng.next_int(1, 3), rng.next_uniform(-1.0, 1.0),
               rng.next_uniform(-1.0, 1.0));
  }
  HomologicalSolution sol = solve_homological(N, R, sch);
  // independent division, term by term
  FTSeries expect(sig, K, D);
  for (const auto& [key, p] : R.terms()) {
    const double d = key.k[0] * omega(0) + key.k[1] * omega(1);
    expect.add_term(key.k, key.j, key.egrade, -p.s / d, p.c / d);
  }
  CHECK(weighted_norm(sub(sol.F, expect), DomainParams(0.5, 1.0)) <= 1e-12);
  CHECK(weighted_norm(average(sol.F), DomainParams(1.0, 1.0)) == 0.0);

  // x-independent input has nothing to solve
  FTSeries flat = make_term(sig, K, D, {0, 0}, {2, 0}, 1, 0.7);
  CHECK(solve_homological(N, flat, sch).F.empty());
}

TEST_CASE("homological solve: full operator identity on random instances") {
  PhaseSignature sig(2, 1);
  const int K = 8, D = 6;
  Eigen::VectorXd omega(2);
  omega << 1.0, 0.5 * (1.0 + std::sqrt(5.0));
  KamSchedule sch = practical_schedule();
  sch.gamma = sch.gamma0 = 1e-6;
  sch.tau = 3.0;

  CounterRng rng(77);
  for (int inst = 0; inst < 50; ++inst) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(4, 4);
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) M(a, b) = M(b, a) = rng.next_uniform(-0.5, 0.5);
    M += 2.0 * Eigen::MatrixXd::Identity(4, 4);
    NormalForm N(sig, K, D, 0.05, omega, M);
    // a few cubic h terms
    for (int t = 0; t < 3; ++t) {
      std::vector<int> j(4, 0);
      j[rng.next_int(0, 3)] += 1;
      j[rng.next_int(0, 3)] += 1;
      j[rng.next_int(0, 3)] += 1;
      N.h.add_term({0, 0}, j, 2, rng.next_uniform(-0.3, 0.3), 0.0);
    }
    FTSeries R(sig, K, D);
    for (int t = 0; t < 12; ++t) {
      std::vector<int> k{rng.next_int(-4, 4), rng.next_int(-4, 4)};
      std::vector<int> j(4, 0);
      int deg = rng.next_int(0, 2);
      for (int q = 0; q < deg; ++q) j[rng.next_int(0, 3)] += 1;
      R.add_term(k, j, rng.next_int(1, 3), rng.next_uniform(-1.0, 1.0),
                 rng.next_uniform(-1.0, 1.0));
    }
    HomologicalSolution sol = solve_homological(N, R, sch);

    // assemble {N,F} + R - [R] - R' from scratch
    FTSeries Ns = nf_series(N);
    FTSeries hhat = hhat_series(N);
    FTSeries resid = add(poisson_bracket(Ns, sol.F), sub(R, average(R)));
    for (int i = 0; i < sig.m0; ++i) {
      resid = sub(resid, mul(partial_u(hhat, i), partial_v(sol.F, i)));
      resid = add(resid, mul(partial_v(hhat, i), partial_u(sol.F, i)));
    }
    const DomainParams dom(0.5, 0.5);
    CHECK(weighted_norm(resid, dom, N.delta) <=
          1e-10 * weighted_norm(R, dom, N.delta));
    CHECK(weighted_norm(average(sol.F), DomainParams(1.0, 1.0)) == 0.0);
  }
}

TEST_CASE("homological solve: resonant mode raises the divisor error") {
  PhaseSignature sig(2, 0);
  Eigen::VectorXd omega(2);
  omega << 1.0, 1.0;
  NormalForm N(sig, 6, 4, 0.1, omega, Eigen::MatrixXd::Zero(2, 2));
  FTSeries R(sig, 6, 4);
  R.add_term({1, -1}, {0, 0}, 1, 1.0, 0.0);
  KamSchedule sch = practical_schedule();
  try {
    solve_homological(N, R, sch);
    FAIL("expected a divisor error");
  } catch (const SmallDivisorError& e) {
    CHECK(e.divisor == doctest::Approx(0.0));
    CHECK(std::abs(e.k[0]) == 1);
    CHECK(std::abs(e.k[1]) == 1);
    CHECK(std::string(e.what()).find("Diophantine") != std::string::npos);
  }
}

TEST_CASE("appendix first generator reproduced coefficient-wise") {
  AppendixModel mod(12, 6, 1.3);
  NormalForm N = mod.base_nf(0.1);
  KamSchedule sch = practical_schedule();
  FTSeries R = shift_grade(mul(mul(mod.cu, mod.ey), mod.sinx), 1);
  HomologicalSolution sol = solve_homological(N, R, sch);
  FTSeries expect = scale(shift_grade(mul(mul(mod.cu, mod.ey), mod.cosx), 1),
                          -1.0 / mod.omega);
  CHECK(weighted_norm(sub(sol.F, expect), DomainParams(0.5, 1.0)) <= 1e-13);
  CHECK(sol.min_divisor == doctest::Approx(mod.omega));
}

TEST_CASE("second-order averages of the appendix models") {
  // grade-2 slice of the x-average after one transform; compared on the
  // degree range untouched by product truncation
  const int K = 6, D = 10;
  const double om = 2.0;
  AppendixModel mod(K, D, om);

  SUBCASE("sin u forcing") {
    FTSeries H(mod.sig, K, D);
    H.add_term({0}, {1, 0, 0}, 0, om, 0.0);
    H.add_term({0}, {0, 0, 2}, 1, 0.5, 0.0);
    FTSeries cu_shift = make_cos_linear(mod.sig, K, D, {0, 1, 0}, kPi / 4.0, 2);
    H = add(H, cu_shift);
    H = add(H, shift_grade(mul(mul(mod.su, mod.ey), mod.sinx), 1));
    FTSeries F1 = scale(shift_grade(mul(mul(mod.su, mod.ey), mod.cosx), 1), -1.0 / om);
    FTSeries A = average(lie_transform(H, F1, 8));
    FTSeries got = degree_slice(grade_slice(A, 2, 2), 0, D - 2);
    FTSeries expect = add(
        cu_shift, scale(shift_grade(mul(mul(mod.su, mod.su), mod.e2y), 2), -0.5 / om));
    expect = degree_slice(expect, 0, D - 2);
    CHECK(weighted_norm(sub(got, expect), DomainParams(0.5, 0.5)) <= 1e-12);
  }
  SUBCASE("cos u forcing") {
    FTSeries H(mod.sig, K, D);
    H.add_term({0}, {1, 0, 0}, 0, om, 0.0);
    H.add_term({0}, {0, 0, 2}, 1, 0.5, 0.0);
    H = add(H, shift_grade(mod.cu, 2));
    H = add(H, shift_grade(mul(mul(mod.cu, mod.ey), mod.sinx), 1));
    FTSeries F1 = scale(shift_grade(mul(mul(mod.cu, mod.ey), mod.cosx), 1), -1.0 / om);
    FTSeries A = average(lie_transform(H, F1, 8));
    FTSeries got = degree_slice(grade_slice(A, 2, 2), 0, D - 2);
    // the cos u term survives with its sign, and the transform deposits
    // -cos^2 u e^{2y}/(2 omega) alongside it
    FTSeries expect =
        add(shift_grade(mod.cu, 2),
            scale(shift_grade(mul(mul(mod.cu, mod.cu), mod.e2y), 2), -0.5 / om));
    expect = degree_slice(expect, 0, D - 2);
    CHECK(weighted_norm(sub(got, expect), DomainParams(0.5, 0.5)) <= 1e-12);
  }
}

TEST_CASE("lie transform against the integrated flow") {
  PhaseSignature sig(1, 1);
  const int K = 6, D = 8;
  FTSeries H(sig, K, D);
  H.add_term({0}, {1, 0, 0}, 0, 1.1, 0.0);
  H.add_term({0}, {0, 0, 2}, 0, 0.5, 0.0);
  H.add_term({0}, {2, 0, 0}, 0, 0.25, 0.0);
  H = add(H, scale(mul(make_cos_linear(sig, K, D, {0, 1, 0}, 0.0, 0),
                       make_cos_x(sig, K, D, {1})),
                   0.3));
  FTSeries F(sig, K, D);
  F.add_term({1}, {2, 0, 0}, 0, 0.0, 8e-4);   // y^2 sin x
  F.add_term({1}, {0, 0, 1}, 0, 6e-4, 0.0);   // v cos x
  F.add_term({1}, {1, 1, 0}, 0, 5e-4, 0.0);   // y u cos x
  FTSeries HF = lie_transform(H, F, 6);

  FlowField field(F, 1.0);
  CounterRng rng(555);
  for (int p = 0; p < 20; ++p) {
    std::vector<double> st{rng.uniform(4 * p + 0, 0.0, 2.0 * kPi),
                           rng.uniform(4 * p + 1, -0.3, 0.3),
                           rng.uniform(4 * p + 2, -0.3, 0.3),
                           rng.uniform(4 * p + 3, -0.3, 0.3)};
    std::vector<double> x{st[0]};
    std::vector<double> w{st[1], st[2], st[3]};
    const double lhs = evaluate(HF, x, w, 1.0);
    std::vector<double> end = field.flow(st, 1.0, 400);
    std::vector<double> xe{end[0]};
    std::vector<double> we{end[1], end[2], end[3]};
    const double rhs = evaluate(H, xe, we, 1.0);
    CHECK(std::abs(lhs - rhs) <= 1e-8);
  }

  // F = 0 leaves H untouched
  CHECK(weighted_norm(sub(lie_transform(H, FTSeries(sig, K, D), 6), H),
                      DomainParams(1.0, 1.0)) == 0.0);
}

TEST_CASE("full frequency shift") {
  PhaseSignature sig(2, 1);
  Eigen::VectorXd omega(2);
  omega << 1.0, 1.5;
  Eigen::MatrixXd M(4, 4);
  M << 2.0, 0.3, 0.1, 0.0, 0.3, 1.5, 0.0, 0.2, 0.1, 0.0, 1.0, 0.1, 0.0, 0.2, 0.1, 1.2;
  const double delta = 0.1;

  SUBCASE("zero data and the linear closed form") {
    NormalForm N(sig, 6, 6, delta, omega, M);
    ShiftResult z = frequency_shift_full(N, Eigen::VectorXd::Zero(2),
                                         Eigen::VectorXd::Zero(2));
    CHECK(z.w0.norm() == 0.0);
    Eigen::VectorXd p(4);
    p << 1e-3, -2e-3, 5e-4, 1e-3;
    ShiftResult r = frequency_shift_full(N, p.head(2), p.tail(2));
    Eigen::VectorXd expect = -(1.0 / delta) * M.inverse() * p;
    CHECK((r.w0 - expect).lpNorm<Eigen::Infinity>() <= 1e-13);
  }
  SUBCASE("cubic h with a manufactured solution and finite-difference data") {
    NormalForm N(sig, 6, 6, delta, omega, M);
    N.h.add_term({0, 0}, {3, 0, 0, 0}, 1, 0.4, 0.0);
    N.h.add_term({0, 0}, {1, 0, 2, 0}, 1, -0.2, 0.0);
    N.h.add_term({0, 0}, {0, 1, 1, 1}, 2, 0.3, 0.0);
    Eigen::VectorXd wstar(4);
    wstar << 0.01, -0.02, 0.015, 0.005;
    // p chosen so wstar solves the shift equation; h-gradient by central
    // differences of a plain evaluation
    Eigen::VectorXd gradh(4);
    const double hh = 1e-6;
    std::vector<double> x0{0.0, 0.0};
    for (int i = 0; i < 4; ++i) {
      std::vector<double> wp(wstar.data(), wstar.data() + 4), wm = wp;
      wp[i] += hh;
      wm[i] -= hh;
      gradh(i) = (evaluate(N.h, x0, wp, delta) - evaluate(N.h, x0, wm, delta)) / (2 * hh);
    }
    Eigen::VectorXd p = -(delta * M * wstar + gradh);
    ShiftResult r = frequency_shift_full(N, p.head(2), p.tail(2));
    CHECK((r.w0 - wstar).lpNorm<Eigen::Infinity>() <= 1e-9);
  }
  SUBCASE("singular M is rejected toward the partial variant") {
    Eigen::MatrixXd Ms = Eigen::MatrixXd::Zero(4, 4);
    Ms(0, 0) = 1.0;
    Ms(2, 2) = 1.0;
    Ms(3, 3) = 1.0;
    NormalForm N(sig, 6, 6, delta, omega, Ms);
    CHECK_THROWS_WITH_AS(frequency_shift_full(N, Eigen::VectorXd::Zero(2),
                                              Eigen::VectorXd::Zero(2)),
                         doctest::Contains("partial"), std::runtime_error);
  }
}

TEST_CASE("partial frequency shift") {
  PhaseSignature sig(2, 1);
  Eigen::VectorXd omega(2);
  omega << 1.0, 1.4;
  const double delta = 0.1;
  Eigen::VectorXd p(4);
  p << 2e-3, -1e-3, 5e-4, -8e-4;

  SUBCASE("rank-3 diagonal example against the direct subsystem solve") {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(4, 4);
    M(0, 0) = 1.0;
    M(2, 2) = 1.0;
    M(3, 3) = 1.0;
    NormalForm N(sig, 6, 6, delta, omega, M);
    PartialShiftResult r = frequency_shift_partial(N, p.head(2), p.tail(2));
    CHECK(r.n == 1);
    CHECK(r.preserved == std::vector<int>{0});
    CHECK(r.w0(1) == 0.0);
    // direct 3x3 solve on rows/cols {0,2,3}
    Eigen::Matrix3d C;
    C << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0;
    Eigen::Vector3d psub(p(0), p(2), p(3));
    Eigen::Vector3d wsub = -(1.0 / delta) * C.inverse() * psub;
    CHECK(std::abs(r.w0(0) - wsub(0)) <= 1e-12);
    CHECK(std::abs(r.w0(2) - wsub(1)) <= 1e-12);
    CHECK(std::abs(r.w0(3) - wsub(2)) <= 1e-12);
    // the dropped action row drifts by exactly its data component
    CHECK(r.drift(0) == 0.0);
    CHECK(r.drift(1) == doctest::Approx(p(1)).epsilon(1e-12));
    // permutation structure: T moves y2 to the back, T1 is unit lower
    CHECK(r.T.col(3)(1) == 1.0);
    CHECK(r.T1(3, 3) == 1.0);
  }
  SUBCASE("permuted example follows the pivot rows") {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(4, 4);
    M(1, 1) = 1.0;
    M(2, 2) = 1.0;
    M(3, 3) = 1.0;
    NormalForm N(sig, 6, 6, delta, omega, M);
    PartialShiftResult r = frequency_shift_partial(N, p.head(2), p.tail(2));
    CHECK(r.preserved == std::vector<int>{1});
    CHECK(r.w0(0) == 0.0);
    CHECK(r.drift(0) == doctest::Approx(p(0)).epsilon(1e-12));
    // pivot choice is invariant under positive scaling of M
    NormalForm N5(sig, 6, 6, delta, omega, 5.0 * M);
    CHECK(frequency_shift_partial(N5, p.head(2), p.tail(2)).preserved ==
          std::vector<int>{1});
  }
  SUBCASE("full-rank M reduces to the full shift with zero drift") {
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(4, 4);
    M(0, 1) = M(1, 0) = 0.2;
    NormalForm N(sig, 6, 6, delta, omega, M);
    PartialShiftResult r = frequency_shift_partial(N, p.head(2), p.tail(2));
    ShiftResult full = frequency_shift_full(N, p.head(2), p.tail(2));
    CHECK((r.w0 - full.w0).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK(r.drift.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(r.preserved == std::vector<int>{0, 1});
  }
  SUBCASE("deficient normal block is diagnosed") {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(4, 4);
    M(0, 0) = 1.0;
    M(1, 1) = 1.0;
    M(2, 2) = 1.0;  // v-row is identically zero
    NormalForm N(sig, 6, 6, delta, omega, M);
    CHECK_THROWS_WITH_AS(frequency_shift_partial(N, p.head(2), p.tail(2)),
                         doctest::Contains("M21"), std::runtime_error);
  }
}

TEST_CASE("isoenergetic frequency shift") {
  SUBCASE("one-degree closed-form elimination") {
    PhaseSignature sig(1, 0);
    const double delta = 0.1, om = 1.0;
    NormalForm N(sig, 4, 4, delta, Eigen::VectorXd::Constant(1, om),
                 Eigen::MatrixXd::Constant(1, 1, 1.0));
    ShiftData data;
    data.p000 = 1e-3;
    data.p010 = Eigen::VectorXd::Constant(1, 2e-3);
    data.p001 = Eigen::VectorXd(0);
    data.pquad = Eigen::MatrixXd::Constant(1, 1, 5e-4);
    IsoShiftResult r = frequency_shift_isoenergetic(N, data);
    // eliminate y = (t om - p)/delta and solve the resulting quadratic in t
    const double pp = data.p010(0);
    auto energy = [&](double t) {
      const double y = (t * om - pp) / delta;
      return om * y + 0.5 * delta * y * y + data.p000 + pp * y +
             data.pquad(0, 0) * y * y;
    };
    // bisection near zero as an independent root find
    double lo = -0.1, hi = 0.1;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (energy(lo) * energy(mid) <= 0.0)
        hi = mid;
      else
        lo = mid;
    }
    const double t_star = 0.5 * (lo + hi);
    CHECK(std::abs(r.t - t_star) <= 1e-10);
    CHECK(std::abs(r.w0(0) - (t_star * om - pp) / delta) <= 1e-9);
    CHECK(r.energy_residual <= 1e-11);
  }
  SUBCASE("zero data gives the identity with ratio one") {
    PhaseSignature sig(2, 1);
    Eigen::VectorXd omega(2);
    omega << 1.0, 1.7;
    NormalForm N(sig, 4, 4, 0.1, omega, Eigen::MatrixXd::Identity(4, 4));
    ShiftData data;
    data.p010 = Eigen::VectorXd::Zero(2);
    data.p001 = Eigen::VectorXd::Zero(2);
    data.pquad = Eigen::MatrixXd::Zero(4, 4);
    IsoShiftResult r = frequency_shift_isoenergetic(N, data);
    CHECK(r.w0.norm() == 0.0);
    CHECK(r.t == 0.0);
  }
  SUBCASE("energy pinned on a coupled instance") {
    PhaseSignature sig(2, 1);
    Eigen::VectorXd omega(2);
    omega << 1.0, 1.7;
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(4, 4);
    M(0, 1) = M(1, 0) = 0.3;
    M(2, 3) = M(3, 2) = 0.1;
    NormalForm N(sig, 6, 6, 0.1, omega, M);
    N.h.add_term({0, 0}, {2, 1, 0, 0}, 1, 0.2, 0.0);
    ShiftData data;
    data.p000 = -2e-3;
    data.p010 = Eigen::VectorXd(2);
    data.p010 << 1e-3, -5e-4;
    data.p001 = Eigen::VectorXd(2);
    data.p001 << 3e-4, 2e-4;
    data.pquad = Eigen::MatrixXd::Zero(4, 4);
    data.pquad(0, 0) = 1e-3;
    IsoShiftResult r = frequency_shift_isoenergetic(N, data, false, 0.0);
    // recompute the pinned energy independently
    std::vector<double> x0{0.0, 0.0};
    std::vector<double> w(r.w0.data(), r.w0.data() + 4);
    const double e = omega.dot(r.w0.head(2)) + 0.05 * r.w0.dot(M * r.w0) +
                     data.p000 + data.p010.dot(r.w0.head(2)) +
                     data.p001.dot(r.w0.tail(2)) + r.w0.dot(data.pquad * r.w0) +
                     evaluate(N.h, x0, w, 0.1);
    CHECK(std::abs(e) <= 1e-11);
    CHECK(r.energy_residual <= 1e-11);
  }
}

namespace {

// Nondegenerate two-frequency model with one normal pair, used by the full
// step tests.
struct ConvexModel {
  PhaseSignature sig{2, 1};
  int K = 8, D = 6;
  double delta = 0.05;
  NormalForm N;
  FTSeries P;
  ConvexModel(double amp = 1e-3) : N(), P() {
    Eigen::VectorXd omega(2);
    omega << 1.0, 0.5 * (1.0 + std::sqrt(5.0));
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(4, 4);
    M(0, 1) = M(1, 0) = 0.1;
    M(2, 3) = M(3, 2) = 0.05;
    N = NormalForm(sig, K, D, delta, omega, M);
    P = FTSeries(sig, K, D);
    P.add_term({1, 0}, {0, 0, 0, 0}, 1, amp, 0.0);
    P.add_term({1, 0}, {1, 0, 0, 0}, 1, 0.5 * amp, 0.0);
    P.add_term({1, 1}, {0, 0, 0, 1}, 1, 0.0, 0.7 * amp);
    P.add_term({0, 1}, {0, 0, 1, 0}, 1, 0.3 * amp, 0.0);
    P.add_term({0, 0}, {2, 0, 0, 0}, 1, 0.4 * amp, 0.0);
    P.add_term({0, 0}, {0, 0, 1, 1}, 1, 0.2 * amp, 0.0);
    P.add_term({2, -1}, {0, 1, 0, 0}, 1, 0.0, 0.4 * amp);
  }
};

}  // namespace

TEST_CASE("kam step: identity on zero perturbation") {
  ConvexModel mod;
  KamSchedule sch = practical_schedule();
  KamStepResult r = kam_step(mod.N, FTSeries(mod.sig, mod.K, mod.D), sch,
                             ShiftMode::plain);
  CHECK(r.P_plus.empty());
  CHECK(r.record.F.empty());
  CHECK(r.record.w0.norm() == 0.0);
  CHECK((r.N_plus.omega - mod.N.omega).lpNorm<Eigen::Infinity>() <= 1e-14);
  CHECK((r.N_plus.M - mod.N.M).lpNorm<Eigen::Infinity>() <= 1e-13);
  CHECK(r.N_plus.h.empty());
}

TEST_CASE("kam step: plain mode invariants and contraction") {
  ConvexModel mod;
  KamSchedule sch = practical_schedule(1e-3, 1e-5);
  KamStepResult r = kam_step(mod.N, mod.P, sch, ShiftMode::plain);

  // absorbed averages: nothing x-independent is left in the perturbation
  CHECK_FALSE(has_mean_terms(r.P_plus));
  // frequencies restored
  CHECK(r.report.omega_drift.lpNorm<Eigen::Infinity>() <= 1e-12);
  // mean-free generator
  CHECK(weighted_norm(average(r.record.F), DomainParams(1.0, 1.0)) == 0.0);
  // homological defect small relative to the data
  const DomainParams dom(std::min(1.0, sch.r), sch.s);
  CHECK(r.report.residual_hom <= 1e-10 * weighted_norm(mod.P, dom, mod.delta));
  // quadratic-flavor contraction of the perturbation norm
  CHECK(r.report.post_norm <= std::pow(r.report.pre_norm, 1.05));
  CHECK(r.report.post_norm < r.report.pre_norm);
  // leftovers dropped from the normal form stay at Newton tolerance
  CHECK(r.report.dropped_linear <= 1e-12);
}

TEST_CASE("kam step: energy bookkeeping in isoenergetic mode") {
  ConvexModel mod;
  KamSchedule sch = practical_schedule(1e-3, 1e-5);
  KamStepResult r = kam_step(mod.N, mod.P, sch, ShiftMode::isoenergetic);
  // omega_+ = (1 + t) omega
  Eigen::VectorXd expect = (1.0 + r.record.t) * mod.N.omega;
  CHECK((r.N_plus.omega - expect).lpNorm<Eigen::Infinity>() <= 1e-11);
  CHECK(r.record.t != 0.0);
  // energy at the new torus equals the prescribed energy
  CHECK(std::abs(r.N_plus.e - mod.N.e) <= 1e-11);
  CHECK(r.report.energy_residual <= 1e-11);
  CHECK_FALSE(has_mean_terms(r.P_plus));
}

TEST_CASE("kam step: partial mode preserves the pivot frequencies") {
  ConvexModel mod;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(4, 4);
  M(0, 0) = 1.0;
  M(2, 2) = 1.0;
  M(3, 3) = 1.0;
  mod.N.M = M;
  KamSchedule sch = practical_schedule(1e-3, 1e-5);
  KamStepResult r = kam_step(mod.N, mod.P, sch, ShiftMode::partial);
  CHECK(r.record.preserved == std::vector<int>{0});
  CHECK(std::abs(r.report.omega_drift(0)) <= 1e-12);
  CHECK(r.record.w0(1) == 0.0);
  CHECK(std::abs(r.report.omega_drift(1)) > 1e-12);  // honest drift
  CHECK_FALSE(has_mean_terms(r.P_plus));
  // T sends the dropped action to the back slot
  CHECK(r.record.T(1, 3) == 1.0);
}

TEST_CASE("kam step: composed map is symplectic") {
  ConvexModel mod(5e-3);
  KamSchedule sch = practical_schedule(1e-3, 1e-5);
  KamStepResult r = kam_step(mod.N, mod.P, sch, ShiftMode::plain);

  // step map: translate in (y,z), then flow the generator to time 1
  FlowField field(r.record.F, mod.delta);
  auto stepmap = [&](const std::vector<double>& st) {
    std::vector<double> shifted = st;
    for (int i = 0; i < 4; ++i) shifted[2 + i] += r.record.w0(i);
    return field.flow(shifted, 1.0, 60);
  };
  Eigen::MatrixXd Omega = Eigen::MatrixXd::Zero(6, 6);
  Omega(0, 2) = Omega(1, 3) = Omega(4, 5) = 1.0;
  Omega(2, 0) = Omega(3, 1) = Omega(5, 4) = -1.0;

  CounterRng rng(31);
  const double hh = 1e-5;
  for (int pt = 0; pt < 100; ++pt) {
    std::vector<double> st(6);
    st[0] = rng.uniform(8 * pt + 0, 0.0, 2.0 * kPi);
    st[1] = rng.uniform(8 * pt + 1, 0.0, 2.0 * kPi);
    for (int i = 2; i < 6; ++i) st[i] = rng.uniform(8 * pt + i, -0.2, 0.2);
    Eigen::MatrixXd G(6, 6);
    for (int c = 0; c < 6; ++c) {
      std::vector<double> sp = st, sm = st;
      sp[c] += hh;
      sm[c] -= hh;
      auto fp = stepmap(sp);
      auto fm = stepmap(sm);
      for (int rix = 0; rix < 6; ++rix) G(rix, c) = (fp[rix] - fm[rix]) / (2 * hh);
    }
    CHECK((G.transpose() * Omega * G - Omega).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
}

TEST_CASE("kam step: two formal steps on the appendix model") {
  const int K = 6, D = 6;
  const double om = 1.3, eps = 0.1;
  AppendixModel mod(K, D, om);
  NormalForm N = mod.base_nf(eps);
  FTSeries P = add(shift_grade(mod.cu, 2),
                   shift_grade(mul(mul(mod.cu, mod.ey), mod.sinx), 1));
  KamSchedule sch = practical_schedule();
  StepOptions opts;
  opts.quadratic_shape = false;
  opts.grade_cap = 4;

  KamStepResult s1 = kam_step(N, P, sch, ShiftMode::none, opts);
  CHECK(min_grade(s1.P_plus) >= 2);
  CHECK_FALSE(has_mean_terms(s1.P_plus));
  // absorbed energy constant: eps^2 (1 - 1/(2 omega)) at leading order
  CHECK(s1.N_plus.e ==
        doctest::Approx(eps * eps * (1.0 - 0.5 / om)).epsilon(2e-2));

  // the formal iteration reuses a fresh schedule and works to a finite grade
  // horizon: only the grading matters
  FTSeries P2 = grade_slice(s1.P_plus, 0, 4);
  KamStepResult s2 = kam_step(s1.N_plus, P2, sch, ShiftMode::none, opts);
  CHECK(min_grade(s2.P_plus) >= 3);
  CHECK_FALSE(has_mean_terms(s2.P_plus));
  // the quadratic record of the step is available for degeneracy assembly
  CHECK_FALSE(s1.rbar2.empty());
}
