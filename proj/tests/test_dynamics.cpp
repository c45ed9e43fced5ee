#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <vector>

#include "nfkam/dynamics.hpp"
#include "nfkam/rng.hpp"
#include "nfkam/series.hpp"

using namespace nfkam;

namespace {

const double kPi = std::acos(-1.0);

// omega*y + (u^2 + v^2)/2, plus an optional cubic coupling
FTSeries oscillator(double omega, double cubic = 0.0) {
  PhaseSignature sig(1, 1);
  FTSeries H(sig, 4, 6);
  H.add_term({0}, {1, 0, 0}, 0, omega, 0.0);
  H.add_term({0}, {0, 2, 0}, 0, 0.5, 0.0);
  H.add_term({0}, {0, 0, 2}, 0, 0.5, 0.0);
  if (cubic != 0.0) {
    H.add_term({0}, {1, 2, 0}, 0, cubic, 0.0);
    H.add_term({1}, {0, 1, 0}, 0, 0.0, cubic);  // sin x coupling
  }
  return H;
}

}  // namespace

TEST_CASE("implicit midpoint integrator") {
  SUBCASE("linear flow is reproduced exactly") {
    PhaseSignature sig(1, 0);
    FTSeries H(sig, 2, 2);
    H.add_term({0}, {1}, 0, 1.7, 0.0);
    Eigen::VectorXd z0(2);
    z0 << 0.3, 0.9;
    Trajectory traj = integrate(H, 1.0, z0, 100.0, 0.01);
    const Eigen::VectorXd& zT = traj.states.back();
    CHECK(std::abs(zT(0) - (0.3 + 1.7 * 100.0)) <= 1e-12 * 170.0);
    CHECK(zT(1) == 0.9);
    CHECK(traj.times.size() == 10001);
  }
  SUBCASE("harmonic oscillator energy drift") {
    FTSeries H = oscillator(1.3);
    Eigen::VectorXd z0(4);
    z0 << 0.2, 0.4, 1.0, 0.0;
    Trajectory traj = integrate(H, 1.0, z0, 100.0, 0.01);  // 1e4 steps
    double drift = 0.0;
    for (double e : traj.energy) drift = std::max(drift, std::abs(e - traj.energy[0]));
    CHECK(drift <= 1e-12);
  }
  SUBCASE("time reversibility") {
    FTSeries H = oscillator(1.3, 0.2);
    Eigen::VectorXd z0(4);
    z0 << 0.1, 0.5, 0.7, -0.3;
    Trajectory fwd = integrate(H, 1.0, z0, 10.0, 0.01);
    Trajectory back = integrate(scale(H, -1.0), 1.0, fwd.states.back(), 10.0, 0.01);
    CHECK((back.states.back() - z0).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
  SUBCASE("energy error scales like dt^2") {
    FTSeries H = oscillator(1.0, 0.3);
    Eigen::VectorXd z0(4);
    z0 << 0.0, 0.3, 0.8, 0.1;
    double worst1 = 0.0, worst2 = 0.0;
    for (double e : integrate(H, 1.0, z0, 20.0, 0.02).energy)
      worst1 = std::max(worst1, std::abs(e - integrate(H, 1.0, z0, 0.02, 0.02).energy[0]));
    for (double e : integrate(H, 1.0, z0, 20.0, 0.01).energy)
      worst2 = std::max(worst2, std::abs(e - integrate(H, 1.0, z0, 0.01, 0.01).energy[0]));
    CHECK(worst2 <= 0.3 * worst1);  // second order: factor ~4
  }
  SUBCASE("symplecticity of the one-step map") {
    FTSeries H = oscillator(0.9, 0.25);
    const double dt = 1e-2, h = 1e-6;
    Eigen::MatrixXd Om = Eigen::MatrixXd::Zero(4, 4);
    Om(0, 1) = Om(2, 3) = 1.0;
    Om(1, 0) = Om(3, 2) = -1.0;
    CounterRng rng(17);
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd z(4);
      for (int i = 0; i < 4; ++i) z(i) = rng.uniform(4 * t + i, -0.8, 0.8);
      Eigen::MatrixXd G(4, 4);
      for (int j = 0; j < 4; ++j) {
        Eigen::VectorXd zp = z, zm = z;
        zp(j) += h;
        zm(j) -= h;
        G.col(j) = (integrate(H, 1.0, zp, dt, dt).states.back() -
                    integrate(H, 1.0, zm, dt, dt).states.back()) /
                   (2.0 * h);
      }
      CHECK((G.transpose() * Om * G - Om).lpNorm<Eigen::Infinity>() <= 1e-8);
    }
  }
  SUBCASE("non-convergence shrinks dt once, then errors") {
    FTSeries H = oscillator(1.0);
    Eigen::VectorXd z0(4);
    z0 << 0.0, 0.0, 1.0, 0.0;
    Trajectory traj = integrate(H, 1.0, z0, 8.8, 2.2);
    CHECK(traj.dt == doctest::Approx(1.1));
    CHECK_THROWS_AS(integrate(H, 1.0, z0, 9.0, 4.5), std::runtime_error);
  }
  SUBCASE("preconditions") {
    FTSeries H = oscillator(1.0);
    Eigen::VectorXd z0(4);
    z0.setZero();
    CHECK_THROWS_AS(integrate(H, 1.0, z0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(integrate(H, 1.0, Eigen::VectorXd::Zero(3), 1.0, 0.1),
                    std::invalid_argument);
  }
}

TEST_CASE("frequency analysis") {
  const size_t N = 1 << 14;
  const double T = 1000.0, dt = T / N;
  SUBCASE("single synthetic tone to 1e-6") {
    std::vector<std::complex<double>> sig(N);
    for (size_t n = 0; n < N; ++n)
      sig[n] = std::exp(std::complex<double>(0.0, 0.7 * n * dt));
    auto tones = estimate_tones(sig, dt, 1);
    REQUIRE(tones.size() == 1);
    CHECK(std::abs(tones[0].freq - 0.7) <= 1e-6);
    CHECK(tones[0].amplitude == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(tones[0].residual >= 0.0);
  }
  SUBCASE("constant signal has no peak") {
    std::vector<std::complex<double>> sig(N, std::complex<double>(0.4, -0.1));
    CHECK(estimate_tones(sig, dt, 1).empty());
  }
  SUBCASE("two incommensurate tones to 1e-5") {
    std::vector<std::complex<double>> sig(N);
    for (size_t n = 0; n < N; ++n) {
      const double t = n * dt;
      sig[n] = std::exp(std::complex<double>(0.0, 0.7 * t)) +
               0.3 * std::exp(std::complex<double>(0.0, 1.9 * t));
    }
    auto tones = estimate_tones(sig, dt, 2);
    REQUIRE(tones.size() == 2);
    CHECK(std::abs(tones[0].freq - 0.7) <= 1e-5);
    CHECK(std::abs(tones[1].freq - 1.9) <= 1e-5);
    CHECK(tones[0].amplitude == doctest::Approx(1.0).epsilon(0.05));
    CHECK(tones[1].amplitude == doctest::Approx(0.3).epsilon(0.05));
  }
  SUBCASE("negative frequency is resolved") {
    std::vector<std::complex<double>> sig(N);
    for (size_t n = 0; n < N; ++n)
      sig[n] = std::exp(std::complex<double>(0.0, -1.1 * n * dt));
    auto tones = estimate_tones(sig, dt, 1);
    REQUIRE(tones.size() == 1);
    CHECK(std::abs(tones[0].freq + 1.1) <= 1e-6);
  }
  SUBCASE("integrable flow frequency matches the action gradient") {
    PhaseSignature sig(1, 0);
    FTSeries H(sig, 2, 3);
    H.add_term({0}, {1}, 0, 1.234, 0.0);
    H.add_term({0}, {2}, 0, 0.25, 0.0);  // frequency 1.234 + 0.5 y
    Eigen::VectorXd z0(2);
    z0 << 0.0, 0.4;
    Trajectory traj = integrate(H, 1.0, z0, 1e4, 1e-2);
    FrequencyEstimate est = frequency_analysis(traj, 0);
    REQUIRE(est.found);
    CHECK(std::abs(est.freq - (1.234 + 0.5 * 0.4)) <= 1e-6);
  }
}

TEST_CASE("torus pullback and residual") {
  SUBCASE("pure translation record") {
    PhaseSignature sig(1, 1);
    TransformRecord rec;
    rec.F = FTSeries(sig, 2, 4);
    rec.w0 = Eigen::Vector3d(0.5, -0.2, 0.1);
    Eigen::VectorXd z(4);
    z << 1.0, 0.0, 0.0, 0.0;
    Eigen::VectorXd back = pull_back({rec}, 0.1, z);
    CHECK(back(0) == 1.0);
    CHECK(back(1) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(back(2) == doctest::Approx(-0.2).epsilon(1e-14));
    CHECK(back(3) == doctest::Approx(0.1).epsilon(1e-14));
  }
  SUBCASE("flow record matches the direct generator flow") {
    PhaseSignature sig(1, 1);
    FTSeries F(sig, 3, 5);
    F.add_term({1}, {1, 0, 0}, 0, 0.01, 0.02);
    F.add_term({0}, {0, 1, 1}, 0, 0.03, 0.0);
    TransformRecord rec;
    rec.F = F;
    rec.w0 = Eigen::Vector3d::Zero();
    Eigen::VectorXd z(4);
    z << 0.7, 0.2, 0.4, -0.1;
    // independent integration of the generator field over unit time
    Trajectory ref = integrate(F, 1.0, z, 1.0, 1e-3);
    CHECK((pull_back({rec}, 1.0, z) - ref.states.back()).lpNorm<Eigen::Infinity>() <=
          1e-9);
  }
  SUBCASE("unperturbed torus has integrator-level residual") {
    PhaseSignature sig(1, 1);
    FTSeries H(sig, 2, 4);
    H.add_term({0}, {1, 0, 0}, 0, 1.1, 0.0);
    H.add_term({0}, {0, 2, 0}, 0, 0.5, 0.0);
    H.add_term({0}, {0, 0, 2}, 0, 0.5, 0.0);
    const double res =
        torus_residual(H, 1.0, {}, Eigen::VectorXd::Constant(1, 1.1), 4, 1e-2);
    CHECK(res <= 1e-10);
  }
}
