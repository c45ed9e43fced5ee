#ifndef NFKAM_DYNAMICS_HPP
#define NFKAM_DYNAMICS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "nfkam/kamstep.hpp"
#include "nfkam/series.hpp"

namespace nfkam {

// State layout: z = (x[0..m), y[0..m), u[0..m0), v[0..m0)).
struct Trajectory {
  PhaseSignature sig{1, 0};
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<double> energy;
  double dt = 0.0;
  std::string method = "implicit-midpoint";
};

// Precomputed Hamiltonian vector field of a graded series at a fixed eps:
// xdot = dH/dy, ydot = -dH/dx, udot = dH/dv, vdot = -dH/du.
class HamiltonianField {
 public:
  HamiltonianField(const FTSeries& H, double eps) : sig_(H.sig()), H_(H), eps_(eps) {
    for (int i = 0; i < sig_.m; ++i) {
      dx_.push_back(partial_x(H, i));
      dy_.push_back(partial_y(H, i));
    }
    for (int i = 0; i < sig_.m0; ++i) {
      du_.push_back(partial_u(H, i));
      dv_.push_back(partial_v(H, i));
    }
  }

  const PhaseSignature& sig() const { return sig_; }
  int dim() const { return 2 * sig_.m + 2 * sig_.m0; }

  Eigen::VectorXd rhs(const Eigen::VectorXd& z) const {
    std::vector<double> x(z.data(), z.data() + sig_.m);
    std::vector<double> w(z.data() + sig_.m, z.data() + dim());
    Eigen::VectorXd f(dim());
    for (int i = 0; i < sig_.m; ++i) {
      f(i) = evaluate(dy_[i], x, w, eps_);
      f(sig_.m + i) = -evaluate(dx_[i], x, w, eps_);
    }
    for (int i = 0; i < sig_.m0; ++i) {
      f(2 * sig_.m + i) = evaluate(dv_[i], x, w, eps_);
      f(2 * sig_.m + sig_.m0 + i) = -evaluate(du_[i], x, w, eps_);
    }
    return f;
  }

  double energy(const Eigen::VectorXd& z) const {
    std::vector<double> x(z.data(), z.data() + sig_.m);
    std::vector<double> w(z.data() + sig_.m, z.data() + dim());
    return evaluate(H_, x, w, eps_);
  }

 private:
  PhaseSignature sig_;
  FTSeries H_;
  double eps_;
  std::vector<FTSeries> dx_, dy_, du_, dv_;
};

namespace detail {

// one implicit-midpoint step; returns false if the fixed point stalls
inline bool midpoint_step(const HamiltonianField& f, const Eigen::VectorXd& z,
                          double dt, Eigen::VectorXd* out) {
  Eigen::VectorXd znext = z + dt * f.rhs(z);  // Euler predictor
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd mid = 0.5 * (z + znext);
    Eigen::VectorXd cand = z + dt * f.rhs(mid);
    const double delta = (cand - znext).lpNorm<Eigen::Infinity>();
    znext = cand;
    if (delta <= 1e-14 * (1.0 + znext.lpNorm<Eigen::Infinity>())) {
      // polish to the machine-level fixed point: a 1e-14 per-step defect
      // accumulates secularly over ~1e6 steps and shows up as energy drift
      for (int extra = 0; extra < 3; ++extra)
        znext = z + dt * f.rhs(0.5 * (z + znext));
      *out = znext;
      return true;
    }
  }
  return false;
}

}  // namespace detail

inline Trajectory integrate(const FTSeries& H, double eps, const Eigen::VectorXd& z0,
                            double T, double dt) {
  if (dt <= 0.0 || T < dt) throw std::invalid_argument("integrate: need 0 < dt <= T");
  HamiltonianField f(H, eps);
  if (z0.size() != f.dim()) throw std::invalid_argument("integrate: state dimension");

  for (int attempt = 0; attempt < 2; ++attempt) {
    Trajectory traj;
    traj.sig = H.sig();
    traj.dt = dt;
    const long long steps = static_cast<long long>(std::llround(T / dt));
    traj.times.reserve(steps + 1);
    traj.states.reserve(steps + 1);
    Eigen::VectorXd z = z0;
    traj.times.push_back(0.0);
    traj.states.push_back(z);
    traj.energy.push_back(f.energy(z));
    bool ok = true;
    for (long long n = 1; n <= steps; ++n) {
      Eigen::VectorXd znext;
      if (!detail::midpoint_step(f, z, dt, &znext)) {
        ok = false;
        break;
      }
      z = znext;
      traj.times.push_back(n * dt);
      traj.states.push_back(z);
      traj.energy.push_back(f.energy(z));
    }
    if (ok) return traj;
    dt *= 0.5;  // one retry with a halved step
  }
  throw std::runtime_error("integrate: implicit midpoint iteration did not converge");
}

// ---- frequency analysis -------------------------------------------------

struct FrequencyEstimate {
  double freq = 0.0;
  double amplitude = 0.0;
  double residual = 0.0;  // 1 - coherent fraction at the refined peak
  bool found = false;
};

namespace detail {

inline void fft_radix2(std::vector<std::complex<double>>& a, bool inverse = false) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double pi = std::acos(-1.0);
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> x = a[i + j], y = a[i + j + len / 2] * w;
        a[i + j] = x + y;
        a[i + j + len / 2] = x - y;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& c : a) c /= static_cast<double>(n);
}

inline std::vector<double> hann_window(size_t n) {
  const double pi = std::acos(-1.0);
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

// |sum_n w_n z_n e^{-i f n dt}|, the continuous windowed spectrum
inline double windowed_power(const std::vector<std::complex<double>>& z,
                             const std::vector<double>& w, double dt, double f) {
  std::complex<double> acc(0.0);
  const std::complex<double> rot = std::exp(std::complex<double>(0.0, -f * dt));
  std::complex<double> ph(1.0);
  for (size_t n = 0; n < z.size(); ++n) {
    acc += w[n] * z[n] * ph;
    ph *= rot;
  }
  return std::abs(acc);
}

}  // namespace detail

// Dominant tones of a complex signal: Hann window, FFT peak, then golden
// section refinement of the continuous windowed spectrum. Peaks are removed
// greedily (+-4 bins) for multi-tone extraction.
inline std::vector<FrequencyEstimate> estimate_tones(
    const std::vector<std::complex<double>>& signal, double dt, int count = 1) {
  if (signal.size() < (1u << 12))
    throw std::invalid_argument("estimate_tones: need at least 2^12 samples");
  size_t n = 1;
  while (2 * n <= signal.size()) n *= 2;
  std::vector<std::complex<double>> z(signal.begin(), signal.begin() + n);
  const std::vector<double> w = detail::hann_window(n);

  // constant signal: nothing to resolve
  double spread = 0.0;
  for (const auto& s : z) spread = std::max(spread, std::abs(s - z[0]));
  if (spread <= 1e-12) return {};

  std::vector<std::complex<double>> spec(n);
  double wsum = 0.0, magsum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    spec[i] = w[i] * z[i];
    wsum += w[i];
    magsum += w[i] * std::abs(z[i]);
  }
  detail::fft_radix2(spec);
  std::vector<double> mag(n);
  for (size_t i = 0; i < n; ++i) mag[i] = std::abs(spec[i]);

  const double pi = std::acos(-1.0);
  const double binw = 2.0 * pi / (static_cast<double>(n) * dt);
  std::vector<FrequencyEstimate> out;
  std::vector<bool> masked(n, false);
  for (int t = 0; t < count; ++t) {
    size_t peak = 0;
    double best = -1.0;
    for (size_t i = 0; i < n; ++i)
      if (!masked[i] && mag[i] > best) {
        best = mag[i];
        peak = i;
      }
    // noise floor: median of the unmasked magnitudes
    std::vector<double> rest;
    for (size_t i = 0; i < n; ++i)
      if (!masked[i]) rest.push_back(mag[i]);
    std::nth_element(rest.begin(), rest.begin() + rest.size() / 2, rest.end());
    const double floor_mag = rest[rest.size() / 2];
    if (best <= 20.0 * floor_mag) break;

    double f0 = static_cast<double>(peak) * binw;
    if (peak > n / 2) f0 -= 2.0 * pi / dt;  // negative-frequency half
    double lo = f0 - binw, hi = f0 + binw;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    double fa = detail::windowed_power(z, w, dt, a), fb = detail::windowed_power(z, w, dt, b);
    for (int it = 0; it < 80; ++it) {
      if (fa < fb) {
        lo = a;
        a = b;
        fa = fb;
        b = lo + gr * (hi - lo);
        fb = detail::windowed_power(z, w, dt, b);
      } else {
        hi = b;
        b = a;
        fb = fa;
        a = hi - gr * (hi - lo);
        fa = detail::windowed_power(z, w, dt, a);
      }
    }
    FrequencyEstimate est;
    est.freq = 0.5 * (lo + hi);
    const double coherent = detail::windowed_power(z, w, dt, est.freq);
    est.amplitude = coherent / wsum;
    est.residual = magsum > 0.0 ? std::max(0.0, 1.0 - coherent / magsum) : 0.0;
    est.found = true;
    out.push_back(est);
    for (long long di = -4; di <= 4; ++di)
      masked[(peak + n + di) % n] = true;
  }
  return out;
}

// Dominant frequency of one toral angle via e^{i x_j(t)}.
inline FrequencyEstimate frequency_analysis(const Trajectory& traj, int angle) {
  if (angle < 0 || angle >= traj.sig.m)
    throw std::invalid_argument("frequency_analysis: angle index");
  std::vector<std::complex<double>> sig;
  sig.reserve(traj.states.size());
  for (const auto& z : traj.states)
    sig.push_back(std::exp(std::complex<double>(0.0, z(angle))));
  auto tones = estimate_tones(sig, traj.dt, 1);
  return tones.empty() ? FrequencyEstimate{} : tones[0];
}

// ---- torus pullback and invariance residual ------------------------------

// Maps a point given in the final-step chart back to the original chart:
// per step (in reverse) translate by w0, then follow the time-1 flow of the
// generator (the direction the Lie transform composes with).
inline Eigen::VectorXd pull_back(const std::vector<TransformRecord>& records,
                                 double eps, const Eigen::VectorXd& z,
                                 int flow_steps = 256) {
  Eigen::VectorXd cur = z;
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    const int m = it->F.sig().m, m0 = it->F.sig().m0;
    for (int i = 0; i < m + 2 * m0; ++i) cur(m + i) += it->w0(i);
    HamiltonianField f(it->F, eps);
    const double h = 1.0 / flow_steps;  // RK4 on the generator flow
    for (int s = 0; s < flow_steps; ++s) {
      const Eigen::VectorXd k1 = f.rhs(cur);
      const Eigen::VectorXd k2 = f.rhs(cur + 0.5 * h * k1);
      const Eigen::VectorXd k3 = f.rhs(cur + 0.5 * h * k2);
      const Eigen::VectorXd k4 = f.rhs(cur + h * k3);
      cur += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  return cur;
}

// Invariance defect of the predicted torus: integrate the original flow from
// pulled-back torus points over one characteristic period and compare with
// the pulled-back rigid rotation, max over probes and sample times.
inline double torus_residual(const FTSeries& H, double eps,
                             const std::vector<TransformRecord>& records,
                             const Eigen::VectorXd& omega, int probes = 8,
                             double dt = 1e-2) {
  const PhaseSignature& sig = H.sig();
  const int m = sig.m, m0 = sig.m0;
  if (omega.size() != m) throw std::invalid_argument("torus_residual: omega size");
  const double pi = std::acos(-1.0);
  const double T = 2.0 * pi / omega.cwiseAbs().maxCoeff();
  const int nchk = 8;
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    Eigen::VectorXd th(m);
    for (int i = 0; i < m; ++i)
      th(i) = 2.0 * pi * (p * m + i + 0.5) / (probes * m + 1);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(2 * m + 2 * m0);
    z.head(m) = th;
    Trajectory traj = integrate(H, eps, pull_back(records, eps, z), T, dt);
    for (int c = 1; c <= nchk; ++c) {
      const size_t idx = (traj.states.size() - 1) * c / nchk;
      Eigen::VectorXd pred = z;
      for (int i = 0; i < m; ++i) pred(i) = th(i) + omega(i) * traj.times[idx];
      pred = pull_back(records, eps, pred);
      const Eigen::VectorXd& got = traj.states[idx];
      for (int i = 0; i < 2 * m + 2 * m0; ++i) {
        double diff = std::abs(got(i) - pred(i));
        if (i < m) diff = std::abs(std::remainder(got(i) - pred(i), 2.0 * pi));
        worst = std::max(worst, diff);
      }
    }
  }
  return worst;
}

}  // namespace nfkam

#endif
