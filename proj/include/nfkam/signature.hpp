#ifndef NFKAM_SIGNATURE_HPP
#define NFKAM_SIGNATURE_HPP

#include <stdexcept>

namespace nfkam {

// Phase space T^m x R^m x R^{2 m0}: angles x, actions y, normal pair z = (u, v).
// Polynomial variables are ordered y_0..y_{m-1}, u_0..u_{m0-1}, v_0..v_{m0-1}.
struct PhaseSignature {
  int m = 1;
  int m0 = 0;

  PhaseSignature() = default;
  PhaseSignature(int m_, int m0_) : m(m_), m0(m0_) {
    if (m < 1 || m0 < 0) throw std::invalid_argument("PhaseSignature: need m >= 1, m0 >= 0");
  }

  int vars() const { return m + 2 * m0; }
  int y_index(int i) const { return i; }
  int u_index(int i) const { return m + i; }
  int v_index(int i) const { return m + m0 + i; }

  bool operator==(const PhaseSignature&) const = default;
};

// Analyticity widths for the majorant norm on D(r,s).
struct DomainParams {
  double r = 0.5;
  double s = 0.5;

  DomainParams() = default;
  DomainParams(double r_, double s_) : r(r_), s(s_) {
    if (!(r >= 0.0 && r <= 1.0) || !(s > 0.0 && s <= 1.0))
      throw std::invalid_argument("DomainParams: need 0 <= r <= 1, 0 < s <= 1");
  }
};

}  // namespace nfkam

#endif
