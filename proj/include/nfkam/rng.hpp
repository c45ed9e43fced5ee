#ifndef NFKAM_RNG_HPP
#define NFKAM_RNG_HPP

#include <cstdint>

namespace nfkam {

// Counter-based deterministic generator (splitmix64 over seed^counter).
// Stateless draws: value(i) is reproducible regardless of call order, which
// keeps parallel sampling and golden files byte-stable.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::uint64_t counter) const {
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  double uniform(std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(counter);
  }

  int uniform_int(std::uint64_t counter, int lo, int hi) const {  // inclusive
    return lo + static_cast<int>(bits(counter) % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // sequential convenience wrapper
  double next_uniform() { return uniform(next_++); }
  double next_uniform(double lo, double hi) { return uniform(next_++, lo, hi); }
  int next_int(int lo, int hi) { return uniform_int(next_++, lo, hi); }

 private:
  std::uint64_t seed_;
  std::uint64_t next_ = 0;
};

}  // namespace nfkam

#endif
