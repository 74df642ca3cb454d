#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hyper2/common.hpp"

namespace hyper2 {

// Every random draw in the project flows through this wrapper. The helpers
// sit directly on the raw mt19937_64 stream instead of std::*_distribution,
// so a (seed, call sequence) pair produces the same numbers on every
// standard library, and the full state round-trips through checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed = 1) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; no cached spare so the state is just
  // the underlying generator
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // uniform integer in [0, n), rejection sampled to avoid modulo bias
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Fisher-Yates; std::shuffle is implementation-defined, this is not
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (!is) throw data_error("Rng::restore: malformed generator state");
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace hyper2
