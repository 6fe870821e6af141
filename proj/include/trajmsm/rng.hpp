#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace trajmsm {

// splitmix64 finalizer; used to derive independent stream seeds from
// (seed, stream id, substream id) so results do not depend on scheduling.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t substream = 0) {
  return mix64(mix64(mix64(seed) ^ stream) ^ substream);
}

// mt19937_64 with hand-rolled transforms. The standard engine is fully
// specified, the standard distributions are not; rolling the few transforms
// we need keeps every simulated value reproducible across toolchains.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  // uniform on the open interval (0,1); 53-bit resolution, never 0 or 1
  double uniform01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  int bernoulli(double p) { return uniform01() < p ? 1 : 0; }

  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double exponential(double rate) { return -std::log(uniform01()) / rate; }

  // Dirichlet(1,...,1) row via normalized exponential spacings
  std::vector<double> dirichlet_unit(int k) {
    std::vector<double> g(static_cast<std::size_t>(k));
    double total = 0.0;
    for (auto& v : g) {
      v = exponential(1.0);
      total += v;
    }
    for (auto& v : g) v /= total;
    return g;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace trajmsm
