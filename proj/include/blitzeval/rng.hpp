#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include <boost/math/distributions/poisson.hpp>

namespace blitzeval {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
// Counter-based: a draw is a pure function of (key, counter), so any cell
// can generate its numbers without touching anybody else's state.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter c, Key k) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        k[0] += 0x9E3779B9u;
        k[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    }
    return c;
  }
};

// Purposes keep the draws for different quantities of one stream apart.
enum class Purpose : std::uint32_t { FeA = 1, FeDay = 2, Treat = 3, Hours = 4, Outcome = 5, Attributes = 6, Placement = 7 };

// Stream = (seed, stream id). Draw `index` of `purpose` lives at counter
// {index_lo, index_hi, stream, purpose} under key = seed.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint32_t stream) : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, stream_(stream) {}

  Philox4x32::Counter raw(Purpose purpose, std::uint64_t index) const {
    return Philox4x32::block({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream_,
                              static_cast<std::uint32_t>(purpose)},
                             key_);
  }

  // Two doubles in (0, 1) with 53 random bits each.
  std::array<double, 2> uniform2(Purpose purpose, std::uint64_t index) const {
    const auto r = raw(purpose, index);
    return {to_unit(r[0], r[1]), to_unit(r[2], r[3])};
  }
  double uniform(Purpose purpose, std::uint64_t index) const { return uniform2(purpose, index)[0]; }

  // Box-Muller on the block's two uniforms.
  double normal(Purpose purpose, std::uint64_t index) const {
    const auto u = uniform2(purpose, index);
    return std::sqrt(-2.0 * std::log(u[0])) * std::cos(2.0 * std::numbers::pi * u[1]);
  }

  // Inversion from a single uniform, so one index gives one draw.
  std::int64_t poisson(Purpose purpose, std::uint64_t index, double lambda) const {
    return poisson_inverse(lambda, uniform(purpose, index));
  }

  // Uniform integer in [0, n).
  std::uint32_t below(Purpose purpose, std::uint64_t index, std::uint32_t n) const {
    return static_cast<std::uint32_t>(uniform(purpose, index) * n) % n;
  }

  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (std::uint64_t{hi} << 21) ^ (lo >> 11);  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  static std::int64_t poisson_inverse(double lambda, double u) {
    if (!(lambda > 0.0)) return 0;
    if (lambda < 30.0) {
      double p = std::exp(-lambda), cdf = p;
      std::int64_t k = 0;
      while (u > cdf && k < 1000) {
        ++k;
        p *= lambda / static_cast<double>(k);
        cdf += p;
      }
      return k;
    }
    namespace bm = boost::math;
    using policy = bm::policies::policy<bm::policies::discrete_quantile<bm::policies::integer_round_up>>;
    return static_cast<std::int64_t>(bm::quantile(bm::poisson_distribution<double, policy>(lambda), u));
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_;
};

}  // namespace blitzeval
