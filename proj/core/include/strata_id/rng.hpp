#pragma once

// xoshiro256** with splitmix64 seeding. Streams are derived from a master
// seed and any number of integer indices, so replicate r / chain c / shard s
// always see the same numbers regardless of thread count.
//
// The samplers below are implemented here rather than taken from <random>
// because libstdc++ and libc++ distributions produce different sequences.

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

namespace strata {

std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a master seed with a list of indices into a new 64-bit seed.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0x5eed);
  Rng(std::uint64_t master, std::initializer_list<std::uint64_t> path);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n)
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double gamma(double shape);  // unit scale
  double beta(double a, double b);
  bool bernoulli(double p) { return uniform() < p; }
  void dirichlet(std::span<const double> alpha, std::span<double> out);
  std::vector<double> dirichlet(std::span<const double> alpha);
  /// Index drawn from unnormalized nonnegative weights.
  int categorical(std::span<const double> weights);

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Walker alias table for repeated categorical draws from a fixed distribution.
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(std::span<const double> weights);
  int sample(Rng& rng) const;
  int size() const { return static_cast<int>(prob_.size()); }

 private:
  std::vector<double> prob_;
  std::vector<int> alias_;
};

}  // namespace strata
