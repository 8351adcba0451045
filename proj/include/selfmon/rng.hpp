#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>

namespace selfmon {

std::uint64_t splitmix64(std::uint64_t x);

/// Order-sensitive hash of a seed path, e.g. derive_seed({seed, epoch, episode}).
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// Thin wrapper over mt19937_64 with the draws this project needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  std::size_t index(std::size_t n);  // uniform in [0, n)
  /// Draw from an unnormalized nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace selfmon
