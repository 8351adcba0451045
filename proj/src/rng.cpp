#include "selfmon/rng.hpp"

#include <cmath>
#include <sstream>

#include "selfmon/errors.hpp"

namespace selfmon {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// Draws are built from raw engine output so sequences do not depend on the
// standard library's distribution implementations.
double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  // Box-Muller, one draw per call.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ContractError("Rng::index on empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (weights.empty() || !(total > 0.0)) throw ContractError("categorical draw over zero mass");
  const double u = uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw ParseError("malformed RNG state");
}

}  // namespace selfmon
