#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>

namespace hex4d {

// Deterministic random stream. All sampling goes through explicit helpers so
// a serialized engine state restores the exact draw sequence; std::
// distributions are avoided because their internal caching is opaque.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds. Modulo bias is negligible for the small spans used here.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller; consumes exactly two engine draws.
  double normal();

  // Derive an independent stream (e.g. per subsystem) from this one.
  Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

  void save(std::ostream& os) const;
  void load(std::istream& is);

  bool operator==(const Rng& other) const { return eng_ == other.eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace hex4d
