#include "hex4d/rng.h"

#include <cmath>
#include <istream>
#include <ostream>

#include "hex4d/common.h"

namespace hex4d {

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  H4D_CHECK(lo <= hi, "empty range [", lo, ", ", hi, "]");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(eng_() % span);
}

double Rng::normal() {
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

void Rng::save(std::ostream& os) const { os << eng_; }

void Rng::load(std::istream& is) {
  is >> eng_;
  if (!is) throw IoError("failed to parse RNG state");
}

}  // namespace hex4d
