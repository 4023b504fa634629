#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace hex4d {

// Violated precondition or broken invariant: a bug in the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf escaped into a computation that requires finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File or subprocess I/O failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void concat_into(std::ostringstream&) {}
template <class T, class... Rest>
void concat_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  concat_into(os, rest...);
}
template <class... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  concat_into(os, args...);
  return os.str();
}
}  // namespace detail

#define H4D_CHECK(cond, ...)                                                  \
  do {                                                                        \
    if (!(cond)) {                                                            \
      throw ::hex4d::ContractError(::hex4d::detail::concat(                   \
          "contract violation: ", #cond, " (", __FILE__, ":", __LINE__, ") ", \
          ##__VA_ARGS__));                                                    \
    }                                                                         \
  } while (0)

#define H4D_CHECK_FINITE(value, ...)                                 \
  do {                                                               \
    if (!std::isfinite(static_cast<double>(value))) {                \
      throw ::hex4d::NumericError(::hex4d::detail::concat(           \
          "non-finite value: ", #value, " = ", (value), " (",        \
          __FILE__, ":", __LINE__, ") ", ##__VA_ARGS__));            \
    }                                                                \
  } while (0)

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace hex4d
