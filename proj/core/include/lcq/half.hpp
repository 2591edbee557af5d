#pragma once
#include <cmath>
#include <cstdint>
#include <limits>

namespace lcq {

// IEEE 754 binary16 conversion. Encoding rounds to nearest, ties to even,
// in a single rounding step from the double value (no float intermediate).
inline std::uint16_t half_from_double(double v) {
  if (std::isnan(v)) return 0x7e00;
  const std::uint16_t sign = std::signbit(v) ? 0x8000 : 0;
  double a = std::fabs(v);
  if (std::isinf(v) || a >= 65520.0) return sign | 0x7c00;
  if (a < 6.103515625e-05) {  // below 2^-14: subnormal (or zero)
    const double q = std::nearbyint(a * 16777216.0);  // units of 2^-24
    // q == 1024 encodes as exponent 1, mantissa 0, i.e. 2^-14 exactly.
    return sign | static_cast<std::uint16_t>(q);
  }
  int e = 0;
  const double m = std::frexp(a, &e);  // a = m * 2^e, m in [0.5, 1)
  double q = std::nearbyint(m * 2048.0);
  if (q == 2048.0) {
    q = 1024.0;
    e += 1;
  }
  if (e - 1 > 15) return sign | 0x7c00;
  return static_cast<std::uint16_t>(sign | ((e - 1 + 15) << 10) |
                                    (static_cast<std::uint16_t>(q) & 0x3ff));
}

inline double half_to_double(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exp = (h >> 10) & 0x1f;
  const int mant = h & 0x3ff;
  double v;
  if (exp == 0) {
    v = mant * 5.9604644775390625e-08;  // mant * 2^-24
  } else if (exp == 31) {
    v = mant ? std::numeric_limits<double>::quiet_NaN()
             : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(1.0 + mant / 1024.0, exp - 15);
  }
  return sign ? -v : v;
}

// Round a double through binary16 and back.
inline double half_round(double v) { return half_to_double(half_from_double(v)); }

}  // namespace lcq
