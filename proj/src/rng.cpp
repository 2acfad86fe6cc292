#include "pairdiff/rng.hpp"

#include <cmath>

namespace pairdiff {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

inline void box_muller(double u1, double u2, double& z0, double& z1) {
  // u1 in [0,1); shift away from 0 so log stays finite
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  double a = kTwoPi * u2;
  z0 = r * std::cos(a);
  z1 = r * std::sin(a);
}
}  // namespace

double RngStream::normal() {
  double u1 = uniform();
  double u2 = uniform();
  double z0, z1;
  box_muller(u1, u2, z0, z1);
  (void)z1;
  return z0;
}

void RngStream::fill_normal(float* dst, size_t n) {
  size_t i = 0;
  for (; i + 1 < n; i += 2) {
    double u1 = uniform();
    double u2 = uniform();
    double z0, z1;
    box_muller(u1, u2, z0, z1);
    dst[i] = static_cast<float>(z0);
    dst[i + 1] = static_cast<float>(z1);
  }
  if (i < n) dst[i] = static_cast<float>(normal());
}

}  // namespace pairdiff
