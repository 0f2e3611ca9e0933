#include "asyncflow/common.hpp"

#include <cmath>

namespace af {

Vec time_embedding(double t) {
  Vec out(kTimeEmbedDim);
  const double two_pi = 2.0 * M_PI;
  for (int i = 0; i < kTimeEmbedFreqs; ++i) {
    // frequencies span 1..1000 cycles over the unit interval
    const double w = two_pi * std::pow(1000.0, double(i) / double(kTimeEmbedFreqs - 1));
    out[2 * i] = std::sin(w * t);
    out[2 * i + 1] = std::cos(w * t);
  }
  return out;
}

}  // namespace af
