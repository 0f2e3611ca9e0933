#include "asyncflow/rng.hpp"

#include <cmath>

namespace af {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kSplitSalt = 0xd1b54a32d192ed03ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

}  // namespace

RngStream RngStream::root(std::uint64_t seed) {
  return RngStream(mix64(seed + kGolden));
}

RngStream RngStream::child(std::uint64_t label) const {
  return RngStream(mix64((key_ ^ kSplitSalt) + (label + 1) * kGolden));
}

std::uint64_t RngStream::next_u64() { return mix64(key_ + (++ctr_) * kGolden); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  have_spare_ = true;
  return u * f;
}

Vec RngStream::normal_vec(int d) {
  Vec out(d);
  for (int i = 0; i < d; ++i) out[i] = normal();
  return out;
}

int RngStream::uniform_int(int n) {
  require(n > 0, "uniform_int: n must be positive");
  // rejection keeps the draw exactly uniform
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

}  // namespace af
