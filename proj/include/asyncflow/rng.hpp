#pragma once

#include <cstdint>

#include "asyncflow/common.hpp"

namespace af {

// Counter-based random stream. Output i of a stream with key k is
// mix64(k + (i+1) * GOLDEN) where mix64 is the splitmix64 finalizer and
// GOLDEN = 0x9e3779b97f4a7c15. Child streams derive their key as
// mix64((k ^ SPLIT_SALT) + (label+1) * GOLDEN), so any (seed, label...) path
// names the same stream on every platform. State is just (key, counter) and
// can be checkpointed exactly.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key) : key_(key) {}

  static RngStream root(std::uint64_t seed);
  RngStream child(std::uint64_t label) const;

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // standard normal, polar method
  Vec normal_vec(int d);
  int uniform_int(int n);  // {0, ..., n-1}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return ctr_; }
  void set_counter(std::uint64_t c) {
    ctr_ = c;
    have_spare_ = false;
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t ctr_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace af
