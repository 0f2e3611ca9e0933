#pragma once

#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "asyncflow/common.hpp"
#include "asyncflow/rng.hpp"

namespace af {

struct ParamEntry {
  Mat value;
  Mat grad;  // same shape as value
};

// Named trainable matrices with paired gradient buffers. Entries iterate in
// lexicographic name order, which save/load preserves exactly.
class ParameterStore {
 public:
  Mat& add(const std::string& name, Mat init);
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  Mat& value(const std::string& name) { return entry(name).value; }
  const Mat& value(const std::string& name) const { return entry(name).value; }
  Mat& grad(const std::string& name) { return entry(name).grad; }

  void zero_grads();
  std::size_t size() const { return entries_.size(); }

  std::map<std::string, ParamEntry>& entries() { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, ParamEntry> entries_;
};

// U(-a, a) with a = sqrt(3 / fan_in), so element variance is 1 / fan_in.
// Weights follow the (in x out) convention; fan-in is the row count.
Mat fan_in_uniform(int rows, int cols, RngStream& rng);

// Binary checkpoint: the magic string "AFCKPT1", a little-endian u64 entry
// count, then per entry name length / UTF-8 name / rank / extents / row-major
// 64-bit floats, all little-endian. A JSON sidecar at <path>.json holds
// configuration and RNG state.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const nlohmann::json& meta);
nlohmann::json load_checkpoint(const std::string& path, ParameterStore& store);

}  // namespace af
