#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "asyncflow/common.hpp"
#include "asyncflow/params.hpp"

namespace af {

// Scales every gradient in the store by max_norm / g when the global L2 norm
// g exceeds max_norm; otherwise leaves them untouched. Returns the applied
// scale (1 when no clipping happened).
double clip_global_norm(ParameterStore& store, double max_norm);

double global_grad_norm(const ParameterStore& store);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a ParameterStore. Moments are keyed by entry name
// and can be checkpointed alongside the parameters.
class Adam {
 public:
  Adam(ParameterStore& store, AdamConfig cfg);

  void step();

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  struct Moments {
    Mat m;
    Mat v;
  };
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::map<std::string, Moments> moments, std::int64_t step);

 private:
  ParameterStore& store_;
  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
  std::int64_t step_ = 0;
};

}  // namespace af
