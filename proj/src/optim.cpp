#include "asyncflow/optim.hpp"

#include <cmath>

namespace af {

double global_grad_norm(const ParameterStore& store) {
  double sq = 0.0;
  for (const auto& [name, e] : store.entries()) sq += e.grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_global_norm(ParameterStore& store, double max_norm) {
  require(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
  const double g = global_grad_norm(store);
  check_finite(g, "gradient norm");
  if (g <= max_norm) return 1.0;
  const double scale = max_norm / g;
  for (auto& [name, e] : store.entries()) e.grad *= scale;
  return scale;
}

Adam::Adam(ParameterStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
  require(cfg_.lr > 0.0, "Adam: learning rate must be positive");
  for (const auto& [name, e] : store_.entries()) {
    moments_[name] = Moments{Mat::Zero(e.value.rows(), e.value.cols()),
                             Mat::Zero(e.value.rows(), e.value.cols())};
  }
}

void Adam::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  for (auto& [name, e] : store_.entries()) {
    Moments& mo = moments_.at(name);
    mo.m = cfg_.beta1 * mo.m + (1.0 - cfg_.beta1) * e.grad;
    mo.v = cfg_.beta2 * mo.v + (1.0 - cfg_.beta2) * e.grad.cwiseProduct(e.grad);
    e.value.array() -=
        cfg_.lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + cfg_.eps);
  }
}

void Adam::restore(std::map<std::string, Moments> moments, std::int64_t step) {
  for (const auto& [name, e] : store_.entries())
    require(moments.count(name) > 0, "Adam::restore: missing moments for '" + name + "'");
  moments_ = std::move(moments);
  step_ = step;
}

}  // namespace af
