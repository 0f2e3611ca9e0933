#pragma once

#include <memory>
#include <string>
#include <vector>

#include "asyncflow/common.hpp"
#include "asyncflow/params.hpp"
#include "asyncflow/rng.hpp"
#include "asyncflow/tape.hpp"

namespace af {

// Latent-update schedule t0 = 1 > t1 > ... > tK = 0.
struct TimeGrid {
  std::vector<double> values;

  int steps() const { return static_cast<int>(values.size()) - 1; }
  double operator[](int k) const { return values[static_cast<std::size_t>(k)]; }
  void validate() const;

  static TimeGrid uniform(int steps);
  // t = s*u / (1 + (s-1)*u) over u = 1 - k/K; s = 1 recovers the uniform grid.
  static TimeGrid shifted(int steps, double shift);
};

// Discrete class condition; negative label is the reserved null condition
// whose embedding is all zeros everywhere.
struct Condition {
  static constexpr int kNull = -1;
  int label = kNull;

  bool is_null() const { return label < 0; }
  static Condition null_cond() { return Condition{}; }
  static Condition of(int label) {
    require(label >= 0, "Condition: label must be non-negative");
    return Condition{label};
  }
};

// Gaussian mixture with diagonal covariances; doubles as the data target and
// the source of the closed-form velocity oracle.
struct MixtureSpec {
  std::vector<Vec> means;
  std::vector<Vec> variances;  // per-component diagonal
  std::vector<double> weights;

  int components() const { return static_cast<int>(means.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  void validate() const;

  double component_log_density(const Vec& y, int j) const;
  double log_density(const Vec& y) const;  // log-sum-exp over components
  Vec sample_component(int j, RngStream& rng) const;
  int draw_component(RngStream& rng) const;

  static MixtureSpec point(Vec mean);
  static MixtureSpec two_component(const Vec& mean0, const Vec& mean1, double variance);
};

// One point on the linear noising path x_t = t*eps + (1-t)*x0.
struct FlowSample {
  Vec x0, eps;
  double t = 0.0;
  Vec x_t;
};

FlowSample corrupt(const Vec& x0, const Vec& eps, double t);

// Model-implied clean point x - t*v.
Vec clean_estimate(const Vec& x, double t, const Vec& v);

class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual Vec velocity(const Vec& x, double t, const Condition& c) const = 0;
  virtual int dim() const = 0;
};

// Exact field for a deterministic target x0 = m: v(x, t) = (x - m) / t.
class PointField : public VelocityField {
 public:
  explicit PointField(Vec mean) : mean_(std::move(mean)) {}
  Vec velocity(const Vec& x, double t, const Condition& c) const override;
  int dim() const override { return static_cast<int>(mean_.size()); }
  const Vec& mean() const { return mean_; }

 private:
  Vec mean_;
};

// Closed-form E[eps - x0 | x_t = x] for the Gaussian-mixture target under the
// linear path with standard-normal noise. A non-null condition restricts the
// posterior to that component; the null condition uses the full mixture.
class MixtureField : public VelocityField {
 public:
  explicit MixtureField(MixtureSpec mix);
  Vec velocity(const Vec& x, double t, const Condition& c) const override;
  int dim() const override { return mix_.dim(); }
  const MixtureSpec& mixture() const { return mix_; }

 private:
  Vec component_velocity(const Vec& x, double t, int j) const;
  MixtureSpec mix_;
};

// Free-function form of the analytic oracles.
Vec analytic_velocity_point(const Vec& x, double t, const Vec& mean);
Vec analytic_velocity_mixture(const Vec& x, double t, const MixtureSpec& mix);

struct FieldConfig {
  int dim = 2;
  int hidden = 128;
  int layers = 3;
  int cond_embed = 8;
  int n_classes = 2;
  void validate() const {
    require(dim > 0 && hidden > 0 && layers > 0 && cond_embed > 0 && n_classes > 0,
            "FieldConfig: all extents must be positive");
  }
};

// MLP velocity model over concat(x, time features, condition embedding).
// Frozen after pretraining; sampling only reads it.
class LearnedField : public VelocityField {
 public:
  LearnedField(FieldConfig cfg, ParameterStore store);
  static LearnedField init(const FieldConfig& cfg, RngStream& rng);

  Vec velocity(const Vec& x, double t, const Condition& c) const override;
  int dim() const override { return cfg_.dim; }

  // Batched training-path forward; rows of x_rows / t / labels line up.
  Var forward_on_tape(Tape& tape, const ParamGetter& p, const Mat& x_rows,
                      const std::vector<double>& t, const std::vector<int>& labels);

  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const FieldConfig& config() const { return cfg_; }

 private:
  FieldConfig cfg_;
  ParameterStore store_;
};

struct FlowBatchItem {
  Vec x0, eps;
  double t = 0.0;
  Condition c;
};

// Mean over the batch of || v(x_t, t, c) - (eps - x0) ||^2.
double fm_loss(const VelocityField& field, const std::vector<FlowBatchItem>& batch);
Var fm_loss_on_tape(Tape& tape, LearnedField& field, const std::vector<FlowBatchItem>& batch);

struct FieldPretrainConfig {
  int iterations = 4000;
  int batch = 64;
  double lr = 1e-3;
  double cond_drop = 0.1;   // probability of training an item unconditionally
  int start_iteration = 0;  // nonzero when resuming from a checkpoint
};

struct PretrainResult {
  std::vector<double> loss_curve;
};

// Flow-matching pretraining against a mixture target. Aborts with a numeric
// error when the loss fails to decrease over the first 100 iterations.
PretrainResult pretrain_field(LearnedField& field, const MixtureSpec& target,
                              const FieldPretrainConfig& cfg, RngStream& rng,
                              class Adam* optimizer = nullptr);

}  // namespace af
