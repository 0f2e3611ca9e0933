#include "asyncflow/flow.hpp"

#include <algorithm>
#include <cmath>

#include "asyncflow/optim.hpp"

namespace af {

void TimeGrid::validate() const {
  require(values.size() >= 2, "TimeGrid: needs at least one step");
  require(values.front() == 1.0 && values.back() == 0.0,
          "TimeGrid: endpoints must be exactly 1 and 0");
  for (std::size_t i = 1; i < values.size(); ++i)
    require(values[i] < values[i - 1], "TimeGrid: values must strictly decrease");
}

TimeGrid TimeGrid::uniform(int steps) {
  require(steps >= 1, "TimeGrid: step count must be positive");
  TimeGrid g;
  g.values.resize(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k)
    g.values[static_cast<std::size_t>(k)] = 1.0 - double(k) / double(steps);
  g.values.front() = 1.0;
  g.values.back() = 0.0;
  g.validate();
  return g;
}

TimeGrid TimeGrid::shifted(int steps, double shift) {
  require(steps >= 1, "TimeGrid: step count must be positive");
  require(shift > 0.0, "TimeGrid: shift must be positive");
  TimeGrid g;
  g.values.resize(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    const double u = 1.0 - double(k) / double(steps);
    g.values[static_cast<std::size_t>(k)] = shift * u / (1.0 + (shift - 1.0) * u);
  }
  g.values.front() = 1.0;
  g.values.back() = 0.0;
  g.validate();
  return g;
}

void MixtureSpec::validate() const {
  require(!means.empty(), "MixtureSpec: needs at least one component");
  require(means.size() == variances.size() && means.size() == weights.size(),
          "MixtureSpec: component list lengths differ");
  const int d = dim();
  double wsum = 0.0;
  for (std::size_t j = 0; j < means.size(); ++j) {
    require(static_cast<int>(means[j].size()) == d &&
                static_cast<int>(variances[j].size()) == d,
            "MixtureSpec: dimension mismatch");
    require(variances[j].minCoeff() >= 0.0, "MixtureSpec: variances must be >= 0");
    require(weights[j] > 0.0, "MixtureSpec: weights must be positive");
    wsum += weights[j];
  }
  require(std::abs(wsum - 1.0) < 1e-12, "MixtureSpec: weights must sum to 1");
}

double MixtureSpec::component_log_density(const Vec& y, int j) const {
  const Vec& mu = means[static_cast<std::size_t>(j)];
  const Vec& var = variances[static_cast<std::size_t>(j)];
  require(var.minCoeff() > 0.0,
          "MixtureSpec: degenerate covariance has no density");
  double lp = -0.5 * double(y.size()) * std::log(2.0 * M_PI);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double diff = y[i] - mu[i];
    lp -= 0.5 * (std::log(var[i]) + diff * diff / var[i]);
  }
  return lp;
}

double MixtureSpec::log_density(const Vec& y) const {
  double max_lp = -std::numeric_limits<double>::infinity();
  std::vector<double> lps(means.size());
  for (int j = 0; j < components(); ++j) {
    lps[static_cast<std::size_t>(j)] =
        std::log(weights[static_cast<std::size_t>(j)]) + component_log_density(y, j);
    max_lp = std::max(max_lp, lps[static_cast<std::size_t>(j)]);
  }
  double s = 0.0;
  for (double lp : lps) s += std::exp(lp - max_lp);
  return max_lp + std::log(s);
}

Vec MixtureSpec::sample_component(int j, RngStream& rng) const {
  const Vec& mu = means[static_cast<std::size_t>(j)];
  const Vec& var = variances[static_cast<std::size_t>(j)];
  Vec y(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    y[i] = mu[i] + std::sqrt(var[i]) * rng.normal();
  return y;
}

int MixtureSpec::draw_component(RngStream& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int j = 0; j < components(); ++j) {
    acc += weights[static_cast<std::size_t>(j)];
    if (u < acc) return j;
  }
  return components() - 1;
}

MixtureSpec MixtureSpec::point(Vec mean) {
  MixtureSpec m;
  m.variances.push_back(Vec::Zero(mean.size()));
  m.means.push_back(std::move(mean));
  m.weights.push_back(1.0);
  return m;
}

MixtureSpec MixtureSpec::two_component(const Vec& mean0, const Vec& mean1,
                                       double variance) {
  MixtureSpec m;
  m.means = {mean0, mean1};
  m.variances = {Vec::Constant(mean0.size(), variance),
                 Vec::Constant(mean1.size(), variance)};
  m.weights = {0.5, 0.5};
  return m;
}

FlowSample corrupt(const Vec& x0, const Vec& eps, double t) {
  require(x0.size() == eps.size(), "corrupt: dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw UsageError("corrupt: t must lie in [0, 1]");
  FlowSample s;
  s.x0 = x0;
  s.eps = eps;
  s.t = t;
  s.x_t = t * eps + (1.0 - t) * x0;
  return s;
}

Vec clean_estimate(const Vec& x, double t, const Vec& v) { return x - t * v; }

Vec PointField::velocity(const Vec& x, double t, const Condition&) const {
  return analytic_velocity_point(x, t, mean_);
}

Vec analytic_velocity_point(const Vec& x, double t, const Vec& mean) {
  if (t == 0.0)
    throw NumericError("analytic point velocity is singular at t = 0");
  require(t > 0.0 && t <= 1.0, "analytic point velocity: t must lie in (0, 1]");
  return (x - mean) / t;
}

MixtureField::MixtureField(MixtureSpec mix) : mix_(std::move(mix)) { mix_.validate(); }

Vec MixtureField::component_velocity(const Vec& x, double t, int j) const {
  const Vec& mu = mix_.means[static_cast<std::size_t>(j)];
  const Vec& var = mix_.variances[static_cast<std::size_t>(j)];
  const double omt = 1.0 - t;
  // marginal of x_t given component j: N((1-t) mu, (1-t)^2 var + t^2)
  // E[eps | x] = t * S^-1 m,  E[x0 | x] = mu + (1-t) var S^-1 m,  m = x - (1-t) mu
  Vec v(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double s = omt * omt * var[i] + t * t;
    const double m = x[i] - omt * mu[i];
    v[i] = (t - omt * var[i]) * m / s - mu[i];
  }
  return v;
}

Vec MixtureField::velocity(const Vec& x, double t, const Condition& c) const {
  if (!(t > 0.0 && t <= 1.0))
    throw NumericError("analytic mixture velocity: t must lie in (0, 1]");
  if (!c.is_null()) {
    require(c.label < mix_.components(), "MixtureField: condition label out of range");
    return component_velocity(x, t, c.label);
  }
  // responsibilities over components from the marginal of x_t, in log space
  const double omt = 1.0 - t;
  const int n = mix_.components();
  std::vector<double> lp(static_cast<std::size_t>(n));
  double max_lp = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    const Vec& mu = mix_.means[static_cast<std::size_t>(j)];
    const Vec& var = mix_.variances[static_cast<std::size_t>(j)];
    double l = std::log(mix_.weights[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double s = omt * omt * var[i] + t * t;
      const double m = x[i] - omt * mu[i];
      l -= 0.5 * (std::log(2.0 * M_PI * s) + m * m / s);
    }
    lp[static_cast<std::size_t>(j)] = l;
    max_lp = std::max(max_lp, l);
  }
  if (!std::isfinite(max_lp))
    throw NumericError("analytic mixture velocity: responsibilities underflow");
  double z = 0.0;
  for (double& l : lp) {
    l = std::exp(l - max_lp);
    z += l;
  }
  Vec v = Vec::Zero(x.size());
  for (int j = 0; j < n; ++j)
    v += (lp[static_cast<std::size_t>(j)] / z) * component_velocity(x, t, j);
  return v;
}

Vec analytic_velocity_mixture(const Vec& x, double t, const MixtureSpec& mix) {
  return MixtureField(mix).velocity(x, t, Condition::null_cond());
}

namespace {

std::string field_layer_name(int l, const char* part) {
  return "field.l" + std::to_string(l) + "." + part;
}

}  // namespace

LearnedField::LearnedField(FieldConfig cfg, ParameterStore store)
    : cfg_(cfg), store_(std::move(store)) {
  cfg_.validate();
}

LearnedField LearnedField::init(const FieldConfig& cfg, RngStream& rng) {
  cfg.validate();
  ParameterStore store;
  const int in_dim = cfg.dim + kTimeEmbedDim + cfg.cond_embed;
  int prev = in_dim;
  for (int l = 0; l < cfg.layers; ++l) {
    store.add(field_layer_name(l, "w"), fan_in_uniform(prev, cfg.hidden, rng));
    store.add(field_layer_name(l, "b"), Mat::Zero(1, cfg.hidden));
    prev = cfg.hidden;
  }
  // zero-initialized readout: the untrained field predicts zero velocity
  store.add("field.out.w", Mat::Zero(prev, cfg.dim));
  store.add("field.out.b", Mat::Zero(1, cfg.dim));
  store.add("field.cond", fan_in_uniform(cfg.n_classes, cfg.cond_embed, rng));
  return LearnedField(cfg, std::move(store));
}

Vec LearnedField::velocity(const Vec& x, double t, const Condition& c) const {
  require(store_.size() > 0, "LearnedField: uninitialized parameter store");
  require(static_cast<int>(x.size()) == cfg_.dim, "LearnedField: dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0))
    throw UsageError("LearnedField: t must lie in [0, 1]");
  Eigen::RowVectorXd h(cfg_.dim + kTimeEmbedDim + cfg_.cond_embed);
  h.head(cfg_.dim) = x.transpose();
  h.segment(cfg_.dim, kTimeEmbedDim) = time_embedding(t).transpose();
  if (c.is_null()) {
    h.tail(cfg_.cond_embed).setZero();
  } else {
    require(c.label < cfg_.n_classes, "LearnedField: condition label out of range");
    h.tail(cfg_.cond_embed) = store_.value("field.cond").row(c.label);
  }
  for (int l = 0; l < cfg_.layers; ++l) {
    h = (h * store_.value(field_layer_name(l, "w")) +
         store_.value(field_layer_name(l, "b")))
            .eval();
    h = h.array() / (1.0 + (-h.array()).exp());  // silu
  }
  Eigen::RowVectorXd out =
      h * store_.value("field.out.w") + store_.value("field.out.b");
  check_finite(out.transpose(), "learned field output");
  return out.transpose();
}

Var LearnedField::forward_on_tape(Tape& tape, const ParamGetter& p, const Mat& x_rows,
                                  const std::vector<double>& t,
                                  const std::vector<int>& labels) {
  const int n = static_cast<int>(x_rows.rows());
  require(static_cast<int>(t.size()) == n && static_cast<int>(labels.size()) == n,
          "LearnedField::forward_on_tape: row count mismatch");
  Mat base(n, cfg_.dim + kTimeEmbedDim);
  for (int i = 0; i < n; ++i) {
    base.row(i).head(cfg_.dim) = x_rows.row(i);
    base.row(i).tail(kTimeEmbedDim) =
        time_embedding(t[static_cast<std::size_t>(i)]).transpose();
  }
  // the embedding gather writes zero rows for null labels
  Var cond = tape.embedding_rows(store_, "field.cond", labels);
  Var h = tape.hstack({tape.constant(std::move(base)), cond});
  for (int l = 0; l < cfg_.layers; ++l)
    h = tape.silu(dense(tape, h, p(field_layer_name(l, "w")), p(field_layer_name(l, "b"))));
  return dense(tape, h, p("field.out.w"), p("field.out.b"));
}

double fm_loss(const VelocityField& field, const std::vector<FlowBatchItem>& batch) {
  require(!batch.empty(), "fm_loss: empty batch");
  double acc = 0.0;
  for (const FlowBatchItem& item : batch) {
    const FlowSample s = corrupt(item.x0, item.eps, item.t);
    const Vec v = field.velocity(s.x_t, item.t, item.c);
    acc += (v - (item.eps - item.x0)).squaredNorm();
  }
  return acc / double(batch.size());
}

Var fm_loss_on_tape(Tape& tape, LearnedField& field,
                    const std::vector<FlowBatchItem>& batch) {
  require(!batch.empty(), "fm_loss: empty batch");
  const int n = static_cast<int>(batch.size());
  const int d = field.config().dim;
  Mat xs(n, d), targets(n, d);
  std::vector<double> ts(static_cast<std::size_t>(n));
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const FlowBatchItem& item = batch[static_cast<std::size_t>(i)];
    const FlowSample s = corrupt(item.x0, item.eps, item.t);
    xs.row(i) = s.x_t.transpose();
    targets.row(i) = (item.eps - item.x0).transpose();
    ts[static_cast<std::size_t>(i)] = item.t;
    labels[static_cast<std::size_t>(i)] = item.c.is_null() ? -1 : item.c.label;
  }
  Var pred = field.forward_on_tape(tape, trainable_params(tape, field.store()), xs, ts, labels);
  Var diff = tape.sub(pred, tape.constant(std::move(targets)));
  return tape.scale(tape.sum_squared(diff), 1.0 / double(n));
}

PretrainResult pretrain_field(LearnedField& field, const MixtureSpec& target,
                              const FieldPretrainConfig& cfg, RngStream& rng,
                              Adam* optimizer) {
  target.validate();
  require(cfg.iterations > 0 && cfg.batch > 0, "pretrain_field: bad config");
  std::unique_ptr<Adam> local;
  if (!optimizer) {
    local = std::make_unique<Adam>(field.store(), AdamConfig{cfg.lr});
    optimizer = local.get();
  }
  PretrainResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int iter = cfg.start_iteration; iter < cfg.iterations; ++iter) {
    RngStream it_rng = rng.child(static_cast<std::uint64_t>(iter));
    std::vector<FlowBatchItem> batch(static_cast<std::size_t>(cfg.batch));
    for (FlowBatchItem& item : batch) {
      const int j = target.draw_component(it_rng);
      item.x0 = target.sample_component(j, it_rng);
      item.eps = it_rng.normal_vec(target.dim());
      item.t = it_rng.uniform();
      item.c = it_rng.uniform() < cfg.cond_drop ? Condition::null_cond() : Condition::of(j);
    }
    Tape tape;
    Var loss = fm_loss_on_tape(tape, field, batch);
    tape.backward(loss);
    optimizer->step();
    result.loss_curve.push_back(loss.scalar());
    if (iter == 99 && cfg.start_iteration == 0) {
      const auto& c = result.loss_curve;
      double early = 0.0, late = 0.0;
      for (int i = 0; i < 20; ++i) early += c[static_cast<std::size_t>(i)];
      for (int i = 80; i < 100; ++i) late += c[static_cast<std::size_t>(i)];
      if (late >= early)
        throw NumericError(
            "pretrain_field: loss failed to decrease over the first 100 iterations "
            "(early mean " + std::to_string(early / 20.0) + ", late mean " +
            std::to_string(late / 20.0) + ")");
    }
  }
  return result;
}

}  // namespace af
