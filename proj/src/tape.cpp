#include "asyncflow/tape.hpp"

#include <cmath>

#include "asyncflow/beta.hpp"

namespace af {

const Mat& Var::value() const { return tape->value(*this); }

double Var::scalar() const {
  const Mat& m = tape->value(*this);
  require(m.rows() == 1 && m.cols() == 1, "Var::scalar: node is not 1x1");
  return m(0, 0);
}

int Var::rows() const { return static_cast<int>(tape->value(*this).rows()); }
int Var::cols() const { return static_cast<int>(tape->value(*this).cols()); }

const Mat& Tape::value(Var v) const {
  check_same_tape(v);
  return node(v.id).value;
}

const Mat& Tape::grad(Var v) const {
  check_same_tape(v);
  require(ran_backward_, "Tape::grad: backward has not run");
  return node(v.id).grad;
}

void Tape::check_same_tape(Var v) const {
  require(v.tape == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
          "Var does not belong to this tape");
}

int Tape::push(Mat value, std::vector<int> parents, std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Mat v) { return wrap(push(std::move(v), {}, nullptr)); }

Var Tape::scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::param(ParameterStore& store, const std::string& name) {
  ParamEntry& e = store.entry(name);
  auto it = param_nodes_.find(&e);
  if (it != param_nodes_.end()) return wrap(it->second);
  const int id = push(e.value, {}, nullptr);
  param_nodes_.emplace(&e, id);
  bindings_.push_back({&store, name, id});
  return wrap(id);
}

Var Tape::lookup(const ParameterStore& store, const std::string& name) {
  return constant(store.value(name));
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat out = node(a.id).value * node(b.id).value;
  const int ia = a.id, ib = b.id;
  return wrap(push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.node(ia).grad.noalias() += g * t.node(ib).value.transpose();
    t.node(ib).grad.noalias() += t.node(ia).value.transpose() * g;
  }));
}

Var Tape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat out = node(a.id).value + node(b.id).value;
  const int ia = a.id, ib = b.id;
  return wrap(push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.node(ia).grad += g;
    t.node(ib).grad += g;
  }));
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Mat out = node(a.id).value - node(b.id).value;
  const int ia = a.id, ib = b.id;
  return wrap(push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.node(ia).grad += g;
    t.node(ib).grad -= g;
  }));
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Mat out = node(a.id).value.cwiseProduct(node(b.id).value);
  const int ia = a.id, ib = b.id;
  return wrap(push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.node(ia).grad += g.cwiseProduct(t.node(ib).value);
    t.node(ib).grad += g.cwiseProduct(t.node(ia).value);
  }));
}

Var Tape::add_row_broadcast(Var a, Var bias_row) {
  check_same_tape(a);
  check_same_tape(bias_row);
  require(bias_row.rows() == 1 && bias_row.cols() == a.cols(),
          "add_row_broadcast: bias must be 1 x cols(a)");
  Mat out = node(a.id).value.rowwise() + node(bias_row.id).value.row(0);
  const int ia = a.id, ib = bias_row.id;
  return wrap(push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.node(ia).grad += g;
    t.node(ib).grad.row(0) += g.colwise().sum();
  }));
}

Var Tape::scale(Var a, double s) {
  check_same_tape(a);
  Mat out = s * node(a.id).value;
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia, s](Tape& t, int self) {
    t.node(ia).grad += s * t.node(self).grad;
  }));
}

Var Tape::add_scalar(Var a, double c) {
  check_same_tape(a);
  Mat out = node(a.id).value.array() + c;
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.node(ia).grad += t.node(self).grad;
  }));
}

Var Tape::silu(Var a) {
  check_same_tape(a);
  const Mat& x = node(a.id).value;
  Mat sig = (1.0 + (-x.array()).exp()).inverse().matrix();
  Mat out = x.cwiseProduct(sig);
  const int ia = a.id;
  Var v = wrap(push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& x = t.node(ia).value;
    const Mat& sig = t.node(self).aux[0];
    // d silu / dx = sig * (1 + x * (1 - sig))
    Mat d = sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
    t.node(ia).grad += t.node(self).grad.cwiseProduct(d);
  }));
  node(v.id).aux.push_back(std::move(sig));
  return v;
}

Var Tape::tanh(Var a) {
  check_same_tape(a);
  Mat out = node(a.id).value.array().tanh();
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.node(self).value;
    t.node(ia).grad +=
        t.node(self).grad.cwiseProduct((1.0 - y.array().square()).matrix());
  }));
}

Var Tape::softmax_rows(Var a) {
  check_same_tape(a);
  const Mat& x = node(a.id).value;
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp();
    out.row(i) = e / e.sum();
  }
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& p = t.node(self).value;
    const Mat& g = t.node(self).grad;
    Mat gp = g.cwiseProduct(p);
    Vec row_dot = gp.rowwise().sum();
    t.node(ia).grad += gp - p.cwiseProduct(row_dot.replicate(1, p.cols()));
  }));
}

Var Tape::attention(Var q, Var k, Var v, int heads) {
  check_same_tape(q);
  check_same_tape(k);
  check_same_tape(v);
  const int n = q.rows();
  const int w = q.cols();
  require(k.rows() == n && v.rows() == n && k.cols() == w && v.cols() == w,
          "attention: Q, K, V must share shape");
  require(heads > 0 && w % heads == 0, "attention: width must divide by head count");
  const int dh = w / heads;
  const double inv_scale = 1.0 / std::sqrt(double(dh));

  const Mat& Q = node(q.id).value;
  const Mat& K = node(k.id).value;
  const Mat& V = node(v.id).value;
  Mat out(n, w);
  std::vector<Mat> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto Qh = Q.middleCols(h * dh, dh);
    const auto Kh = K.middleCols(h * dh, dh);
    const auto Vh = V.middleCols(h * dh, dh);
    Mat scores = inv_scale * (Qh * Kh.transpose());
    Mat p(n, n);
    for (int i = 0; i < n; ++i) {
      const double m = scores.row(i).maxCoeff();
      Eigen::RowVectorXd e = (scores.row(i).array() - m).exp();
      p.row(i) = e / e.sum();
    }
    out.middleCols(h * dh, dh) = p * Vh;
    probs[static_cast<std::size_t>(h)] = std::move(p);
  }

  const int iq = q.id, ik = k.id, iv = v.id;
  Var res = wrap(push(std::move(out), {iq, ik, iv},
                      [iq, ik, iv, heads, dh, inv_scale](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& Q = t.node(iq).value;
    const Mat& K = t.node(ik).value;
    const Mat& V = t.node(iv).value;
    for (int h = 0; h < heads; ++h) {
      const Mat& p = t.node(self).aux[static_cast<std::size_t>(h)];
      const auto gh = g.middleCols(h * dh, dh);
      const auto Qh = Q.middleCols(h * dh, dh);
      const auto Kh = K.middleCols(h * dh, dh);
      const auto Vh = V.middleCols(h * dh, dh);
      Mat dp = gh * Vh.transpose();
      t.node(iv).grad.middleCols(h * dh, dh).noalias() += p.transpose() * gh;
      Mat pdp = p.cwiseProduct(dp);
      Vec row_dot = pdp.rowwise().sum();
      Mat ds = pdp - p.cwiseProduct(row_dot.replicate(1, p.cols()));
      t.node(iq).grad.middleCols(h * dh, dh).noalias() += inv_scale * (ds * Kh);
      t.node(ik).grad.middleCols(h * dh, dh).noalias() += inv_scale * (ds.transpose() * Qh);
    }
  }));
  node(res.id).aux = std::move(probs);
  return res;
}

Var Tape::vstack(const std::vector<Var>& parts) {
  require(!parts.empty(), "vstack: empty part list");
  int rows = 0;
  const int cols = parts.front().cols();
  std::vector<int> ids;
  for (Var p : parts) {
    check_same_tape(p);
    require(p.cols() == cols, "vstack: column mismatch");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  int r = 0;
  for (Var p : parts) {
    out.middleRows(r, p.rows()) = node(p.id).value;
    r += p.rows();
  }
  return wrap(push(std::move(out), ids, [ids](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    int r = 0;
    for (int id : ids) {
      const int nr = static_cast<int>(t.node(id).value.rows());
      t.node(id).grad += g.middleRows(r, nr);
      r += nr;
    }
  }));
}

Var Tape::hstack(const std::vector<Var>& parts) {
  require(!parts.empty(), "hstack: empty part list");
  int cols = 0;
  const int rows = parts.front().rows();
  std::vector<int> ids;
  for (Var p : parts) {
    check_same_tape(p);
    require(p.rows() == rows, "hstack: row mismatch");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  int c = 0;
  for (Var p : parts) {
    out.middleCols(c, p.cols()) = node(p.id).value;
    c += p.cols();
  }
  return wrap(push(std::move(out), ids, [ids](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    int c = 0;
    for (int id : ids) {
      const int nc = static_cast<int>(t.node(id).value.cols());
      t.node(id).grad += g.middleCols(c, nc);
      c += nc;
    }
  }));
}

Var Tape::slice_rows(Var a, int r0, int n) {
  check_same_tape(a);
  require(r0 >= 0 && n > 0 && r0 + n <= a.rows(), "slice_rows: out of range");
  Mat out = node(a.id).value.middleRows(r0, n);
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia, r0, n](Tape& t, int self) {
    t.node(ia).grad.middleRows(r0, n) += t.node(self).grad;
  }));
}

Var Tape::slice_cols(Var a, int c0, int n) {
  check_same_tape(a);
  require(c0 >= 0 && n > 0 && c0 + n <= a.cols(), "slice_cols: out of range");
  Mat out = node(a.id).value.middleCols(c0, n);
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia, c0, n](Tape& t, int self) {
    t.node(ia).grad.middleCols(c0, n) += t.node(self).grad;
  }));
}

Var Tape::flatten_to_row(Var a) {
  check_same_tape(a);
  const Mat& x = node(a.id).value;
  const int r = static_cast<int>(x.rows());
  const int c = static_cast<int>(x.cols());
  Mat out(1, r * c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(0, i * c + j) = x(i, j);
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia, r, c](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) t.node(ia).grad(i, j) += g(0, i * c + j);
  }));
}

namespace {

Mat gather_rows(const Mat& table, const std::vector<int>& indices) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0) continue;  // reserved all-zeros row
    require(idx < table.rows(), "embedding_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.row(idx);
  }
  return out;
}

}  // namespace

Var Tape::embedding_rows(ParameterStore& store, const std::string& name,
                         const std::vector<int>& indices) {
  Var table = param(store, name);
  Mat out = gather_rows(node(table.id).value, indices);
  const int it = table.id;
  auto idx = indices;
  return wrap(push(std::move(out), {it}, [it, idx](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (idx[i] >= 0)
        t.node(it).grad.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  }));
}

Var Tape::embedding_rows_frozen(const ParameterStore& store, const std::string& name,
                                const std::vector<int>& indices) {
  return constant(gather_rows(store.value(name), indices));
}

Var Tape::sum_squared(Var a) {
  check_same_tape(a);
  Mat out(1, 1);
  out(0, 0) = node(a.id).value.squaredNorm();
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.node(ia).grad += 2.0 * t.node(self).grad(0, 0) * t.node(ia).value;
  }));
}

Var Tape::sum(const std::vector<Var>& scalars) {
  require(!scalars.empty(), "sum: empty list");
  Mat out = Mat::Zero(1, 1);
  std::vector<int> ids;
  for (Var s : scalars) {
    check_same_tape(s);
    require(s.rows() == 1 && s.cols() == 1, "sum: operands must be 1x1");
    out(0, 0) += node(s.id).value(0, 0);
    ids.push_back(s.id);
  }
  return wrap(push(std::move(out), ids, [ids](Tape& t, int self) {
    const double g = t.node(self).grad(0, 0);
    for (int id : ids) t.node(id).grad(0, 0) += g;
  }));
}

Var Tape::exp(Var a) {
  check_same_tape(a);
  Mat out = node(a.id).value.array().exp();
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.node(ia).grad += t.node(self).grad.cwiseProduct(t.node(self).value);
  }));
}

Var Tape::clamp(Var a, double lo, double hi) {
  check_same_tape(a);
  require(lo < hi, "clamp: lo must be below hi");
  Mat out = node(a.id).value.cwiseMax(lo).cwiseMin(hi);
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia, lo, hi](Tape& t, int self) {
    const Mat& x = t.node(ia).value;
    const Mat& g = t.node(self).grad;
    Mat inside = ((x.array() > lo) && (x.array() < hi)).cast<double>();
    t.node(ia).grad += g.cwiseProduct(inside);
  }));
}

Var Tape::min2(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "min2: shape mismatch");
  Mat out = node(a.id).value.cwiseMin(node(b.id).value);
  const int ia = a.id, ib = b.id;
  return wrap(push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& xa = t.node(ia).value;
    const Mat& xb = t.node(ib).value;
    const Mat& g = t.node(self).grad;
    Mat pick_a = (xa.array() <= xb.array()).cast<double>();
    t.node(ia).grad += g.cwiseProduct(pick_a);
    t.node(ib).grad += g.cwiseProduct((1.0 - pick_a.array()).matrix());
  }));
}

Var Tape::phi_map(Var a) {
  check_same_tape(a);
  Mat out = node(a.id).value.unaryExpr([](double x) { return phi(x); });
  const int ia = a.id;
  return wrap(push(std::move(out), {ia}, [ia](Tape& t, int self) {
    Mat d = t.node(ia).value.unaryExpr([](double x) { return phi_deriv(x); });
    t.node(ia).grad += t.node(self).grad.cwiseProduct(d);
  }));
}

Var Tape::beta_log_prob(Var alpha, Var beta, double r) {
  check_same_tape(alpha);
  check_same_tape(beta);
  require(alpha.rows() == 1 && alpha.cols() == 1 && beta.rows() == 1 && beta.cols() == 1,
          "beta_log_prob: alpha, beta must be 1x1");
  const double av = node(alpha.id).value(0, 0);
  const double bv = node(beta.id).value(0, 0);
  Mat out(1, 1);
  out(0, 0) = af::beta_log_prob(BetaParams{av, bv}, r);
  const int ia = alpha.id, ib = beta.id;
  return wrap(push(std::move(out), {ia, ib}, [ia, ib, r](Tape& t, int self) {
    const double g = t.node(self).grad(0, 0);
    const double a = t.node(ia).value(0, 0);
    const double b = t.node(ib).value(0, 0);
    const double psi_ab = digamma(a + b);
    t.node(ia).grad(0, 0) += g * (std::log(r) - digamma(a) + psi_ab);
    t.node(ib).grad(0, 0) += g * (std::log1p(-r) - digamma(b) + psi_ab);
  }));
}

void Tape::backward(Var loss) {
  check_same_tape(loss);
  require(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be scalar");
  for (Node& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  node(loss.id).grad(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = node(i);
    if (n.back && n.grad.cwiseAbs().sum() != 0.0) n.back(*this, i);
  }
  ran_backward_ = true;
  // overwrite contract: bound entries receive exactly this pass's gradients
  for (const Binding& b : bindings_) b.store->grad(b.name) = node(b.node).grad;
}

Var dense(Tape& t, Var x, Var w, Var bias) {
  return t.add_row_broadcast(t.matmul(x, w), bias);
}

ParamGetter trainable_params(Tape& tape, ParameterStore& store) {
  return [&tape, &store](const std::string& name) { return tape.param(store, name); };
}

ParamGetter frozen_params(Tape& tape, const ParameterStore& store) {
  return [&tape, &store](const std::string& name) { return tape.lookup(store, name); };
}

}  // namespace af
