#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "asyncflow/common.hpp"
#include "asyncflow/params.hpp"

namespace af {

class Tape;

// Handle to a tape node; cheap to copy, valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Mat& value() const;
  double scalar() const;  // value of a 1x1 node
  int rows() const;
  int cols() const;
};

// Reverse-mode autodiff over a recorded list of primitive matrix operations.
// A forward pass appends nodes; backward() runs the recorded ops in reverse
// and overwrites the grad buffers of every bound ParameterStore entry.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v);
  Var scalar_constant(double v);
  // Trainable leaf: memoized per store entry, so repeated lookups share a node
  // and gradients accumulate naturally.
  Var param(ParameterStore& store, const std::string& name);
  // Read-only leaf: same value, no gradient binding.
  Var lookup(const ParameterStore& store, const std::string& name);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var add_row_broadcast(Var a, Var bias_row);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var silu(Var a);
  Var tanh(Var a);
  Var softmax_rows(Var a);
  // Fused multi-head attention core on full-width Q, K, V (n x width); heads
  // are contiguous column blocks. Output is the concatenated head mix, before
  // any output projection.
  Var attention(Var q, Var k, Var v, int heads);
  Var vstack(const std::vector<Var>& parts);
  Var hstack(const std::vector<Var>& parts);
  Var slice_rows(Var a, int r0, int n);
  Var slice_cols(Var a, int c0, int n);
  Var flatten_to_row(Var a);  // row-major
  // Gathers rows of a parameter table; index -1 yields an all-zeros row that
  // receives no gradient.
  Var embedding_rows(ParameterStore& store, const std::string& name,
                     const std::vector<int>& indices);
  Var embedding_rows_frozen(const ParameterStore& store, const std::string& name,
                            const std::vector<int>& indices);
  Var sum_squared(Var a);  // 1x1
  Var sum(const std::vector<Var>& scalars);
  Var exp(Var a);
  Var clamp(Var a, double lo, double hi);
  Var min2(Var a, Var b);
  Var phi_map(Var a);  // elementwise positivity map from beta.hpp
  Var beta_log_prob(Var alpha, Var beta, double r);

  const Mat& value(Var v) const;
  const Mat& grad(Var v) const;

  // Reverse pass from a scalar loss. Overwrites grads of bound store entries.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<int> parents;
    std::vector<Mat> aux;  // op-specific saved state (e.g. attention weights)
    std::function<void(Tape&, int)> back;  // nullptr for leaves
  };

  int push(Mat value, std::vector<int> parents, std::function<void(Tape&, int)> back);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Var wrap(int id) { return Var{this, id}; }
  void check_same_tape(Var v) const;

  std::vector<Node> nodes_;
  struct Binding {
    ParameterStore* store;
    std::string name;
    int node;
  };
  std::vector<Binding> bindings_;
  std::unordered_map<const ParamEntry*, int> param_nodes_;
  bool ran_backward_ = false;
};

// Affine map helper: x * w + bias (bias broadcast over rows).
Var dense(Tape& t, Var x, Var w, Var bias);

// Resolves a parameter name to a tape node: either a trainable leaf bound to
// a store, or a frozen constant for inference passes. Both resolve to the
// same values, so the two paths are bit-identical.
using ParamGetter = std::function<Var(const std::string&)>;

ParamGetter trainable_params(Tape& tape, ParameterStore& store);
ParamGetter frozen_params(Tape& tape, const ParameterStore& store);

}  // namespace af
