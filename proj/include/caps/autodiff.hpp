// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "caps/rng.hpp"
#include "caps/tensor.hpp"

namespace caps::ad {

// Reverse-mode autodiff over a define-by-run graph. The graph is rebuilt on
// every forward pass; gradients live in a map local to each backward() call,
// so parameter nodes carry no optimizer state and per-example passes never
// bleed into each other.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  std::vector<NodePtr> parents;
  // Given dLoss/dValue, returns dLoss/dParent for each parent, in order.
  std::function<std::vector<Tensor>(const Tensor&)> grad_fn;
  bool requires_grad = false;
  const char* op_name = "const";
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node(std::move(n)) {}

  static Var constant(Tensor t);
  static Var leaf(Tensor t);  // trainable parameter node

  const Tensor& val() const { return node->value; }
  bool defined() const { return node != nullptr; }

  NodePtr node;
};

// Named parameter tensors of one network. Names are unique and shapes are
// fixed after construction; insertion order defines the flattening order
// used for gradient clipping and noising.
class ParamSet {
 public:
  ParamSet() = default;
  // copying would alias the underlying parameter nodes; use clone()
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;
  ParamSet clone() const;

  Var add(const std::string& name, Tensor init);
  const Var& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t count() const { return order_.size(); }
  int64_t total_size() const;

  std::vector<double> flatten_values() const;
  void assign_values(const std::vector<double>& flat);
  void set(const std::string& name, Tensor t);  // shape must match

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Var> by_name_;
};

// One gradient tensor per parameter, shape-congruent with its ParamSet.
struct GradSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  static GradSet zeros_like(const ParamSet& params);
  const Tensor& at(const std::string& name) const;
  std::vector<double> flatten() const;
  double l2_norm() const;
  void add_scaled(const GradSet& other, double c);  // this += c * other
  void scale(double c);
  bool congruent_with(const ParamSet& params) const;
};

// ---- operations -----------------------------------------------------------

// y = x W^T + b with W (out,in), b (out); x is (in) or (batch,in).
Var dense(const Var& x, const Var& w, const Var& b);

// Cross-correlation along the time axis. x (C_in,T) or (B,C_in,T),
// w (C_out,C_in,k), b (C_out). Output time = floor((T+2p-k)/stride)+1.
Var conv1d(const Var& x, const Var& w, const Var& b, int stride, int padding);

// Transposed 1D convolution (the adjoint of conv1d). x (C_in,T) or
// (B,C_in,T), w (C_in,C_out,k), b (C_out). Output time = (T-1)*stride-2p+k.
Var conv1d_transpose(const Var& x, const Var& w, const Var& b, int stride,
                     int padding);

Var relu(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);  // rejects nonpositive inputs
Var softmax(const Var& x);      // over the last axis
Var log_softmax(const Var& x);  // over the last axis

// Inverted dropout: training mode zeroes each element with probability rate
// and scales survivors by 1/(1-rate); inference mode is the identity.
Var dropout(const Var& x, double rate, Rng& rng, bool training);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var affine(const Var& x, double a, double b);  // a*x + b elementwise
Var scale(const Var& x, double c);

Var sum(const Var& x);       // -> scalar
Var mean(const Var& x);      // -> scalar
Var sum_last(const Var& x);  // reduce the last axis

Var reshape(const Var& x, std::vector<int> shape);
Var concat(const Var& a, const Var& b);  // along the last axis
Var slice_last(const Var& x, int start, int len);  // along the last axis

// (F*K,T) -> (F*T,K) or (B,F*K,T) -> (B,F*T,K): regroups conv channels
// (frame-major, class-minor) into per-cell class logits.
Var channels_to_cells(const Var& x, int frames, int classes);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---- engine ---------------------------------------------------------------

// Exact reverse-mode gradients of a scalar loss for every parameter in the
// set (zero for parameters the loss does not reach). Rejects non-scalar
// losses and non-finite gradients.
GradSet backward(const Var& loss, const ParamSet& params);

// Gradient of loss_of(i) for each i in [0,n); element i equals backward() of
// the loss restricted to example i. Rejects empty batches.
std::vector<GradSet> per_example_gradients(
    int n, const ParamSet& params, const std::function<Var(int)>& loss_of);

}  // namespace caps::ad
