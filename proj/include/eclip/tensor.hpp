// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to an immutable graph node. Operations on
// tensors that require gradients record their parents and a backward rule;
// `backward()` replays those rules in reverse creation order. Leaf tensors
// (parameters) are the only nodes whose values may be modified in place,
// and only by their owner between forward passes.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace eclip {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>*> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;  // empty for leaves and for ops without a gradient rule
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  /// 1-D tensor.
  static Tensor vector(std::vector<double> v, bool requires_grad = false);
  /// 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data().size(); }
  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  /// Element of a 2-D tensor.
  double at(std::size_t i, std::size_t j) const;
  /// Element of a 1-D tensor.
  double operator[](std::size_t i) const;

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  /// In-place access to a leaf's storage. Throws for non-leaf tensors.
  std::span<double> mutable_data();
  /// New leaf sharing no storage with this tensor.
  Tensor clone_leaf(bool requires_grad) const;
  /// Same values, cut from the graph.
  Tensor detach() const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

  static Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                            std::vector<Tensor> parents, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

/// While alive on a thread, new ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Gradients of a scalar root with respect to every leaf it depends on.
class Gradients {
 public:
  /// Gradient for `t`; all zeros if `t` did not influence the root.
  std::vector<double> of(const Tensor& t) const;
  bool contains(const Tensor& t) const;

 private:
  friend Gradients backward(const Tensor& root);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

/// Runs the reverse pass from a scalar root. Nodes are visited in strictly
/// decreasing creation order so accumulation is reproducible.
Gradients backward(const Tensor& root);

// ---------------------------------------------------------------- ops

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x[..., n] + b[n]
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
/// x * s for a one-element tensor s.
Tensor mul_scalar(const Tensor& x, const Tensor& s);
/// x[m, n] / d[m] row by row.
Tensor div_rows(const Tensor& x, const Tensor& d);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// x * ln(x) with 0 * ln(0) := 0; x must be non-negative.
Tensor xlogx(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Normalizes the last axis to zero mean and unit variance, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Divides each vector along the last axis by its L2 norm.
Tensor normalize(const Tensor& x);

/// Concatenation along axis 0.
Tensor concat(const std::vector<Tensor>& parts);
/// Concatenation along the last axis of 2-D tensors.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Stacks equally sized 1-D tensors into rows of a matrix.
Tensor stack(const std::vector<Tensor>& rows);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
/// Row i of a matrix as a 1-D tensor.
Tensor row(const Tensor& x, std::size_t i);
/// Element i of a 1-D tensor as a scalar tensor.
Tensor element(const Tensor& x, std::size_t i);
/// table[ids[k], :] for each k.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
/// x[k, idx[k]] for each row k.
Tensor pick(const Tensor& x, std::span<const std::size_t> idx);
/// Row-wise dot products of two equally shaped matrices.
Tensor rowwise_dot(const Tensor& a, const Tensor& b);

}  // namespace eclip
