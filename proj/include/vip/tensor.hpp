#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "vip/errors.hpp"

namespace vip {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode;

// Adds this node's contribution to each parent's flow buffer.
// parent_flows is aligned with parents; nullptr marks a parent that does
// not require gradients and may be skipped.
using BackwardFn = std::function<void(const TensorNode& self,
                                      const std::vector<float>& upstream,
                                      const std::vector<std::vector<float>*>& parent_flows)>;

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // same size as data iff requires_grad
  std::vector<std::shared_ptr<TensorNode>> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

}  // namespace detail

// Dense row-major float tensor participating in a define-by-run autodiff
// graph. Copying a Tensor copies the handle, not the storage; graphs are
// rebuilt on every forward pass and freed when the last handle drops.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor scalar(float value);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(int axis) const;
  std::size_t size() const;

  const std::vector<float>& data() const;
  // Direct mutation is only meaningful on leaves (optimizer updates);
  // mutating an op output would desynchronize saved activations.
  std::vector<float>& mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool flag);  // leaves only
  bool is_leaf() const;

  const std::vector<float>& grad() const;
  void zero_grad();

  float item() const;
  float at(std::initializer_list<int> index) const;

  // Reverse-mode sweep from a scalar. Gradients accumulate additively into
  // every requires_grad tensor reachable from this node; call zero_grad to
  // reset between unrelated passes.
  void backward() const;

  // Value-only copy, detached from the graph.
  Tensor detached() const;

  detail::TensorNode* node() const { return node_.get(); }

 private:
  std::shared_ptr<detail::TensorNode> node_;
  friend Tensor make_op(const char* op, Shape shape, std::vector<float> data,
                        const std::vector<Tensor>& inputs, detail::BackwardFn backward);
};

// --- Differentiable operations -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor mul_scalar(const Tensor& x, float s);
// x[m,n] + bias[n] broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

Tensor gelu(const Tensor& x);  // tanh approximation
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 float epsilon = 1e-5f);

Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_rows(const Tensor& x, int row_begin, int row_end);
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);
Tensor gather_columns(const Tensor& x, const std::vector<int>& indices);

Tensor sum_all(const Tensor& x);
Tensor l2_norm_rows(const Tensor& x);

Tensor clip(const Tensor& x, float lo, float hi);
// y[c,i,j] = x[c,i,j] * scale[c] + bias[c] on a [C,H,W] tensor.
Tensor channel_affine(const Tensor& x, const std::vector<float>& scale,
                      const std::vector<float>& bias);
// [C,H,W] -> [num_patches, C*p*p]; patches in row-major grid order, each
// flattened channel-major.
Tensor patchify(const Tensor& x, int patch_dim);

}  // namespace vip
