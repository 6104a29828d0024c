#pragma once

// Reverse-mode autodiff over dense row-major double tensors. Ops build a DAG
// eagerly; backward() runs the tape in reverse topological order. Gradients
// are only allocated and propagated along paths that reach a trainable leaf,
// so frozen weights never receive grad buffers.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ptune/common.hpp"

namespace ptune {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool needs_grad = false;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward;

  double* grad_data();  // zero-initialized on first use
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<double> value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t ndim() const { return node_->shape.size(); }

  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& value() const { return node_->value; }
  const std::vector<double>& grad() const;
  bool requires_grad() const { return node_->requires_grad; }

  // Deep copy with no graph history.
  Tensor clone(bool requires_grad = false) const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// --- graph construction ops ---

Tensor add(const Tensor& a, const Tensor& b);             // same shape
Tensor add_bias(const Tensor& x, const Tensor& bias);     // bias over last dim
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);             // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, const std::vector<double>& c);  // no-grad addend

// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] with equal leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t dim);
Tensor stack_rows(const std::vector<Tensor>& rows);      // N x [1, D] -> [N, D]
Tensor slice(const Tensor& x, std::size_t dim, std::size_t start, std::size_t len);
Tensor tile0(const Tensor& x, std::size_t n);             // prepend dim of size n

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor dropout(const Tensor& x, double rate, Rng& rng);   // inverted dropout

// Row gather: table [V, H], ids flat -> [ids.size(), H].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Mean cross-entropy from logits [N, C]; targets[i] == ignore_index rows are
// skipped. Errors if every row is ignored.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index = -100);

// Backpropagate from a scalar; accumulates into .grad of needing nodes.
void backward(const Tensor& loss);

}  // namespace ptune
