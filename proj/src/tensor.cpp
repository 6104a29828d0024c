#include "ptune/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace ptune {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<TensorNode*> marker = {}) {
  (void)marker;
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.assign(numel(n->shape), 0.0);
  return n;
}

void link(const std::shared_ptr<TensorNode>& n, std::vector<std::shared_ptr<TensorNode>> inputs,
          std::function<void(TensorNode&)> bw) {
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in->needs_grad) n->needs_grad = true;
  }
  if (n->needs_grad) n->backward = std::move(bw);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

double* TensorNode::grad_data() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

Tensor Tensor::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  if (numel(shape) != value.size()) {
    throw ConfigError("leaf: value size " + std::to_string(value.size()) + " does not match shape " +
                      shape_str(shape));
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->needs_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  const std::size_t n = numel(shape);
  return leaf(std::move(shape), std::vector<double>(n, fill), requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  node_->grad_data();
  return node_->grad;
}

Tensor Tensor::clone(bool requires_grad) const {
  return leaf(shape(), value(), requires_grad);
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] + b.value()[i];
  link(n, {a.node(), b.node()}, [](TensorNode& self) {
    for (int k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->needs_grad) continue;
      double* g = in->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
  return Tensor(n);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || x.dim(x.ndim() - 1) != bias.dim(0)) {
    throw ConfigError("add_bias: bias " + shape_str(bias.shape()) + " does not match last dim of " +
                      shape_str(x.shape()));
  }
  const std::size_t d = bias.dim(0);
  const std::size_t rows = x.size() / d;
  auto n = make_node(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) n->value[r * d + j] = x.value()[r * d + j] + bias.value()[j];
  link(n, {x.node(), bias.node()}, [rows, d](TensorNode& self) {
    auto& xin = self.inputs[0];
    auto& bin = self.inputs[1];
    if (xin->needs_grad) {
      double* g = xin->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (bin->needs_grad) {
      double* g = bin->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
  return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] - b.value()[i];
  link(n, {a.node(), b.node()}, [](TensorNode& self) {
    if (self.inputs[0]->needs_grad) {
      double* g = self.inputs[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->needs_grad) {
      double* g = self.inputs[1]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
  return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * b.value()[i];
  link(n, {a.node(), b.node()}, [](TensorNode& self) {
    auto& an = self.inputs[0];
    auto& bn = self.inputs[1];
    if (an->needs_grad) {
      double* g = an->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->needs_grad) {
      double* g = bn->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
  return Tensor(n);
}

Tensor scale(const Tensor& x, double c) {
  auto n = make_node(x.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = x.value()[i] * c;
  link(n, {x.node()}, [c](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
  });
  return Tensor(n);
}

Tensor add_const(const Tensor& x, const std::vector<double>& c) {
  if (c.size() != x.size()) throw ConfigError("add_const: size mismatch");
  auto n = make_node(x.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = x.value()[i] + c[i];
  link(n, {x.node()}, [](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
  return Tensor(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw ConfigError("matmul: operands must have >= 2 dims");
  const std::size_t M = a.dim(a.ndim() - 2);
  const std::size_t K = a.dim(a.ndim() - 1);
  const bool shared_b = (b.ndim() == 2);
  if (shared_b) {
    if (b.dim(0) != K) throw ConfigError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  } else {
    if (b.ndim() != a.ndim() || b.dim(b.ndim() - 2) != K)
      throw ConfigError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    for (std::size_t i = 0; i + 2 < a.ndim(); ++i)
      if (a.dim(i) != b.dim(i)) throw ConfigError("matmul: batch dims differ");
  }
  const std::size_t N = b.dim(b.ndim() - 1);
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < a.ndim(); ++i) batch *= a.dim(i);

  Shape out_shape(a.shape());
  out_shape[out_shape.size() - 1] = N;
  auto n = make_node(out_shape);

  const double* ap = a.value().data();
  const double* bp = b.value().data();
  double* op = n->value.data();
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMap A(ap + i * M * K, M, K);
    ConstMap B(shared_b ? bp : bp + i * K * N, K, N);
    MutMap O(op + i * M * N, M, N);
    O.noalias() = A * B;
  }

  link(n, {a.node(), b.node()}, [M, K, N, batch, shared_b](TensorNode& self) {
    auto& an = self.inputs[0];
    auto& bn = self.inputs[1];
    const double* gp = self.grad.data();
    if (an->needs_grad) {
      double* ga = an->grad_data();
      const double* bp2 = bn->value.data();
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMap G(gp + i * M * N, M, N);
        ConstMap B(shared_b ? bp2 : bp2 + i * K * N, K, N);
        MutMap GA(ga + i * M * K, M, K);
        GA.noalias() += G * B.transpose();
      }
    }
    if (bn->needs_grad) {
      double* gb = bn->grad_data();
      const double* ap2 = an->value.data();
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMap G(gp + i * M * N, M, N);
        ConstMap A(ap2 + i * M * K, M, K);
        MutMap GB(shared_b ? gb : gb + i * K * N, K, N);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
  return Tensor(n);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  if (perm.size() != x.ndim()) throw ConfigError("permute: rank mismatch");
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(perm[i]);

  // in_strides in elements
  std::vector<std::size_t> in_strides(x.ndim(), 1);
  for (std::size_t i = x.ndim(); i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);

  auto index_map = std::make_shared<std::vector<std::size_t>>(x.size());
  {
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t o = 0; o < x.size(); ++o) {
      std::size_t in_off = 0;
      for (std::size_t d = 0; d < perm.size(); ++d) in_off += idx[d] * in_strides[perm[d]];
      (*index_map)[o] = in_off;
      for (std::size_t d = out_shape.size(); d-- > 0;) {
        if (++idx[d] < out_shape[d]) break;
        idx[d] = 0;
      }
    }
  }

  auto n = make_node(out_shape);
  for (std::size_t o = 0; o < n->value.size(); ++o) n->value[o] = x.value()[(*index_map)[o]];
  link(n, {x.node()}, [index_map](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*index_map)[o]] += self.grad[o];
  });
  return Tensor(n);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ConfigError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto n = make_node(std::move(shape));
  n->value = x.value();
  link(n, {x.node()}, [](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
  return Tensor(n);
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t dim) {
  if (a.ndim() != b.ndim() || dim >= a.ndim()) throw ConfigError("concat: rank mismatch");
  for (std::size_t i = 0; i < a.ndim(); ++i)
    if (i != dim && a.dim(i) != b.dim(i))
      throw ConfigError("concat: shapes " + shape_str(a.shape()) + " / " + shape_str(b.shape()));

  Shape out_shape = a.shape();
  out_shape[dim] += b.dim(dim);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= a.dim(i);
  for (std::size_t i = dim + 1; i < a.ndim(); ++i) inner *= a.dim(i);
  const std::size_t a_block = a.dim(dim) * inner;
  const std::size_t b_block = b.dim(dim) * inner;

  auto n = make_node(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.value().data() + o * a_block, a_block, n->value.data() + o * (a_block + b_block));
    std::copy_n(b.value().data() + o * b_block, b_block,
                n->value.data() + o * (a_block + b_block) + a_block);
  }
  link(n, {a.node(), b.node()}, [outer, a_block, b_block](TensorNode& self) {
    auto& an = self.inputs[0];
    auto& bn = self.inputs[1];
    for (std::size_t o = 0; o < outer; ++o) {
      const double* g = self.grad.data() + o * (a_block + b_block);
      if (an->needs_grad) {
        double* ga = an->grad_data() + o * a_block;
        for (std::size_t i = 0; i < a_block; ++i) ga[i] += g[i];
      }
      if (bn->needs_grad) {
        double* gb = bn->grad_data() + o * b_block;
        for (std::size_t i = 0; i < b_block; ++i) gb[i] += g[a_block + i];
      }
    }
  });
  return Tensor(n);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw UsageError("stack_rows: no rows");
  const std::size_t d = rows[0].size();
  for (const auto& r : rows) {
    if (r.ndim() != 2 || r.dim(0) != 1 || r.size() != d)
      throw ConfigError("stack_rows: every row must be [1, D] with equal D");
  }
  auto n = make_node({rows.size(), d});
  std::vector<std::shared_ptr<TensorNode>> inputs;
  inputs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(rows[i].value().data(), d, n->value.data() + i * d);
    inputs.push_back(rows[i].node());
  }
  link(n, std::move(inputs), [d](TensorNode& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      auto& in = self.inputs[i];
      if (!in->needs_grad) continue;
      double* g = in->grad_data();
      for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
  return Tensor(n);
}

Tensor slice(const Tensor& x, std::size_t dim, std::size_t start, std::size_t len) {
  if (dim >= x.ndim() || start + len > x.dim(dim)) throw ConfigError("slice: out of range");
  Shape out_shape = x.shape();
  out_shape[dim] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= x.dim(i);
  for (std::size_t i = dim + 1; i < x.ndim(); ++i) inner *= x.dim(i);
  const std::size_t in_block = x.dim(dim) * inner;
  const std::size_t out_block = len * inner;
  const std::size_t off = start * inner;

  auto n = make_node(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.value().data() + o * in_block + off, out_block, n->value.data() + o * out_block);
  link(n, {x.node()}, [outer, in_block, out_block, off](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < out_block; ++i)
        g[o * in_block + off + i] += self.grad[o * out_block + i];
  });
  return Tensor(n);
}

Tensor tile0(const Tensor& x, std::size_t n_rep) {
  Shape out_shape;
  out_shape.push_back(n_rep);
  for (std::size_t d : x.shape()) out_shape.push_back(d);
  auto n = make_node(out_shape);
  const std::size_t block = x.size();
  for (std::size_t r = 0; r < n_rep; ++r)
    std::copy_n(x.value().data(), block, n->value.data() + r * block);
  link(n, {x.node()}, [n_rep, block](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t r = 0; r < n_rep; ++r)
      for (std::size_t i = 0; i < block; ++i) g[i] += self.grad[r * block + i];
  });
  return Tensor(n);
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t d = x.dim(x.ndim() - 1);
  const std::size_t rows = x.size() / d;
  auto n = make_node(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.value().data() + r * d;
    double* out = n->value.data() + r * d;
    double mx = in[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[j] /= sum;
  }
  link(n, {x.node()}, [rows, d](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* dy = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
  return Tensor(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(x.ndim() - 1);
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
    throw ConfigError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  const std::size_t rows = x.size() / d;

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);

  auto n = make_node(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.value().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (in[j] - mu) * is;
      (*xhat)[r * d + j] = xh;
      n->value[r * d + j] = gamma.value()[j] * xh + beta.value()[j];
    }
  }
  link(n, {x.node(), gamma.node(), beta.node()}, [rows, d, xhat, inv_std](TensorNode& self) {
    auto& xn = self.inputs[0];
    auto& gn = self.inputs[1];
    auto& bn = self.inputs[2];
    if (gn->needs_grad) {
      double* gg = gn->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += self.grad[r * d + j] * (*xhat)[r * d + j];
    }
    if (bn->needs_grad) {
      double* gb = bn->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[r * d + j];
    }
    if (xn->needs_grad) {
      double* gx = xn->grad_data();
      const double dn = static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = self.grad[r * d + j] * gn->value[j];
          m1 += dxh;
          m2 += dxh * (*xhat)[r * d + j];
        }
        m1 /= dn;
        m2 /= dn;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = self.grad[r * d + j] * gn->value[j];
          gx[r * d + j] += (*inv_std)[r] * (dxh - m1 - (*xhat)[r * d + j] * m2);
        }
      }
    }
  });
  return Tensor(n);
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  auto n = make_node(x.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) {
    const double v = x.value()[i];
    n->value[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  link(n, {x.node()}, [](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = self.inputs[0]->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
  return Tensor(n);
}

Tensor tanh_act(const Tensor& x) {
  auto n = make_node(x.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::tanh(x.value()[i]);
  link(n, {x.node()}, [](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
  return Tensor(n);
}

Tensor sigmoid(const Tensor& x) {
  auto n = make_node(x.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
  link(n, {x.node()}, [](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
  return Tensor(n);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    (*mask)[i] = (rng.uniform() >= rate) ? 1.0 / keep : 0.0;
  auto n = make_node(x.shape());
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = x.value()[i] * (*mask)[i];
  link(n, {x.node()}, [mask](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
  return Tensor(n);
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ConfigError("embedding_lookup: table must be 2-D");
  const std::size_t v = table.dim(0);
  const std::size_t h = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw DataError("embedding_lookup: id " + std::to_string(id) + " out of range [0, " +
                      std::to_string(v) + ")");
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  auto n = make_node({ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * h, h, n->value.data() + i * h);
  link(n, {table.node()}, [ids_copy, h](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < ids_copy->size(); ++i) {
      const std::size_t row = static_cast<std::size_t>((*ids_copy)[i]);
      for (std::size_t j = 0; j < h; ++j) g[row * h + j] += self.grad[i * h + j];
    }
  });
  return Tensor(n);
}

Tensor sum_all(const Tensor& x) {
  auto n = make_node({1});
  n->value[0] = std::accumulate(x.value().begin(), x.value().end(), 0.0);
  link(n, {x.node()}, [](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
  });
  return Tensor(n);
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  auto n = make_node({1});
  n->value[0] = std::accumulate(x.value().begin(), x.value().end(), 0.0) * inv;
  link(n, {x.node()}, [inv](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0] * inv;
  });
  return Tensor(n);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  if (logits.ndim() != 2) throw ConfigError("cross_entropy: logits must be [N, C]");
  const std::size_t rows = logits.dim(0);
  const std::size_t c = logits.dim(1);
  if (targets.size() != rows) throw UsageError("cross_entropy: targets size mismatch");

  auto probs = std::make_shared<std::vector<double>>(logits.size());
  auto tgt = std::make_shared<std::vector<int>>(targets);
  std::size_t valid = 0;
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.value().data() + r * c;
    double* p = probs->data() + r * c;
    double mx = in[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(in[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
    const int t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= c)
      throw UsageError("cross_entropy: target " + std::to_string(t) + " out of range");
    loss -= std::log(std::max(p[t], 1e-300));
    ++valid;
  }
  if (valid == 0) throw UsageError("cross_entropy: every target is ignored");
  const double inv_valid = 1.0 / static_cast<double>(valid);

  auto n = make_node({1});
  n->value[0] = loss * inv_valid;
  link(n, {logits.node()}, [probs, tgt, rows, c, ignore_index, inv_valid](TensorNode& self) {
    if (!self.inputs[0]->needs_grad) return;
    double* g = self.inputs[0]->grad_data();
    const double gl = self.grad[0] * inv_valid;
    for (std::size_t r = 0; r < rows; ++r) {
      const int t = (*tgt)[r];
      if (t == ignore_index) continue;
      const double* p = probs->data() + r * c;
      for (std::size_t j = 0; j < c; ++j) {
        g[r * c + j] += gl * (p[j] - (static_cast<int>(j) == t ? 1.0 : 0.0));
      }
    }
  });
  return Tensor(n);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw UsageError("backward: loss must be a defined scalar");
  auto root = loss.node();
  if (!root->needs_grad) return;  // nothing trainable below

  // iterative post-order DFS, pruned at nodes that need no grad
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    TensorNode* node = stack.back().first;
    const std::size_t next = stack.back().second;
    if (next < node->inputs.size()) {
      stack.back().second = next + 1;
      TensorNode* child = node->inputs[next].get();
      if (child->needs_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace ptune
