#include "vip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace vip {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ' ';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape_valid(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw DimError("invalid dimension in shape " + shape_str(shape));
  }
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimError(std::string(op) + ": expected rank " + std::to_string(rank) +
                   ", got shape " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) {
  check_shape_valid(shape);
  node_ = std::make_shared<detail::TensorNode>();
  node_->data.assign(shape_numel(shape), 0.0f);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad.assign(node_->data.size(), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  check_shape_valid(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimError("tensor data length " + std::to_string(data.size()) +
                   " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad.assign(node_->data.size(), 0.0f);
}

Tensor Tensor::scalar(float value) { return Tensor({1}, std::vector<float>{value}); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(shape);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }
const std::vector<float>& Tensor::data() const { return node_->data; }

std::vector<float>& Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError("mutable_data is restricted to leaf tensors");
  return node_->data;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("set_requires_grad is restricted to leaf tensors");
  node_->requires_grad = flag;
  if (flag) {
    node_->grad.assign(node_->data.size(), 0.0f);
  } else {
    node_->grad.clear();
  }
}

bool Tensor::is_leaf() const { return node_->parents.empty(); }

const std::vector<float>& Tensor::grad() const {
  if (!node_->requires_grad) {
    throw ContractError("grad requested on a tensor without requires_grad");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

float Tensor::at(std::initializer_list<int> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw IndexError("index rank " + std::to_string(index.size()) +
                     " does not match shape " + shape_str(shape()));
  }
  std::size_t flat = 0;
  int axis = 0;
  for (int i : index) {
    int d = node_->shape[axis];
    if (i < 0 || i >= d) {
      throw IndexError("index " + std::to_string(i) + " out of range for axis " +
                       std::to_string(axis) + " of shape " + shape_str(shape()));
    }
    flat = flat * static_cast<std::size_t>(d) + static_cast<std::size_t>(i);
    ++axis;
  }
  return node_->data[flat];
}

Tensor Tensor::detached() const {
  return Tensor(node_->shape, node_->data, false);
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward on an undefined tensor");
  if (size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(shape()));
  }

  // Post-order DFS: parents precede children, root last. Reversing yields
  // the reverse-topological order the sweep needs.
  detail::TensorNode* root = node_.get();
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::TensorNode* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Transient flow buffers, keyed by node; unique_ptr keeps addresses stable
  // across map growth.
  std::unordered_map<detail::TensorNode*, std::unique_ptr<std::vector<float>>> flow;
  flow[root] = std::make_unique<std::vector<float>>(1, 1.0f);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    auto f = flow.find(n);
    if (f == flow.end() || !n->backward) continue;
    std::vector<std::vector<float>*> parent_flows(n->parents.size(), nullptr);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      detail::TensorNode* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      auto& buf = flow[p];
      if (!buf) buf = std::make_unique<std::vector<float>>(p->data.size(), 0.0f);
      parent_flows[i] = buf.get();
    }
    n->backward(*n, *f->second, parent_flows);
  }

  for (detail::TensorNode* n : order) {
    if (!n->requires_grad) continue;
    auto f = flow.find(n);
    if (f == flow.end()) continue;
    if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), 0.0f);
    const std::vector<float>& g = *f->second;
    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
  }
}

// --- Op plumbing ----------------------------------------------------------

Tensor make_op(const char* op, Shape shape, std::vector<float> data,
               const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  bool track = false;
  for (const Tensor& in : inputs) track = track || in.requires_grad();
  if (track) {
    out.node_->requires_grad = true;
    out.node_->grad.assign(out.node_->data.size(), 0.0f);
    out.node_->parents.reserve(inputs.size());
    for (const Tensor& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::move(backward);
    out.node_->op = op;
  }
  return out;
}

// --- Arithmetic -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimError("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
  }
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) {
        acc += static_cast<double>(av[i * k + t]) * static_cast<double>(bv[t * n + j]);
      }
      out[static_cast<std::size_t>(i) * n + j] = static_cast<float>(acc);
    }
  }
  return make_op(
      "matmul", {m, n}, std::move(out), {a, b},
      [m, k, n](const detail::TensorNode& self, const std::vector<float>& g,
                const std::vector<std::vector<float>*>& pf) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        if (pf[0]) {  // dA = g . B^T
          auto& da = *pf[0];
          for (int i = 0; i < m; ++i) {
            for (int t = 0; t < k; ++t) {
              double acc = 0.0;
              for (int j = 0; j < n; ++j) {
                acc += static_cast<double>(g[i * n + j]) * static_cast<double>(bv[t * n + j]);
              }
              da[static_cast<std::size_t>(i) * k + t] += static_cast<float>(acc);
            }
          }
        }
        if (pf[1]) {  // dB = A^T . g
          auto& db = *pf[1];
          for (int t = 0; t < k; ++t) {
            for (int j = 0; j < n; ++j) {
              double acc = 0.0;
              for (int i = 0; i < m; ++i) {
                acc += static_cast<double>(av[i * k + t]) * static_cast<double>(g[i * n + j]);
              }
              db[static_cast<std::size_t>(t) * n + j] += static_cast<float>(acc);
            }
          }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const int m = x.dim(0), n = x.dim(1);
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (int i = 0; i < m; ++i) {
    const float* row = xv.data() + static_cast<std::size_t>(i) * n;
    float maxv = row[0];
    for (int j = 1; j < n; ++j) maxv = std::max(maxv, row[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(row[j]) - maxv);
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * n + j] =
          static_cast<float>(std::exp(static_cast<double>(row[j]) - maxv) / denom);
    }
  }
  return make_op(
      "softmax_rows", {m, n}, std::move(out), {x},
      [m, n](const detail::TensorNode& self, const std::vector<float>& g,
             const std::vector<std::vector<float>*>& pf) {
        if (!pf[0]) return;
        auto& dx = *pf[0];
        const auto& y = self.data;
        // Fused JVP: dx_i = y_i * (g_i - sum_j g_j y_j), O(n) per row.
        for (int i = 0; i < m; ++i) {
          const std::size_t off = static_cast<std::size_t>(i) * n;
          double dot = 0.0;
          for (int j = 0; j < n; ++j) {
            dot += static_cast<double>(g[off + j]) * static_cast<double>(y[off + j]);
          }
          for (int j = 0; j < n; ++j) {
            dx[off + j] += static_cast<float>(
                static_cast<double>(y[off + j]) * (static_cast<double>(g[off + j]) - dot));
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return make_op("add", a.shape(), std::move(out), {a, b},
                 [](const detail::TensorNode&, const std::vector<float>& g,
                    const std::vector<std::vector<float>*>& pf) {
                   for (int p = 0; p < 2; ++p) {
                     if (!pf[p]) continue;
                     auto& d = *pf[p];
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return make_op("sub", a.shape(), std::move(out), {a, b},
                 [](const detail::TensorNode&, const std::vector<float>& g,
                    const std::vector<std::vector<float>*>& pf) {
                   if (pf[0]) {
                     auto& d = *pf[0];
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                   }
                   if (pf[1]) {
                     auto& d = *pf[1];
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return make_op("mul", a.shape(), std::move(out), {a, b},
                 [](const detail::TensorNode& self, const std::vector<float>& g,
                    const std::vector<std::vector<float>*>& pf) {
                   const auto& av = self.parents[0]->data;
                   const auto& bv = self.parents[1]->data;
                   if (pf[0]) {
                     auto& d = *pf[0];
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
                   }
                   if (pf[1]) {
                     auto& d = *pf[1];
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
                   }
                 });
}

Tensor mul_scalar(const Tensor& x, float s) {
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * s;
  return make_op("mul_scalar", x.shape(), std::move(out), {x},
                 [s](const detail::TensorNode&, const std::vector<float>& g,
                     const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
                 });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_rowwise");
  require_rank(bias, 1, "add_rowwise");
  const int m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) {
    throw DimError("add_rowwise: bias " + shape_str(bias.shape()) +
                   " does not match row width of " + shape_str(x.shape()));
  }
  const auto& xv = x.data();
  const auto& bv = bias.data();
  std::vector<float> out(xv.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * n + j] = xv[static_cast<std::size_t>(i) * n + j] + bv[j];
    }
  }
  return make_op("add_rowwise", {m, n}, std::move(out), {x, bias},
                 [m, n](const detail::TensorNode&, const std::vector<float>& g,
                        const std::vector<std::vector<float>*>& pf) {
                   if (pf[0]) {
                     auto& d = *pf[0];
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                   }
                   if (pf[1]) {
                     auto& db = *pf[1];
                     for (int j = 0; j < n; ++j) {
                       double acc = 0.0;
                       for (int i = 0; i < m; ++i) {
                         acc += static_cast<double>(g[static_cast<std::size_t>(i) * n + j]);
                       }
                       db[j] += static_cast<float>(acc);
                     }
                   }
                 });
}

Tensor gelu(const Tensor& x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  constexpr float kCubic = 0.044715f;
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const float v = xv[i];
    const float t = std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v));
    out[i] = 0.5f * v * (1.0f + t);
  }
  return make_op("gelu", x.shape(), std::move(out), {x},
                 [](const detail::TensorNode& self, const std::vector<float>& g,
                    const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   const auto& xv = self.parents[0]->data;
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const float v = xv[i];
                     const float u = kSqrt2OverPi * (v + kCubic * v * v * v);
                     const float t = std::tanh(u);
                     const float du = kSqrt2OverPi * (1.0f + 3.0f * kCubic * v * v);
                     const float dy = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
                     d[i] += g[i] * dy;
                   }
                 });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float epsilon) {
  require_rank(x, 2, "layernorm");
  require_rank(gain, 1, "layernorm");
  require_rank(bias, 1, "layernorm");
  const int m = x.dim(0), n = x.dim(1);
  if (gain.dim(0) != n || bias.dim(0) != n) {
    throw DimError("layernorm: affine shapes " + shape_str(gain.shape()) + ", " +
                   shape_str(bias.shape()) + " do not match row width of " +
                   shape_str(x.shape()));
  }
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<float> out(xv.size());
  std::vector<float> normalized(xv.size());
  std::vector<float> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += xv[off + j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double c = xv[off + j] - mean;
      var += c * c;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std[i] = static_cast<float>(inv);
    for (int j = 0; j < n; ++j) {
      const float nj = static_cast<float>((xv[off + j] - mean) * inv);
      normalized[off + j] = nj;
      out[off + j] = nj * gv[j] + bv[j];
    }
  }
  return make_op(
      "layernorm", {m, n}, std::move(out), {x, gain, bias},
      [m, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          const detail::TensorNode& self, const std::vector<float>& g,
          const std::vector<std::vector<float>*>& pf) {
        const auto& gv = self.parents[1]->data;
        if (pf[0]) {
          auto& dx = *pf[0];
          for (int i = 0; i < m; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * n;
            double mean_gg = 0.0, mean_ggn = 0.0;
            for (int j = 0; j < n; ++j) {
              const double gg = static_cast<double>(g[off + j]) * gv[j];
              mean_gg += gg;
              mean_ggn += gg * normalized[off + j];
            }
            mean_gg /= n;
            mean_ggn /= n;
            for (int j = 0; j < n; ++j) {
              const double gg = static_cast<double>(g[off + j]) * gv[j];
              dx[off + j] += static_cast<float>(
                  inv_std[i] * (gg - mean_gg - normalized[off + j] * mean_ggn));
            }
          }
        }
        if (pf[1]) {
          auto& dg = *pf[1];
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) {
              const std::size_t off = static_cast<std::size_t>(i) * n;
              acc += static_cast<double>(g[off + j]) * normalized[off + j];
            }
            dg[j] += static_cast<float>(acc);
          }
        }
        if (pf[2]) {
          auto& db = *pf[2];
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += g[static_cast<std::size_t>(i) * n + j];
            db[j] += static_cast<float>(acc);
          }
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const int m = x.dim(0), n = x.dim(1);
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j) * m + i] = xv[static_cast<std::size_t>(i) * n + j];
    }
  }
  return make_op("transpose", {n, m}, std::move(out), {x},
                 [m, n](const detail::TensorNode&, const std::vector<float>& g,
                        const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   for (int i = 0; i < m; ++i) {
                     for (int j = 0; j < n; ++j) {
                       d[static_cast<std::size_t>(i) * n + j] +=
                           g[static_cast<std::size_t>(j) * m + i];
                     }
                   }
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape_valid(shape);
  if (shape_numel(shape) != x.size()) {
    throw DimError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                   shape_str(shape));
  }
  return make_op("reshape", std::move(shape), x.data(), {x},
                 [](const detail::TensorNode&, const std::vector<float>& g,
                    const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) require_rank(p, 2, "concat");
  const int fixed_axis = 1 - axis;
  const int fixed = parts[0].dim(fixed_axis);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.dim(fixed_axis) != fixed) {
      throw DimError("concat: mismatched shapes " + shape_str(parts[0].shape()) + " vs " +
                     shape_str(p.shape()));
    }
    total += p.dim(axis);
  }
  Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<float> out(shape_numel(out_shape));
  std::vector<int> offsets(parts.size());
  int off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = off;
    const auto& pv = parts[p].data();
    const int rows = parts[p].dim(0), cols = parts[p].dim(1);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        const float v = pv[static_cast<std::size_t>(i) * cols + j];
        if (axis == 0) {
          out[static_cast<std::size_t>(off + i) * fixed + j] = v;
        } else {
          out[static_cast<std::size_t>(i) * total + off + j] = v;
        }
      }
    }
    off += parts[p].dim(axis);
  }
  return make_op(
      "concat", std::move(out_shape), std::move(out), parts,
      [axis, fixed, total, offsets](const detail::TensorNode& self,
                                    const std::vector<float>& g,
                                    const std::vector<std::vector<float>*>& pf) {
        for (std::size_t p = 0; p < pf.size(); ++p) {
          if (!pf[p]) continue;
          auto& d = *pf[p];
          const auto& shape = self.parents[p]->shape;
          const int rows = shape[0], cols = shape[1];
          const int off = offsets[p];
          for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
              const float gv = axis == 0 ? g[static_cast<std::size_t>(off + i) * fixed + j]
                                         : g[static_cast<std::size_t>(i) * total + off + j];
              d[static_cast<std::size_t>(i) * cols + j] += gv;
            }
          }
        }
      });
}

Tensor slice_rows(const Tensor& x, int row_begin, int row_end) {
  require_rank(x, 2, "slice_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (row_begin < 0 || row_begin >= row_end || row_end > m) {
    throw IndexError("slice_rows: range [" + std::to_string(row_begin) + ", " +
                     std::to_string(row_end) + ") invalid for " + shape_str(x.shape()));
  }
  const int rows = row_end - row_begin;
  const auto& xv = x.data();
  std::vector<float> out(static_cast<std::size_t>(rows) * n);
  std::copy(xv.begin() + static_cast<std::size_t>(row_begin) * n,
            xv.begin() + static_cast<std::size_t>(row_end) * n, out.begin());
  return make_op("slice_rows", {rows, n}, std::move(out), {x},
                 [row_begin, n](const detail::TensorNode&, const std::vector<float>& g,
                                const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   const std::size_t base = static_cast<std::size_t>(row_begin) * n;
                   for (std::size_t i = 0; i < g.size(); ++i) d[base + i] += g[i];
                 });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
  require_rank(x, 2, "gather_rows");
  const int m = x.dim(0), n = x.dim(1);
  for (int idx : indices) {
    if (idx < 0 || idx >= m) {
      throw IndexError("gather_rows: index " + std::to_string(idx) +
                       " out of range for " + shape_str(x.shape()));
    }
  }
  const int k = static_cast<int>(indices.size());
  if (k == 0) throw ContractError("gather_rows: empty index set");
  const auto& xv = x.data();
  std::vector<float> out(static_cast<std::size_t>(k) * n);
  for (int r = 0; r < k; ++r) {
    std::copy(xv.begin() + static_cast<std::size_t>(indices[r]) * n,
              xv.begin() + static_cast<std::size_t>(indices[r] + 1) * n,
              out.begin() + static_cast<std::size_t>(r) * n);
  }
  return make_op("gather_rows", {k, n}, std::move(out), {x},
                 [indices, n](const detail::TensorNode&, const std::vector<float>& g,
                              const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   for (std::size_t r = 0; r < indices.size(); ++r) {
                     const std::size_t src = r * n;
                     const std::size_t dst = static_cast<std::size_t>(indices[r]) * n;
                     for (int j = 0; j < n; ++j) d[dst + j] += g[src + j];
                   }
                 });
}

Tensor gather_columns(const Tensor& x, const std::vector<int>& indices) {
  require_rank(x, 2, "gather_columns");
  const int m = x.dim(0), n = x.dim(1);
  for (int idx : indices) {
    if (idx < 0 || idx >= n) {
      throw IndexError("gather_columns: index " + std::to_string(idx) +
                       " out of range for " + shape_str(x.shape()));
    }
  }
  const int k = static_cast<int>(indices.size());
  if (k == 0) throw ContractError("gather_columns: empty index set");
  const auto& xv = x.data();
  std::vector<float> out(static_cast<std::size_t>(m) * k);
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < k; ++c) {
      out[static_cast<std::size_t>(i) * k + c] =
          xv[static_cast<std::size_t>(i) * n + indices[c]];
    }
  }
  return make_op("gather_columns", {m, k}, std::move(out), {x},
                 [indices, m, n](const detail::TensorNode&, const std::vector<float>& g,
                                 const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   const int k = static_cast<int>(indices.size());
                   for (int i = 0; i < m; ++i) {
                     for (int c = 0; c < k; ++c) {
                       d[static_cast<std::size_t>(i) * n + indices[c]] +=
                           g[static_cast<std::size_t>(i) * k + c];
                     }
                   }
                 });
}

Tensor sum_all(const Tensor& x) {
  const auto& xv = x.data();
  double acc = 0.0;
  for (float v : xv) acc += v;
  return make_op("sum_all", {1}, {static_cast<float>(acc)}, {x},
                 [](const detail::TensorNode&, const std::vector<float>& g,
                    const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
                 });
}

Tensor l2_norm_rows(const Tensor& x) {
  require_rank(x, 2, "l2_norm_rows");
  const int m = x.dim(0), n = x.dim(1);
  const auto& xv = x.data();
  std::vector<float> out(m);
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      const double v = xv[static_cast<std::size_t>(i) * n + j];
      acc += v * v;
    }
    out[i] = static_cast<float>(std::sqrt(acc));
  }
  return make_op("l2_norm_rows", {m}, std::move(out), {x},
                 [m, n](const detail::TensorNode& self, const std::vector<float>& g,
                        const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   const auto& xv = self.parents[0]->data;
                   const auto& norms = self.data;
                   for (int i = 0; i < m; ++i) {
                     if (norms[i] == 0.0f) continue;  // subgradient 0 at the origin
                     const float scale = g[i] / norms[i];
                     for (int j = 0; j < n; ++j) {
                       const std::size_t idx = static_cast<std::size_t>(i) * n + j;
                       d[idx] += scale * xv[idx];
                     }
                   }
                 });
}

Tensor clip(const Tensor& x, float lo, float hi) {
  if (lo > hi) throw ContractError("clip: lo > hi");
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
  return make_op("clip", x.shape(), std::move(out), {x},
                 [lo, hi](const detail::TensorNode& self, const std::vector<float>& g,
                          const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   const auto& xv = self.parents[0]->data;
                   // Gradient passes where the input is inside [lo, hi], boundary inclusive.
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (xv[i] >= lo && xv[i] <= hi) d[i] += g[i];
                   }
                 });
}

Tensor channel_affine(const Tensor& x, const std::vector<float>& scale,
                      const std::vector<float>& bias) {
  require_rank(x, 3, "channel_affine");
  const int c = x.dim(0);
  if (static_cast<int>(scale.size()) != c || static_cast<int>(bias.size()) != c) {
    throw DimError("channel_affine: expected " + std::to_string(c) +
                   " scale/bias entries for " + shape_str(x.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      out[ch * plane + i] = xv[ch * plane + i] * scale[ch] + bias[ch];
    }
  }
  return make_op("channel_affine", x.shape(), std::move(out), {x},
                 [scale, plane](const detail::TensorNode&, const std::vector<float>& g,
                                const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   for (std::size_t ch = 0; ch < scale.size(); ++ch) {
                     for (std::size_t i = 0; i < plane; ++i) {
                       d[ch * plane + i] += g[ch * plane + i] * scale[ch];
                     }
                   }
                 });
}

Tensor patchify(const Tensor& x, int patch_dim) {
  require_rank(x, 3, "patchify");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (patch_dim <= 0 || h % patch_dim != 0 || w % patch_dim != 0) {
    throw DimError("patchify: patch_dim " + std::to_string(patch_dim) +
                   " does not tile " + shape_str(x.shape()));
  }
  const int grid_h = h / patch_dim, grid_w = w / patch_dim;
  const int num_patches = grid_h * grid_w;
  const int patch_len = c * patch_dim * patch_dim;
  const auto& xv = x.data();

  auto source_index = [c, h, w, grid_w, patch_dim](int patch, int feature) {
    const int ch = feature / (patch_dim * patch_dim);
    const int within = feature % (patch_dim * patch_dim);
    const int py = within / patch_dim;
    const int px = within % patch_dim;
    const int row = patch / grid_w;
    const int col = patch % grid_w;
    return (static_cast<std::size_t>(ch) * h + row * patch_dim + py) * w + col * patch_dim + px;
  };

  std::vector<float> out(static_cast<std::size_t>(num_patches) * patch_len);
  for (int p = 0; p < num_patches; ++p) {
    for (int f = 0; f < patch_len; ++f) {
      out[static_cast<std::size_t>(p) * patch_len + f] = xv[source_index(p, f)];
    }
  }
  return make_op("patchify", {num_patches, patch_len}, std::move(out), {x},
                 [num_patches, patch_len, source_index](
                     const detail::TensorNode&, const std::vector<float>& g,
                     const std::vector<std::vector<float>*>& pf) {
                   if (!pf[0]) return;
                   auto& d = *pf[0];
                   for (int p = 0; p < num_patches; ++p) {
                     for (int f = 0; f < patch_len; ++f) {
                       d[source_index(p, f)] += g[static_cast<std::size_t>(p) * patch_len + f];
                     }
                   }
                 });
}

}  // namespace vip
