// SPDX-License-Identifier: Apache-2.0

#include "eclip/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "eclip/errors.hpp"

namespace eclip {

using detail::Node;

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

std::uint64_t next_seq() { return g_next_seq.fetch_add(1, std::memory_order_relaxed); }

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::span<const double> vals(const Tensor& t) { return t.data(); }

// Elementwise unary op with derivative expressed through input and output.
template <class F, class DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const Node* px = x.node();
  return Tensor::make_result(x.shape(), std::move(out), op, {x},
                             [px, df](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(px->value[i]);
                             });
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " + std::to_string(data.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("Tensor::from: zero-sized dimension in " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->seq = next_seq();
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::vector(std::vector<double> v, bool requires_grad) {
  const auto n = v.size();
  return from({n}, std::move(v), requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw DimensionError("Tensor::matrix: no rows");
  const auto cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("Tensor::matrix: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return from({rows.size(), cols}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw InputError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("dim: axis out of range for " + shape_str(s));
  return s[axis];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw InputError("use of undefined tensor");
  return node_->value;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  auto d = data();
  if (d.size() != 1) throw DimensionError("item: tensor has " + std::to_string(d.size()) + " elements");
  return d[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require_rank(*this, 2, "at");
  if (i >= dim(0) || j >= dim(1)) throw InputError("at: index out of range");
  return node_->value[i * dim(1) + j];
}

double Tensor::operator[](std::size_t i) const {
  auto d = data();
  if (i >= d.size()) throw InputError("operator[]: index out of range");
  return d[i];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->is_leaf; }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

std::span<double> Tensor::mutable_data() {
  if (!node_) throw InputError("use of undefined tensor");
  if (!node_->is_leaf) throw InputError("mutable_data: only leaf tensors may be modified");
  return node_->value;
}

Tensor Tensor::clone_leaf(bool requires_grad) const { return from(shape(), to_vector(), requires_grad); }

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = shape();
  n->value = node_->value;
  n->is_leaf = false;
  n->op = "detach";
  n->seq = next_seq();
  return Tensor(std::move(n));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, const char* op, std::vector<Tensor> parents,
                           detail::BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->is_leaf = false;
  n->op = op;
  n->seq = next_seq();
  if (t_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_mode_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------- backward

std::vector<double> Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.node());
  if (it == grads_.end()) return std::vector<double>(t.numel(), 0.0);
  return it->second;
}

bool Gradients::contains(const Tensor& t) const { return grads_.count(t.node()) != 0; }

Gradients backward(const Tensor& root) {
  if (root.numel() != 1) throw DimensionError("backward: root must be a scalar, got " + shape_str(root.shape()));
  Gradients out;
  if (!root.requires_grad()) return out;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  std::unordered_map<const Node*, std::vector<double>> grads;
  grads[root.node()] = {1.0};
  std::vector<std::vector<double>*> slots;
  for (Node* n : order) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    if (n->is_leaf) {
      out.grads_[n] = std::move(it->second);
      grads.erase(it);
      continue;
    }
    if (!n->backward) {
      throw UnsupportedOpError(std::string("backward: operation '") + n->op + "' has no gradient rule");
    }
    slots.assign(n->parents.size(), nullptr);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      auto& g = grads[p];
      if (g.empty()) g.assign(p->value.size(), 0.0);
      slots[i] = &g;
    }
    // Re-lookup: inserting parents may have rehashed, but mapped values are stable.
    std::vector<double> gout = std::move(grads[n]);
    grads.erase(n);
    n->backward(gout, slots);
  }
  return out;
}

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  auto av = vals(a);
  auto bv = vals(b);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* br = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
  const Node* pa = a.node();
  const Node* pb = b.node();
  return Tensor::make_result(
      {m, n}, std::move(out), "matmul", {a, b},
      [pa, pb, m, k, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (gin[0]) {
          auto& ga = *gin[0];
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* br = &pb->value[p * n];
              const double* gr = &g[i * n];
              for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (gin[1]) {
          auto& gb = *gin[1];
          for (std::size_t i = 0; i < m; ++i) {
            const double* gr = &g[i * n];
            for (std::size_t p = 0; p < k; ++p) {
              const double s = pa->value[i * k + p];
              double* o = &gb[p * n];
              for (std::size_t j = 0; j < n; ++j) o[j] += s * gr[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const auto m = x.dim(0), n = x.dim(1);
  auto xv = vals(x);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return Tensor::make_result({n, m}, std::move(out), "transpose", {x},
                             [m, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return Tensor::make_result(std::move(shape), x.to_vector(), "reshape", {x},
                             [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                             });
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = vals(a), bv = vals(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b},
                             [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               for (auto* gx : gin) {
                                 if (!gx) continue;
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                               }
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = vals(a), bv = vals(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b},
                             [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (gin[0])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                               if (gin[1])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = vals(a), bv = vals(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const Node* pa = a.node();
  const Node* pb = b.node();
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b},
                             [pa, pb](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (gin[0])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * pb->value[i];
                               if (gin[1])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * pa->value[i];
                             });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank(b, 1, "add_bias");
  if (x.rank() == 0 || x.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  }
  const auto n = b.dim(0);
  auto xv = vals(x), bv = vals(b);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  return Tensor::make_result(x.shape(), std::move(out), "add_bias", {x, b},
                             [n](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (gin[0])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                               if (gin[1])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % n] += g[i];
                             });
}

Tensor scale(const Tensor& x, double c) {
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return Tensor::make_result(x.shape(), std::move(out), "scale", {x},
                             [c](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * c;
                             });
}

Tensor add_scalar(const Tensor& x, double c) {
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + c;
  return Tensor::make_result(x.shape(), std::move(out), "add_scalar", {x},
                             [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                             });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: scale must have one element");
  const double c = s.item();
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  const Node* px = x.node();
  return Tensor::make_result(x.shape(), std::move(out), "mul_scalar", {x, s},
                             [px, c](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (gin[0])
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * c;
                               if (gin[1]) {
                                 double acc = 0.0;
                                 for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * px->value[i];
                                 (*gin[1])[0] += acc;
                               }
                             });
}

Tensor div_rows(const Tensor& x, const Tensor& d) {
  require_rank(x, 2, "div_rows");
  require_rank(d, 1, "div_rows");
  const auto m = x.dim(0), n = x.dim(1);
  if (d.dim(0) != m) throw DimensionError("div_rows: " + shape_str(x.shape()) + " / " + shape_str(d.shape()));
  auto xv = vals(x), dv = vals(d);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] / dv[i];
  const Node* px = x.node();
  const Node* pd = d.node();
  return Tensor::make_result({m, n}, std::move(out), "div_rows", {x, d},
                             [px, pd, m, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               for (std::size_t i = 0; i < m; ++i) {
                                 const double di = pd->value[i];
                                 if (gin[0])
                                   for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += g[i * n + j] / di;
                                 if (gin[1]) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * px->value[i * n + j];
                                   (*gin[1])[i] -= acc / (di * di);
                                 }
                               }
                             });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  auto result = Tensor::make_result(x.shape(), std::move(out), "exp", {x}, {});
  if (result.requires_grad()) {
    Node* self = result.node();
    // The rule reads the node's own output; the node outlives its closure.
    self->backward = [self](std::span<const double> g, std::span<std::vector<double>*> gin) {
      if (!gin[0]) return;
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * self->value[i];
    };
  }
  return result;
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor xlogx(const Tensor& x) {
  return unary(
      x, "xlogx", [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; },
      [](double v) { return v > 0.0 ? std::log(v) + 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double c = 0.044715;
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v) {
        const double u = k * (v + c * v * v * v);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3.0 * c * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : vals(x)) acc += v;
  return Tensor::make_result({}, {acc}, "sum", {x},
                             [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (auto& v : *gin[0]) v += g[0];
                             });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  auto xv = vals(x);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.n; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.n + a) * sp.inner + i];
  return Tensor::make_result(std::move(out_shape), std::move(out), "sum_axis", {x},
                             [sp](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               auto& gx = *gin[0];
                               for (std::size_t o = 0; o < sp.outer; ++o)
                                 for (std::size_t a = 0; a < sp.n; ++a)
                                   for (std::size_t i = 0; i < sp.inner; ++i)
                                     gx[(o * sp.n + a) * sp.inner + i] += g[o * sp.inner + i];
                             });
}

// ---------------------------------------------------------------- normalizers

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto idx = [&](std::size_t a) { return (o * sp.n + a) * sp.inner + i; };
      double mx = xv[idx(0)];
      for (std::size_t a = 1; a < sp.n; ++a) mx = std::max(mx, xv[idx(a)]);
      double z = 0.0;
      for (std::size_t a = 0; a < sp.n; ++a) {
        out[idx(a)] = std::exp(xv[idx(a)] - mx);
        z += out[idx(a)];
      }
      for (std::size_t a = 0; a < sp.n; ++a) out[idx(a)] /= z;
    }
  }
  auto result = Tensor::make_result(x.shape(), std::move(out), "softmax", {x}, {});
  if (result.requires_grad()) {
    Node* self = result.node();
    self->backward = [self, sp](std::span<const double> g, std::span<std::vector<double>*> gin) {
      if (!gin[0]) return;
      auto& gx = *gin[0];
      const auto& y = self->value;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          auto idx = [&](std::size_t a) { return (o * sp.n + a) * sp.inner + i; };
          double dot = 0.0;
          for (std::size_t a = 0; a < sp.n; ++a) dot += g[idx(a)] * y[idx(a)];
          for (std::size_t a = 0; a < sp.n; ++a) gx[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
        }
      }
    };
  }
  return result;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto idx = [&](std::size_t a) { return (o * sp.n + a) * sp.inner + i; };
      double mx = xv[idx(0)];
      for (std::size_t a = 1; a < sp.n; ++a) mx = std::max(mx, xv[idx(a)]);
      double z = 0.0;
      for (std::size_t a = 0; a < sp.n; ++a) z += std::exp(xv[idx(a)] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t a = 0; a < sp.n; ++a) out[idx(a)] = xv[idx(a)] - lse;
    }
  }
  auto result = Tensor::make_result(x.shape(), std::move(out), "log_softmax", {x}, {});
  if (result.requires_grad()) {
    Node* self = result.node();
    self->backward = [self, sp](std::span<const double> g, std::span<std::vector<double>*> gin) {
      if (!gin[0]) return;
      auto& gx = *gin[0];
      const auto& y = self->value;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          auto idx = [&](std::size_t a) { return (o * sp.n + a) * sp.inner + i; };
          double gs = 0.0;
          for (std::size_t a = 0; a < sp.n; ++a) gs += g[idx(a)];
          for (std::size_t a = 0; a < sp.n; ++a) gx[idx(a)] += g[idx(a)] - std::exp(y[idx(a)]) * gs;
        }
      }
    };
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  if (x.rank() == 0 || x.shape().back() != gain.dim(0) || bias.dim(0) != gain.dim(0)) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                         " and bias " + shape_str(bias.shape()));
  }
  const auto n = gain.dim(0);
  const auto rows = x.numel() / n;
  auto xv = vals(x), gv = vals(gain), bv = vals(bias);
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * n];
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  const Node* pg = gain.node();
  return Tensor::make_result(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [pg, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](std::span<const double> g,
                                                                    std::span<std::vector<double>*> gin) {
        const auto& gv = pg->value;
        const double dn = static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = &g[r * n];
          const double* xh = &xhat[r * n];
          if (gin[0]) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gr[j] * gv[j];
              s1 += d;
              s2 += d * xh[j];
            }
            auto& gx = *gin[0];
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gr[j] * gv[j];
              gx[r * n + j] += rstd[r] / dn * (dn * d - s1 - xh[j] * s2);
            }
          }
          if (gin[1])
            for (std::size_t j = 0; j < n; ++j) (*gin[1])[j] += gr[j] * xh[j];
          if (gin[2])
            for (std::size_t j = 0; j < n; ++j) (*gin[2])[j] += gr[j];
        }
      });
}

Tensor normalize(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("normalize: scalar input");
  const auto n = x.shape().back();
  const auto rows = x.numel() / n;
  constexpr double kMinNorm = 1e-12;
  auto xv = vals(x);
  std::vector<double> out(xv.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j] * xv[r * n + j];
    norms[r] = std::max(std::sqrt(s), kMinNorm);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] / norms[r];
  }
  auto result = Tensor::make_result(x.shape(), std::move(out), "normalize", {x}, {});
  if (result.requires_grad()) {
    Node* self = result.node();
    self->backward = [self, n, rows, norms = std::move(norms)](std::span<const double> g,
                                                               std::span<std::vector<double>*> gin) {
      if (!gin[0]) return;
      auto& gx = *gin[0];
      const auto& y = self->value;
      for (std::size_t r = 0; r < rows; ++r) {
        const bool clamped = norms[r] <= kMinNorm;
        double dot = 0.0;
        if (!clamped)
          for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / norms[r];
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------- structural

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw DimensionError("concat: incompatible part " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    sizes.push_back(p.numel());
  }
  std::vector<double> out;
  out.reserve(rows * shape_numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor::make_result(std::move(shape), std::move(out), "concat", parts,
                             [sizes](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < sizes.size(); ++k) {
                                 if (gin[k])
                                   for (std::size_t i = 0; i < sizes[k]; ++i) (*gin[k])[i] += g[off + i];
                                 off += sizes[k];
                               }
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const auto m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + col + j] = pv[i * widths[k] + j];
    col += widths[k];
  }
  return Tensor::make_result({m, total}, std::move(out), "concat_cols", parts,
                             [m, total, widths](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               std::size_t col = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (gin[k])
                                   for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       (*gin[k])[i * widths[k] + j] += g[i * total + col + j];
                                 col += widths[k];
                               }
                             });
}

Tensor stack(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack: no inputs");
  for (const auto& r : rows) require_rank(r, 1, "stack");
  const auto n = rows[0].dim(0);
  std::vector<Tensor> as_rows;
  as_rows.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.dim(0) != n) throw DimensionError("stack: rows differ in length");
    as_rows.push_back(reshape(r, {1, n}));
  }
  return concat(as_rows);
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() == 0 || count == 0 || start + count > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                         shape_str(x.shape()));
  }
  const auto stride = x.numel() / x.dim(0);
  auto xv = vals(x);
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(start * stride),
                          xv.begin() + static_cast<std::ptrdiff_t>((start + count) * stride));
  Shape shape = x.shape();
  shape[0] = count;
  const auto off = start * stride;
  return Tensor::make_result(std::move(shape), std::move(out), "slice_rows", {x},
                             [off](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[off + i] += g[i];
                             });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const auto m = x.dim(0), n = x.dim(1);
  if (count == 0 || start + count > n) throw DimensionError("slice_cols: range outside " + shape_str(x.shape()));
  auto xv = vals(x);
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * n + start + j];
  return Tensor::make_result({m, count}, std::move(out), "slice_cols", {x},
                             [m, n, start, count](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < count; ++j) (*gin[0])[i * n + start + j] += g[i * count + j];
                             });
}

Tensor row(const Tensor& x, std::size_t i) {
  require_rank(x, 2, "row");
  return reshape(slice_rows(x, i, 1), {x.dim(1)});
}

Tensor element(const Tensor& x, std::size_t i) {
  if (i >= x.numel()) throw InputError("element: index out of range");
  return Tensor::make_result({}, {x.data()[i]}, "element", {x},
                             [i](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (gin[0]) (*gin[0])[i] += g[0];
                             });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "gather_rows");
  const auto rows = table.dim(0), w = table.dim(1);
  if (ids.empty()) throw DimensionError("gather_rows: no indices");
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  auto tv = vals(table);
  std::vector<double> out(idx.size() * w);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= rows) throw InputError("gather_rows: index " + std::to_string(idx[k]) + " >= " + std::to_string(rows));
    std::copy_n(&tv[idx[k] * w], w, &out[k * w]);
  }
  return Tensor::make_result({idx.size(), w}, std::move(out), "gather_rows", {table},
                             [idx, w](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (std::size_t k = 0; k < idx.size(); ++k)
                                 for (std::size_t j = 0; j < w; ++j) (*gin[0])[idx[k] * w + j] += g[k * w + j];
                             });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> idx) {
  require_rank(x, 2, "pick");
  const auto m = x.dim(0), n = x.dim(1);
  if (idx.size() != m) throw DimensionError("pick: need one index per row");
  std::vector<std::size_t> cols(idx.begin(), idx.end());
  auto xv = vals(x);
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= n) throw InputError("pick: column index out of range");
    out[i] = xv[i * n + cols[i]];
  }
  return Tensor::make_result({m}, std::move(out), "pick", {x},
                             [cols, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               if (!gin[0]) return;
                               for (std::size_t i = 0; i < cols.size(); ++i) (*gin[0])[i * n + cols[i]] += g[i];
                             });
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "rowwise_dot");
  require_same_shape(a, b, "rowwise_dot");
  const auto m = a.dim(0), n = a.dim(1);
  auto av = vals(a), bv = vals(b);
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j] * bv[i * n + j];
  const Node* pa = a.node();
  const Node* pb = b.node();
  return Tensor::make_result({m}, std::move(out), "rowwise_dot", {a, b},
                             [pa, pb, m, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) {
                                   if (gin[0]) (*gin[0])[i * n + j] += g[i] * pb->value[i * n + j];
                                   if (gin[1]) (*gin[1])[i * n + j] += g[i] * pa->value[i * n + j];
                                 }
                             });
}

}  // namespace eclip
