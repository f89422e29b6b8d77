#include "tg3d/tensor.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace tg3d {

namespace {
thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(
        fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    const auto& xin = detail::input_value(self, 0);
    auto& gx = detail::input_grad(self, 0);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xin[i], self.value[i]);
  });
}
}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double v) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value.assign(static_cast<size_t>(numel(shape)), v);
  return Tensor(std::move(n));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  if (static_cast<int64_t>(values.size()) != numel(shape)) {
    throw std::invalid_argument(
        fmt::format("Tensor::from: {} values for shape {}", values.size(), shape_str(shape)));
  }
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

Tensor Tensor::parameter(const Shape& shape, std::vector<double> values) {
  Tensor t = from(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

int Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw std::out_of_range(fmt::format("dim {} of rank-{} tensor", i, r));
  return node_->shape[static_cast<size_t>(i)];
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument(fmt::format("item() on shape {}", shape_str(shape())));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value); }

void Tensor::backward() const {
  if (size() != 1) throw std::invalid_argument("backward() without seed needs a scalar");
  const double one = 1.0;
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  if (!node_->requires_grad) return;
  if (seed.size() != node_->value.size()) throw std::invalid_argument("backward: seed size mismatch");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  auto& g = node_->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (g_grad_enabled && any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

bool wants_grad(const Node& self, size_t i) { return self.inputs[i]->requires_grad; }

std::vector<double>& input_grad(Node& self, size_t i) {
  // Inputs that do not require grad still get a scratch buffer; it is never read.
  return self.inputs[i]->ensure_grad();
}

const std::vector<double>& input_value(const Node& self, size_t i) { return self.inputs[i]->value; }

void accumulate(Node& self, size_t i, std::span<const double> g) {
  if (!wants_grad(self, i)) return;
  auto& dst = input_grad(self, i);
  for (size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
}

}  // namespace detail

using detail::input_grad;
using detail::input_value;
using detail::make_result;
using detail::wants_grad;

// ---------------------------------------------------------------- elementwise

Tensor operator+(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    detail::accumulate(self, 0, self.grad);
    detail::accumulate(self, 1, self.grad);
  });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    detail::accumulate(self, 0, self.grad);
    if (wants_grad(self, 1)) {
      auto& gb = input_grad(self, 1);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = input_value(self, 0);
    const auto& y = input_value(self, 1);
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor operator/(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& y = input_value(self, 1);
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / y[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / y[i];
    }
  });
}

Tensor operator+(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return make_result(a.shape(), std::move(out), {a},
                     [](Node& self) { detail::accumulate(self, 0, self.grad); });
}

Tensor operator*(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    auto& g = input_grad(self, 0);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor operator-(const Tensor& a) { return a * -1.0; }

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor rsqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / std::sqrt(v); }, [](double v, double y) { return -0.5 * y / v; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

double softplus_scalar(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return softplus_scalar(v); },
      [](double v, double) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
}

Tensor log_sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return -softplus_scalar(-v); },
      [](double v, double) {
        // d/dv log s(v) = 1 - s(v) = s(-v)
        return v >= 0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
      });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, [](Node& self) {
    auto& g = input_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return sum(x) * (1.0 / static_cast<double>(x.size())); }

Tensor sum_last(const Tensor& x) {
  const int m = x.dim(-1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const int64_t rows = numel(out_shape);
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  const auto& xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += xv[static_cast<size_t>(r * m + j)];
    out[static_cast<size_t>(r)] = s;
  }
  return make_result(out_shape, std::move(out), {x}, [m](Node& self) {
    auto& g = input_grad(self, 0);
    for (size_t r = 0; r < self.grad.size(); ++r)
      for (int j = 0; j < m; ++j) g[r * static_cast<size_t>(m) + static_cast<size_t>(j)] += self.grad[r];
  });
}

Tensor sum_first(const Tensor& x) {
  const int n = x.dim(0);
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const auto inner = static_cast<size_t>(numel(out_shape));
  std::vector<double> out(inner, 0.0);
  const auto& xv = x.data();
  for (int i = 0; i < n; ++i)
    for (size_t k = 0; k < inner; ++k) out[k] += xv[static_cast<size_t>(i) * inner + k];
  return make_result(out_shape, std::move(out), {x}, [n, inner](Node& self) {
    auto& g = input_grad(self, 0);
    for (int i = 0; i < n; ++i)
      for (size_t k = 0; k < inner; ++k) g[static_cast<size_t>(i) * inner + k] += self.grad[k];
  });
}

// ---------------------------------------------------------------- shape

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument(
        fmt::format("reshape: {} -> {}", shape_str(x.shape()), shape_str(shape)));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(shape, std::move(out), {x},
                     [](Node& self) { detail::accumulate(self, 0, self.grad); });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose expects rank 2");
  const int n = x.dim(0), m = x.dim(1);
  std::vector<double> out(x.data().size());
  MapMat(out.data(), m, n) = MapConstMat(x.data().data(), n, m).transpose();
  return make_result({m, n}, std::move(out), {x}, [n, m](Node& self) {
    auto& g = input_grad(self, 0);
    MapMat(g.data(), n, m) += MapConstMat(self.grad.data(), m, n).transpose();
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat of nothing");
  const int r = xs[0].rank();
  if (axis < 0) axis += r;
  Shape out_shape = xs[0].shape();
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& t : xs) {
    if (t.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis && t.dim(d) != xs[0].dim(d)) {
        throw std::invalid_argument(fmt::format("concat: shape mismatch {} vs {}",
                                                shape_str(t.shape()), shape_str(xs[0].shape())));
      }
    }
    out_shape[static_cast<size_t>(axis)] += t.dim(axis);
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[static_cast<size_t>(d)];
  const int64_t out_axis = out_shape[static_cast<size_t>(axis)];

  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const int64_t len = t.dim(axis);
    const auto& tv = t.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(tv.begin() + o * len * inner, len * inner,
                  out.begin() + (o * out_axis + off) * inner);
    off += len;
  }
  std::vector<int64_t> lens;
  for (const auto& t : xs) lens.push_back(t.dim(axis));
  return make_result(out_shape, std::move(out), xs, [=](Node& self) {
    for (size_t i = 0; i < lens.size(); ++i) {
      if (!wants_grad(self, i)) continue;
      auto& g = input_grad(self, i);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < lens[i] * inner; ++k)
          g[static_cast<size_t>(o * lens[i] * inner + k)] +=
              self.grad[static_cast<size_t>((o * out_axis + offsets[i]) * inner + k)];
    }
  });
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  const int full_len = x.dim(axis);
  if (start < 0 || length < 0 || start + length > full_len) {
    throw std::out_of_range(
        fmt::format("slice [{}, {}) of axis {} with size {}", start, start + length, axis, full_len));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= x.dim(d);
  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + (o * full_len + start) * inner, length * inner,
                out.begin() + o * length * inner);
  return make_result(out_shape, std::move(out), {x}, [=](Node& self) {
    auto& g = input_grad(self, 0);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < length * inner; ++k)
        g[static_cast<size_t>((o * full_len + start) * inner + k)] +=
            self.grad[static_cast<size_t>(o * length * inner + k)];
  });
}

Tensor repeat_rows(const Tensor& v, int n) {
  const auto m = static_cast<size_t>(v.size());
  std::vector<double> out(m * static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) std::copy(v.data().begin(), v.data().end(), out.begin() + i * m);
  return make_result({n, static_cast<int>(m)}, std::move(out), {v}, [n, m](Node& self) {
    auto& g = input_grad(self, 0);
    for (int i = 0; i < n; ++i)
      for (size_t k = 0; k < m; ++k) g[k] += self.grad[i * m + k];
  });
}

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul expects rank-2 inputs");
  const int ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const int n = trans_a ? ac : ar;
  const int k = trans_a ? ar : ac;
  const int k2 = trans_b ? bc : br;
  const int m = trans_b ? br : bc;
  if (k != k2) {
    throw std::invalid_argument(fmt::format("matmul: inner dims {} vs {} ({} x {})", k, k2,
                                            shape_str(a.shape()), shape_str(b.shape())));
  }
  MapConstMat A(a.data().data(), ar, ac);
  MapConstMat B(b.data().data(), br, bc);
  std::vector<double> out(static_cast<size_t>(n) * static_cast<size_t>(m));
  MapMat C(out.data(), n, m);
  if (!trans_a && !trans_b) C.noalias() = A * B;
  else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  return make_result({n, m}, std::move(out), {a, b}, [=](Node& self) {
    MapConstMat G(self.grad.data(), n, m);
    MapConstMat Av(input_value(self, 0).data(), ar, ac);
    MapConstMat Bv(input_value(self, 1).data(), br, bc);
    if (wants_grad(self, 0)) {
      MapMat GA(input_grad(self, 0).data(), ar, ac);
      // C = opA * opB; dOpA = G opB^T
      if (!trans_a) {
        if (!trans_b) GA.noalias() += G * Bv.transpose();
        else GA.noalias() += G * Bv;
      } else {
        if (!trans_b) GA.noalias() += Bv * G.transpose();
        else GA.noalias() += Bv.transpose() * G.transpose();
      }
    }
    if (wants_grad(self, 1)) {
      MapMat GB(input_grad(self, 1).data(), br, bc);
      // dOpB = opA^T G
      if (!trans_b) {
        if (!trans_a) GB.noalias() += Av.transpose() * G;
        else GB.noalias() += Av * G;
      } else {
        if (!trans_a) GB.noalias() += G.transpose() * Av;
        else GB.noalias() += G.transpose() * Av.transpose();
      }
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const int m = x.dim(-1);
  if (b.size() != m) {
    throw std::invalid_argument(
        fmt::format("add_bias: {} vs bias {}", shape_str(x.shape()), shape_str(b.shape())));
  }
  const int64_t rows = x.size() / m;
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto& bv = b.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < m; ++j) out[static_cast<size_t>(r * m + j)] += bv[static_cast<size_t>(j)];
  return make_result(x.shape(), std::move(out), {x, b}, [rows, m](Node& self) {
    detail::accumulate(self, 0, self.grad);
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < m; ++j) g[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(r * m + j)];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const int n = x.dim(0);
  const auto m = static_cast<size_t>(x.size() / n);
  if (s.size() != n) throw std::invalid_argument("scale_rows: scale length mismatch");
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto& sv = s.data();
  for (int i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) out[i * m + j] *= sv[static_cast<size_t>(i)];
  return make_result(x.shape(), std::move(out), {x, s}, [n, m](Node& self) {
    const auto& xv = input_value(self, 0);
    const auto& sv2 = input_value(self, 1);
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (int i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[i * m + j] * sv2[static_cast<size_t>(i)];
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < m; ++j) acc += self.grad[i * m + j] * xv[i * m + j];
        g[static_cast<size_t>(i)] += acc;
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  const int m = x.dim(-1);
  const int64_t rows = x.size() / m;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (int j = 0; j < m; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (int j = 0; j < m; ++j) row[j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, m](Node& self) {
    auto& g = input_grad(self, 0);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * m;
      const double* gy = self.grad.data() + r * m;
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += gy[j] * y[j];
      for (int j = 0; j < m; ++j) g[static_cast<size_t>(r * m + j)] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  const int m = x.dim(-1);
  const int64_t rows = x.size() / m;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (int j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < m; ++j) row[j] -= lse;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, m](Node& self) {
    auto& g = input_grad(self, 0);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * m;
      const double* gy = self.grad.data() + r * m;
      double gsum = 0.0;
      for (int j = 0; j < m; ++j) gsum += gy[j];
      for (int j = 0; j < m; ++j) g[static_cast<size_t>(r * m + j)] += gy[j] - std::exp(y[j]) * gsum;
    }
  });
}

Tensor normalize_rows(const Tensor& x, double eps) {
  const int m = x.dim(-1);
  const int64_t rows = x.size() / m;
  std::vector<double> out(x.data().begin(), x.data().end());
  std::vector<double> norms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * m;
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += row[j] * row[j];
    const double nrm = std::max(std::sqrt(s), eps);
    norms[static_cast<size_t>(r)] = nrm;
    for (int j = 0; j < m; ++j) row[j] /= nrm;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, m, norms](Node& self) {
    auto& g = input_grad(self, 0);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * m;
      const double* gy = self.grad.data() + r * m;
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += gy[j] * y[j];
      const double inv = 1.0 / norms[static_cast<size_t>(r)];
      for (int j = 0; j < m; ++j) g[static_cast<size_t>(r * m + j)] += (gy[j] - y[j] * dot) * inv;
    }
  });
}

}  // namespace tg3d
