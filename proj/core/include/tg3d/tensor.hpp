#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; calling
// backward() on a scalar result accumulates d(result)/d(leaf) into every
// reachable leaf that requires gradients. Storage is row-major.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tg3d {

using Shape = std::vector<int>;
using Vec3 = std::array<double, 3>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double v);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(const Shape& shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  double item() const;
  double at(int64_t flat) const { return node_->value[static_cast<size_t>(flat)]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  /// New leaf sharing no graph history; values are copied.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Reverse pass seeded with 1 (scalar) or with `seed` (same shape).
  void backward() const;
  void backward(std::span<const double> seed) const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {
// Builds a result node; attaches inputs and backward closure only when
// recording is enabled and at least one input requires gradients.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);
// Accumulates `g` into input `i` of `self` when that input needs gradients.
void accumulate(Node& self, size_t i, std::span<const double> g);
bool wants_grad(const Node& self, size_t i);
std::vector<double>& input_grad(Node& self, size_t i);
const std::vector<double>& input_value(const Node& self, size_t i);
}  // namespace detail

// ---- elementwise ----
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double s);
Tensor operator*(const Tensor& a, double s);
Tensor operator-(const Tensor& a);
inline Tensor operator+(double s, const Tensor& a) { return a + s; }
inline Tensor operator-(const Tensor& a, double s) { return a + (-s); }
inline Tensor operator*(double s, const Tensor& a) { return a * s; }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor rsqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over the last axis.
Tensor sum_last(const Tensor& x);
/// Sum over axis 0 of an [N, ...] tensor.
Tensor sum_first(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);
/// Broadcast an [M] vector to [N, M].
Tensor repeat_rows(const Tensor& v, int n);

// ---- linear algebra ----
/// op(a) * op(b) for rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
/// x[N, M] + b[M]
Tensor add_bias(const Tensor& x, const Tensor& b);
/// x[N, M] * s[N] (row scaling)
Tensor scale_rows(const Tensor& x, const Tensor& s);
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor normalize_rows(const Tensor& x, double eps = 1e-12);

// ---- image ops on [B, C, H, W] ----
Tensor conv2d(const Tensor& x, const Tensor& w, int pad);
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
/// x[B, C, H, W] * s[B, C]
Tensor scale_channels(const Tensor& x, const Tensor& s);
Tensor avg_pool2(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, int out_h, int out_w);
/// Bilinear resize with half-pixel centres of the window [y0, y0+h) x [x0, x0+w).
Tensor crop_resize(const Tensor& x, int y0, int x0, int h, int w, int out_h, int out_w);
Tensor gaussian_blur(const Tensor& x, double sigma);
Tensor global_avg_pool(const Tensor& x);
/// x[B, C, H, W] * m[B, 1, H, W] with a constant mask.
Tensor mask_pixels(const Tensor& x, std::span<const double> mask);

}  // namespace tg3d
