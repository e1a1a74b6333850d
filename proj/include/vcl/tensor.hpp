#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vcl::ad {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t shape_size(const Shape& shape);
[[nodiscard]] std::string shape_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Graph node. Leaves own parameters; interior nodes are created by ops and
/// hold the closure that pushes their gradient into their parents.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  void ensure_grad();
  [[nodiscard]] bool is_leaf() const noexcept { return !backward_fn; }
};

/// Dense row-major array of doubles with reverse-mode gradient support.
/// Copies are shallow handles onto the same node.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values,
                       bool requires_grad = false);

  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
  [[nodiscard]] std::size_t size() const { return node_->data.size(); }
  /// Rows/cols of the rank-2 view: scalars are 1x1, vectors 1xN.
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;

  [[nodiscard]] std::span<const double> data() const { return node_->data; }
  [[nodiscard]] std::span<double> mutable_data() { return node_->data; }
  [[nodiscard]] double item() const;
  [[nodiscard]] double at(std::size_t i) const { return node_->data.at(i); }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  [[nodiscard]] std::vector<double> grad() const;
  [[nodiscard]] std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse sweep from this scalar. Leaf gradients accumulate across calls.
  /// Interior nodes are released unless retain_graph is set.
  void backward(bool retain_graph = false) const;

  /// Same values, no history.
  [[nodiscard]] Tensor detach() const;
  [[nodiscard]] Tensor clone(bool requires_grad = false) const;

  [[nodiscard]] const NodePtr& node() const { return node_; }
  [[nodiscard]] bool same_node(const Tensor& other) const { return node_ == other.node_; }

  explicit Tensor(NodePtr node);

 private:
  NodePtr node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] bool grad_enabled();

/// When on, division by an exact zero throws std::domain_error instead of
/// producing IEEE inf/nan. Off by default.
void set_debug_checks(bool on);
[[nodiscard]] bool debug_checks();

// Binary elementwise ops broadcast over rank<=2 views (scalar, row vector,
// column vector, matrix).
[[nodiscard]] Tensor add(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor sub(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor mul(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor div(const Tensor& a, const Tensor& b);

[[nodiscard]] Tensor neg(const Tensor& x);
[[nodiscard]] Tensor scale(const Tensor& x, double factor);
[[nodiscard]] Tensor add_scalar(const Tensor& x, double value);
[[nodiscard]] Tensor square(const Tensor& x);
[[nodiscard]] Tensor sqrt(const Tensor& x);
[[nodiscard]] Tensor exp(const Tensor& x);
[[nodiscard]] Tensor log(const Tensor& x);

// Activations. relu'(0) = 0.
[[nodiscard]] Tensor relu(const Tensor& x);
[[nodiscard]] Tensor leaky_relu(const Tensor& x, double slope = 0.2);
[[nodiscard]] Tensor elu(const Tensor& x, double alpha = 1.0);
[[nodiscard]] Tensor selu(const Tensor& x);

inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

[[nodiscard]] Tensor matmul(const Tensor& a, const Tensor& b);

[[nodiscard]] Tensor sum(const Tensor& x);
[[nodiscard]] Tensor mean(const Tensor& x);
/// Reduce over rows of an N x u matrix -> [u].
[[nodiscard]] Tensor sum_rows(const Tensor& x);
[[nodiscard]] Tensor mean_rows(const Tensor& x);
/// Reduce over columns of an N x u matrix -> [N, 1].
[[nodiscard]] Tensor sum_cols(const Tensor& x);
[[nodiscard]] Tensor mean_cols(const Tensor& x);

/// Per-column variance of an n x u matrix along the batch axis -> [u].
/// Divisor n-1 when unbiased, n otherwise.
[[nodiscard]] Tensor batch_variance(const Tensor& x, bool unbiased = true);

/// Rows [begin, end) of a matrix. Gradients scatter back into those rows.
[[nodiscard]] Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

/// Mean softmax cross-entropy of logits [N x K] against class indices.
[[nodiscard]] Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Generic elementwise dispatch by name: relu, leaky_relu, elu, selu, square,
/// neg, sqrt, exp, log, mean, sum (unary) and add, sub, mul, div (binary).
[[nodiscard]] Tensor elementwise(const std::string& name, const Tensor& x);
[[nodiscard]] Tensor elementwise(const std::string& name, const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& a, double v) { return add_scalar(a, v); }
inline Tensor operator+(double v, const Tensor& a) { return add_scalar(a, v); }
inline Tensor operator-(const Tensor& a, double v) { return add_scalar(a, -v); }
inline Tensor operator-(double v, const Tensor& a) { return add_scalar(neg(a), v); }
inline Tensor operator*(const Tensor& a, double v) { return scale(a, v); }
inline Tensor operator*(double v, const Tensor& a) { return scale(a, v); }

}  // namespace vcl::ad
