#include "vcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace vcl::ad {
namespace {

thread_local bool g_grad_enabled = true;
bool g_debug_checks = false;

struct View {
  std::size_t rows;
  std::size_t cols;
};

View view_of(const Shape& shape) {
  switch (shape.size()) {
    case 0:
      return {1, 1};
    case 1:
      return {1, shape[0]};
    case 2:
      return {shape[0], shape[1]};
    default:
      throw std::invalid_argument("ops support tensors of rank <= 2, got " + shape_string(shape));
  }
}

std::size_t broadcast_extent(std::size_t a, std::size_t b, const Shape& sa, const Shape& sb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw std::invalid_argument("shapes do not broadcast: " + shape_string(sa) + " vs " + shape_string(sb));
}

Shape shape_from_view(std::size_t rank, View v) {
  if (rank == 0) return {};
  if (rank == 1) return {v.cols};
  return {v.rows, v.cols};
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   const char* op, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (needs_grad(inputs)) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Elementwise binary op with rank<=2 broadcasting. da/db give the partial
// derivatives of the output element with respect to each operand.
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  const View va = view_of(a.shape());
  const View vb = view_of(b.shape());
  const View vo{broadcast_extent(va.rows, vb.rows, a.shape(), b.shape()),
                broadcast_extent(va.cols, vb.cols, a.shape(), b.shape())};
  const std::size_t rank = std::max(a.rank(), b.rank());
  if (rank == 1 && vo.rows != 1)
    throw std::invalid_argument("shapes do not broadcast: " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  auto index = [](View v, std::size_t i, std::size_t j) {
    return (v.rows == 1 ? 0 : i) * v.cols + (v.cols == 1 ? 0 : j);
  };
  std::vector<double> out(vo.rows * vo.cols);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < vo.rows; ++i)
    for (std::size_t j = 0; j < vo.cols; ++j)
      out[i * vo.cols + j] = f(ad[index(va, i, j)], bd[index(vb, i, j)]);

  return make_result(shape_from_view(rank, vo), std::move(out), {&a, &b}, name,
                     [va, vb, vo, index, da, db](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (pa.requires_grad) pa.ensure_grad();
                       if (pb.requires_grad) pb.ensure_grad();
                       for (std::size_t i = 0; i < vo.rows; ++i) {
                         for (std::size_t j = 0; j < vo.cols; ++j) {
                           const std::size_t k = i * vo.cols + j;
                           const std::size_t ia = index(va, i, j);
                           const std::size_t ib = index(vb, i, j);
                           const double g = self.grad[k];
                           const double x = pa.data[ia];
                           const double y = pb.data[ib];
                           if (pa.requires_grad) pa.grad[ia] += g * da(x, y, self.data[k]);
                           if (pb.requires_grad) pb.grad[ib] += g * db(x, y, self.data[k]);
                         }
                       }
                     });
}

// Elementwise unary op; d(x, y) is dy/dx given input x and output y.
template <class F, class D>
Tensor unary_op(const Tensor& x, const char* name, F f, D d) {
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), {&x}, name, [d](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) p.grad[i] += self.grad[i] * d(p.data[i], self.data[i]);
  });
}

View require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) throw std::invalid_argument(std::string(op) + " expects a matrix, got " + shape_string(x.shape()));
  return view_of(x.shape());
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor::Tensor(NodePtr node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size())
    throw std::invalid_argument("data length " + std::to_string(values.size()) + " does not match shape " +
                                shape_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return from({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values, bool requires_grad) {
  return from({rows, cols}, std::vector<double>(values), requires_grad);
}

std::size_t Tensor::rows() const { return view_of(shape()).rows; }
std::size_t Tensor::cols() const { return view_of(shape()).cols; }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() needs a single-element tensor, got " + shape_string(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward(bool retain_graph) const {
  if (size() != 1) throw std::invalid_argument("backward() needs a scalar loss, got " + shape_string(shape()));
  if (!requires_grad()) throw std::invalid_argument("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) n->grad.clear();
  node_->ensure_grad();
  node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && !n->grad.empty()) n->backward_fn(*n);
  }

  if (!retain_graph) {
    for (Node* n : order) {
      if (n->is_leaf()) continue;
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->requires_grad = false;
    }
  }
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->data, requires_grad); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  if (g_debug_checks) {
    const auto bd = b.data();
    if (std::find(bd.begin(), bd.end(), 0.0) != bd.end()) throw std::domain_error("division by zero");
  }
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, "scale", [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(
      x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary_op(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_op(
      x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor elu(const Tensor& x, double alpha) {
  return unary_op(
      x, "elu", [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha * std::exp(v); });
}

Tensor selu(const Tensor& x) {
  return unary_op(
      x, "selu", [](double v) { return kSeluLambda * (v > 0.0 ? v : kSeluAlpha * std::expm1(v)); },
      [](double v, double) { return kSeluLambda * (v > 0.0 ? 1.0 : kSeluAlpha * std::exp(v)); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const View va = require_matrix(a, "matmul");
  const View vb = require_matrix(b, "matmul");
  if (va.cols != vb.rows)
    throw std::invalid_argument("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  const std::size_t m = va.rows, k = va.cols, p = vb.cols;
  std::vector<double> out(m * p, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ad[i * k + t];
      if (av == 0.0) continue;
      const double* brow = bd.data() + t * p;
      double* orow = out.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  return make_result({m, p}, std::move(out), {&a, &b}, "matmul", [m, k, p](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          double acc = 0.0;
          const double* brow = pb.data.data() + t * p;
          const double* grow = g + i * p;
          for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
          pa.grad[i * k + t] += acc;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          const double av = pa.data[i * k + t];
          if (av == 0.0) continue;
          const double* grow = g + i * p;
          double* gb = pb.grad.data() + t * p;
          for (std::size_t j = 0; j < p; ++j) gb[j] += av * grow[j];
        }
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {&x}, "sum", [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_rows(const Tensor& x) {
  const View v = require_matrix(x, "sum_rows");
  std::vector<double> out(v.cols, 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < v.rows; ++i)
    for (std::size_t j = 0; j < v.cols; ++j) out[j] += xd[i * v.cols + j];
  return make_result({v.cols}, std::move(out), {&x}, "sum_rows", [v](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < v.rows; ++i)
      for (std::size_t j = 0; j < v.cols; ++j) p.grad[i * v.cols + j] += self.grad[j];
  });
}

Tensor mean_rows(const Tensor& x) {
  const View v = require_matrix(x, "mean_rows");
  if (v.rows == 0) throw std::invalid_argument("mean_rows of an empty matrix");
  return scale(sum_rows(x), 1.0 / static_cast<double>(v.rows));
}

Tensor sum_cols(const Tensor& x) {
  const View v = require_matrix(x, "sum_cols");
  std::vector<double> out(v.rows, 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < v.rows; ++i)
    for (std::size_t j = 0; j < v.cols; ++j) out[i] += xd[i * v.cols + j];
  return make_result({v.rows, 1}, std::move(out), {&x}, "sum_cols", [v](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < v.rows; ++i)
      for (std::size_t j = 0; j < v.cols; ++j) p.grad[i * v.cols + j] += self.grad[i];
  });
}

Tensor mean_cols(const Tensor& x) {
  const View v = require_matrix(x, "mean_cols");
  if (v.cols == 0) throw std::invalid_argument("mean_cols of an empty matrix");
  return scale(sum_cols(x), 1.0 / static_cast<double>(v.cols));
}

Tensor batch_variance(const Tensor& x, bool unbiased) {
  const View v = require_matrix(x, "batch_variance");
  if (v.rows < 2) throw std::invalid_argument("batch_variance needs at least 2 rows");
  const double divisor = static_cast<double>(unbiased ? v.rows - 1 : v.rows);
  const auto xd = x.data();
  std::vector<double> means(v.cols, 0.0);
  for (std::size_t i = 0; i < v.rows; ++i)
    for (std::size_t j = 0; j < v.cols; ++j) means[j] += xd[i * v.cols + j];
  for (double& m : means) m /= static_cast<double>(v.rows);
  std::vector<double> out(v.cols, 0.0);
  for (std::size_t i = 0; i < v.rows; ++i)
    for (std::size_t j = 0; j < v.cols; ++j) {
      const double d = xd[i * v.cols + j] - means[j];
      out[j] += d * d;
    }
  for (double& o : out) o /= divisor;
  return make_result({v.cols}, std::move(out), {&x}, "batch_variance", [v, divisor, means](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < v.rows; ++i)
      for (std::size_t j = 0; j < v.cols; ++j) {
        const std::size_t k = i * v.cols + j;
        p.grad[k] += self.grad[j] * 2.0 * (p.data[k] - means[j]) / divisor;
      }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const View v = require_matrix(x, "slice_rows");
  if (begin > end || end > v.rows)
    throw std::invalid_argument("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") out of range for " + shape_string(x.shape()));
  const auto xd = x.data();
  std::vector<double> out(xd.begin() + static_cast<std::ptrdiff_t>(begin * v.cols),
                          xd.begin() + static_cast<std::ptrdiff_t>(end * v.cols));
  return make_result({end - begin, v.cols}, std::move(out), {&x}, "slice_rows", [v, begin](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    const std::size_t offset = begin * v.cols;
    for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[offset + k] += self.grad[k];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const View v = require_matrix(logits, "softmax_cross_entropy");
  if (labels.size() != v.rows) throw std::invalid_argument("label count does not match logits rows");
  if (v.rows == 0) throw std::invalid_argument("softmax_cross_entropy of an empty batch");
  const auto ld = logits.data();
  std::vector<double> probs(ld.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < v.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= v.cols) throw std::invalid_argument("label out of range");
    const double* row = ld.data() + i * v.cols;
    const double mx = *std::max_element(row, row + v.cols);
    double z = 0.0;
    for (std::size_t j = 0; j < v.cols; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < v.cols; ++j) probs[i * v.cols + j] = std::exp(row[j] - log_z);
    loss += log_z - row[y];
  }
  const double inv_n = 1.0 / static_cast<double>(v.rows);
  std::vector<int> targets(labels.begin(), labels.end());
  return make_result({}, {loss * inv_n}, {&logits}, "softmax_cross_entropy",
                     [v, inv_n, probs = std::move(probs), targets = std::move(targets)](Node& self) {
                       Node& p = *self.parents[0];
                       p.ensure_grad();
                       const double g = self.grad[0] * inv_n;
                       for (std::size_t i = 0; i < v.rows; ++i)
                         for (std::size_t j = 0; j < v.cols; ++j) {
                           const std::size_t k = i * v.cols + j;
                           const double onehot = static_cast<int>(j) == targets[i] ? 1.0 : 0.0;
                           p.grad[k] += g * (probs[k] - onehot);
                         }
                     });
}

Tensor elementwise(const std::string& name, const Tensor& x) {
  if (name == "relu") return relu(x);
  if (name == "leaky_relu") return leaky_relu(x);
  if (name == "elu") return elu(x);
  if (name == "selu") return selu(x);
  if (name == "square") return square(x);
  if (name == "neg") return neg(x);
  if (name == "sqrt") return sqrt(x);
  if (name == "exp") return exp(x);
  if (name == "log") return log(x);
  if (name == "mean") return mean(x);
  if (name == "sum") return sum(x);
  throw std::invalid_argument("unknown unary op: " + name);
}

Tensor elementwise(const std::string& name, const Tensor& a, const Tensor& b) {
  if (name == "add") return add(a, b);
  if (name == "sub") return sub(a, b);
  if (name == "mul") return mul(a, b);
  if (name == "div") return div(a, b);
  throw std::invalid_argument("unknown binary op: " + name);
}

}  // namespace vcl::ad
