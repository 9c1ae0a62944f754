#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ltgan {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised by log/exp when the input leaves the op's domain or the result overflows.
class DomainError : public std::domain_error {
 public:
  DomainError(std::string op, std::size_t index, double value);
  const std::string& op() const { return op_; }
  std::size_t index() const { return index_; }

 private:
  std::string op_;
  std::size_t index_;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string where, std::size_t index);
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until materialized
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share storage (handle semantics),
/// which is what lets parameters be updated in place by the optimizer while
/// the same handle sits inside a network.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);
  static Tensor eye(std::size_t n);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, bypasses the tape. Meant for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  // Zeros of matching shape when no gradient has reached this tensor.
  std::vector<double> grad() const;
  bool has_grad() const;
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations. Forward execution order is the
/// topological order, so backward is a single reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable leaf's grad.
  void backward(const Tensor& loss);
  void clear();

  void record(std::shared_ptr<detail::Node> node);

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool consumed_ = false;
};

// Makes `tape` the active tape on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();
void backward(const Tensor& loss);

// Number of forward ops executed on this thread. Used for instrumentation.
std::uint64_t op_count();

// When enabled, every op output is scanned for NaN/Inf.
void set_finite_checks(bool enabled);
bool finite_checks();
const Tensor& check_finite(const Tensor& t, std::string_view where);

// ---- elementwise, numpy-style broadcasting ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- linear algebra / layout ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows);
// out.flat[i] = x.flat[indices[i]]; gradient scatters back.
Tensor gather(const Tensor& x, std::span<const std::size_t> indices, Shape out_shape);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x);  // along the last axis

// ---- gradient plumbing ----
Tensor grad_scale(const Tensor& x, double factor);
Tensor stop_gradient(const Tensor& x);

// Name-based dispatch over the parameterless op set (defaults: leaky slope 0.2,
// pool kernel 2 / stride 2, concat on axis 0, transpose of a matrix).
Tensor apply_op(std::string_view name, std::span<const Tensor> inputs);
std::vector<std::string> differentiable_ops();

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

}  // namespace ltgan
