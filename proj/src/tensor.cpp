#include "ltgan/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ltgan {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_op_count = 0;
thread_local bool g_finite_checks = false;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

void scan_finite(const Node& node, std::string_view where) {
  for (std::size_t i = 0; i < node.value.size(); ++i) {
    if (!std::isfinite(node.value[i])) throw NonFiniteError(std::string(where), i);
  }
}

// Creates the output node and, when any input participates in differentiation
// and a tape is active, wires it into the tape.
NodePtr make_node(const char* op, Shape shape, std::vector<double> value,
                  std::vector<NodePtr> inputs) {
  ++g_op_count;
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_finite_checks) scan_finite(*node, op);
  bool needs_grad = false;
  if (g_active_tape != nullptr) {
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
  }
  return node;
}

Tensor finish(NodePtr node, std::function<void(Node&)> backward) {
  if (node->requires_grad) {
    node->backward = std::move(backward);
    g_active_tape->record(node);
  }
  return Tensor(std::move(node));
}

[[noreturn]] void shape_fail(std::string_view op, std::initializer_list<Shape> shapes,
                             std::string_view detail = {}) {
  std::ostringstream os;
  os << op << ": incompatible shapes";
  for (const auto& s : shapes) os << ' ' << to_string(s);
  if (!detail.empty()) os << " (" << detail << ')';
  throw ShapeError(os.str());
}

const NodePtr& node_of(const Tensor& t, std::string_view op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
  return t.node();
}

// Index mapping for numpy-style broadcasting of two operands.
struct Broadcast {
  enum class Mode { kSame, kScalarA, kScalarB, kSuffixA, kSuffixB, kGeneral };
  Shape out;
  Mode mode = Mode::kSame;
  std::size_t na = 0, nb = 0;
  std::vector<std::size_t> ia, ib;

  std::size_t a(std::size_t i) const {
    switch (mode) {
      case Mode::kSame:
      case Mode::kScalarB:
      case Mode::kSuffixB: return i;
      case Mode::kScalarA: return 0;
      case Mode::kSuffixA: return i % na;
      case Mode::kGeneral: return ia[i];
    }
    return 0;
  }
  std::size_t b(std::size_t i) const {
    switch (mode) {
      case Mode::kSame:
      case Mode::kScalarA:
      case Mode::kSuffixA: return i;
      case Mode::kScalarB: return 0;
      case Mode::kSuffixB: return i % nb;
      case Mode::kGeneral: return ib[i];
    }
    return 0;
  }
};

// True when `small`, after dropping leading ones, equals a suffix of `big`.
bool is_suffix(const Shape& small, const Shape& big) {
  std::size_t lead = 0;
  while (lead < small.size() && small[lead] == 1) ++lead;
  const std::size_t rest = small.size() - lead;
  if (rest > big.size() || small.size() > big.size()) return false;
  return std::equal(small.begin() + static_cast<std::ptrdiff_t>(lead), small.end(),
                    big.end() - static_cast<std::ptrdiff_t>(rest));
}

std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  const std::size_t offset = out.size() - in.size();
  std::vector<std::size_t> in_stride(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_stride[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = src;
    for (std::size_t k = out.size(); k-- > 0;) {
      ++idx[k];
      src += in_stride[k];
      if (idx[k] < out[k]) break;
      src -= in_stride[k] * out[k];
      idx[k] = 0;
    }
  }
  return map;
}

Broadcast plan_broadcast(std::string_view op, const Shape& a, const Shape& b) {
  Broadcast plan;
  plan.na = numel(a);
  plan.nb = numel(b);
  if (a == b) {
    plan.out = a;
    plan.mode = Broadcast::Mode::kSame;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k + a.size() >= rank ? a[k + a.size() - rank] : 1;
    const std::size_t db = k + b.size() >= rank ? b[k + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) shape_fail(op, {a, b}, "not broadcastable");
    plan.out[k] = std::max(da, db);
  }
  const std::size_t n = numel(plan.out);
  if (plan.nb == 1 && plan.na == n) {
    plan.mode = Broadcast::Mode::kScalarB;
  } else if (plan.na == 1 && plan.nb == n) {
    plan.mode = Broadcast::Mode::kScalarA;
  } else if (plan.na == n && is_suffix(b, plan.out)) {
    plan.mode = Broadcast::Mode::kSuffixB;
  } else if (plan.nb == n && is_suffix(a, plan.out)) {
    plan.mode = Broadcast::Mode::kSuffixA;
  } else {
    plan.mode = Broadcast::Mode::kGeneral;
    plan.ia = broadcast_index(a, plan.out);
    plan.ib = broadcast_index(b, plan.out);
  }
  return plan;
}

// Elementwise binary op. `da(x, y)` and `db(x, y)` are the partial derivatives.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& ta, const Tensor& tb, F f, DA da, DB db) {
  const NodePtr& a = node_of(ta, op);
  const NodePtr& b = node_of(tb, op);
  auto plan = std::make_shared<Broadcast>(plan_broadcast(op, a->shape, b->shape));
  const std::size_t n = numel(plan->out);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a->value[plan->a(i)], b->value[plan->b(i)]);
  auto node = make_node(op, plan->out, std::move(out), {a, b});
  return finish(node, [plan, da, db, n](Node& self) {
    const NodePtr& a = self.inputs[0];
    const NodePtr& b = self.inputs[1];
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ja = plan->a(i);
        ga[ja] += self.grad[i] * da(a->value[ja], b->value[plan->b(i)]);
      }
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t jb = plan->b(i);
        gb[jb] += self.grad[i] * db(a->value[plan->a(i)], b->value[jb]);
      }
    }
  });
}

// Elementwise unary op; `d(x, y)` is dy/dx given input x and output y.
template <class F, class D>
Tensor unary(const char* op, const Tensor& tx, F f, D d) {
  const NodePtr& x = node_of(tx, op);
  std::vector<double> out(x->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x->value[i]);
  auto node = make_node(op, x->shape, std::move(out), {x});
  return finish(node, [d](Node& self) {
    const NodePtr& x = self.inputs[0];
    auto& g = x->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * d(x->value[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

DomainError::DomainError(std::string op, std::size_t index, double value)
    : std::domain_error(op + ": domain violation at index " + std::to_string(index) +
                        " (value " + std::to_string(value) + ")"),
      op_(std::move(op)),
      index_(index) {}

NonFiniteError::NonFiniteError(std::string where, std::size_t index)
    : std::runtime_error("non-finite value in " + where + " at index " + std::to_string(index)),
      index_(index) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + to_string(shape));
  }
  if (ltgan::numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                     std::to_string(ltgan::numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ltgan::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v));
}

const Shape& Tensor::shape() const { return node_of(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("dim: axis out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this, "numel")->value.size(); }

std::span<const double> Tensor::data() const { return node_of(*this, "data")->value; }

std::span<double> Tensor::mutable_data() { return node_of(*this, "mutable_data")->value; }

double Tensor::item() const {
  const auto& v = node_of(*this, "item")->value;
  if (v.size() != 1) throw ShapeError("item: tensor is not scalar " + to_string(shape()));
  return v[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) { node_of(*this, "set_requires_grad")->requires_grad = value; }

bool Tensor::is_leaf() const { return !node_ || !node_->backward; }

std::vector<double> Tensor::grad() const {
  const auto& n = node_of(*this, "grad");
  if (n->grad.empty()) return std::vector<double>(n->value.size(), 0.0);
  return n->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& n = node_of(*this, "detach");
  return Tensor(n->shape, n->value);
}

Tensor Tensor::clone() const {
  const auto& n = node_of(*this, "clone");
  return Tensor(n->shape, n->value, n->requires_grad);
}

// ---------------------------------------------------------------------------

void Tape::record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  const NodePtr& root = node_of(loss, "backward");
  if (root->value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + to_string(root->shape));
  }
  if (consumed_) throw std::logic_error("backward: tape already consumed; rebuild the forward pass");
  consumed_ = true;
  if (!root->requires_grad) return;
  root->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (g_active_tape == nullptr) throw std::logic_error("backward: no active tape");
  g_active_tape->backward(loss);
}

std::uint64_t op_count() { return g_op_count; }
void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }

const Tensor& check_finite(const Tensor& t, std::string_view where) {
  scan_finite(*node_of(t, where), where);
  return t;
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double, double y) { return 1.0 / y; },
                [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary("add_scalar", x, [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Tensor broadcast_to(const Tensor& tx, const Shape& shape) {
  const NodePtr& x = node_of(tx, "broadcast_to");
  Broadcast plan = plan_broadcast("broadcast_to", x->shape, shape);
  if (plan.out != shape) shape_fail("broadcast_to", {x->shape, shape});
  auto map = std::make_shared<std::vector<std::size_t>>(broadcast_index(x->shape, shape));
  std::vector<double> out(map->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[(*map)[i]];
  auto node = make_node("broadcast_to", shape, std::move(out), {x});
  return finish(node, [map](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < map->size(); ++i) g[(*map)[i]] += self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& tx) {
  const NodePtr& x = node_of(tx, "log");
  for (std::size_t i = 0; i < x->value.size(); ++i) {
    if (!(x->value[i] > 0.0)) throw DomainError("log", i, x->value[i]);
  }
  return unary("log", tx, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& tx) {
  Tensor out = unary("exp", tx, [](double v) { return std::exp(v); },
                     [](double, double y) { return y; });
  const auto values = out.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw DomainError("exp", i, tx.data()[i]);
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  const NodePtr& a = node_of(ta, "matmul");
  const NodePtr& b = node_of(tb, "matmul");
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0]) {
    shape_fail("matmul", {a->shape, b->shape});
  }
  const auto m = static_cast<Eigen::Index>(a->shape[0]);
  const auto k = static_cast<Eigen::Index>(a->shape[1]);
  const auto n = static_cast<Eigen::Index>(b->shape[1]);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  // Row by row, so each output row is independent of how many rows share the batch.
  {
    ConstMap am(a->value.data(), m, k), bm(b->value.data(), k, n);
    MutMap om(out.data(), m, n);
    for (Eigen::Index i = 0; i < m; ++i) om.row(i).noalias() = am.row(i) * bm;
  }
  auto node = make_node("matmul", {a->shape[0], b->shape[1]}, std::move(out), {a, b});
  return finish(node, [m, k, n](Node& self) {
    const NodePtr& a = self.inputs[0];
    const NodePtr& b = self.inputs[1];
    ConstMap g(self.grad.data(), m, n);
    if (a->requires_grad) {
      MutMap(a->ensure_grad().data(), m, k).noalias() += g * ConstMap(b->value.data(), k, n).transpose();
    }
    if (b->requires_grad) {
      MutMap(b->ensure_grad().data(), k, n).noalias() += ConstMap(a->value.data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& tx) {
  const NodePtr& x = node_of(tx, "transpose");
  if (x->shape.size() != 2) shape_fail("transpose", {x->shape}, "expects a matrix");
  const std::size_t r = x->shape[0], c = x->shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x->value[i * c + j];
  auto node = make_node("transpose", {c, r}, std::move(out), {x});
  return finish(node, [r, c](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& tx, Shape shape) {
  const NodePtr& x = node_of(tx, "reshape");
  if (numel(shape) != x->value.size()) shape_fail("reshape", {x->shape, shape});
  auto node = make_node("reshape", std::move(shape), x->value, {x});
  return finish(node, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor avg_pool2d(const Tensor& tx, std::size_t kernel, std::size_t stride) {
  const NodePtr& x = node_of(tx, "avg_pool2d");
  if (kernel == 0 || stride == 0) throw std::invalid_argument("avg_pool2d: kernel and stride must be positive");
  if (x->shape.size() != 4 || x->shape[2] < kernel || x->shape[3] < kernel) {
    shape_fail("avg_pool2d", {x->shape}, "expects (N, C, H, W) with H, W >= kernel");
  }
  const std::size_t planes = x->shape[0] * x->shape[1];
  const std::size_t h = x->shape[2], w = x->shape[3];
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  std::vector<double> out(planes * oh * ow, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x->value.data() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t di = 0; di < kernel; ++di)
          for (std::size_t dj = 0; dj < kernel; ++dj) acc += src[(i * stride + di) * w + j * stride + dj];
        out[(p * oh + i) * ow + j] = acc * inv;
      }
  }
  auto node = make_node("avg_pool2d", {x->shape[0], x->shape[1], oh, ow}, std::move(out), {x});
  return finish(node, [=](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double gv = self.grad[(p * oh + i) * ow + j] * inv;
          for (std::size_t di = 0; di < kernel; ++di)
            for (std::size_t dj = 0; dj < kernel; ++dj) g[p * h * w + (i * stride + di) * w + j * stride + dj] += gv;
        }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(node_of(p, "concat"));
  const Shape& first = nodes[0]->shape;
  if (axis >= first.size()) shape_fail("concat", {first}, "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& n : nodes) {
    if (n->shape.size() != first.size()) shape_fail("concat", {first, n->shape});
    for (std::size_t k = 0; k < first.size(); ++k) {
      if (k != axis && n->shape[k] != first[k]) shape_fail("concat", {first, n->shape});
    }
    out_shape[axis] += n->shape[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= first[k];
  for (std::size_t k = axis + 1; k < first.size(); ++k) inner *= first[k];
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& n : nodes) {
    offsets.push_back(off);
    const std::size_t chunk = n->shape[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(n->value.data() + o * chunk, chunk, out.data() + o * out_row + off);
    off += chunk;
  }
  auto node = make_node("concat", out_shape, std::move(out), nodes);
  return finish(node, [offsets, outer, inner, out_row, axis](Node& self) {
    for (std::size_t q = 0; q < self.inputs.size(); ++q) {
      const NodePtr& in = self.inputs[q];
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      const std::size_t chunk = in->shape[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < chunk; ++c) g[o * chunk + c] += self.grad[o * out_row + offsets[q] + c];
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& tx, std::size_t axis, std::size_t begin, std::size_t end) {
  const NodePtr& x = node_of(tx, "slice");
  if (axis >= x->shape.size() || begin >= end || end > x->shape[axis]) {
    shape_fail("slice", {x->shape},
               "axis " + std::to_string(axis) + " range [" + std::to_string(begin) + ", " +
                   std::to_string(end) + ")");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= x->shape[k];
  for (std::size_t k = axis + 1; k < x->shape.size(); ++k) inner *= x->shape[k];
  Shape out_shape = x->shape;
  out_shape[axis] = end - begin;
  const std::size_t in_row = x->shape[axis] * inner, out_row = (end - begin) * inner;
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x->value.data() + o * in_row + begin * inner, out_row, out.data() + o * out_row);
  auto node = make_node("slice", out_shape, std::move(out), {x});
  return finish(node, [=](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < out_row; ++c) g[o * in_row + begin * inner + c] += self.grad[o * out_row + c];
  });
}

Tensor take_rows(const Tensor& tx, std::span<const std::size_t> rows) {
  const NodePtr& x = node_of(tx, "take_rows");
  if (x->shape.empty() || rows.empty()) shape_fail("take_rows", {x->shape}, "needs rows");
  const std::size_t width = x->value.size() / x->shape[0];
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  for (std::size_t r : *idx) {
    if (r >= x->shape[0]) shape_fail("take_rows", {x->shape}, "row " + std::to_string(r) + " out of range");
  }
  Shape out_shape = x->shape;
  out_shape[0] = idx->size();
  std::vector<double> out(idx->size() * width);
  for (std::size_t i = 0; i < idx->size(); ++i)
    std::copy_n(x->value.data() + (*idx)[i] * width, width, out.data() + i * width);
  auto node = make_node("take_rows", out_shape, std::move(out), {x});
  return finish(node, [idx, width](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::size_t c = 0; c < width; ++c) g[(*idx)[i] * width + c] += self.grad[i * width + c];
  });
}

Tensor gather(const Tensor& tx, std::span<const std::size_t> indices, Shape out_shape) {
  const NodePtr& x = node_of(tx, "gather");
  if (numel(out_shape) != indices.size()) shape_fail("gather", {x->shape, out_shape});
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  std::vector<double> out(idx->size());
  for (std::size_t i = 0; i < idx->size(); ++i) {
    if ((*idx)[i] >= x->value.size()) shape_fail("gather", {x->shape}, "index out of range");
    out[i] = x->value[(*idx)[i]];
  }
  auto node = make_node("gather", std::move(out_shape), std::move(out), {x});
  return finish(node, [idx](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& tx) {
  const NodePtr& x = node_of(tx, "sum");
  double acc = 0.0;
  for (double v : x->value) acc += v;
  auto node = make_node("sum", {1}, {acc}, {x});
  return finish(node, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& tx) {
  const NodePtr& x = node_of(tx, "mean");
  double acc = 0.0;
  for (double v : x->value) acc += v;
  const double inv = 1.0 / static_cast<double>(x->value.size());
  auto node = make_node("mean", {1}, {acc * inv}, {x});
  return finish(node, [inv](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0] * inv;
  });
}

Tensor sum(const Tensor& tx, std::size_t axis) {
  const NodePtr& x = node_of(tx, "sum_axis");
  if (axis >= x->shape.size()) shape_fail("sum_axis", {x->shape}, "axis out of range");
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x->shape[axis];
  for (std::size_t k = 0; k < axis; ++k) outer *= x->shape[k];
  for (std::size_t k = axis + 1; k < x->shape.size(); ++k) inner *= x->shape[k];
  Shape out_shape;
  for (std::size_t k = 0; k < x->shape.size(); ++k)
    if (k != axis) out_shape.push_back(x->shape[k]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x->value[(o * len + l) * inner + i];
  auto node = make_node("sum_axis", out_shape, std::move(out), {x});
  return finish(node, [=](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i];
  });
}

Tensor log_softmax(const Tensor& tx) {
  const NodePtr& x = node_of(tx, "log_softmax");
  const std::size_t width = x->shape.back();
  const std::size_t rows = x->value.size() / width;
  std::vector<double> out(x->value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = x->value.data() + r * width;
    const double mx = *std::max_element(src, src + width);
    double acc = 0.0;
    for (std::size_t c = 0; c < width; ++c) acc += std::exp(src[c] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = src[c] - lse;
  }
  auto node = make_node("log_softmax", x->shape, std::move(out), {x});
  return finish(node, [rows, width](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < width; ++c) gsum += self.grad[r * width + c];
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t i = r * width + c;
        g[i] += self.grad[i] - std::exp(self.value[i]) * gsum;
      }
    }
  });
}

Tensor grad_scale(const Tensor& x, double factor) {
  return unary("grad_scale", x, [](double v) { return v; }, [factor](double, double) { return factor; });
}

Tensor stop_gradient(const Tensor& x) {
  ++g_op_count;
  return x.detach();
}

// ---------------------------------------------------------------------------

std::vector<std::string> differentiable_ops() {
  return {"add",     "sub",  "mul",    "div",    "neg",         "matmul",    "transpose",
          "relu",    "leaky_relu", "sigmoid", "tanh", "log", "exp", "mean", "sum",
          "sum_axis0", "concat", "slice", "avg_pool2d", "log_softmax", "reshape_flat",
          "broadcast_rows", "take_rows_rev", "clamp01"};
}

Tensor apply_op(std::string_view name, std::span<const Tensor> in) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(name) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(in.size()));
    }
  };
  if (name == "add") { need(2); return add(in[0], in[1]); }
  if (name == "sub") { need(2); return sub(in[0], in[1]); }
  if (name == "mul") { need(2); return mul(in[0], in[1]); }
  if (name == "div") { need(2); return div(in[0], in[1]); }
  if (name == "matmul") { need(2); return matmul(in[0], in[1]); }
  if (name == "concat") { return concat(in, 0); }
  need(1);
  const Tensor& x = in[0];
  if (name == "neg") return neg(x);
  if (name == "transpose") return transpose(x);
  if (name == "relu") return relu(x);
  if (name == "leaky_relu") return leaky_relu(x, 0.2);
  if (name == "sigmoid") return sigmoid(x);
  if (name == "tanh") return tanh(x);
  if (name == "log") return log(x);
  if (name == "exp") return exp(x);
  if (name == "mean") return mean(x);
  if (name == "sum") return sum(x);
  if (name == "sum_axis0") return sum(x, 0);
  if (name == "slice") return slice(x, 0, 0, std::max<std::size_t>(1, x.dim(0) / 2));
  if (name == "avg_pool2d") return avg_pool2d(x, 2, 2);
  if (name == "log_softmax") return log_softmax(x);
  if (name == "reshape_flat") return reshape(x, {x.numel()});
  if (name == "broadcast_rows") {
    Shape s = x.shape();
    s.insert(s.begin(), 3);
    return broadcast_to(x, s);
  }
  if (name == "take_rows_rev") {
    std::vector<std::size_t> rows(x.dim(0));
    std::iota(rows.rbegin(), rows.rend(), std::size_t{0});
    return take_rows(x, rows);
  }
  if (name == "clamp01") return clamp(x, 0.0, 1.0);
  throw std::invalid_argument("unknown op '" + std::string(name) + "'");
}

}  // namespace ltgan
