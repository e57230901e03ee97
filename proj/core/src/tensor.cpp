#include "mtlcf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mtlcf {

namespace {

thread_local int g_no_grad_depth = 0;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw std::invalid_argument(std::string(what) + ": undefined tensor");
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_to_string(a) + " vs " + shape_to_string(b));
}

// splitmix64, used for coordinate subsampling in the finite-difference check
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

}  // namespace detail

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return from_values(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension in " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: " + shape_to_string(shape) + " needs " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad && grad_enabled();
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  check_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::size() const {
  check_defined(*this, "size");
  return node_->value.size();
}

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.size() != 2) throw std::invalid_argument("rows: tensor is not 2-d: " + shape_to_string(s));
  return s[0];
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  if (s.size() != 2) throw std::invalid_argument("cols: tensor is not 2-d: " + shape_to_string(s));
  return s[1];
}

std::span<const double> Tensor::values() const {
  check_defined(*this, "values");
  return node_->value;
}

std::span<double> Tensor::values_mut() {
  check_defined(*this, "values_mut");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is not scalar: " + shape_to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

bool Tensor::requires_grad() const {
  check_defined(*this, "requires_grad");
  return node_->requires_grad;
}

void Tensor::set_requires_grad(bool requires_grad) {
  check_defined(*this, "set_requires_grad");
  if (!node_->parents.empty())
    throw std::logic_error("set_requires_grad: only valid on leaf tensors");
  node_->requires_grad = requires_grad;
  if (!requires_grad) node_->grad.clear();
}

bool Tensor::has_grad() const {
  check_defined(*this, "has_grad");
  return !node_->grad.empty();
}

std::span<const double> Tensor::grad() const {
  check_defined(*this, "grad");
  if (node_->grad.empty()) throw std::logic_error("grad: no gradient buffer present");
  return node_->grad;
}

void Tensor::zero_grad() {
  check_defined(*this, "zero_grad");
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  check_defined(*this, "clear_grad");
  node_->grad.clear();
}

Tensor Tensor::clone() const {
  check_defined(*this, "clone");
  return from_values(node_->shape, node_->value, node_->requires_grad);
}

Tensor make_node(Shape shape, std::vector<double> values,
                 const std::vector<Tensor>& inputs,
                 std::function<void(detail::Node&)> backward_fn) {
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        needs_grad = true;
        break;
      }
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents.reserve(inputs.size());
    for (const Tensor& in : inputs) node->parents.push_back(in.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void add_to_grad(const Tensor& t, std::span<const double> delta) {
  detail::Node* n = t.node();
  if (n == nullptr || !n->requires_grad) return;
  n->ensure_grad();
  if (delta.size() != n->grad.size())
    throw std::invalid_argument("add_to_grad: size mismatch");
  for (std::size_t i = 0; i < delta.size(); ++i) n->grad[i] += delta[i];
}

namespace {

void accumulate(detail::Node* n, const std::vector<double>& delta) {
  if (n == nullptr || !n->requires_grad) return;
  n->ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) n->grad[i] += delta[i];
}

void accumulate_scalar(detail::Node* n, double delta) {
  if (n == nullptr || !n->requires_grad) return;
  n->ensure_grad();
  n->grad[0] += delta;
}

enum class BinaryKind { add, sub, mul };

Tensor binary_op(const char* name, BinaryKind kind, const Tensor& a, const Tensor& b) {
  check_defined(a, name);
  check_defined(b, name);
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) shape_error(name, a.shape(), b.shape());

  const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a_scalar ? av[0] : av[i];
    const double y = b_scalar ? bv[0] : bv[i];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
    }
  }
  return make_node(out_shape, std::move(out), {a, b}, [kind, a, b, a_scalar, b_scalar](detail::Node& self) {
    const std::vector<double>& g = self.grad;
    const auto av = a.values();
    const auto bv = b.values();
    detail::Node* an = a.node();
    detail::Node* bn = b.node();
    const std::size_t n = g.size();
    if (an != nullptr && an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        switch (kind) {
          case BinaryKind::add: d = g[i]; break;
          case BinaryKind::sub: d = g[i]; break;
          case BinaryKind::mul: d = g[i] * (b_scalar ? bv[0] : bv[i]); break;
        }
        an->grad[a_scalar ? 0 : i] += d;
      }
    }
    if (bn != nullptr && bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        switch (kind) {
          case BinaryKind::add: d = g[i]; break;
          case BinaryKind::sub: d = -g[i]; break;
          case BinaryKind::mul: d = g[i] * (a_scalar ? av[0] : av[i]); break;
        }
        bn->grad[b_scalar ? 0 : i] += d;
      }
    }
  });
}

Tensor unary_op(const char* name, const Tensor& a, double (*fwd)(double),
                double (*dfdx_from)(double x, double y)) {
  check_defined(a, name);
  const std::size_t n = a.size();
  const auto av = a.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  return make_node(a.shape(), std::move(out), {a}, [a, dfdx_from](detail::Node& self) {
    detail::Node* an = a.node();
    if (an == nullptr || !an->requires_grad) return;
    an->ensure_grad();
    const std::vector<double>& g = self.grad;
    const auto av = a.values();
    for (std::size_t i = 0; i < g.size(); ++i)
      an->grad[i] += g[i] * dfdx_from(av[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinaryKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinaryKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinaryKind::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  check_defined(a, "scale");
  const auto av = a.values();
  std::vector<double> out(av.begin(), av.end());
  for (double& v : out) v *= factor;
  return make_node(a.shape(), std::move(out), {a}, [a, factor](detail::Node& self) {
    detail::Node* an = a.node();
    if (an == nullptr || !an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += factor * self.grad[i];
  });
}

Tensor tanh(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a,
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) shape_error("matmul inner dimensions", a.shape(), b.shape());

  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  return make_node({m, n}, std::move(out), {a, b}, [a, b, m, k, n](detail::Node& self) {
    const std::vector<double>& g = self.grad;
    detail::Node* an = a.node();
    detail::Node* bn = b.node();
    if (an != nullptr && an->requires_grad) {
      an->ensure_grad();
      const auto bv = b.values();
      // dA = g * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &g[i * n];
          const double* brow = &bv[p * n];
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          an->grad[i * k + p] += acc;
        }
    }
    if (bn != nullptr && bn->requires_grad) {
      bn->ensure_grad();
      const auto av = a.values();
      // dB = A^T * g
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
          const double x = av[i * k + p];
          const double* grow = &g[i * n];
          double* brow = &bn->grad[p * n];
          for (std::size_t j = 0; j < n; ++j) brow[j] += x * grow[j];
        }
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  check_defined(a, "log_softmax");
  const Shape& s = a.shape();
  const std::size_t v = s.back();
  if (v < 1) throw std::invalid_argument("log_softmax: empty last axis");
  const std::size_t rows = a.size() / v;
  const auto av = a.values();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * v];
    double mx = x[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    double acc = 0.0;
    for (std::size_t j = 0; j < v; ++j) acc += std::exp(x[j] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < v; ++j) out[r * v + j] = x[j] - lse;
  }
  return make_node(s, std::move(out), {a}, [a, rows, v](detail::Node& self) {
    detail::Node* an = a.node();
    if (an == nullptr || !an->requires_grad) return;
    an->ensure_grad();
    const std::vector<double>& g = self.grad;
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < v; ++j) gsum += g[r * v + j];
      for (std::size_t j = 0; j < v; ++j) {
        const double sm = std::exp(self.value[r * v + j]);
        an->grad[r * v + j] += g[r * v + j] - sm * gsum;
      }
    }
  });
}

Tensor add_rowvec(const Tensor& m, const Tensor& row) {
  check_defined(m, "add_rowvec");
  check_defined(row, "add_rowvec");
  if (m.shape().size() != 2 || row.shape().size() != 2 || row.rows() != 1 ||
      row.cols() != m.cols())
    shape_error("add_rowvec", m.shape(), row.shape());
  const std::size_t r = m.rows(), c = m.cols();
  const auto mv = m.values();
  const auto rv = row.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] + rv[j];
  return make_node({r, c}, std::move(out), {m, row}, [m, row, r, c](detail::Node& self) {
    const std::vector<double>& g = self.grad;
    detail::Node* mn = m.node();
    detail::Node* rn = row.node();
    if (mn != nullptr && mn->requires_grad) {
      mn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) mn->grad[i] += g[i];
    }
    if (rn != nullptr && rn->requires_grad) {
      rn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) rn->grad[j] += g[i * c + j];
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_defined(a, "concat_cols");
  check_defined(b, "concat_cols");
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.rows() != b.rows())
    shape_error("concat_cols", a.shape(), b.shape());
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(r * (ca + cb));
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(&av[i * ca], ca, &out[i * (ca + cb)]);
    std::copy_n(&bv[i * cb], cb, &out[i * (ca + cb) + ca]);
  }
  return make_node({r, ca + cb}, std::move(out), {a, b}, [a, b, r, ca, cb](detail::Node& self) {
    const std::vector<double>& g = self.grad;
    detail::Node* an = a.node();
    detail::Node* bn = b.node();
    if (an != nullptr && an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) an->grad[i * ca + j] += g[i * (ca + cb) + j];
    }
    if (bn != nullptr && bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) bn->grad[i * cb + j] += g[i * (ca + cb) + ca + j];
    }
  });
}

Tensor slice_row(const Tensor& m, std::size_t row) {
  check_defined(m, "slice_row");
  if (m.shape().size() != 2) throw std::invalid_argument("slice_row: tensor is not 2-d");
  if (row >= m.rows()) throw std::invalid_argument("slice_row: row out of range");
  const std::size_t c = m.cols();
  const auto mv = m.values();
  std::vector<double> out(mv.begin() + row * c, mv.begin() + (row + 1) * c);
  return make_node({1, c}, std::move(out), {m}, [m, row, c](detail::Node& self) {
    detail::Node* mn = m.node();
    if (mn == nullptr || !mn->requires_grad) return;
    mn->ensure_grad();
    for (std::size_t j = 0; j < c; ++j) mn->grad[row * c + j] += self.grad[j];
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const std::size_t c = rows.front().cols();
  for (const Tensor& r : rows) {
    check_defined(r, "stack_rows");
    if (r.shape().size() != 2 || r.rows() != 1 || r.cols() != c)
      shape_error("stack_rows", rows.front().shape(), r.shape());
  }
  const std::size_t n = rows.size();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto rv = rows[i].values();
    std::copy_n(rv.data(), c, &out[i * c]);
  }
  return make_node({n, c}, std::move(out), rows, [rows, c](detail::Node& self) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      detail::Node* rn = rows[i].node();
      if (rn == nullptr || !rn->requires_grad) continue;
      rn->ensure_grad();
      for (std::size_t j = 0; j < c; ++j) rn->grad[j] += self.grad[i * c + j];
    }
  });
}

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  const auto av = a.values();
  double acc = 0.0;
  for (double v : av) acc += v;
  return make_node({1}, {acc}, {a}, [a](detail::Node& self) {
    detail::Node* an = a.node();
    if (an == nullptr || !an->requires_grad) return;
    an->ensure_grad();
    const double g = self.grad[0];
    for (double& gv : an->grad) gv += g;
  });
}

Tensor mean(const Tensor& a) {
  check_defined(a, "mean");
  const auto av = a.values();
  double acc = 0.0;
  for (double v : av) acc += v;
  const double inv_n = 1.0 / static_cast<double>(av.size());
  return make_node({1}, {acc * inv_n}, {a}, [a, inv_n](detail::Node& self) {
    detail::Node* an = a.node();
    if (an == nullptr || !an->requires_grad) return;
    an->ensure_grad();
    const double g = self.grad[0] * inv_n;
    for (double& gv : an->grad) gv += g;
  });
}

void backward(const Tensor& loss) {
  check_defined(loss, "backward");
  detail::Node* root = loss.node();
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: loss is not scalar: " + shape_to_string(root->shape));
  if (!root->requires_grad)
    throw std::logic_error("backward: loss does not require grad");
  if (root->backward_done)
    throw std::logic_error("backward: already called on this graph; run a new forward pass");
  root->backward_done = true;

  // Iterative post-order DFS; parents recorded in op order keep this deterministic.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p != nullptr && p->requires_grad && visited.insert(p).second)
        stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps,
                               std::size_t max_coords, std::uint64_t seed) {
  Tensor probe = Tensor::from_values(x.shape(), {x.values().begin(), x.values().end()}, true);
  Tensor loss = f(probe);
  if (loss.size() != 1) throw std::invalid_argument("finite_difference_check: f must be scalar-valued");
  backward(loss);
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  std::vector<std::size_t> coords;
  const std::size_t n = x.size();
  if (max_coords == 0 || max_coords >= n) {
    coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
  } else {
    std::uint64_t s = seed;
    std::unordered_set<std::size_t> seen;
    while (coords.size() < max_coords) {
      s = mix64(s);
      const std::size_t i = static_cast<std::size_t>(s % n);
      if (seen.insert(i).second) coords.push_back(i);
    }
  }

  double worst = 0.0;
  NoGradGuard no_grad;
  std::vector<double> base(x.values().begin(), x.values().end());
  for (std::size_t i : coords) {
    std::vector<double> vplus = base, vminus = base;
    vplus[i] += eps;
    vminus[i] -= eps;
    const double fplus = f(Tensor::from_values(x.shape(), std::move(vplus))).item();
    const double fminus = f(Tensor::from_values(x.shape(), std::move(vminus))).item();
    const double fd = (fplus - fminus) / (2.0 * eps);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mtlcf
