#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtlcf {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return value.size(); }
  void ensure_grad();
};

}  // namespace detail

// Dense 64-bit tensor with reverse-mode autodiff. A Tensor is a cheap handle
// onto a graph node; every op appends a node to a dynamic tape that is
// rebuilt on each forward pass and released when the handles go out of scope.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rows() const;  // 2-d convenience
  std::size_t cols() const;

  std::span<const double> values() const;
  // Mutable access to raw values. Only legal between training steps
  // (parameter updates); mutating mid-graph invalidates recorded gradients.
  std::span<double> values_mut();

  double item() const;  // scalar tensors only
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool requires_grad);  // leaf tensors only
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();   // zero the buffer if present
  void clear_grad();  // drop the buffer entirely

  // Deep copy of values; the copy is a fresh leaf sharing no storage.
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }

  friend void backward(const Tensor& loss);
  friend Tensor make_node(Shape shape, std::vector<double> values,
                          const std::vector<Tensor>& inputs,
                          std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// While alive, newly created nodes never require grad and record no tape.
// Used for evaluation passes where only values are needed.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Low-level node constructor for ops whose gradient is computed externally
// (e.g. lattice losses). `backward_fn` receives the result node and must
// accumulate into the inputs' grads via add_to_grad.
Tensor make_node(Shape shape, std::vector<double> values,
                 const std::vector<Tensor>& inputs,
                 std::function<void(detail::Node&)> backward_fn);

void add_to_grad(const Tensor& t, std::span<const double> delta);

// Elementwise ops. Binary ops accept equal shapes or a scalar on either side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// [M x K] * [K x N] -> [M x N]
Tensor matmul(const Tensor& a, const Tensor& b);

// Row-stable log softmax over the last axis, computed with a max shift.
Tensor log_softmax(const Tensor& a);

// [M x N] + [1 x N], bias-style broadcast over rows.
Tensor add_rowvec(const Tensor& m, const Tensor& row);

// [M x Na], [M x Nb] -> [M x (Na+Nb)]
Tensor concat_cols(const Tensor& a, const Tensor& b);

Tensor slice_row(const Tensor& m, std::size_t row);         // -> [1 x N]
Tensor stack_rows(const std::vector<Tensor>& rows);         // N x [1 x C] -> [N x C]

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar

// Fills grad buffers of every requires_grad leaf reachable from `loss`.
// Rejects non-scalar losses and repeated calls on the same graph.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `max_coords` > 0 checks a seeded random subset of coordinates.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps,
                               std::size_t max_coords = 0,
                               std::uint64_t seed = 0);

}  // namespace mtlcf
