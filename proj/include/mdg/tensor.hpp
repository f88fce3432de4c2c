#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdg {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

// One recorded operation. `backward` receives the output gradient and one
// gradient buffer per input (nullptr when that input needs no gradient).
struct Node {
  std::uint64_t seq = 0;
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const double>, std::span<std::vector<double>*>)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;
  std::shared_ptr<Node> node;
};

}  // namespace detail

/// Dense row-major array of doubles with an optional link into the
/// reverse-mode tape. Copies are shallow handles, like a shared buffer;
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  bool is_scalar() const { return impl_->data.size() == 1; }

  std::span<const double> data() const { return impl_->data; }
  // Only leaves may be mutated in place (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->node == nullptr; }

  std::span<const double> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  // Internal hooks for op implementations.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables tape recording on this thread while alive.
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

using BackwardFn = std::function<void(std::span<const double>, std::span<std::vector<double>*>)>;

/// Builds an op output, validating finiteness and recording a tape node when
/// any input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

/// Reverse traversal of the recorded operations reachable from one scalar.
class Tape {
 public:
  explicit Tape(const Tensor& root);

  // Nodes in strict reverse topological order (latest recorded first).
  const std::vector<std::shared_ptr<detail::Node>>& order() const { return order_; }

  // Runs the traversal, accumulating into every leaf that requires a gradient.
  void run(double seed = 1.0);

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::Node>> order_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
void backward(const Tensor& loss);

}  // namespace mdg
