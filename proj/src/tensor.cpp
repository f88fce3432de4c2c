#include "mdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mdg {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_next_seq = 1;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->shape = {1};
  impl_->data = {0.0};
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) throw ShapeError("axis out of range for shape " + shape_str(impl_->shape));
  return impl_->shape[axis];
}

std::span<double> Tensor::mutable_data() {
  if (impl_->node) throw GraphError("cannot mutate a non-leaf tensor in place");
  return impl_->data;
}

double Tensor::item() const {
  if (impl_->data.size() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(impl_->shape));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (impl_->node) throw GraphError("requires_grad can only be set on leaves");
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad && !impl_->node;
  return Tensor(std::move(impl));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output in ") + op);
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any && t_grad_enabled) {
    auto node = std::make_shared<detail::Node>();
    node->seq = t_next_seq++;
    node->op = op;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.impl());
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward) {
  return make_result(op, std::move(shape), std::move(data), std::vector<Tensor>(inputs), std::move(backward));
}

Tape::Tape(const Tensor& root) : root_(root) {
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack;
  if (root.impl()->node) stack.push_back(root.impl()->node);
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(node.get()).second) continue;
    for (const auto& in : node->inputs) {
      if (in->node && !seen.count(in->node.get())) stack.push_back(in->node);
    }
    order_.push_back(std::move(node));
  }
  // Inputs are always recorded before their consumers.
  std::sort(order_.begin(), order_.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });
}

void Tape::run(double seed) {
  const auto& root = root_.impl();
  if (!root->node) {
    if (!root->requires_grad) throw GraphError("backward on a tensor detached from any parameter");
    if (root->grad.empty()) root->grad.assign(root->data.size(), 0.0);
    root->grad[0] += seed;
    return;
  }

  // Interior gradients are keyed by the producing node, leaf gradients by the leaf.
  std::unordered_map<const void*, std::vector<double>> grads;
  grads[root->node.get()] = std::vector<double>(root->data.size(), seed);
  std::vector<std::vector<double>*> buffers;

  for (const auto& node : order_) {
    auto it = grads.find(node.get());
    if (it == grads.end()) continue;
    const std::vector<double> out_grad = std::move(it->second);
    grads.erase(it);

    buffers.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      if (!in->requires_grad) continue;
      const void* key = in->node ? static_cast<const void*>(in->node.get()) : static_cast<const void*>(in.get());
      auto& buf = grads[key];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      buffers[i] = &buf;
    }
    node->backward(out_grad, buffers);
  }

  // Whatever remains belongs to leaves.
  for (const auto& node : order_) {
    for (const auto& in : node->inputs) {
      if (in->node || !in->requires_grad) continue;
      auto it = grads.find(in.get());
      if (it == grads.end()) continue;
      if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
      for (std::size_t k = 0; k < it->second.size(); ++k) in->grad[k] += it->second[k];
      grads.erase(it);
    }
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  Tape(loss).run(1.0);
}

}  // namespace mdg
