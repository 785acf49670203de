#pragma once

// Dense row-major float64 tensors with tape-free reverse-mode autodiff.
//
// Each op result holds strong references to its inputs and a closure that
// pushes its gradient back into them. backward() walks that DAG once in
// reverse topological order and then releases the interior nodes. Leaf
// tensors (parameters) keep their accumulated gradient until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace punr {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false, std::string name = {});
  static Tensor full(Shape shape, double fill, bool requires_grad = false, std::string name = {});
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false,
                     std::string name = {});
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const double> values() const { return node_->value; }
  // Direct write access; only for leaves between graph constructions
  // (optimizer updates, finite differences, loading checkpoints).
  std::span<double> mutable_values() { return node_->value; }

  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const;

  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const std::string& name() const { return node_->name; }
  void set_name(std::string name) { node_->name = std::move(name); }

  bool is_leaf() const { return !node_->backward; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Independent leaf with copied values; keeps name and requires_grad.
  Tensor clone() const;
  // Leaf sharing no graph history; never requires grad.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on this thread for the lifetime of the guard.
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

// Accumulates d(loss)/d(t) into every reachable tensor that requires grad,
// then frees the interior of the graph. Throws ShapeError for non-scalars.
void backward(const Tensor& loss);

}  // namespace punr
