#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vtu {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised by every operation whose operands have incompatible extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Storage aligned for the widest packet Eigen was built with, so vectorized
/// kernels split work the same way on every run.
template <typename Scalar>
using Buffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
struct TensorNode {
  Shape shape;
  Buffer<Scalar> data;
  Buffer<Scalar> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  Buffer<Scalar>& grad_buffer() {
    if (grad.empty()) grad.resize(data.size());
    return grad;
  }
};

/// Dense row-major N-d array with optional gradient tracking.
///
/// Copies share storage, like a handle. Use clone() for an independent copy
/// and detach() for a copy that is cut off from gradient tracking.
template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;

  Tensor() : node_(std::make_shared<Node>()) { node_->data.assign(1, Scalar(0)); }
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, const std::vector<Scalar>& data);
  Tensor(Shape shape, Buffer<Scalar> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, std::vector<Scalar>{v}); }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    return Tensor(std::move(shape), std::vector<Scalar>(values));
  }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return static_cast<Index>(node_->data.size()); }

  std::span<const Scalar> data() const { return node_->data; }
  std::span<Scalar> mutable_data() { return node_->data; }
  const Scalar* ptr() const { return node_->data.data(); }
  Scalar* mutable_ptr() { return node_->data.data(); }
  Scalar operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }
  Scalar item() const;

  /// Row-major element access by multi-index.
  Scalar at(std::initializer_list<Index> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::span<const Scalar> grad() const { return node_->grad_buffer(); }
  Tensor grad_tensor() const { return Tensor(shape(), node_->grad_buffer()); }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const { return Tensor(shape(), node_->data); }
  Tensor detach() const { return clone(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Buffer<Other> out(node_->data.begin(), node_->data.end());
    return Tensor<Other>(shape(), std::move(out));
  }

  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> array() const {
    return {ptr(), size()};
  }

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Entries are appended in execution order, so replaying them in reverse
/// visits every node only after all of its consumers. A tape may be
/// replayed once; recording a new forward pass re-arms it.
template <typename Scalar>
class Tape {
 public:
  struct Entry {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> backward);
  void backward(const Tensor<Scalar>& loss);
  void clear() {
    entries_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

template <typename Scalar>
Tape<Scalar>*& active_tape();

/// Makes `tape` the recording target for the current thread while in scope.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(active_tape<Scalar>()) {
    active_tape<Scalar>() = &tape;
  }
  ~TapeScope() { active_tape<Scalar>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace vtu
