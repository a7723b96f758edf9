#include "vtu/tensor.hpp"

#include <sstream>

namespace vtu {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
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

namespace {
void check_extents(const Shape& shape) {
  for (Index e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}
}  // namespace

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : node_(std::make_shared<Node>()) {
  check_extents(shape);
  node_->data.assign(static_cast<std::size_t>(shape_size(shape)), fill);
  node_->shape = std::move(shape);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, const std::vector<Scalar>& data)
    : Tensor(std::move(shape), Buffer<Scalar>(data.begin(), data.end())) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Buffer<Scalar> data) : node_(std::make_shared<Node>()) {
  check_extents(shape);
  if (static_cast<Index>(data.size()) != shape_size(shape))
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank()) throw ShapeError("index rank mismatch");
  Index flat = 0;
  std::size_t k = 0;
  for (Index i : idx) {
    const Index extent = node_->shape[k++];
    if (i < 0 || i >= extent) throw std::out_of_range("tensor index out of range");
    flat = flat * extent + i;
  }
  return node_->data[static_cast<std::size_t>(flat)];
}

template <typename Scalar>
void Tape<Scalar>::record(const char* op, std::function<void()> backward) {
  if (consumed_) {
    entries_.clear();
    consumed_ = false;
  }
  entries_.push_back({op, std::move(backward)});
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (consumed_)
    throw std::logic_error("tape already replayed; run a new forward pass before backward()");
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("loss was not recorded on the tape");
  loss.node()->grad_buffer()[0] += Scalar(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  entries_.clear();
  consumed_ = true;
}

template <typename Scalar>
Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float>*& active_tape<float>();
template Tape<double>*& active_tape<double>();

}  // namespace vtu
