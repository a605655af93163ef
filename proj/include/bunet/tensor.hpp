#pragma once

// Dense NCHW tensors templated on scalar type. float is the training precision,
// double the precision used by finite-difference gradient checks. Copies are
// shallow (shared storage, shared autograd identity); clone() makes a deep copy.

#include <array>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace bunet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// Shape of a rank 1..4 tensor. Rank-4 shapes are NCHW; rank-2 shapes are (N, C)
// (used by the channel-attention 1-d convolution); rank-1 shapes hold flat
// parameter vectors and scalars.
struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    if (dims.size() < 1 || dims.size() > 4) fail("Shape: rank must be 1..4");
    rank = static_cast<int>(dims.size());
    int i = 0;
    for (int v : dims) {
      if (v <= 0) fail("Shape: extents must be positive, got " + std::to_string(v));
      d[i++] = v;
    }
  }

  static Shape nchw(int n, int c, int h, int w) { return Shape{n, c, h, w}; }
  static Shape scalar() { return Shape{1}; }

  std::int64_t numel() const {
    std::int64_t p = 1;
    for (int i = 0; i < rank; ++i) p *= d[i];
    return p;
  }

  int operator[](int i) const { return d[i]; }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  // NCHW accessors, valid for rank-4 shapes only.
  int n() const { return d[0]; }
  int c() const { return d[1]; }
  int h() const { return d[2]; }
  int w() const { return d[3]; }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank; ++i) os << (i ? "," : "") << d[i];
    os << ')';
    return os.str();
  }
};

// Storage + autograd identity shared by all shallow copies of a tensor.
template <typename S>
struct TensorState {
  Shape shape;
  std::shared_ptr<std::vector<S>> data;
  // Gradient buffer; allocated for leaves when they are registered on the tape
  // and filled by backward(). Shared with the tape node so every alias sees it.
  std::shared_ptr<std::vector<S>> grad;
  bool requires_grad = false;
  int node = -1;             // tape node id, -1 when not on the tape
  std::uint64_t epoch = 0;   // tape epoch the node id belongs to
};

template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

  // Default-constructed tensors are "absent": no storage, rank 0. Used for
  // optional inputs (e.g. a convolution without bias).
  Tensor() : st_(std::make_shared<TensorState<S>>()) {}

  explicit Tensor(const Shape& shape, S fill = S(0))
      : st_(std::make_shared<TensorState<S>>()) {
    st_->shape = shape;
    st_->data = std::make_shared<std::vector<S>>(shape.numel(), fill);
  }

  static Tensor zeros(const Shape& s) { return Tensor(s, S(0)); }
  static Tensor ones(const Shape& s) { return Tensor(s, S(1)); }
  static Tensor full(const Shape& s, S v) { return Tensor(s, v); }
  static Tensor scalar(S v) { return Tensor(Shape::scalar(), v); }

  static Tensor of(const Shape& s, std::vector<S> values) {
    if (static_cast<std::int64_t>(values.size()) != s.numel())
      fail("Tensor::of: " + std::to_string(values.size()) + " values for shape " + s.str());
    Tensor t;
    t.st_->shape = s;
    t.st_->data = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  bool valid() const { return st_->data != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int rank() const { return st_->shape.rank; }
  std::int64_t numel() const { return valid() ? st_->shape.numel() : 0; }

  S* data() { return st_->data->data(); }
  const S* data() const { return st_->data->data(); }
  std::vector<S>& vec() { return *st_->data; }
  const std::vector<S>& vec() const { return *st_->data; }
  const std::shared_ptr<std::vector<S>>& buffer() const { return st_->data; }

  S item() const {
    if (numel() != 1) fail("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return (*st_->data)[0];
  }

  ArrayMap array() { return ArrayMap(data(), numel()); }
  ConstArrayMap array() const { return ConstArrayMap(data(), numel()); }

  Tensor& set_requires_grad(bool v) {
    st_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return st_->requires_grad; }

  // Gradient buffer, or nullptr when backward has not reached this tensor.
  const std::vector<S>* grad() const { return st_->grad.get(); }
  std::vector<S>& grad_or_fail() const {
    if (!st_->grad) fail("Tensor: gradient buffer not populated; run backward first");
    return *st_->grad;
  }

  // Deep copy of the values; the clone starts detached from the tape.
  Tensor clone() const {
    Tensor t;
    t.st_->shape = st_->shape;
    if (st_->data) t.st_->data = std::make_shared<std::vector<S>>(*st_->data);
    return t;
  }

  TensorState<S>& state() { return *st_; }
  const TensorState<S>& state() const { return *st_; }
  const std::shared_ptr<TensorState<S>>& state_ptr() const { return st_; }

 private:
  std::shared_ptr<TensorState<S>> st_;
};

using TrainTensor = Tensor<float>;   // training precision
using CheckTensor = Tensor<double>;  // gradient-check precision

}  // namespace bunet
