#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hrformer {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major binary64 array with optional gradient storage.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
/// Operations in ops.hpp take tensors by const reference and return fresh
/// tensors. When a GradTape is active on the current thread and any input
/// requires a gradient, the op records a backward rule on that tape.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return node_->shape; }
  Index dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index size() const { return static_cast<Index>(node_->data.size()); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double* raw() { return node_->data.data(); }
  const double* raw() const { return node_->data.data(); }

  double& operator[](Index i) { return node_->data[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }

  // Multi-index access, row-major. Bounds checked.
  double& at(std::initializer_list<Index> index);
  double at(std::initializer_list<Index> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true);

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient view; zeros of the right size if nothing has been accumulated.
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  // Deep copy of values; result has no gradient and does not require one.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Used by op implementations.
  std::vector<double>& mutable_grad();
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of executed differentiable ops.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  void record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  // Clears every gradient referenced by the tape, seeds d(loss)=1 and replays
  // the records in reverse order. Leaf gradients are therefore written
  // exactly once per call.
  void backward(Tensor loss);

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// Makes a tape the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

// True when an active tape exists and at least one input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace hrformer
