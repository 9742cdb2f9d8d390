#include "hrformer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "hrformer/error.hpp"

namespace hrformer {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<detail::TensorNode>()) {
  node_->shape = {0};
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::TensorNode>()) {
  const Index n = numel(shape);
  node_->shape = std::move(shape);
  node_->data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::TensorNode>()) {
  const Index n = numel(shape);
  if (n != static_cast<Index>(values.size())) {
    throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(n) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Index Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

namespace {
Index flat_index(const Shape& shape, std::initializer_list<Index> index) {
  if (index.size() != shape.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " does not match shape " + to_string(shape));
  }
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape[axis]) throw DimensionError("index out of range for shape " + to_string(shape));
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<Index> index) { return (*this)[flat_index(shape(), index)]; }
double Tensor::at(std::initializer_list<Index> index) const { return (*this)[flat_index(shape(), index)]; }

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::grad_tensor() const {
  auto g = grad();
  return Tensor(shape(), std::vector<double>(g.begin(), g.end()));
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

std::vector<double>& Tensor::mutable_grad() {
  if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->data); }

namespace {
thread_local GradTape* current_tape = nullptr;
}

GradTape* active_tape() { return current_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (current_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t && t->requires_grad(); });
}

void GradTape::record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  output.set_requires_grad(true);
  records_.push_back(Record{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

void GradTape::backward(Tensor loss) {
  if (loss.size() != 1) throw DimensionError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  std::unordered_set<const detail::TensorNode*> seen;
  auto reset = [&](Tensor t) {
    if (seen.insert(t.node().get()).second) {
      auto& g = t.mutable_grad();
      std::fill(g.begin(), g.end(), 0.0);
    }
  };
  for (const auto& r : records_) {
    for (const auto& in : r.inputs) reset(in);
    reset(r.output);
  }
  reset(loss);
  loss.mutable_grad()[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

}  // namespace hrformer
