#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "posedepth/error.hpp"

namespace posedepth {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Buffer = Eigen::ArrayXd;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

/// Immutable dense float64 array, row-major. A tensor either is a constant
/// (no tape) or refers to one node of exactly one Tape.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Buffer data);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index numel() const noexcept { return data_->size(); }
  bool empty() const noexcept { return shape_.empty(); }

  const Buffer& data() const noexcept { return *data_; }
  std::shared_ptr<const Buffer> shared_data() const noexcept { return data_; }
  double operator[](Index flat) const { return (*data_)[flat]; }
  double at(std::initializer_list<Index> index) const;
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  int node_id() const noexcept { return node_; }

  /// Same values, no tape.
  Tensor detached() const;
  /// Same buffer viewed with another shape of equal size. Keeps the tape
  /// connection only through posedepth::reshape.
  Tensor with_shape(Shape shape) const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const Buffer> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
  std::uint64_t generation_ = 0;
};

/// Callback computing input gradients from the output gradient. Entries of
/// `grad_inputs` are null for inputs that do not require gradients; non-null
/// buffers must be accumulated into, never overwritten.
using BackwardFn =
    std::function<void(const Buffer& grad_output, std::span<Buffer* const> grad_inputs)>;

/// Gradient buffers produced by Tape::backward.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. `t`, shaped like `t`. Unreached nodes yield zeros.
  Tensor of(const Tensor& t) const;
  const Buffer& buffer(const Tensor& t) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::uint64_t generation_ = 0;
  std::vector<Buffer> grads_;
  std::vector<Shape> shapes_;
};

/// Ordered record of differentiable operations. Single-threaded; tensors
/// hold a raw pointer to their tape, so the tape must outlive them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(const Tensor& value);
  Tensor leaf(Shape shape, Buffer data);

  /// Appends an operation node. Inputs without gradients are kept as null
  /// slots so the callback sees one entry per input.
  Tensor record(Shape shape, Buffer value, const std::vector<Tensor>& inputs, BackwardFn backward);

  /// Reverse-topological accumulation from a single-element loss. May be
  /// called once per recording; call reset() before reusing the tape.
  Gradients backward(const Tensor& loss);

  void reset();
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Checks that `t` is live on this tape (not from a reset generation).
  void check_member(const Tensor& t) const;

 private:
  struct Node {
    Shape shape;
    std::vector<int> inputs;  // -1 for inputs without gradients
    BackwardFn backward;
  };

  Tensor make(Shape shape, std::shared_ptr<const Buffer> data, int node);

  std::vector<Node> nodes_;
  bool consumed_ = false;
  std::uint64_t generation_ = 1;
};

/// Returns the tape shared by all gradient-carrying inputs, or null when none
/// requires gradients. Mixing tapes raises TapeMismatch.
Tape* common_tape(std::span<const Tensor> inputs);

}  // namespace posedepth
