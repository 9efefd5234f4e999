#include "posedepth/tensor.hpp"

#include <sstream>

namespace posedepth {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::InvalidAxis: return "InvalidAxis";
    case ErrorCode::NonIntegralOutputSize: return "NonIntegralOutputSize";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::TapeConsumed: return "TapeConsumed";
    case ErrorCode::TapeMismatch: return "TapeMismatch";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::EmptySourceList: return "EmptySourceList";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonPositivePrediction: return "NonPositivePrediction";
    case ErrorCode::EmptyEvaluationMask: return "EmptyEvaluationMask";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::ConfigParseError: return "ConfigParseError";
    case ErrorCode::ManifestMismatch: return "ManifestMismatch";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape, Index size) {
  if (shape.empty()) throw Error(ErrorCode::ShapeMismatch, "tensor rank must be at least 1");
  for (Index e : shape) {
    if (e <= 0) throw Error(ErrorCode::ShapeMismatch, "non-positive extent in " + to_string(shape));
  }
  if (numel(shape) != size) {
    throw Error(ErrorCode::ShapeMismatch,
                "buffer of " + std::to_string(size) + " values for shape " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const Buffer>(Buffer::Zero(1))) {}

Tensor::Tensor(Shape shape, Buffer data) : shape_(std::move(shape)) {
  validate_shape(shape_, data.size());
  data_ = std::make_shared<const Buffer>(std::move(data));
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values) : shape_(std::move(shape)) {
  Buffer b(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) b[i++] = v;
  validate_shape(shape_, b.size());
  data_ = std::make_shared<const Buffer>(std::move(b));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const Index n = posedepth::numel(shape);
  return Tensor(std::move(shape), Buffer::Constant(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, Buffer::Constant(1, value)); }

Index Tensor::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw Error(ErrorCode::InvalidAxis, "axis " + std::to_string(axis) + " for shape " + to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

double Tensor::at(std::initializer_list<Index> index) const {
  if (static_cast<Index>(index.size()) != rank()) {
    throw Error(ErrorCode::ShapeMismatch, "index rank differs from tensor rank");
  }
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape_[axis]) throw Error(ErrorCode::IndexOutOfRange, "tensor index");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  t.generation_ = 0;
  return t;
}

Tensor Tensor::with_shape(Shape shape) const {
  validate_shape(shape, numel());
  Tensor t = detached();
  t.shape_ = std::move(shape);
  return t;
}

// ---------------------------------------------------------------------------

Tensor Tape::make(Shape shape, std::shared_ptr<const Buffer> data, int node) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  t.tape_ = this;
  t.node_ = node;
  t.generation_ = generation_;
  return t;
}

void Tape::check_member(const Tensor& t) const {
  if (t.tape_ != this) throw Error(ErrorCode::TapeMismatch, "tensor belongs to another tape");
  if (t.generation_ != generation_) throw Error(ErrorCode::TapeMismatch, "tensor recorded before tape reset");
}

Tensor Tape::leaf(const Tensor& value) {
  if (consumed_) throw Error(ErrorCode::TapeConsumed, "recording on a consumed tape");
  nodes_.push_back(Node{value.shape(), {}, nullptr});
  return make(value.shape(), value.shared_data(), static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::leaf(Shape shape, Buffer data) { return leaf(Tensor(std::move(shape), std::move(data))); }

Tensor Tape::record(Shape shape, Buffer value, const std::vector<Tensor>& inputs, BackwardFn backward) {
  if (consumed_) throw Error(ErrorCode::TapeConsumed, "recording on a consumed tape");
  validate_shape(shape, value.size());
  Node node{shape, {}, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) {
      check_member(in);
      node.inputs.push_back(in.node_);
    } else {
      node.inputs.push_back(-1);
    }
  }
  nodes_.push_back(std::move(node));
  return make(std::move(shape), std::make_shared<const Buffer>(std::move(value)),
              static_cast<int>(nodes_.size()) - 1);
}

Gradients Tape::backward(const Tensor& loss) {
  if (consumed_) throw Error(ErrorCode::TapeConsumed, "backward already ran on this tape");
  if (loss.numel() != 1) throw Error(ErrorCode::NonScalarLoss, "loss of shape " + to_string(loss.shape()));
  check_member(loss);
  consumed_ = true;

  Gradients out;
  out.tape_ = this;
  out.generation_ = generation_;
  out.grads_.resize(nodes_.size());
  out.shapes_.reserve(nodes_.size());
  for (const Node& n : nodes_) out.shapes_.push_back(n.shape);

  auto ensure = [&](int id) -> Buffer* {
    Buffer& g = out.grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = Buffer::Zero(numel(nodes_[static_cast<std::size_t>(id)].shape));
    return &g;
  };
  ensure(loss.node_)->setConstant(1.0);

  std::vector<Buffer*> slots;
  for (int id = loss.node_; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    const Buffer& g = out.grads_[static_cast<std::size_t>(id)];
    if (!node.backward || g.size() == 0) continue;
    slots.assign(node.inputs.size(), nullptr);
    bool any = false;
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (node.inputs[i] >= 0) {
        slots[i] = ensure(node.inputs[i]);
        any = true;
      }
    }
    if (any) node.backward(g, slots);
  }
  // Every leaf gets a buffer, reached or not.
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].backward) ensure(static_cast<int>(id));
  }
  return out;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  ++generation_;
}

const Buffer& Gradients::buffer(const Tensor& t) const {
  if (t.tape() != tape_ || t.node_id() < 0 || static_cast<std::size_t>(t.node_id()) >= grads_.size())
    throw Error(ErrorCode::TapeMismatch, "gradient requested for a tensor outside this tape");
  const Buffer& g = grads_[static_cast<std::size_t>(t.node_id())];
  if (g.size() == 0) {
    static thread_local Buffer zeros;
    zeros = Buffer::Zero(t.numel());
    return zeros;
  }
  return g;
}

Tensor Gradients::of(const Tensor& t) const { return Tensor(t.shape(), buffer(t)); }

Tape* common_tape(std::span<const Tensor> inputs) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    if (tape && tape != t.tape()) throw Error(ErrorCode::TapeMismatch, "inputs recorded on different tapes");
    tape = t.tape();
  }
  return tape;
}

}  // namespace posedepth
