#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Dense reverse-mode automatic differentiation over float64 tensors.
//
// A Tape records every operation of one forward pass. Values live on the tape;
// a Var is a cheap handle (tape pointer + node index). Tapes are built per
// forward pass and discarded afterwards.

namespace fedda::ad {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  /// Value of a single-element tensor.
  double item() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Accumulated gradient after Tape::backward; empty if none reached this node.
  std::span<const double> grad() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the upstream gradient of the node and adds into parents via accumulate().
  using BackwardFn = std::function<void(Tape&, std::span<const double> upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op node. `fn` is dropped when no parent requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

  /// Populates gradients of every ancestor of `loss`, which must be single-element.
  void backward(Var loss);

  /// Gradient buffer of node `id` (zero-initialized on first use). No-op target if
  /// the node does not require a gradient: returns an empty span.
  std::span<double> accumulate(std::size_t id);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::span<const double> grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var make(std::size_t id) { return Var(this, id); }

  std::vector<Node> nodes_;
};

// ---- differentiable operations -------------------------------------------

/// 3x3 cross-correlation, stride 1, zero padding 1.
/// input [C_in,H,W], kernel [C_out,C_in,3,3], bias [C_out] -> [C_out,H,W].
Var conv2d(Var input, Var kernel, Var bias);
Var relu(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var sum(Var x);
/// Mean over the spatial axes: [C,H,W] -> [C].
Var global_avg_pool(Var x);
/// Affine map: x [in], weight [out,in], bias [out] -> [out].
Var dense(Var x, Var weight, Var bias);
/// Mean over pixels of -log softmax(logits)[label]; logits [C,H,W], labels H*W row-major.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// Numerically stable BCE on a single logit with target in {0,1}.
Var binary_cross_entropy(Var logit, int target);
/// Sum of squared differences between x and a fixed reference of equal shape.
Var squared_distance(Var x, const Tensor& reference);

/// Softmax over the class axis of a [C,H,W] tensor (no tape).
Tensor softmax_channels(const Tensor& logits);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;

  AdamState() = default;
  /// Zero moments shaped like `params`.
  AdamState(AdamConfig cfg, std::span<const Tensor* const> params);

  bool operator==(const AdamState&) const = default;
};

/// One AdamW step: decoupled decay on the weights, bias-corrected moments.
/// grads[i] must have the same length as params[i]; an empty gradient is rejected.
void adam_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads,
               AdamState& state);

}  // namespace fedda::ad
