#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Var is a handle to a value node. Vars created from plain tensors are
// constants; Vars created by GradTape::leaf() are trainable leaves. An op
// records a backward closure on the tape only when at least one input
// requires a gradient, so pure inference never touches a tape. Backward
// replays the recorded closures in reverse creation order, which is a valid
// topological order and visits every recorded op exactly once.

#include <functional>
#include <memory>
#include <vector>

#include "saot/tensor.hpp"

namespace saot {

template <typename T>
class GradTape;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  GradTape<T>* tape = nullptr;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  // Implicit on purpose: a plain tensor is a constant operand.
  Var(Tensor<T> value);  // NOLINT(google-explicit-constructor)

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  GradTape<T>* tape() const { return node_ ? node_->tape : nullptr; }
  bool valid() const { return node_ != nullptr; }

  // Accumulated gradient; a zero tensor when nothing flowed here.
  Tensor<T> grad() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  friend class GradTape<T>;
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Registers a trainable leaf; its gradient starts at zero.
  Var<T> leaf(Tensor<T> value);

  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape. Loss must be a finite
  // single-element tensor.
  void backward(const Var<T>& loss);

  std::size_t op_count() const noexcept { return ops_.size(); }
  const std::vector<Var<T>>& leaves() const noexcept { return leaves_; }

 private:
  std::vector<std::function<void()>> ops_;
  std::vector<Var<T>> leaves_;
};

// Backward callback for record_op: grad_out is d(loss)/d(output); for each
// input, input_grads[i] points at its gradient buffer or is null when that
// input needs no gradient.
template <typename T>
using BackwardFn = std::function<void(const Tensor<T>& grad_out, std::vector<Tensor<T>*>& input_grads)>;

// Wraps an already-computed value as the output of a differentiable op.
// Records on the inputs' tape only if some input requires a gradient.
template <typename T>
Var<T> record_op(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn<T> backward);

enum class Activation { Identity, Relu, Sigmoid, Exp };

Activation parse_activation(const std::string& name);
const char* activation_name(Activation kind);

namespace ad {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
// x * s for a single-element Var s.
template <typename T> Var<T> scale_by(const Var<T>& x, const Var<T>& s);
// Adds b (shape [last extent of x]) to every trailing-axis slice of x.
template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& b);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// Zero-padded same-size cross-correlation, x [h,w,cin], k [kh,kw,cin,cout].
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& k);
template <typename T> Var<T> activate(const Var<T>& x, Activation kind);
template <typename T> Var<T> abs(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows);
// Concatenates along the last axis; leading extents must agree.
template <typename T> Var<T> concat_last(const Var<T>& a, const Var<T>& b);

}  // namespace ad

// Value-only helpers (no tape).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k);
template <typename T> Tensor<T> activate(const Tensor<T>& x, Activation kind);

}  // namespace saot
