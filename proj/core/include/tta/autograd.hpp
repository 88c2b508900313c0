#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string name, Tensor value, bool requires_grad = true);

  void zero_grad();
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives
/// and has not been cleared.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// reverse index order is a valid topological order for backward().
/// Single-threaded; never share a tape between threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Constant that aliases `value`; the caller keeps it alive for the tape's lifetime.
  Var constant_ref(const Tensor& value);
  /// Differentiable input that is not a Parameter; read its gradient with grad().
  Var leaf(Tensor value);
  /// Binds a parameter. Re-binding the same parameter returns the same node,
  /// so shared weights accumulate one gradient.
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Accumulated gradient of a leaf node (zeros if none reached it).
  Tensor grad(Var v) const;

  /// Propagates d(loss)/d(node) to every leaf and bound parameter. Repeated
  /// calls accumulate into leaves and parameters.
  void backward(Var loss);
  /// Zeroes leaf gradients and the gradients of all bound parameters.
  void zero_grad();
  /// Drops every node.
  void clear();
  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward,
             std::string_view op_name);
  void accumulate(Var v, const Tensor& g);
  /// Mutable gradient buffer for `v`, zero-initialized on first use.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    const Tensor* alias = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;

    const Tensor& get() const { return alias ? *alias : value; }
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> bound_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Image tensors are [C,H,W]; scalars are shape [1].

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float factor);
Var sum(Var a);
Var mean(Var a);

Var leaky_relu(Var x, float slope = 0.2f);
Var tanh(Var x);
Var sigmoid(Var x);
/// log(clamp(x, lo, hi)); gradient is zero where the clamp is active.
Var log_clamped(Var x, float lo, float hi);

/// Cross-correlation of [C_in,H,W] with kernel [C_out,C_in,kH,kW].
Var conv2d(Var input, Var kernel, int stride, int padding);
Var conv2d(Var input, Var kernel, Var bias, int stride, int padding);
/// Per-pixel channel map with kernel [C_out,C,1,1] and bias [C_out].
Var conv2d_1x1(Var input, Var kernel, Var bias);
/// Nearest-neighbour 2x spatial upsampling.
Var upsample2x(Var x);
/// Channel-wise concatenation; `a` occupies the leading channels.
Var concat_channels(Var a, Var b);

/// Element-mean absolute difference.
Var l1_distance(Var a, Var b);
/// Element-mean squared difference.
Var mse_loss(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Plain-tensor conveniences (no tape), accumulated in double.
double l1_distance(const Tensor& a, const Tensor& b);
double mse_loss(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor conv2d_1x1(const Tensor& input, const Tensor& kernel, const Tensor& bias);

}  // namespace tta
