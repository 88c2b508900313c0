#include "tta/autograd.hpp"

#include <algorithm>

namespace tta {

Parameter::Parameter(std::string name_, Tensor value_, bool requires_grad_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.shape(), 0.0f),
      requires_grad(requires_grad_) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0f);
  } else {
    grad.fill(0.0f);
  }
}

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw Error("variable does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  check_finite(value.data(), "constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.alias = &value;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  check_finite(value.data(), "leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0f);
  Node n;
  n.alias = &p.value;
  n.requires_grad = p.requires_grad;
  n.param = &p;
  nodes_.push_back(std::move(n));
  auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  bound_.emplace(&p, id);
  return Var(this, id);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id_].get();
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id_];
  if (n.param) return n.param->grad;
  if (n.grad.empty()) return Tensor(n.get().shape(), 0.0f);
  return n.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward,
                 std::string_view op_name) {
  check_finite(value.data(), op_name);
  bool needs_grad = false;
  for (Var in : inputs) {
    check_owned(in);
    needs_grad = needs_grad || nodes_[in.id_].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id_];
  if (n.grad.empty()) n.grad = Tensor(n.get().shape(), 0.0f);
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  check_owned(v);
  if (!nodes_[v.id_].requires_grad) return;
  check_finite(g.data(), "gradient");
  Tensor& buf = grad_buffer(v);
  require_same_shape(buf, g, "gradient accumulation");
  float* dst = buf.raw();
  const float* src = g.raw();
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + to_string(value(loss).shape()));
  }
  if (!nodes_[loss.id_].requires_grad) return;

  accumulate(loss, Tensor::scalar(1.0f));
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      float* dst = n.param->grad.raw();
      const float* src = n.grad.raw();
      for (std::size_t j = 0; j < n.grad.size(); ++j) dst[j] += src[j];
      n.grad = Tensor();
    } else if (n.backward) {
      // Move the gradient out first: the callback may only touch lower ids.
      Tensor g = std::move(n.grad);
      n.grad = Tensor();
      n.backward(*this, g);
    }
    // Plain leaves keep their accumulated gradient.
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.param) {
      n.param->zero_grad();
    } else if (!n.grad.empty()) {
      n.grad.fill(0.0f);
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  bound_.clear();
}

}  // namespace tta
