#include "ssmvis/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ssmvis/detail/autograd.hpp"
#include "ssmvis/error.hpp"
#include "ssmvis/kernels.hpp"

namespace ssmvis {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (const auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(ssmvis::numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor{std::move(impl)};
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (ssmvis::numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(ssmvis::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor{std::move(impl)};
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() { return detail::grad_buffer(*impl_); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor{std::move(impl)};
}

// ---- tape --------------------------------------------------------------------

void Tape::record(Entry entry) { entries_.push_back(std::move(entry)); }

void Tape::clear() {
  for (auto& e : entries_) {
    e.output->on_tape = false;
    e.output->grad.clear();
    e.output->grad.shrink_to_fit();
  }
  entries_.clear();
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string{"<undefined>"}));
  }
  if (!loss.impl()->on_tape) {
    throw std::logic_error(
        "backward: loss is not connected to the active tape (already consumed, or recorded "
        "under NoGradGuard / on another thread)");
  }
  auto& loss_grad = detail::grad_buffer(*loss.impl());
  loss_grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
  clear();
}

Tape& active_tape() {
  thread_local Tape tape;
  return tape;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) { active_tape().backward(loss); }

// ---- autograd helpers ------------------------------------------------------

namespace detail {

std::vector<double>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

bool needs_grad(const TensorImpl& t) { return t.requires_grad; }

void check_finite(std::span<const double> values, std::string_view op) {
  for (const double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string{op});
  }
}

Tensor finish(Shape shape, std::vector<double> values, const std::vector<const Tensor*>& inputs,
              std::string_view op, BackwardFn fn) {
  check_finite(values, op);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool record = false;
  if (g_grad_enabled) {
    for (const Tensor* in : inputs) {
      if (in != nullptr && in->defined() && needs_grad(*in->impl())) {
        record = true;
        break;
      }
    }
  }
  if (record) {
    impl->requires_grad = true;
    impl->on_tape = true;
    Tape::Entry entry;
    for (const Tensor* in : inputs) {
      if (in != nullptr && in->defined()) entry.inputs.push_back(in->impl());
    }
    entry.output = impl;
    entry.backward = std::move(fn);
    active_tape().record(std::move(entry));
  }
  return Tensor{std::move(impl)};
}

Tensor finish(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
              std::string_view op, BackwardFn fn) {
  return finish(std::move(shape), std::move(values), std::vector<const Tensor*>(inputs), op,
                std::move(fn));
}

}  // namespace detail
}  // namespace ssmvis
