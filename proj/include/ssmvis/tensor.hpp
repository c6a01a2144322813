#pragma once

// Dense row-major float64 tensors with a thread-local reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same storage, the way model
// parameters are shared between a parameter set, the forward pass, and the
// optimizer. Use clone() or detach() for an independent copy.
//
// Ops record onto the calling thread's tape when gradient recording is
// enabled and at least one operand requires a gradient. backward(loss)
// replays the tape once, accumulates into leaf gradients, and frees the
// tape; calling it again on the same loss is an error.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ssmvis {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  bool on_tape = false;  // produced by a recorded op not yet consumed by backward
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access; meant for leaves (parameters, inputs). Writing into
  // a tensor that already took part in a recorded op invalidates the tape.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t flat_index) const { return impl_->data[flat_index]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zeros when no gradient has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered log of recorded ops for one forward pass.
class Tape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl>;
  struct Entry {
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    std::function<void(const detail::TensorImpl& out)> backward;
  };

  void record(Entry entry);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear();
  void backward(const Tensor& loss);

 private:
  std::vector<Entry> entries_;
};

Tape& active_tape();
bool grad_enabled();

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& loss);

// ---- ops -------------------------------------------------------------------

enum class ElementwiseKind { add, sub, mul, exp, silu, softplus };
enum class ReduceKind { sum, mean };

/// Binary kinds broadcast numpy-style (trailing axes aligned, size-1 axes
/// stretch). Unary kinds ignore b.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// out.flat[i] = index[i] < 0 ? 0 : a.flat[index[i]]. Covers permutations,
/// reversal, slicing, patch extraction and im2col with zero padding.
Tensor gather(const Tensor& a, std::span<const std::ptrdiff_t> index, Shape out_shape);

/// Stacks equal-shape tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

Tensor reduce(ReduceKind kind, const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor sum(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);

/// Softmax over the last axis.
Tensor softmax(const Tensor& a);

/// x [rows, d] scaled to unit RMS per row, then multiplied by gain [d].
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-5);

/// Mean negative log-likelihood of integer labels under row-wise softmax.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace ssmvis
