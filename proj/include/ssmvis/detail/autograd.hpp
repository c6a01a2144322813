#pragma once

// Helpers for defining taped ops outside tensor.cpp (the fused scan lives in
// ssm-core).

#include <functional>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "ssmvis/tensor.hpp"

namespace ssmvis::detail {

using BackwardFn = std::function<void(const TensorImpl& out)>;

/// Gradient buffer of t, allocated (zeroed) on first use.
std::vector<double>& grad_buffer(TensorImpl& t);

bool needs_grad(const TensorImpl& t);

/// Throws NumericError naming `op` if any value is NaN or infinite.
void check_finite(std::span<const double> values, std::string_view op);

/// Wraps freshly computed values into a Tensor and records `fn` on the
/// active tape when any input needs a gradient. `fn` receives the output
/// impl (with its gradient populated) and must accumulate into the inputs
/// through grad_buffer().
Tensor finish(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
              std::string_view op, BackwardFn fn);

Tensor finish(Shape shape, std::vector<double> values, const std::vector<const Tensor*>& inputs,
              std::string_view op, BackwardFn fn);

}  // namespace ssmvis::detail
