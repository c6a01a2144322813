#pragma once

// Test-only finite-difference oracle. Central differences on 64-bit values,
// evaluated with recording disabled so the tape under test is never touched.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssmvis/rng.hpp"
#include "ssmvis/tensor.hpp"

namespace ssmvis::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "name[index]: tape=..., fd=..."
  std::size_t checked = 0;
};

// |a - b| / max(|a|, |b|, floor). The floor keeps entries that are zero up
// to finite-difference noise from dominating.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, NamedTensors params,
                                       double h = 1e-5, double floor = 1e-6) {
  for (auto& [name, p] : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  active_tape().clear();
  backward(loss_fn());

  GradCheckResult result;
  NoGradGuard no_grad;
  for (auto& [name, p] : params) {
    const std::vector<double> tape_grad = p.grad();
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = rel_err(tape_grad[i], fd, floor);
      ++result.checked;
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst = name + "[" + std::to_string(i) + "]: tape=" + std::to_string(tape_grad[i]) +
                       ", fd=" + std::to_string(fd);
      }
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace ssmvis::testing
