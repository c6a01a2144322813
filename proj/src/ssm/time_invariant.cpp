#include <cmath>
#include <string>

#include "ssmvis/detail/scalar_math.hpp"
#include "ssmvis/error.hpp"
#include "ssmvis/ssm.hpp"

namespace ssmvis::ssm {

SSMParams SSMParams::initial(std::size_t d_inner, std::size_t d_state, bool requires_grad) {
  std::vector<double> a(d_inner * d_state);
  for (std::size_t c = 0; c < d_inner; ++c) {
    for (std::size_t k = 0; k < d_state; ++k) a[c * d_state + k] = -static_cast<double>(k + 1);
  }
  return {Tensor::from({d_inner, d_state}, std::move(a), requires_grad),
          Tensor::full({d_inner}, 1.0, requires_grad)};
}

void SSMParams::validate() const {
  if (!A.defined() || !D.defined() || A.rank() != 2 || D.rank() != 1 || D.dim(0) != A.dim(0)) {
    throw ShapeError("SSMParams: A must be [d_inner, d_state] and D [d_inner]");
  }
  for (const double a : A.data()) {
    if (!(a < 0.0)) throw NumericError("SSMParams: A must be strictly negative, found " + std::to_string(a));
  }
}

void TimeInvariantSSM::validate() const {
  const std::size_t n = d_inner * d_state;
  if (n == 0 || A_bar.size() != n || B_bar.size() != n || C.size() != n || D.size() != d_inner) {
    throw ShapeError("TimeInvariantSSM: arrays do not match d_inner=" + std::to_string(d_inner) +
                     ", d_state=" + std::to_string(d_state));
  }
}

SelectiveProjections SelectiveProjections::initial(std::size_t d_inner, std::size_t d_state, Rng& rng,
                                                   bool requires_grad) {
  const double std_in = 1.0 / std::sqrt(static_cast<double>(d_inner));
  auto random = [&](Shape shape, double stddev) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
  };
  SelectiveProjections p;
  p.W_B = random({d_state, d_inner}, std_in);
  p.W_C = random({d_state, d_inner}, std_in);
  p.W_delta = random({1, d_inner}, 0.1 * std_in);
  p.delta_bias = Tensor::from({1}, {detail::softplus_inverse(0.1)}, requires_grad);
  return p;
}

void SelectiveProjections::validate(std::size_t d_inner, std::size_t d_state) const {
  auto check = [](const Tensor& t, Shape want, const char* name) {
    if (!t.defined() || t.shape() != want) {
      throw ShapeError(std::string{"SelectiveProjections: "} + name + " must be " + shape_str(want) +
                       (t.defined() ? ", got " + shape_str(t.shape()) : std::string{}));
    }
  };
  check(W_B, {d_state, d_inner}, "W_B");
  check(W_C, {d_state, d_inner}, "W_C");
  check(W_delta, {1, d_inner}, "W_delta");
  check(delta_bias, {1}, "delta_bias");
}

Discretized discretize(std::span<const double> A, std::span<const double> B,
                       std::span<const double> delta, std::size_t d_state) {
  if (d_state == 0 || A.size() != B.size() || A.size() != delta.size() * d_state) {
    throw ShapeError("discretize: A, B must be [d_inner, d_state] and delta [d_inner]");
  }
  Discretized out{std::vector<double>(A.size()), std::vector<double>(A.size())};
  for (std::size_t c = 0; c < delta.size(); ++c) {
    const double dt = delta[c];
    if (!(dt > 0.0)) throw NumericError("discretize: delta must be > 0, got " + std::to_string(dt));
    for (std::size_t k = 0; k < d_state; ++k) {
      const std::size_t i = c * d_state + k;
      if (!(A[i] < 0.0)) throw NumericError("discretize: A must be < 0, got " + std::to_string(A[i]));
      out.A_bar[i] = std::exp(dt * A[i]);
      out.B_bar[i] = dt * B[i];
    }
  }
  return out;
}

Tensor ssm_recurrence(const TimeInvariantSSM& model, const Tensor& x) {
  model.validate();
  if (x.rank() != 2 || x.dim(1) != model.d_inner) {
    throw ShapeError("ssm_recurrence: x must be [L, " + std::to_string(model.d_inner) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t L = x.dim(0), d = model.d_inner, n = model.d_state;
  std::vector<double> h(d * n, 0.0);
  std::vector<double> y(L * d);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      const double xt = x[t * d + c];
      double acc = model.D[c] * xt;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = c * n + k;
        h[i] = model.A_bar[i] * h[i] + model.B_bar[i] * xt;
        acc += model.C[i] * h[i];
      }
      y[t * d + c] = acc;
    }
  }
  return Tensor::from({L, d}, std::move(y));
}

Tensor s4_kernel(const TimeInvariantSSM& model, std::size_t length) {
  if (length == 0) throw ShapeError("s4_kernel: length must be >= 1");
  model.validate();
  const std::size_t d = model.d_inner, n = model.d_state;
  std::vector<double> kernel(d * length);
  for (std::size_t c = 0; c < d; ++c) {
    // power[k] = A_bar^j B_bar for the current j
    std::vector<double> power(model.B_bar.begin() + static_cast<std::ptrdiff_t>(c * n),
                              model.B_bar.begin() + static_cast<std::ptrdiff_t>((c + 1) * n));
    for (std::size_t j = 0; j < length; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        acc += model.C[c * n + k] * power[k];
        power[k] *= model.A_bar[c * n + k];
      }
      kernel[c * length + j] = acc;
    }
  }
  return Tensor::from({d, length}, std::move(kernel));
}

std::vector<double> conv_apply(std::span<const double> kernel, std::span<const double> x, double D) {
  if (kernel.size() != x.size()) {
    throw ShapeError("conv_apply: kernel length " + std::to_string(kernel.size()) +
                     " != input length " + std::to_string(x.size()));
  }
  const std::size_t L = x.size();
  std::vector<double> y(L);
  for (std::size_t t = 0; t < L; ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= t; ++j) acc += kernel[j] * x[t - j];
    y[t] = acc + D * x[t];
  }
  return y;
}

Tensor conv_apply_channels(const Tensor& kernel, const Tensor& x, std::span<const double> D) {
  if (kernel.rank() != 2 || x.rank() != 2 || kernel.dim(0) != x.dim(1) || kernel.dim(1) != x.dim(0) ||
      D.size() != x.dim(1)) {
    throw ShapeError("conv_apply_channels: kernel " + shape_str(kernel.shape()) + ", x " +
                     shape_str(x.shape()) + ", D length " + std::to_string(D.size()));
  }
  const std::size_t L = x.dim(0), d = x.dim(1);
  std::vector<double> y(L * d);
  std::vector<double> column(L);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t t = 0; t < L; ++t) column[t] = x[t * d + c];
    const auto out = conv_apply(kernel.data().subspan(c * L, L), column, D[c]);
    for (std::size_t t = 0; t < L; ++t) y[t * d + c] = out[t];
  }
  return Tensor::from({L, d}, std::move(y));
}

}  // namespace ssmvis::ssm
