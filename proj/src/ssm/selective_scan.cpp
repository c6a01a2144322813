#include <algorithm>
#include <string>

#include "ssmvis/detail/autograd.hpp"
#include "ssmvis/detail/scalar_math.hpp"
#include "ssmvis/error.hpp"
#include "ssmvis/kernels.hpp"
#include "ssmvis/ssm.hpp"

namespace ssmvis::ssm {
namespace {

// Forward state kept for the backward pass. Per-step lane arrays are
// [L, d_inner * d_state].
struct ScanTrace {
  std::size_t length = 0;
  std::size_t d_inner = 0;
  std::size_t d_state = 0;
  std::vector<double> a_bar;
  std::vector<double> h;
  std::vector<double> y;
};

// Lane-parallel Blelloch scan. decay/drive hold `count` steps of `lanes`
// values each; on return drive[t] is the inclusive composition applied to
// h = 0, i.e. the state after step t.
void blelloch_affine_lanes(const std::vector<double>& decay, std::vector<double>& drive, std::size_t count,
                           std::size_t lanes) {
  const auto& kt = kernels::active();
  std::size_t padded = 1;
  while (padded < count) padded *= 2;
  std::vector<double> tree_decay(padded * lanes, 1.0);
  std::vector<double> tree_drive(padded * lanes, 0.0);
  std::copy(decay.begin(), decay.begin() + static_cast<std::ptrdiff_t>(count * lanes), tree_decay.begin());
  std::copy(drive.begin(), drive.begin() + static_cast<std::ptrdiff_t>(count * lanes), tree_drive.begin());

  auto dec = [&](std::size_t i) { return tree_decay.data() + i * lanes; };
  auto drv = [&](std::size_t i) { return tree_drive.data() + i * lanes; };

  // Up-sweep: node[i] <- node[i] o node[i - d].
  for (std::size_t d = 1; d < padded; d *= 2) {
    for (std::size_t i = 2 * d - 1; i < padded; i += 2 * d) {
      kt.mul_acc(dec(i), drv(i - d), drv(i), lanes);
      kt.mul(dec(i), dec(i - d), dec(i), lanes);
    }
  }
  // Down-sweep to exclusive prefixes.
  std::fill(dec(padded - 1), dec(padded - 1) + lanes, 1.0);
  std::fill(drv(padded - 1), drv(padded - 1) + lanes, 0.0);
  std::vector<double> left_decay(lanes), left_drive(lanes);
  for (std::size_t d = padded / 2; d >= 1; d /= 2) {
    for (std::size_t i = 2 * d - 1; i < padded; i += 2 * d) {
      std::copy(dec(i - d), dec(i - d) + lanes, left_decay.begin());
      std::copy(drv(i - d), drv(i - d) + lanes, left_drive.begin());
      std::copy(dec(i), dec(i) + lanes, dec(i - d));
      std::copy(drv(i), drv(i) + lanes, drv(i - d));
      // node[i] <- left o prefix
      for (std::size_t l = 0; l < lanes; ++l) {
        drv(i)[l] = left_decay[l] * drv(i)[l] + left_drive[l];
        dec(i)[l] = left_decay[l] * dec(i)[l];
      }
    }
    if (d == 1) break;
  }
  // Inclusive: step_t o exclusive_t, applied to h = 0.
  for (std::size_t t = 0; t < count; ++t) {
    double* out = drive.data() + t * lanes;
    const double* a = decay.data() + t * lanes;
    for (std::size_t l = 0; l < lanes; ++l) out[l] = a[l] * drv(t)[l] + out[l];
  }
}

ScanTrace run_scan(std::span<const double> A, std::span<const double> D, std::span<const double> x,
                   std::span<const double> B_steps, std::span<const double> C_steps,
                   std::span<const double> delta_steps, std::size_t d_inner, std::size_t d_state,
                   ScanAlgorithm algorithm) {
  const auto& kt = kernels::active();
  const std::size_t L = delta_steps.size();
  const std::size_t lanes = d_inner * d_state;
  ScanTrace tr;
  tr.length = L;
  tr.d_inner = d_inner;
  tr.d_state = d_state;
  tr.a_bar.resize(L * lanes);
  tr.h.resize(L * lanes);
  tr.y.resize(L * d_inner);

  std::vector<double> scaled(lanes);
  for (std::size_t t = 0; t < L; ++t) {
    const double dt = delta_steps[t];
    if (!(dt > 0.0)) {
      throw NumericError("selective_scan: step size must be > 0 at t=" + std::to_string(t));
    }
    for (std::size_t i = 0; i < lanes; ++i) scaled[i] = dt * A[i];
    kt.exp(scaled.data(), tr.a_bar.data() + t * lanes, lanes);
    // drive = delta_t * B_t[k] * x_t[c], stored in h until the recurrence runs
    double* drive = tr.h.data() + t * lanes;
    const double* b = B_steps.data() + t * d_state;
    for (std::size_t c = 0; c < d_inner; ++c) {
      const double scale = dt * x[t * d_inner + c];
      for (std::size_t k = 0; k < d_state; ++k) drive[c * d_state + k] = scale * b[k];
    }
  }

  if (algorithm == ScanAlgorithm::sequential) {
    for (std::size_t t = 1; t < L; ++t) {
      // h_t = a_bar_t * h_{t-1} + drive_t
      kt.mul_acc(tr.a_bar.data() + t * lanes, tr.h.data() + (t - 1) * lanes, tr.h.data() + t * lanes, lanes);
    }
  } else {
    blelloch_affine_lanes(tr.a_bar, tr.h, L, lanes);
  }

  for (std::size_t t = 0; t < L; ++t) {
    const double* ht = tr.h.data() + t * lanes;
    const double* ct = C_steps.data() + t * d_state;
    for (std::size_t c = 0; c < d_inner; ++c) {
      tr.y[t * d_inner + c] = kt.dot(ct, ht + c * d_state, d_state) + D[c] * x[t * d_inner + c];
    }
  }
  return tr;
}

struct ScanGrads {
  std::vector<double> A, D, x, B_steps, C_steps, delta;
};

ScanGrads run_scan_backward(const ScanTrace& tr, std::span<const double> A, std::span<const double> D,
                            std::span<const double> x, std::span<const double> B_steps,
                            std::span<const double> C_steps, std::span<const double> delta_steps,
                            std::span<const double> gy) {
  const std::size_t L = tr.length, d = tr.d_inner, n = tr.d_state, lanes = d * n;
  ScanGrads g{std::vector<double>(lanes, 0.0), std::vector<double>(d, 0.0),
              std::vector<double>(L * d, 0.0), std::vector<double>(L * n, 0.0),
              std::vector<double>(L * n, 0.0), std::vector<double>(L, 0.0)};
  std::vector<double> carry(lanes, 0.0);
  for (std::size_t t = L; t-- > 0;) {
    const double* ht = tr.h.data() + t * lanes;
    const double* hprev = t > 0 ? tr.h.data() + (t - 1) * lanes : nullptr;
    const double* abar = tr.a_bar.data() + t * lanes;
    const double* bt = B_steps.data() + t * n;
    const double* ct = C_steps.data() + t * n;
    const double dt = delta_steps[t];
    double* gbt = g.B_steps.data() + t * n;
    double* gct = g.C_steps.data() + t * n;
    double gdelta = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double gyc = gy[t * d + c];
      const double xc = x[t * d + c];
      g.D[c] += gyc * xc;
      double gxc = gyc * D[c];
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = c * n + k;
        gct[k] += gyc * ht[i];
        const double ghi = gyc * ct[k] + carry[i];
        if (hprev != nullptr) {
          const double ga = ghi * hprev[i] * abar[i];
          gdelta += ga * A[i];
          g.A[i] += ga * dt;
        }
        gdelta += ghi * bt[k] * xc;
        gbt[k] += ghi * dt * xc;
        gxc += ghi * dt * bt[k];
        carry[i] = abar[i] * ghi;
      }
      g.x[t * d + c] += gxc;
    }
    g.delta[t] = gdelta;
  }
  return g;
}

void check_x(const Tensor& x, std::size_t d_inner) {
  if (!x.defined() || x.rank() != 2 || x.dim(1) != d_inner) {
    throw ShapeError("selective_scan: x must be [L, " + std::to_string(d_inner) + "], got " +
                     (x.defined() ? shape_str(x.shape()) : std::string{"<undefined>"}));
  }
}

}  // namespace

Tensor selective_scan(const SSMParams& params, const SelectiveProjections& proj, const Tensor& x,
                      ScanAlgorithm algorithm) {
  params.validate();
  const std::size_t d = params.d_inner(), n = params.d_state();
  proj.validate(d, n);
  check_x(x, d);
  const std::size_t L = x.dim(0);
  const auto& kt = kernels::active();

  // Input-dependent B_t, C_t, delta_t.
  auto B_steps = std::make_shared<std::vector<double>>(L * n);
  auto C_steps = std::make_shared<std::vector<double>>(L * n);
  auto delta_pre = std::make_shared<std::vector<double>>(L);
  auto delta_steps = std::make_shared<std::vector<double>>(L);
  const double* xs = x.data().data();
  for (std::size_t t = 0; t < L; ++t) {
    const double* xt = xs + t * d;
    for (std::size_t k = 0; k < n; ++k) {
      (*B_steps)[t * n + k] = kt.dot(proj.W_B.data().data() + k * d, xt, d);
      (*C_steps)[t * n + k] = kt.dot(proj.W_C.data().data() + k * d, xt, d);
    }
    const double s = kt.dot(proj.W_delta.data().data(), xt, d) + proj.delta_bias[0];
    (*delta_pre)[t] = s;
    (*delta_steps)[t] = detail::softplus(s);
  }
  detail::check_finite(*B_steps, "selective_scan (B projection)");
  detail::check_finite(*C_steps, "selective_scan (C projection)");
  detail::check_finite(*delta_steps, "selective_scan (delta projection)");

  auto trace = std::make_shared<ScanTrace>(run_scan(params.A.data(), params.D.data(), x.data(), *B_steps,
                                                    *C_steps, *delta_steps, d, n, algorithm));
  std::vector<double> y = trace->y;

  auto pA = params.A.impl();
  auto pD = params.D.impl();
  auto px = x.impl();
  auto pWB = proj.W_B.impl();
  auto pWC = proj.W_C.impl();
  auto pWd = proj.W_delta.impl();
  auto pbias = proj.delta_bias.impl();
  return detail::finish(
      {L, d}, std::move(y),
      {&x, &params.A, &params.D, &proj.W_B, &proj.W_C, &proj.W_delta, &proj.delta_bias},
      "selective_scan",
      [=](const detail::TensorImpl& out) {
        using detail::grad_buffer;
        using detail::needs_grad;
        const auto& k = kernels::active();
        ScanGrads g = run_scan_backward(*trace, pA->data, pD->data, px->data, *B_steps, *C_steps,
                                        *delta_steps, out.grad);
        std::vector<double> gx = std::move(g.x);
        std::vector<double> gWB(n * d, 0.0), gWC(n * d, 0.0), gWd(d, 0.0);
        double gbias = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
          const double* xt = px->data.data() + t * d;
          double* gxt = gx.data() + t * d;
          for (std::size_t s = 0; s < n; ++s) {
            const double gb = g.B_steps[t * n + s];
            const double gc = g.C_steps[t * n + s];
            k.axpy(gb, xt, gWB.data() + s * d, d);
            k.axpy(gc, xt, gWC.data() + s * d, d);
            k.axpy(gb, pWB->data.data() + s * d, gxt, d);
            k.axpy(gc, pWC->data.data() + s * d, gxt, d);
          }
          const double gs = g.delta[t] * detail::sigmoid((*delta_pre)[t]);
          gbias += gs;
          k.axpy(gs, xt, gWd.data(), d);
          k.axpy(gs, pWd->data.data(), gxt, d);
        }
        auto accumulate = [&](detail::TensorImpl& target, const std::vector<double>& grad) {
          if (!needs_grad(target)) return;
          auto& buf = grad_buffer(target);
          k.axpy(1.0, grad.data(), buf.data(), grad.size());
        };
        accumulate(*px, gx);
        accumulate(*pA, g.A);
        accumulate(*pD, g.D);
        accumulate(*pWB, gWB);
        accumulate(*pWC, gWC);
        accumulate(*pWd, gWd);
        accumulate(*pbias, std::vector<double>{gbias});
      });
}

Tensor parallel_selective_scan(const SSMParams& params, const SelectiveProjections& proj,
                               const Tensor& x) {
  return selective_scan(params, proj, x, ScanAlgorithm::parallel);
}

std::vector<double> scan_with_steps(const SSMParams& params, std::span<const double> x,
                                    std::span<const double> B_steps, std::span<const double> C_steps,
                                    std::span<const double> delta_steps, ScanAlgorithm algorithm) {
  params.validate();
  const std::size_t d = params.d_inner(), n = params.d_state(), L = delta_steps.size();
  if (L == 0 || x.size() != L * d || B_steps.size() != L * n || C_steps.size() != L * n) {
    throw ShapeError("scan_with_steps: x must be [L, d_inner], B/C [L, d_state], delta [L]");
  }
  return run_scan(params.A.data(), params.D.data(), x, B_steps, C_steps, delta_steps, d, n, algorithm).y;
}

AffineStep compose(AffineStep later, AffineStep earlier) {
  return {later.decay * earlier.decay, later.decay * earlier.drive + later.drive};
}

void inclusive_affine_scan(std::span<AffineStep> steps) {
  if (steps.empty()) return;
  std::vector<double> decay(steps.size()), drive(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    decay[i] = steps[i].decay;
    drive[i] = steps[i].drive;
  }
  // The lane scan reports only the drive applied to a zero state; the
  // composed decay is the running product.
  blelloch_affine_lanes(decay, drive, steps.size(), 1);
  double product = 1.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    product *= decay[i];
    steps[i] = {product, drive[i]};
  }
}

}  // namespace ssmvis::ssm
