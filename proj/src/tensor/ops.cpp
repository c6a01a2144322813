#include <algorithm>
#include <cmath>
#include <string>

#include "ssmvis/detail/autograd.hpp"
#include "ssmvis/detail/scalar_math.hpp"
#include "ssmvis/error.hpp"
#include "ssmvis/kernels.hpp"
#include "ssmvis/tensor.hpp"

namespace ssmvis {

using detail::finish;
using detail::grad_buffer;
using detail::needs_grad;
using detail::TensorImpl;
using detail::sigmoid;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string{op} + ": undefined operand");
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat offset into a source of shape `src` for every element of `out`.
std::vector<std::size_t> broadcast_offsets(const Shape& src, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    const std::size_t src_axis_from_end = rank - 1 - i;
    if (src_axis_from_end < src.size()) {
      const std::size_t d = src[src.size() - 1 - src_axis_from_end];
      stride[i] = d == 1 ? 0 : s;
      s *= d;
    }
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    offsets[flat] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

Tensor binary_op(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  require_defined(a, "elementwise");
  require_defined(b, "elementwise");
  const auto& kt = kernels::active();
  const char* name = kind == ElementwiseKind::add ? "add" : kind == ElementwiseKind::sub ? "sub" : "mul";
  ImplPtr pa = a.impl();
  ImplPtr pb = b.impl();

  if (a.shape() == b.shape()) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    switch (kind) {
      case ElementwiseKind::add: kt.add(pa->data.data(), pb->data.data(), out.data(), n); break;
      case ElementwiseKind::sub: kt.sub(pa->data.data(), pb->data.data(), out.data(), n); break;
      default: kt.mul(pa->data.data(), pb->data.data(), out.data(), n); break;
    }
    return finish(a.shape(), std::move(out), {&a, &b}, name, [kind, pa, pb](const TensorImpl& o) {
      const auto& k = kernels::active();
      const std::size_t n = o.grad.size();
      if (needs_grad(*pa)) {
        auto& ga = grad_buffer(*pa);
        if (kind == ElementwiseKind::mul) k.mul_acc(o.grad.data(), pb->data.data(), ga.data(), n);
        else k.axpy(1.0, o.grad.data(), ga.data(), n);
      }
      if (needs_grad(*pb)) {
        auto& gb = grad_buffer(*pb);
        if (kind == ElementwiseKind::mul) k.mul_acc(o.grad.data(), pa->data.data(), gb.data(), n);
        else k.axpy(kind == ElementwiseKind::sub ? -1.0 : 1.0, o.grad.data(), gb.data(), n);
      }
    });
  }

  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto oa = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(a.shape(), out_shape));
  auto ob = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(b.shape(), out_shape));
  const std::size_t n = numel(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa->data[(*oa)[i]];
    const double y = pb->data[(*ob)[i]];
    out[i] = kind == ElementwiseKind::add ? x + y : kind == ElementwiseKind::sub ? x - y : x * y;
  }
  return finish(std::move(out_shape), std::move(out), {&a, &b}, name,
                [kind, pa, pb, oa, ob](const TensorImpl& o) {
                  const std::size_t n = o.grad.size();
                  if (needs_grad(*pa)) {
                    auto& ga = grad_buffer(*pa);
                    for (std::size_t i = 0; i < n; ++i) {
                      ga[(*oa)[i]] += kind == ElementwiseKind::mul ? o.grad[i] * pb->data[(*ob)[i]]
                                                                   : o.grad[i];
                    }
                  }
                  if (needs_grad(*pb)) {
                    auto& gb = grad_buffer(*pb);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double g = o.grad[i];
                      gb[(*ob)[i]] += kind == ElementwiseKind::mul ? g * pa->data[(*oa)[i]]
                                      : kind == ElementwiseKind::sub ? -g
                                                                     : g;
                    }
                  }
                });
}

Tensor unary_op(ElementwiseKind kind, const Tensor& a) {
  require_defined(a, "elementwise");
  ImplPtr pa = a.impl();
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  switch (kind) {
    case ElementwiseKind::exp: {
      kernels::active().exp(pa->data.data(), out.data(), n);
      auto keep = std::make_shared<std::vector<double>>(out);
      return finish(a.shape(), std::move(out), {&a}, "exp", [pa, keep](const TensorImpl& o) {
        if (!needs_grad(*pa)) return;
        kernels::active().mul_acc(o.grad.data(), keep->data(), grad_buffer(*pa).data(),
                                  o.grad.size());
      });
    }
    case ElementwiseKind::silu: {
      for (std::size_t i = 0; i < n; ++i) out[i] = pa->data[i] * sigmoid(pa->data[i]);
      return finish(a.shape(), std::move(out), {&a}, "silu", [pa](const TensorImpl& o) {
        if (!needs_grad(*pa)) return;
        auto& ga = grad_buffer(*pa);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const double x = pa->data[i];
          const double s = sigmoid(x);
          ga[i] += o.grad[i] * s * (1.0 + x * (1.0 - s));
        }
      });
    }
    case ElementwiseKind::softplus: {
      for (std::size_t i = 0; i < n; ++i) out[i] = detail::softplus(pa->data[i]);
      return finish(a.shape(), std::move(out), {&a}, "softplus", [pa](const TensorImpl& o) {
        if (!needs_grad(*pa)) return;
        auto& ga = grad_buffer(*pa);
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * sigmoid(pa->data[i]);
      });
    }
    default: break;
  }
  throw ShapeError("elementwise: binary kind needs two operands");
}

}  // namespace

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  switch (kind) {
    case ElementwiseKind::add:
    case ElementwiseKind::sub:
    case ElementwiseKind::mul: return binary_op(kind, a, b);
    default: return unary_op(kind, a);
  }
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(ElementwiseKind::mul, a, b); }
Tensor exp(const Tensor& a) { return unary_op(ElementwiseKind::exp, a); }
Tensor silu(const Tensor& a) { return unary_op(ElementwiseKind::silu, a); }
Tensor softplus(const Tensor& a) { return unary_op(ElementwiseKind::softplus, a); }
Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  ImplPtr pa = a.impl();
  std::vector<double> out(pa->data);
  for (auto& v : out) v *= factor;
  return finish(a.shape(), std::move(out), {&a}, "scale", [pa, factor](const TensorImpl& o) {
    if (!needs_grad(*pa)) return;
    kernels::active().axpy(factor, o.grad.data(), grad_buffer(*pa).data(), o.grad.size());
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  ImplPtr pa = a.impl();
  ImplPtr pb = b.impl();
  std::vector<double> out(m * n);
  kernels::gemm_nn(m, k, n, pa->data.data(), pb->data.data(), out.data());
  return finish({m, n}, std::move(out), {&a, &b}, "matmul", [pa, pb, m, k, n](const TensorImpl& o) {
    if (needs_grad(*pa)) {
      kernels::gemm_nt_acc(m, n, k, o.grad.data(), pb->data.data(), grad_buffer(*pa).data());
    }
    if (needs_grad(*pb)) {
      kernels::gemm_tn_acc(m, k, n, pa->data.data(), o.grad.data(), grad_buffer(*pb).data());
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  ImplPtr pa = a.impl();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = pa->data[i * c + j];
  }
  return finish({c, r}, std::move(out), {&a}, "transpose", [pa, r, c](const TensorImpl& o) {
    if (!needs_grad(*pa)) return;
    auto& ga = grad_buffer(*pa);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += o.grad[j * r + i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  ImplPtr pa = a.impl();
  return finish(std::move(shape), pa->data, {&a}, "reshape", [pa](const TensorImpl& o) {
    if (!needs_grad(*pa)) return;
    kernels::active().axpy(1.0, o.grad.data(), grad_buffer(*pa).data(), o.grad.size());
  });
}

Tensor gather(const Tensor& a, std::span<const std::ptrdiff_t> index, Shape out_shape) {
  require_defined(a, "gather");
  if (numel(out_shape) != index.size()) {
    throw ShapeError("gather: " + std::to_string(index.size()) + " indices for output shape " +
                     shape_str(out_shape));
  }
  ImplPtr pa = a.impl();
  const auto limit = static_cast<std::ptrdiff_t>(a.numel());
  auto idx = std::make_shared<std::vector<std::ptrdiff_t>>(index.begin(), index.end());
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = index[i];
    if (src >= limit) throw ShapeError("gather: index " + std::to_string(src) + " out of range");
    out[i] = src < 0 ? 0.0 : pa->data[static_cast<std::size_t>(src)];
  }
  return finish(std::move(out_shape), std::move(out), {&a}, "gather", [pa, idx](const TensorImpl& o) {
    if (!needs_grad(*pa)) return;
    auto& ga = grad_buffer(*pa);
    for (std::size_t i = 0; i < idx->size(); ++i) {
      const auto src = (*idx)[i];
      if (src >= 0) ga[static_cast<std::size_t>(src)] += o.grad[i];
    }
  });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack: no tensors");
  const Shape& inner = parts[0].shape();
  std::vector<const Tensor*> inputs;
  std::vector<ImplPtr> impls;
  std::vector<double> out;
  out.reserve(parts.size() * numel(inner));
  for (const auto& p : parts) {
    require_defined(p, "stack");
    if (p.shape() != inner) {
      throw ShapeError("stack: shape " + shape_str(p.shape()) + " differs from " + shape_str(inner));
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
    inputs.push_back(&p);
    impls.push_back(p.impl());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  const std::size_t chunk = numel(inner);
  return finish(std::move(shape), std::move(out), inputs, "stack", [impls, chunk](const TensorImpl& o) {
    for (std::size_t i = 0; i < impls.size(); ++i) {
      if (!needs_grad(*impls[i])) continue;
      kernels::active().axpy(1.0, o.grad.data() + i * chunk, grad_buffer(*impls[i]).data(), chunk);
    }
  });
}

Tensor reduce(ReduceKind kind, const Tensor& a, std::optional<std::size_t> axis) {
  require_defined(a, "reduce");
  ImplPtr pa = a.impl();
  const bool is_mean = kind == ReduceKind::mean;
  if (!axis) {
    double total = 0.0;
    for (const double v : pa->data) total += v;
    const double count = static_cast<double>(a.numel());
    const double value = is_mean ? total / count : total;
    return finish({}, {value}, {&a}, is_mean ? "mean" : "sum", [pa, is_mean, count](const TensorImpl& o) {
      if (!needs_grad(*pa)) return;
      const double g = is_mean ? o.grad[0] / count : o.grad[0];
      for (auto& v : grad_buffer(*pa)) v += g;
    });
  }
  if (*axis >= a.rank()) {
    throw ShapeError("reduce: axis " + std::to_string(*axis) + " out of range for shape " +
                     shape_str(a.shape()));
  }
  const Shape& in = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < *axis; ++i) outer *= in[i];
  for (std::size_t i = *axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = in[*axis];
  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (i != *axis) out_shape.push_back(in[i]);
  }
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = pa->data.data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (is_mean) {
    for (auto& v : out) v /= static_cast<double>(len);
  }
  const double factor = is_mean ? 1.0 / static_cast<double>(len) : 1.0;
  return finish(std::move(out_shape), std::move(out), {&a}, is_mean ? "mean" : "sum",
                [pa, outer, inner, len, factor](const TensorImpl& o) {
                  if (!needs_grad(*pa)) return;
                  auto& ga = grad_buffer(*pa);
                  for (std::size_t b = 0; b < outer; ++b) {
                    for (std::size_t l = 0; l < len; ++l) {
                      kernels::active().axpy(factor, o.grad.data() + b * inner,
                                             ga.data() + (b * len + l) * inner, inner);
                    }
                  }
                });
}

Tensor sum(const Tensor& a, std::optional<std::size_t> axis) { return reduce(ReduceKind::sum, a, axis); }
Tensor mean(const Tensor& a, std::optional<std::size_t> axis) { return reduce(ReduceKind::mean, a, axis); }

Tensor softmax(const Tensor& a) {
  require_defined(a, "softmax");
  if (a.rank() == 0) throw ShapeError("softmax needs rank >= 1");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.numel() / cols;
  ImplPtr pa = a.impl();
  auto out = std::make_shared<std::vector<double>>(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = pa->data.data() + r * cols;
    double* y = out->data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - mx;
    kernels::active().exp(y, y, cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += y[j];
    for (std::size_t j = 0; j < cols; ++j) y[j] /= total;
  }
  std::vector<double> values = *out;
  return finish(a.shape(), std::move(values), {&a}, "softmax", [pa, out, rows, cols](const TensorImpl& o) {
    if (!needs_grad(*pa)) return;
    auto& ga = grad_buffer(*pa);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = out->data() + r * cols;
      const double* g = o.grad.data() + r * cols;
      const double inner = kernels::active().dot(g, s, cols);
      for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += s[j] * (g[j] - inner);
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_defined(x, "rms_norm");
  require_defined(gain, "rms_norm");
  if (x.rank() != 2 || gain.rank() != 1 || gain.dim(0) != x.dim(1)) {
    throw ShapeError("rms_norm: shapes " + shape_str(x.shape()) + " and " + shape_str(gain.shape()) +
                     " do not match");
  }
  const std::size_t rows = x.dim(0), d = x.dim(1);
  ImplPtr px = x.impl();
  ImplPtr pg = gain.impl();
  auto inv_rms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = px->data.data() + r * d;
    const double ms = kernels::active().dot(xr, xr, d) / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(ms + eps);
    (*inv_rms)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * inv * pg->data[j];
  }
  return finish({rows, d}, std::move(out), {&x, &gain}, "rms_norm",
                [px, pg, inv_rms, rows, d](const TensorImpl& o) {
                  const bool gx = needs_grad(*px);
                  const bool gg = needs_grad(*pg);
                  std::vector<double> xhat(d), gxh(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double inv = (*inv_rms)[r];
                    const double* xr = px->data.data() + r * d;
                    const double* gr = o.grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) xhat[j] = xr[j] * inv;
                    if (gg) {
                      auto& ggain = grad_buffer(*pg);
                      for (std::size_t j = 0; j < d; ++j) ggain[j] += gr[j] * xhat[j];
                    }
                    if (gx) {
                      double proj = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        gxh[j] = gr[j] * pg->data[j];
                        proj += gxh[j] * xhat[j];
                      }
                      proj /= static_cast<double>(d);
                      auto& gxr = grad_buffer(*px);
                      for (std::size_t j = 0; j < d; ++j) {
                        gxr[r * d + j] += (gxh[j] - xhat[j] * proj) * inv;
                      }
                    }
                  }
                });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_defined(logits, "softmax_cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  for (const int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  ImplPtr pl = logits.impl();
  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = pl->data.data() + b * classes;
    const auto top = static_cast<std::size_t>(std::max_element(z, z + classes) - z);
    const double mx = z[top];
    // log-sum-exp as mx + log1p(sum of the non-max terms) keeps precision
    // when one class dominates.
    double rest = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = c == top ? 1.0 : std::exp(z[c] - mx);
      (*probs)[b * classes + c] = e;
      if (c != top) rest += e;
    }
    const double total = 1.0 + rest;
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] /= total;
    loss += std::log1p(rest) + mx - z[(*lab)[b]];
  }
  loss /= static_cast<double>(batch);
  return finish({}, {loss}, {&logits}, "softmax_cross_entropy",
                [pl, probs, lab, batch, classes](const TensorImpl& o) {
                  if (!needs_grad(*pl)) return;
                  auto& g = grad_buffer(*pl);
                  const double scale = o.grad[0] / static_cast<double>(batch);
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t c = 0; c < classes; ++c) {
                      const double onehot = static_cast<int>(c) == (*lab)[b] ? 1.0 : 0.0;
                      g[b * classes + c] += scale * ((*probs)[b * classes + c] - onehot);
                    }
                  }
                });
}

}  // namespace ssmvis
