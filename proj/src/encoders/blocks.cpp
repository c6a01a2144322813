#include <cmath>
#include <numeric>

#include "ssmvis/encoders.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::encoders {

namespace {

using Index = std::vector<std::ptrdiff_t>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

// Columns [start, start + width) of a [rows, cols] tensor.
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Index index(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      index[r * width + c] = static_cast<std::ptrdiff_t>(r * cols + start + c);
    }
  }
  return gather(x, index, {rows, width});
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t cols = x.dim(1);
  Index index(count * cols);
  std::iota(index.begin(), index.end(), static_cast<std::ptrdiff_t>(start * cols));
  return gather(x, index, {count, cols});
}

// Rows of x [N, d] reordered so that row t of the result is row order[t].
Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t d = x.dim(1);
  Index index(order.size() * d);
  for (std::size_t t = 0; t < order.size(); ++t) {
    for (std::size_t c = 0; c < d; ++c) index[t * d + c] = static_cast<std::ptrdiff_t>(order[t] * d + c);
  }
  return gather(x, index, {order.size(), d});
}

std::vector<std::size_t> inverse(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t t = 0; t < order.size(); ++t) inv[order[t]] = t;
  return inv;
}

void check_dims(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected " + shape_str(expected) + ", got " + shape_str(t.shape()));
  }
}

// Scan input and gate branches of a normalized, projected token matrix.
struct Branches {
  Tensor u;
  Tensor gate;
};

Branches project_branches(const Tensor& tokens, const Tensor& norm_gain, const Tensor& in_proj) {
  const std::size_t dim = tokens.dim(1);
  check_dims(norm_gain, {dim}, "norm gain");
  if (in_proj.rank() != 2 || in_proj.dim(0) != dim || in_proj.dim(1) % 2 != 0) {
    throw ShapeError("in_proj: expected [" + std::to_string(dim) + ", 2*d_inner], got " +
                     shape_str(in_proj.shape()));
  }
  const std::size_t d_inner = in_proj.dim(1) / 2;
  const Tensor xz = matmul(rms_norm(tokens, norm_gain), in_proj);
  return {silu(slice_cols(xz, 0, d_inner)), silu(slice_cols(xz, d_inner, d_inner))};
}

}  // namespace

Tensor extract_patches(const Tensor& image, std::size_t patch_size) {
  require_rank(image, 3, "extract_patches");
  const std::size_t H = image.dim(0), W = image.dim(1), ch = image.dim(2);
  if (patch_size == 0 || H % patch_size != 0 || W % patch_size != 0) {
    throw ShapeError("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not divisible by patch_size " + std::to_string(patch_size));
  }
  const std::size_t rows = H / patch_size, cols = W / patch_size;
  const std::size_t patch_len = patch_size * patch_size * ch;
  Index index(rows * cols * patch_len);
  std::size_t k = 0;
  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      for (std::size_t i = 0; i < patch_size; ++i) {
        for (std::size_t j = 0; j < patch_size; ++j) {
          const std::size_t y = pr * patch_size + i, x = pc * patch_size + j;
          for (std::size_t c = 0; c < ch; ++c) index[k++] = static_cast<std::ptrdiff_t>((y * W + x) * ch + c);
        }
      }
    }
  }
  return gather(image, index, {rows * cols, patch_len});
}

TokenSequence patchify(const Tensor& image, std::size_t patch_size, const Tensor& weight, const Tensor& bias) {
  const Tensor patches = extract_patches(image, patch_size);
  return {add(matmul(patches, weight), bias), image.dim(0) / patch_size, image.dim(1) / patch_size};
}

TokenSequence add_positional_encoding(const TokenSequence& seq, const Tensor& table) {
  if (table.shape() != seq.tokens.shape()) {
    throw ShapeError("positional table " + shape_str(table.shape()) + " does not match token sequence " +
                     shape_str(seq.tokens.shape()));
  }
  return {add(seq.tokens, table), seq.rows, seq.cols};
}

Tensor reverse_rows(const Tensor& x) {
  std::vector<std::size_t> order(x.dim(0));
  for (std::size_t t = 0; t < order.size(); ++t) order[t] = order.size() - 1 - t;
  return permute_rows(x, order);
}

ssm::SSMParams ScanWeights::params() const { return {neg(exp(A_log)), D}; }

ssm::SelectiveProjections ScanWeights::projections() const { return {W_B, W_C, W_delta, delta_bias}; }

TokenSequence vim_block_forward(const TokenSequence& seq, const VimBlockWeights& w) {
  require_rank(seq.tokens, 2, "vim_block_forward");
  const auto [u, gate] = project_branches(seq.tokens, w.norm_gain, w.in_proj);
  const Tensor y_fwd = ssm::selective_scan(w.forward.params(), w.forward.projections(), u);
  const Tensor y_bwd =
      reverse_rows(ssm::selective_scan(w.backward.params(), w.backward.projections(), reverse_rows(u)));
  const Tensor y = mul(add(y_fwd, y_bwd), gate);
  return {add(seq.tokens, matmul(y, w.out_proj)), seq.rows, seq.cols};
}

std::array<std::vector<std::size_t>, 4> cross_scan_orders(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ShapeError("cross_scan_orders: grid must be at least 1x1");
  const std::size_t n = rows * cols;
  std::array<std::vector<std::size_t>, 4> orders;
  orders[0].resize(n);
  std::iota(orders[0].begin(), orders[0].end(), std::size_t{0});
  orders[1].assign(orders[0].rbegin(), orders[0].rend());
  orders[2].reserve(n);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) orders[2].push_back(r * cols + c);
  }
  orders[3].assign(orders[2].rbegin(), orders[2].rend());
  return orders;
}

std::array<Tensor, 4> cross_scan(const Tensor& seq, std::size_t rows, std::size_t cols, const ScanWeights& scan) {
  require_rank(seq, 2, "cross_scan");
  if (seq.dim(0) != rows * cols) {
    throw ShapeError("cross_scan: " + std::to_string(seq.dim(0)) + " rows for a " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " grid");
  }
  const auto params = scan.params();
  const auto proj = scan.projections();
  std::array<Tensor, 4> partials;
  const auto orders = cross_scan_orders(rows, cols);
  for (std::size_t d = 0; d < 4; ++d) {
    const Tensor ys = ssm::selective_scan(params, proj, permute_rows(seq, orders[d]));
    partials[d] = permute_rows(ys, inverse(orders[d]));
  }
  return partials;
}

FeatureMap vss_block_forward(const FeatureMap& fm, const VssBlockWeights& w) {
  require_rank(fm.data, 3, "vss_block_forward");
  const std::size_t H = fm.height(), W = fm.width(), C = fm.channels();
  const Tensor tokens = reshape(fm.data, {H * W, C});
  const auto [u, gate] = project_branches(tokens, w.norm_gain, w.in_proj);
  const auto partials = cross_scan(u, H, W, w.scan);
  const Tensor y = mul(add(add(partials[0], partials[1]), add(partials[2], partials[3])), gate);
  return {reshape(add(tokens, matmul(y, w.out_proj)), {H, W, C})};
}

FeatureMap patch_merge(const FeatureMap& fm) {
  require_rank(fm.data, 3, "patch_merge");
  const std::size_t H = fm.height(), W = fm.width(), C = fm.channels();
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("downsample: feature map " + std::to_string(H) + "x" + std::to_string(W) +
                     " needs even height and width");
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  Index index(Ho * Wo * 4 * C);
  std::size_t k = 0;
  for (std::size_t y = 0; y < Ho; ++y) {
    for (std::size_t x = 0; x < Wo; ++x) {
      // top-left, top-right, bottom-left, bottom-right
      for (const auto& [dy, dx] : {std::pair{0, 0}, {0, 1}, {1, 0}, {1, 1}}) {
        const std::size_t src = ((2 * y + dy) * W + (2 * x + dx)) * C;
        for (std::size_t c = 0; c < C; ++c) index[k++] = static_cast<std::ptrdiff_t>(src + c);
      }
    }
  }
  return {gather(fm.data, index, {Ho, Wo, 4 * C})};
}

FeatureMap downsample(const FeatureMap& fm, const Tensor& weight) {
  const FeatureMap merged = patch_merge(fm);
  const std::size_t Ho = merged.height(), Wo = merged.width(), C4 = merged.channels();
  check_dims(weight, {C4, C4 / 2}, "downsample weight");
  const Tensor out = matmul(reshape(merged.data, {Ho * Wo, C4}), weight);
  return {reshape(out, {Ho, Wo, C4 / 2})};
}

TokenSequence toy_vit_block_forward(const TokenSequence& seq, const ToyVitBlockWeights& w, std::size_t num_heads) {
  require_rank(seq.tokens, 2, "toy_vit_block_forward");
  const std::size_t dim = seq.tokens.dim(1);
  if (num_heads == 0 || dim % num_heads != 0) {
    throw ShapeError("toy_vit: embed_dim " + std::to_string(dim) + " is not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  const std::size_t head_dim = dim / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Tensor qkv = matmul(rms_norm(seq.tokens, w.norm1_gain), w.qkv);
  Tensor attn;
  for (std::size_t h = 0; h < num_heads; ++h) {
    const Tensor q = slice_cols(qkv, h * head_dim, head_dim);
    const Tensor k = slice_cols(qkv, dim + h * head_dim, head_dim);
    const Tensor v = slice_cols(qkv, 2 * dim + h * head_dim, head_dim);
    const Tensor weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    // Concatenating heads then projecting equals summing per-head projections.
    const Tensor projected = matmul(matmul(weights, v), slice_rows(w.attn_out, h * head_dim, head_dim));
    attn = attn.defined() ? add(attn, projected) : projected;
  }
  const Tensor x = add(seq.tokens, attn);
  const Tensor hidden = silu(add(matmul(rms_norm(x, w.norm2_gain), w.mlp_in), w.mlp_in_bias));
  return {add(x, matmul(hidden, w.mlp_out)), seq.rows, seq.cols};
}

FeatureMap conv_stage_forward(const FeatureMap& fm, const Tensor& weight, const Tensor& bias) {
  require_rank(fm.data, 3, "conv_stage_forward");
  const std::size_t H = fm.height(), W = fm.width(), C = fm.channels();
  check_dims(weight, {9 * C, weight.rank() == 2 ? weight.dim(1) : 0}, "conv weight");
  const std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Index index(Ho * Wo * 9 * C);
  std::size_t k = 0;
  for (std::size_t y = 0; y < Ho; ++y) {
    for (std::size_t x = 0; x < Wo; ++x) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto sy = static_cast<std::ptrdiff_t>(2 * y) + dy;
          const auto sx = static_cast<std::ptrdiff_t>(2 * x) + dx;
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(H) &&
                              sx < static_cast<std::ptrdiff_t>(W);
          for (std::size_t c = 0; c < C; ++c) {
            index[k++] = inside ? (sy * static_cast<std::ptrdiff_t>(W) + sx) * static_cast<std::ptrdiff_t>(C) +
                                      static_cast<std::ptrdiff_t>(c)
                                : -1;
          }
        }
      }
    }
  }
  const Tensor cols = gather(fm.data, index, {Ho * Wo, 9 * C});
  const Tensor out = silu(add(matmul(cols, weight), bias));
  return {reshape(out, {Ho, Wo, weight.dim(1)})};
}

}  // namespace ssmvis::encoders
