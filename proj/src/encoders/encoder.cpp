#include <cmath>

#include "ssmvis/encoders.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::encoders {

namespace {

constexpr std::size_t kImageChannels = 1;

Tensor normal_tensor(Shape shape, Rng& rng, double sd) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return normal_tensor({fan_in, fan_out}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

void add_scan(ParameterSet& ps, const std::string& prefix, std::size_t d_inner, std::size_t d_state, Rng& rng) {
  std::vector<double> a_log(d_inner * d_state);
  for (std::size_t c = 0; c < d_inner; ++c) {
    for (std::size_t k = 0; k < d_state; ++k) a_log[c * d_state + k] = std::log(static_cast<double>(k + 1));
  }
  ps.add(prefix + "A_log", Tensor::from({d_inner, d_state}, std::move(a_log), true));
  ps.add(prefix + "D", Tensor::full({d_inner}, 1.0, true));
  auto proj = ssm::SelectiveProjections::initial(d_inner, d_state, rng, true);
  ps.add(prefix + "W_B", proj.W_B);
  ps.add(prefix + "W_C", proj.W_C);
  ps.add(prefix + "W_delta", proj.W_delta);
  ps.add(prefix + "delta_bias", proj.delta_bias);
}

ScanWeights scan_view(const ParameterSet& ps, const std::string& prefix) {
  return {ps.at(prefix + "A_log"), ps.at(prefix + "D"),       ps.at(prefix + "W_B"),
          ps.at(prefix + "W_C"),   ps.at(prefix + "W_delta"), ps.at(prefix + "delta_bias")};
}

void add_vim_block(ParameterSet& ps, const std::string& prefix, std::size_t dim, std::size_t d_inner,
                   std::size_t d_state, Rng& rng) {
  ps.add(prefix + "norm", Tensor::full({dim}, 1.0, true));
  ps.add(prefix + "in_proj", linear_weight(dim, 2 * d_inner, rng));
  add_scan(ps, prefix + "fwd.", d_inner, d_state, rng);
  add_scan(ps, prefix + "bwd.", d_inner, d_state, rng);
  ps.add(prefix + "out_proj", Tensor::zeros({d_inner, dim}, true));
}

void add_vss_block(ParameterSet& ps, const std::string& prefix, std::size_t dim, std::size_t d_inner,
                   std::size_t d_state, Rng& rng) {
  ps.add(prefix + "norm", Tensor::full({dim}, 1.0, true));
  ps.add(prefix + "in_proj", linear_weight(dim, 2 * d_inner, rng));
  add_scan(ps, prefix + "scan.", d_inner, d_state, rng);
  ps.add(prefix + "out_proj", Tensor::zeros({d_inner, dim}, true));
}

void add_vit_block(ParameterSet& ps, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng) {
  ps.add(prefix + "norm1", Tensor::full({dim}, 1.0, true));
  ps.add(prefix + "qkv", linear_weight(dim, 3 * dim, rng));
  ps.add(prefix + "attn_out", Tensor::zeros({dim, dim}, true));
  ps.add(prefix + "norm2", Tensor::full({dim}, 1.0, true));
  ps.add(prefix + "mlp_in", linear_weight(dim, hidden, rng));
  ps.add(prefix + "mlp_in_bias", Tensor::zeros({hidden}, true));
  ps.add(prefix + "mlp_out", Tensor::zeros({hidden, dim}, true));
}

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }
std::string stage_prefix(std::size_t s) { return "stages." + std::to_string(s) + "."; }

// Width of the final feature vector fed to the head.
std::size_t final_width(const EncoderSpec& spec) {
  switch (spec.kind) {
    case EncoderKind::vmamba: return spec.embed_dim << (spec.depth.size() - 1);
    case EncoderKind::toy_cnn: return 2 * spec.embed_dim;
    default: return spec.embed_dim;
  }
}

// pooled [width] -> logits [num_classes]
Tensor head(const Tensor& pooled, const ParameterSet& ps) {
  const Tensor& w = ps.at("head.weight");
  const std::size_t width = pooled.numel();
  return add(reshape(matmul(reshape(pooled, {1, width}), w), {w.dim(1)}), ps.at("head.bias"));
}

Tensor pool_tokens(const Tensor& tokens, const ParameterSet& ps) {
  return mean(rms_norm(tokens, ps.at("final_norm")), 0);
}

}  // namespace

VimBlockWeights vim_block_weights(const ParameterSet& ps, const std::string& prefix) {
  return {ps.at(prefix + "norm"), ps.at(prefix + "in_proj"), scan_view(ps, prefix + "fwd."),
          scan_view(ps, prefix + "bwd."), ps.at(prefix + "out_proj")};
}

VssBlockWeights vss_block_weights(const ParameterSet& ps, const std::string& prefix) {
  return {ps.at(prefix + "norm"), ps.at(prefix + "in_proj"), scan_view(ps, prefix + "scan."),
          ps.at(prefix + "out_proj")};
}

ToyVitBlockWeights toy_vit_block_weights(const ParameterSet& ps, const std::string& prefix) {
  return {ps.at(prefix + "norm1"),  ps.at(prefix + "qkv"),         ps.at(prefix + "attn_out"),
          ps.at(prefix + "norm2"),  ps.at(prefix + "mlp_in"),      ps.at(prefix + "mlp_in_bias"),
          ps.at(prefix + "mlp_out")};
}

ParameterSet init_parameters(const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  ParameterSet ps;
  const std::size_t e = spec.embed_dim;
  const std::size_t patch_len = spec.patch_size * spec.patch_size * kImageChannels;
  const std::size_t grid = spec.image_size / std::max<std::size_t>(spec.patch_size, 1);

  switch (spec.kind) {
    case EncoderKind::vim:
      ps.add("patch_embed.weight", linear_weight(patch_len, e, rng));
      ps.add("patch_embed.bias", Tensor::zeros({e}, true));
      ps.add("pos_embed", normal_tensor({grid * grid, e}, rng, 0.02));
      for (std::size_t i = 0; i < spec.depth[0]; ++i) {
        add_vim_block(ps, block_prefix(i), e, spec.expand * e, spec.d_state, rng);
      }
      break;
    case EncoderKind::vmamba: {
      ps.add("patch_embed.weight", linear_weight(patch_len, e, rng));
      ps.add("patch_embed.bias", Tensor::zeros({e}, true));
      std::size_t width = e;
      for (std::size_t s = 0; s < spec.depth.size(); ++s) {
        if (s > 0) {
          ps.add(stage_prefix(s) + "merge_norm", Tensor::full({4 * width}, 1.0, true));
          ps.add(stage_prefix(s) + "downsample", linear_weight(4 * width, 2 * width, rng));
          width *= 2;
        }
        for (std::size_t b = 0; b < spec.depth[s]; ++b) {
          add_vss_block(ps, stage_prefix(s) + block_prefix(b), width, spec.expand * width, spec.d_state, rng);
        }
      }
      break;
    }
    case EncoderKind::toy_cnn: {
      const std::size_t channels[4] = {kImageChannels, e / 2, e, 2 * e};
      for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = "conv" + std::to_string(i);
        ps.add(name + ".weight", linear_weight(9 * channels[i], channels[i + 1], rng));
        ps.add(name + ".bias", Tensor::zeros({channels[i + 1]}, true));
      }
      break;
    }
    case EncoderKind::toy_vit:
      ps.add("patch_embed.weight", linear_weight(patch_len, e, rng));
      ps.add("patch_embed.bias", Tensor::zeros({e}, true));
      ps.add("pos_embed", normal_tensor({grid * grid, e}, rng, 0.02));
      for (std::size_t i = 0; i < spec.depth[0]; ++i) add_vit_block(ps, block_prefix(i), e, spec.mlp_ratio * e, rng);
      break;
  }
  const std::size_t width = final_width(spec);
  if (spec.kind != EncoderKind::toy_cnn) ps.add("final_norm", Tensor::full({width}, 1.0, true));
  ps.add("head.weight", linear_weight(width, spec.num_classes, rng));
  ps.add("head.bias", Tensor::zeros({spec.num_classes}, true));
  return ps;
}

Tensor encoder_forward(const Tensor& image, const EncoderSpec& spec, const ParameterSet& ps) {
  if (image.rank() != 3 || image.dim(0) != spec.image_size || image.dim(1) != spec.image_size ||
      image.dim(2) != kImageChannels) {
    throw ShapeError("encoder_forward: image " + shape_str(image.shape()) + " does not match spec image_size " +
                     std::to_string(spec.image_size));
  }
  switch (spec.kind) {
    case EncoderKind::vim: {
      auto seq = patchify(image, spec.patch_size, ps.at("patch_embed.weight"), ps.at("patch_embed.bias"));
      seq = add_positional_encoding(seq, ps.at("pos_embed"));
      for (std::size_t i = 0; i < spec.depth[0]; ++i) seq = vim_block_forward(seq, vim_block_weights(ps, block_prefix(i)));
      return head(pool_tokens(seq.tokens, ps), ps);
    }
    case EncoderKind::vmamba: {
      const auto seq = patchify(image, spec.patch_size, ps.at("patch_embed.weight"), ps.at("patch_embed.bias"));
      FeatureMap fm{reshape(seq.tokens, {seq.rows, seq.cols, spec.embed_dim})};
      for (std::size_t s = 0; s < spec.depth.size(); ++s) {
        if (s > 0) {
          FeatureMap merged = patch_merge(fm);
          const std::size_t h = merged.height(), w = merged.width(), c4 = merged.channels();
          const Tensor normed = rms_norm(reshape(merged.data, {h * w, c4}), ps.at(stage_prefix(s) + "merge_norm"));
          fm = {reshape(matmul(normed, ps.at(stage_prefix(s) + "downsample")), {h, w, c4 / 2})};
        }
        for (std::size_t b = 0; b < spec.depth[s]; ++b) {
          fm = vss_block_forward(fm, vss_block_weights(ps, stage_prefix(s) + block_prefix(b)));
        }
      }
      return head(pool_tokens(reshape(fm.data, {fm.height() * fm.width(), fm.channels()}), ps), ps);
    }
    case EncoderKind::toy_cnn: {
      FeatureMap fm{image};
      for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = "conv" + std::to_string(i);
        fm = conv_stage_forward(fm, ps.at(name + ".weight"), ps.at(name + ".bias"));
      }
      return head(mean(reshape(fm.data, {fm.height() * fm.width(), fm.channels()}), 0), ps);
    }
    case EncoderKind::toy_vit: {
      auto seq = patchify(image, spec.patch_size, ps.at("patch_embed.weight"), ps.at("patch_embed.bias"));
      seq = add_positional_encoding(seq, ps.at("pos_embed"));
      for (std::size_t i = 0; i < spec.depth[0]; ++i) {
        seq = toy_vit_block_forward(seq, toy_vit_block_weights(ps, block_prefix(i)), spec.num_heads);
      }
      return head(pool_tokens(seq.tokens, ps), ps);
    }
  }
  throw ConfigError("encoder_forward: unknown encoder kind");
}

}  // namespace ssmvis::encoders
