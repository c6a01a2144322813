#pragma once

// Finite-difference cases for every trainable operation and every full
// block, shared by the unit tests and the acceptance runner. Primitive ops
// must agree to 1e-4, composite blocks to 1e-3.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "ssmvis/encoders.hpp"
#include "ssmvis/ssm.hpp"

namespace ssmvis::testing {

struct GradientCase {
  std::string name;
  double tolerance;
  std::function<Tensor()> loss;
  NamedTensors params;
};

inline encoders::ScanWeights random_scan_weights(std::size_t d_inner, std::size_t d_state, Rng& rng) {
  return {random_tensor({d_inner, d_state}, rng, 0.5), random_tensor({d_inner}, rng),
          random_tensor({d_state, d_inner}, rng, 0.5), random_tensor({d_state, d_inner}, rng, 0.5),
          random_tensor({1, d_inner}, rng, 0.3),       random_tensor({1}, rng, 0.5)};
}

inline void append_scan(NamedTensors& out, const std::string& prefix, const encoders::ScanWeights& s) {
  out.insert(out.end(), {{prefix + "A_log", s.A_log},
                         {prefix + "D", s.D},
                         {prefix + "W_B", s.W_B},
                         {prefix + "W_C", s.W_C},
                         {prefix + "W_delta", s.W_delta},
                         {prefix + "delta_bias", s.delta_bias}});
}

inline std::vector<GradientCase> gradient_suite(std::uint64_t seed = 5) {
  constexpr double kPrimitive = 1e-4;
  constexpr double kBlock = 1e-3;
  Rng rng{seed};
  std::vector<GradientCase> cases;

  // ---- primitive ops, each contracted with fixed random weights ----------
  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng), gain = random_tensor({4}, rng);
    auto m = random_tensor({4, 2}, rng);
    const auto w = random_tensor({3, 4}, rng), w2 = random_tensor({3, 2}, rng);
    const std::vector<std::ptrdiff_t> index{11, 0, -1, 5, 5, 2};
    const std::vector<int> labels{1, 3, 0};
    cases.push_back({"add", kPrimitive, [=] { return sum(mul(add(a, row), w)); }, {{"a", a}, {"row", row}}});
    cases.push_back({"sub", kPrimitive, [=] { return sum(mul(sub(a, b), w)); }, {{"a", a}, {"b", b}}});
    cases.push_back({"mul", kPrimitive, [=] { return sum(mul(mul(a, row), w)); }, {{"a", a}, {"row", row}}});
    cases.push_back({"neg", kPrimitive, [=] { return sum(mul(neg(a), w)); }, {{"a", a}}});
    cases.push_back({"scale", kPrimitive, [=] { return sum(mul(scale(a, -1.7), w)); }, {{"a", a}}});
    cases.push_back({"exp", kPrimitive, [=] { return sum(mul(exp(scale(a, 0.5)), w)); }, {{"a", a}}});
    cases.push_back({"silu", kPrimitive, [=] { return sum(mul(silu(a), w)); }, {{"a", a}}});
    cases.push_back({"softplus", kPrimitive, [=] { return sum(mul(softplus(a), w)); }, {{"a", a}}});
    cases.push_back({"matmul", kPrimitive, [=] { return sum(mul(matmul(a, m), w2)); }, {{"a", a}, {"m", m}}});
    cases.push_back({"transpose", kPrimitive, [=] { return sum(mul(transpose(a), transpose(w))); }, {{"a", a}}});
    cases.push_back({"reshape", kPrimitive, [=] { return sum(mul(reshape(a, {12}), reshape(w, {12}))); },
                     {{"a", a}}});
    cases.push_back({"gather", kPrimitive,
                     [=] { return sum(mul(gather(a, index, {2, 3}), reshape(gather(w, index, {6}), {2, 3}))); },
                     {{"a", a}}});
    cases.push_back({"stack", kPrimitive,
                     [=] { return sum(mul(stack(std::vector<Tensor>{a, b}), stack(std::vector<Tensor>{w, w}))); },
                     {{"a", a}, {"b", b}}});
    cases.push_back({"sum-axis", kPrimitive, [=] { return sum(mul(sum(a, 1), sum(w, 1))); }, {{"a", a}}});
    cases.push_back({"mean-axis", kPrimitive, [=] { return sum(mul(mean(a, 0), row)); }, {{"a", a}}});
    cases.push_back({"softmax", kPrimitive, [=] { return sum(mul(softmax(a), w)); }, {{"a", a}}});
    cases.push_back({"rms_norm", kPrimitive, [=] { return sum(mul(rms_norm(a, gain), w)); },
                     {{"a", a}, {"gain", gain}}});
    cases.push_back({"softmax_cross_entropy", kPrimitive, [=] { return softmax_cross_entropy(a, labels); },
                     {{"a", a}}});
  }
  {
    const std::size_t L = 12, d_inner = 2, d_state = 3;
    auto params = ssm::SSMParams::initial(d_inner, d_state, false);
    for (auto& v : params.A.mutable_data()) v *= rng.uniform(0.5, 1.5);
    for (auto& v : params.D.mutable_data()) v = rng.normal();
    auto proj = ssm::SelectiveProjections::initial(d_inner, d_state, rng, false);
    for (auto& v : proj.W_delta.mutable_data()) v = rng.normal(0.0, 0.5);
    auto x = random_tensor({L, d_inner}, rng);
    const auto w = random_tensor({L, d_inner}, rng);
    const NamedTensors all{{"A", params.A},       {"D", params.D},
                           {"W_B", proj.W_B},     {"W_C", proj.W_C},
                           {"W_delta", proj.W_delta}, {"delta_bias", proj.delta_bias},
                           {"x", x}};
    cases.push_back({"selective_scan", kPrimitive, [=] { return sum(mul(ssm::selective_scan(params, proj, x), w)); },
                     all});
    cases.push_back({"parallel_selective_scan", kPrimitive,
                     [=] { return sum(mul(ssm::parallel_selective_scan(params, proj, x), w)); }, all});
  }
  {
    auto image = random_tensor({8, 8, 1}, rng);
    auto weight = random_tensor({16, 3}, rng, 0.3), bias = random_tensor({3}, rng);
    auto table = random_tensor({4, 3}, rng);
    const auto w = random_tensor({4, 3}, rng);
    cases.push_back({"patchify", kPrimitive, [=] { return sum(mul(encoders::patchify(image, 4, weight, bias).tokens, w)); },
                     {{"image", image}, {"weight", weight}, {"bias", bias}}});
    cases.push_back({"positional_encoding", kPrimitive,
                     [=] {
                       const auto seq = encoders::patchify(image, 4, weight, bias);
                       return sum(mul(encoders::add_positional_encoding(seq, table).tokens, w));
                     },
                     {{"table", table}, {"weight", weight}}});
  }
  {
    auto fm = random_tensor({4, 4, 2}, rng);
    auto weight = random_tensor({8, 4}, rng, 0.4);
    const auto w = random_tensor({2, 2, 4}, rng);
    cases.push_back({"downsample", kPrimitive,
                     [=] { return sum(mul(encoders::downsample({fm}, weight).data, w)); },
                     {{"fm", fm}, {"weight", weight}}});
  }

  // ---- full blocks -------------------------------------------------------
  {
    const std::size_t dim = 4, d_inner = 4, d_state = 3;
    encoders::VimBlockWeights vw{random_tensor({dim}, rng), random_tensor({dim, 2 * d_inner}, rng, 0.5),
                                 random_scan_weights(d_inner, d_state, rng),
                                 random_scan_weights(d_inner, d_state, rng),
                                 random_tensor({d_inner, dim}, rng, 0.5)};
    auto tokens = random_tensor({6, dim}, rng);
    const auto w = random_tensor({6, dim}, rng);
    NamedTensors ps{{"tokens", tokens}, {"norm", vw.norm_gain}, {"in_proj", vw.in_proj}, {"out_proj", vw.out_proj}};
    append_scan(ps, "fwd.", vw.forward);
    append_scan(ps, "bwd.", vw.backward);
    cases.push_back({"vim_block", kBlock,
                     [=] { return sum(mul(encoders::vim_block_forward({tokens, 2, 3}, vw).tokens, w)); }, ps});
  }
  {
    const std::size_t dim = 3, d_inner = 4, d_state = 2;
    encoders::VssBlockWeights sw{random_tensor({dim}, rng), random_tensor({dim, 2 * d_inner}, rng, 0.5),
                                 random_scan_weights(d_inner, d_state, rng), random_tensor({d_inner, dim}, rng, 0.5)};
    auto fm = random_tensor({3, 2, dim}, rng);
    const auto w = random_tensor({3, 2, dim}, rng);
    NamedTensors ps{{"fm", fm}, {"norm", sw.norm_gain}, {"in_proj", sw.in_proj}, {"out_proj", sw.out_proj}};
    append_scan(ps, "scan.", sw.scan);
    cases.push_back({"vss_block", kBlock, [=] { return sum(mul(encoders::vss_block_forward({fm}, sw).data, w)); },
                     ps});
  }
  {
    const std::size_t dim = 4, hidden = 8;
    encoders::ToyVitBlockWeights tw{random_tensor({dim}, rng),         random_tensor({dim, 3 * dim}, rng, 0.5),
                                    random_tensor({dim, dim}, rng, 0.5), random_tensor({dim}, rng),
                                    random_tensor({dim, hidden}, rng, 0.5), random_tensor({hidden}, rng),
                                    random_tensor({hidden, dim}, rng, 0.5)};
    auto tokens = random_tensor({5, dim}, rng);
    const auto w = random_tensor({5, dim}, rng);
    cases.push_back({"toy_vit_block", kBlock,
                     [=] { return sum(mul(encoders::toy_vit_block_forward({tokens, 1, 5}, tw, 2).tokens, w)); },
                     {{"tokens", tokens},
                      {"norm1", tw.norm1_gain},
                      {"qkv", tw.qkv},
                      {"attn_out", tw.attn_out},
                      {"norm2", tw.norm2_gain},
                      {"mlp_in", tw.mlp_in},
                      {"mlp_in_bias", tw.mlp_in_bias},
                      {"mlp_out", tw.mlp_out}}});
  }
  {
    auto fm = random_tensor({5, 4, 2}, rng);
    auto weight = random_tensor({18, 3}, rng, 0.4), bias = random_tensor({3}, rng);
    const auto w = random_tensor({3, 2, 3}, rng);
    cases.push_back({"toy_cnn_stage", kBlock,
                     [=] { return sum(mul(encoders::conv_stage_forward({fm}, weight, bias).data, w)); },
                     {{"fm", fm}, {"weight", weight}, {"bias", bias}}});
  }
  return cases;
}

}  // namespace ssmvis::testing
