#pragma once

// Image encoders built from the selective scan: Vim (bidirectional scan over
// patch tokens) and VMamba (four-direction cross-scan over feature maps with
// patch-merging downsampling), plus small CNN and ViT baselines that run
// through the same training and evaluation harness.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssmvis/rng.hpp"
#include "ssmvis/ssm.hpp"
#include "ssmvis/tensor.hpp"

namespace ssmvis::encoders {

enum class EncoderKind { vim, vmamba, toy_cnn, toy_vit };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);
/// Family label used in reports: Vim, VSSM, CNN, ViT.
std::string_view family_label(EncoderKind kind);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::vim;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 16;
  // Blocks per stage. vim/toy_vit use depth[0]; vmamba doubles the width
  // and halves the grid between consecutive stages.
  std::vector<std::size_t> depth{2};
  std::size_t d_state = 4;
  std::size_t num_classes = 3;
  std::size_t image_size = 32;
  std::size_t expand = 1;  // d_inner = expand * width
  std::size_t num_heads = 2;
  std::size_t mlp_ratio = 2;

  /// Per-kind defaults: vmamba gets two stages of two blocks at width 32
  /// (32 -> 64); the others a single stage of two blocks at width 16.
  static EncoderSpec defaults(EncoderKind kind);

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  /// key=value lines, stable field order; round-trips through parse_echo.
  std::string echo() const;
  static EncoderSpec parse_echo(std::string_view text);

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// Named parameters in insertion order. Tensors are shared handles, so a
/// forward pass sees optimizer updates without copying.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  bool contains(std::string_view name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t parameter_count() const;
  void zero_grad();

  /// Deep copy with detached tensors.
  ParameterSet snapshot() const;
  /// Copies values from a snapshot with the same names and shapes.
  void assign_from(const ParameterSet& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct TokenSequence {
  Tensor tokens;  // [rows * cols, embed_dim]
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct FeatureMap {
  Tensor data;  // [height, width, channels]

  std::size_t height() const { return data.dim(0); }
  std::size_t width() const { return data.dim(1); }
  std::size_t channels() const { return data.dim(2); }
};

/// Non-overlapping patches of image [H, W, ch] in row-major patch order,
/// each flattened row-major with channels last: [num_patches, p*p*ch].
Tensor extract_patches(const Tensor& image, std::size_t patch_size);

/// extract_patches followed by the linear embedding weight [p*p*ch, embed]
/// and bias [embed].
TokenSequence patchify(const Tensor& image, std::size_t patch_size, const Tensor& weight,
                       const Tensor& bias);

/// Adds a learned table [num_tokens, embed_dim].
TokenSequence add_positional_encoding(const TokenSequence& seq, const Tensor& table);

/// Reverses the row order of a [N, d] tensor.
Tensor reverse_rows(const Tensor& x);

/// Scan parameters for one traversal. A is stored as A_log so that
/// A = -exp(A_log) stays strictly negative under any update.
struct ScanWeights {
  Tensor A_log;       // [d_inner, d_state]
  Tensor D;           // [d_inner]
  Tensor W_B;         // [d_state, d_inner]
  Tensor W_C;         // [d_state, d_inner]
  Tensor W_delta;     // [1, d_inner]
  Tensor delta_bias;  // [1]

  ssm::SSMParams params() const;
  ssm::SelectiveProjections projections() const;
};

struct VimBlockWeights {
  Tensor norm_gain;  // [dim]
  Tensor in_proj;    // [dim, 2 * d_inner]: scan input | gate
  ScanWeights forward;
  ScanWeights backward;
  Tensor out_proj;  // [d_inner, dim]
};

/// Pre-norm residual block with independent forward/backward scans over the
/// token order, gated by silu of the parallel projection.
TokenSequence vim_block_forward(const TokenSequence& seq, const VimBlockWeights& w);

/// The four traversals of a rows x cols grid: row-major forward, row-major
/// reverse, column-major forward, column-major reverse. Entry t of an order
/// is the grid position (row-major index) visited at step t.
std::array<std::vector<std::size_t>, 4> cross_scan_orders(std::size_t rows, std::size_t cols);

/// Runs the shared scan along each traversal of seq [rows*cols, d_inner] and
/// returns the four results scattered back to grid order.
std::array<Tensor, 4> cross_scan(const Tensor& seq, std::size_t rows, std::size_t cols,
                                 const ScanWeights& scan);

struct VssBlockWeights {
  Tensor norm_gain;  // [dim]
  Tensor in_proj;    // [dim, 2 * d_inner]
  ScanWeights scan;  // shared by the four traversals
  Tensor out_proj;   // [d_inner, dim]
};

FeatureMap vss_block_forward(const FeatureMap& fm, const VssBlockWeights& w);

/// 2x2 patch merge: [H, W, C] -> [H/2, W/2, 4C], channel blocks ordered
/// top-left, top-right, bottom-left, bottom-right.
FeatureMap patch_merge(const FeatureMap& fm);

/// patch_merge then a linear map [4C, 2C].
FeatureMap downsample(const FeatureMap& fm, const Tensor& weight);

struct ToyVitBlockWeights {
  Tensor norm1_gain;  // [dim]
  Tensor qkv;         // [dim, 3 * dim]
  Tensor attn_out;    // [dim, dim]
  Tensor norm2_gain;  // [dim]
  Tensor mlp_in;      // [dim, hidden]
  Tensor mlp_in_bias; // [hidden]
  Tensor mlp_out;     // [hidden, dim]
};

TokenSequence toy_vit_block_forward(const TokenSequence& seq, const ToyVitBlockWeights& w,
                                    std::size_t num_heads);

/// 3x3, stride 2, zero padding 1 convolution of [H, W, Cin] with weight
/// [9 * Cin, Cout] and bias [Cout], followed by silu.
FeatureMap conv_stage_forward(const FeatureMap& fm, const Tensor& weight, const Tensor& bias);

/// Freshly initialized parameters for `spec`. Residual output projections
/// start at zero, so every block is an identity map at initialization.
ParameterSet init_parameters(const EncoderSpec& spec, Rng& rng);

/// image [image_size, image_size, 1] -> logits [num_classes].
Tensor encoder_forward(const Tensor& image, const EncoderSpec& spec, const ParameterSet& params);

// Block-weight views into a ParameterSet (shared tensors).
VimBlockWeights vim_block_weights(const ParameterSet& params, const std::string& prefix);
VssBlockWeights vss_block_weights(const ParameterSet& params, const std::string& prefix);
ToyVitBlockWeights toy_vit_block_weights(const ParameterSet& params, const std::string& prefix);

// ---- checkpoint files --------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointFile {
  EncoderSpec spec;
  ParameterSet params;
  std::map<std::string, std::string> metadata;  // epoch, validation metrics, ...
};

/// Little-endian container: magic "SSMVCKPT", u32 version, u32-length spec
/// echo, u32-length metadata text, u32 tensor count, then per tensor a
/// u32-length name, u32 rank, u64 dims, and f64 values in row-major order.
void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& checkpoint);
std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& checkpoint);

/// Throws DataError on malformed files and ConfigError when the tensors do
/// not match the shapes implied by the embedded spec.
CheckpointFile read_checkpoint(const std::filesystem::path& path);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace ssmvis::encoders
