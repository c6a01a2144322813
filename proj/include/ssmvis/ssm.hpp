#pragma once

// Discrete state-space layers:
//
//   h_t = A_bar h_{t-1} + B_bar x_t
//   y_t = <C, h_t> + D x_t
//
// Time-invariant form (fixed A_bar, B_bar, C) with its equivalent causal
// convolution kernel, and the selective (input-dependent B, C, delta) scan
// in sequential and associative-prefix forms. State matrices are diagonal
// per channel, so every [d_inner, d_state] array is d_inner independent
// d_state-dimensional systems.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ssmvis/rng.hpp"
#include "ssmvis/tensor.hpp"

namespace ssmvis::ssm {

/// Continuous-time parameters shared by every step: A [d_inner, d_state]
/// (strictly negative) and the skip coefficient D [d_inner].
struct SSMParams {
  Tensor A;
  Tensor D;

  std::size_t d_inner() const { return A.dim(0); }
  std::size_t d_state() const { return A.dim(1); }

  /// A[c, k] = -(k + 1), D = 1.
  static SSMParams initial(std::size_t d_inner, std::size_t d_state, bool requires_grad = true);

  /// Throws ShapeError on inconsistent shapes, NumericError if any A >= 0.
  void validate() const;
};

/// Discretized, fixed-coefficient system. All per-channel arrays are
/// row-major [d_inner, d_state]; D is [d_inner].
struct TimeInvariantSSM {
  std::size_t d_inner = 0;
  std::size_t d_state = 0;
  std::vector<double> A_bar;
  std::vector<double> B_bar;
  std::vector<double> C;
  std::vector<double> D;

  void validate() const;
};

/// Input-dependent projections: B_t = W_B x_t, C_t = W_C x_t,
/// delta_t = softplus(W_delta . x_t + delta_bias).
struct SelectiveProjections {
  Tensor W_B;         // [d_state, d_inner]
  Tensor W_C;         // [d_state, d_inner]
  Tensor W_delta;     // [1, d_inner]
  Tensor delta_bias;  // [1]

  /// Random W_B, W_C with std 1/sqrt(d_inner); small W_delta; bias chosen so
  /// softplus(bias) = 0.1.
  static SelectiveProjections initial(std::size_t d_inner, std::size_t d_state, Rng& rng,
                                      bool requires_grad = true);

  void validate(std::size_t d_inner, std::size_t d_state) const;
};

struct Discretized {
  std::vector<double> A_bar;
  std::vector<double> B_bar;
};

/// Zero-order hold for A (A_bar = exp(delta A)) and the Euler step for B
/// (B_bar = delta B). A and B are [d_inner, d_state]; delta is [d_inner].
/// Throws NumericError if any delta <= 0 or any A >= 0.
Discretized discretize(std::span<const double> A, std::span<const double> B,
                       std::span<const double> delta, std::size_t d_state);

/// Runs the recurrence from h = 0. x is [L, d_inner]; returns [L, d_inner].
Tensor ssm_recurrence(const TimeInvariantSSM& model, const Tensor& x);

/// K[c, j] = <C_c, A_bar_c^j B_bar_c> for j < L; returns [d_inner, L].
Tensor s4_kernel(const TimeInvariantSSM& model, std::size_t length);

/// Causal convolution y_t = sum_{j<=t} K[j] x_{t-j} + D x_t.
std::vector<double> conv_apply(std::span<const double> kernel, std::span<const double> x, double D);

/// Per-channel conv_apply: kernel [d_inner, L], x [L, d_inner], D [d_inner].
Tensor conv_apply_channels(const Tensor& kernel, const Tensor& x, std::span<const double> D);

// ---- selective scan --------------------------------------------------------

enum class ScanAlgorithm { sequential, parallel };

/// Selective scan over x [L, d_inner]. Recorded on the tape as one op whose
/// backward rule covers x, A, D and all projections.
Tensor selective_scan(const SSMParams& params, const SelectiveProjections& proj, const Tensor& x,
                      ScanAlgorithm algorithm = ScanAlgorithm::sequential);

/// Same outputs as selective_scan, computed with a work-efficient
/// (up-sweep/down-sweep) prefix scan over the affine step pairs.
Tensor parallel_selective_scan(const SSMParams& params, const SelectiveProjections& proj,
                               const Tensor& x);

/// The scan with explicitly supplied per-step B [L, d_state],
/// C [L, d_state] and delta [L]. Untaped; used to pin the selective scan to
/// the time-invariant recurrence.
std::vector<double> scan_with_steps(const SSMParams& params, std::span<const double> x,
                                    std::span<const double> B_steps,
                                    std::span<const double> C_steps,
                                    std::span<const double> delta_steps,
                                    ScanAlgorithm algorithm = ScanAlgorithm::sequential);

/// Affine map h -> decay * h + drive. Composition is associative:
/// compose(later, earlier) = (later.decay * earlier.decay,
///                            later.decay * earlier.drive + later.drive).
struct AffineStep {
  double decay = 1.0;
  double drive = 0.0;
};

AffineStep compose(AffineStep later, AffineStep earlier);

/// In-place inclusive prefix composition: steps[t] becomes
/// steps[t] o ... o steps[0]. Blelloch up-sweep/down-sweep on a
/// power-of-two padded buffer.
void inclusive_affine_scan(std::span<AffineStep> steps);

// ---- SRAM/HBM word-transfer model ------------------------------------------

enum class TransferMode { naive, fused };

struct TransferBreakdown {
  std::uint64_t state_traffic = 0;      // h reads/writes
  std::uint64_t parameter_traffic = 0;  // A, B, C, delta
  std::uint64_t io_traffic = 0;         // x in, y out
};

struct TransferCostReport {
  TransferMode mode = TransferMode::naive;
  std::uint64_t words_moved = 0;
  TransferBreakdown breakdown;
};

/// Slow-memory words moved by one scan over L steps.
///
/// naive, per channel and step, all from slow memory: read and write h
/// (2n), read B_bar (n), read C (n), read x, write y.
///   words = L (4n + 2)
/// fused, per channel: A is staged into fast memory once (n); per step B
/// (n) and delta (1) are moved in, x read, h written back (n), C read (n),
/// y written.
///   words = n + L (3n + 3)
/// Totals are multiplied by d_inner.
TransferCostReport transfer_cost(TransferMode mode, std::uint64_t length, std::uint64_t d_state,
                                 std::uint64_t d_inner);

TransferMode parse_transfer_mode(std::string_view name);

}  // namespace ssmvis::ssm
