#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mxq/tensor.hpp"

namespace mxq {

/// Integer grid layout for symmetric (zero-point free) quantization.
enum class GridKind {
  /// [-2^(b-1), 2^(b-1)-1]
  TwosComplement,
  /// [-(2^(b-1)-1), 2^(b-1)-1]
  Symmetric,
};

struct IntGrid {
  int bits = 8;
  int q_min = -128;
  int q_max = 127;

  /// Throws for bits outside [2, 8].
  static IntGrid make(int bits, GridKind kind = GridKind::TwosComplement);
};

/// Bit-width meaning "no quantization".
inline constexpr int kFullPrecisionBits = 32;

double round_half_away(double v);

/// clamp(round_half_away(w / s), q_min, q_max) as integers.
std::vector<std::int32_t> quantize_to_int(std::span<const double> w, double scale,
                                          const IntGrid& grid);
std::vector<double> dequantize(std::span<const std::int32_t> q, double scale);
std::vector<double> fake_quantize_values(std::span<const double> w, double scale,
                                         const IntGrid& grid);

struct SteGradients {
  std::vector<double> grad_w;
  /// Sum of per-element scale contributions before normalization.
  double grad_scale_raw = 0.0;
  /// grad_scale_raw / sqrt(numel * q_max).
  double grad_scale = 0.0;
};

/// Straight-through estimator with an LSQ scale gradient. Elements strictly
/// inside (q_min, q_max) pass the upstream gradient to w and contribute
/// round(v) - v to the scale; clamped elements contribute q_min or q_max.
SteGradients ste_backward(std::span<const double> upstream, std::span<const double> w,
                          double scale, const IntGrid& grid);

/// 2 * mean(|w|) / sqrt(q_max), floored at 1e-8.
double init_scale(std::span<const double> w, const IntGrid& grid);

/// Differentiable fake quantization. `scale` is a one-element tensor.
Tensor fake_quantize(const Tensor& w, const Tensor& scale, const IntGrid& grid);

/// Rounds a scale to the nearest float32 so packed checkpoints reproduce it.
double snap_scale(double s);

}  // namespace mxq
