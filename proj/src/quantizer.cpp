#include "mxq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mxq {

IntGrid IntGrid::make(int bits, GridKind kind) {
  if (bits < 2 || bits > 8) {
    throw Error("quantizer: bit-width " + std::to_string(bits) + " outside [2, 8]");
  }
  const int half = 1 << (bits - 1);
  IntGrid g;
  g.bits = bits;
  g.q_max = half - 1;
  g.q_min = kind == GridKind::TwosComplement ? -half : -(half - 1);
  return g;
}

double round_half_away(double v) {
  // std::round rounds halfway cases away from zero regardless of FP mode.
  return std::round(v);
}

namespace {

void check_scale(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error("quantizer: scale must be positive and finite, got " + std::to_string(scale));
  }
}

double quantize_one(double w, double scale, const IntGrid& grid) {
  const double q = round_half_away(w / scale);
  return std::clamp(q, static_cast<double>(grid.q_min), static_cast<double>(grid.q_max));
}

}  // namespace

std::vector<std::int32_t> quantize_to_int(std::span<const double> w, double scale,
                                          const IntGrid& grid) {
  check_scale(scale);
  std::vector<std::int32_t> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    out[i] = static_cast<std::int32_t>(quantize_one(w[i], scale, grid));
  return out;
}

std::vector<double> dequantize(std::span<const std::int32_t> q, double scale) {
  std::vector<double> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<double>(q[i]) * scale;
  return out;
}

std::vector<double> fake_quantize_values(std::span<const double> w, double scale,
                                         const IntGrid& grid) {
  check_scale(scale);
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = quantize_one(w[i], scale, grid) * scale;
  return out;
}

SteGradients ste_backward(std::span<const double> upstream, std::span<const double> w,
                          double scale, const IntGrid& grid) {
  check_scale(scale);
  SteGradients out;
  out.grad_w.assign(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = w[i] / scale;
    double ds;
    if (v <= grid.q_min) {
      ds = grid.q_min;
    } else if (v >= grid.q_max) {
      ds = grid.q_max;
    } else {
      out.grad_w[i] = upstream[i];
      ds = round_half_away(v) - v;
    }
    out.grad_scale_raw += upstream[i] * ds;
  }
  out.grad_scale =
      out.grad_scale_raw / std::sqrt(static_cast<double>(w.size()) * grid.q_max);
  return out;
}

double init_scale(std::span<const double> w, const IntGrid& grid) {
  if (w.empty()) throw Error("init_scale: empty tensor");
  double sum = 0.0;
  for (double v : w) sum += std::abs(v);
  const double s = 2.0 * (sum / static_cast<double>(w.size())) / std::sqrt(grid.q_max);
  return std::max(s, 1e-8);
}

Tensor fake_quantize(const Tensor& w, const Tensor& scale, const IntGrid& grid) {
  const double s = scale.item();
  auto values = fake_quantize_values(w.data(), s, grid);
  auto w_impl = w.impl();
  return Tensor::make_result(
      w.shape(), std::move(values), "fake_quantize", {w, scale},
      [w_impl, s, grid](std::span<const double> g, std::span<std::vector<double>*> grads) {
        const SteGradients sg = ste_backward(g, w_impl->data, s, grid);
        if (auto* gw = grads[0])
          for (std::size_t i = 0; i < sg.grad_w.size(); ++i) (*gw)[i] += sg.grad_w[i];
        if (auto* gs = grads[1]) (*gs)[0] += sg.grad_scale;
      },
      /*custom_gradient=*/true);
}

double snap_scale(double s) { return static_cast<double>(static_cast<float>(s)); }

}  // namespace mxq
