#include "mxq/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mxq {

double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps == 0) return 0.0;
  const double s = static_cast<double>(std::min(step, total_steps));
  const double total = static_cast<double>(total_steps);
  const double warm = warmup_fraction * total;
  if (s < warm) return base_lr * s / warm;
  if (warm >= total) return base_lr;
  return base_lr * (total - s) / (total - warm);
}

AdamW::AdamW(std::vector<ParamSlot> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const ParamSlot& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

double AdamW::grad_norm() const {
  double sq = 0.0;
  for (const ParamSlot& p : params_)
    for (double g : p.tensor.grad()) sq += g * g;
  return std::sqrt(sq);
}

double AdamW::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (ParamSlot& p : params_)
      for (double& g : p.tensor.mutable_grad()) g *= f;
  }
  return norm;
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ParamSlot& p = params_[i];
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    // Tensors the step never reached are left untouched, moments included.
    if (g.empty()) continue;
    const double plr = lr * p.lr_scale;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      if (p.decay) w[j] -= plr * cfg_.weight_decay * w[j];
      w[j] -= plr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      w[j] = std::max(w[j], p.floor);
      if (p.snap_float32) w[j] = static_cast<double>(static_cast<float>(w[j]));
    }
  }
}

void AdamW::zero_grad() {
  for (ParamSlot& p : params_) p.tensor.zero_grad();
}

}  // namespace mxq
