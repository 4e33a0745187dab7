#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "mxq/tensor.hpp"

namespace mxq {

/// Linear warmup from 0 to base_lr over the first warmup_fraction of the
/// steps, then linear decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// One optimized tensor with its own learning-rate multiplier and decay flag.
struct ParamSlot {
  Tensor tensor;
  double lr_scale = 1.0;
  bool decay = false;
  /// Lower bound applied after every update (learnable scales stay positive).
  double floor = -std::numeric_limits<double>::infinity();
  /// Round to float32 after every update (values that are stored as float32).
  bool snap_float32 = false;
};

/// Decoupled-weight-decay Adam over a fixed list of tensors.
class AdamW {
 public:
  AdamW(std::vector<ParamSlot> params, AdamWConfig cfg);

  /// Global L2 norm of the current gradients.
  double grad_norm() const;
  /// Rescales gradients so the global norm is at most max_norm; returns the
  /// norm before clipping.
  double clip_grad_norm(double max_norm);
  void step(double lr);
  void zero_grad();

  std::size_t steps_taken() const { return t_; }
  const std::vector<ParamSlot>& params() const { return params_; }

  /// Moment buffers, for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  std::vector<ParamSlot> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace mxq
