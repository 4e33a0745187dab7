#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mxq/tensor.hpp"

namespace mxq {

inline constexpr int kBlank = 0;

using LabelSequence = std::vector<int>;

/// Minimum frame count that can align `target` (one blank between repeats).
std::size_t ctc_min_frames(std::span<const int> target);

/// Negative log of the summed probability of all CTC alignments of `target`
/// under `log_posteriors` [T x V]. Log-space alpha recursion forward, alpha-beta
/// gradient backward. Throws when T is too short to align the target.
Tensor ctc_loss(const Tensor& log_posteriors, std::span<const int> target);

/// mean_t sum_v exp(p_t[v]) * (p_t[v] - q_t[v]) with the teacher detached.
Tensor kl_regularizer(const Tensor& teacher_log_probs, const Tensor& student_log_probs);

/// Coefficients of the KL-regularized objective plus the size penalty.
/// Defaults: beta_mp = beta_2 = beta_4 = lambda_4 = lambda_8 = 1 and
/// beta_8 = lambda_2 = 0; eta and beta_kl are the wav2vec2-base settings.
struct LossCoefficients {
  double eta = 2e-5;
  double beta_mp = 1.0;
  double beta_kl = 0.05;
  std::map<int, double> beta = {{2, 1.0}, {4, 1.0}, {8, 0.0}};
  std::map<int, double> lambda = {{2, 0.0}, {4, 1.0}, {8, 1.0}};

  void validate() const;
};

/// Batch-averaged loss terms of the networks forwarded this step. Absent
/// networks contribute nothing.
struct NetworkLosses {
  std::optional<Tensor> ctc_fp;
  std::optional<Tensor> ctc_mp;
  std::map<int, Tensor> ctc_student;
  std::optional<Tensor> kl_mp;
  std::map<int, Tensor> kl_student;
};

struct LossBreakdown {
  Tensor total;
  double ctc_fp = 0.0;
  double ctc_mp = 0.0;
  std::map<int, double> ctc_student;
  double kl_mp = 0.0;
  std::map<int, double> kl_student;
  double size_term = 0.0;  // eta * C_size in loss units
};

/// L = L_fp + L_mp + sum_i lambda_i L_i + beta_mp O_mp + beta_kl sum_i beta_i O_i
///     + eta * size. In strict mode a nonzero coefficient on a student that was
/// not forwarded is an error.
LossBreakdown composite_loss(const NetworkLosses& terms, const LossCoefficients& coeffs,
                             const std::optional<Tensor>& size_megabits, bool strict = false);

}  // namespace mxq
