#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mxq/model.hpp"
#include "mxq/rng.hpp"
#include "mxq/tensor.hpp"

namespace mxq {

/// Per-unit architecture logits (log alpha), temperature and last sample.
struct ArchState {
  std::vector<int> candidate_bits;  // ascending
  std::vector<std::string> unit_names;
  std::vector<Tensor> logits;       // one [num_candidates] tensor per unit, learnable
  double temperature = 1.0;
  std::vector<Tensor> last_sample;  // lambda per unit

  /// Zero logits (uniform alpha) for every unit.
  static ArchState uniform(std::vector<std::string> unit_names, std::vector<int> candidate_bits);

  std::size_t num_units() const { return logits.size(); }
  /// FNV-1a over the raw logit bytes.
  std::uint64_t logits_hash() const;
};

/// Count of quantized parameters per search unit plus fixed overhead.
struct SizeModel {
  std::vector<std::size_t> unit_params;
  std::vector<int> candidate_bits;
  double overhead_bits = 0.0;

  /// Search units of `model`; overhead counts unquantized parameters and,
  /// when requested, one 32-bit scale per quantized matrix.
  static SizeModel from_model(const Model& model, SearchGranularity g,
                              std::vector<int> candidate_bits, bool count_overhead,
                              bool count_scales);
};

/// Fresh Gumbel noise G = -log(-log(U)), U uniform on (0, 1).
std::vector<double> gumbel_noise(std::size_t n, Rng& rng);

/// softmax((logits + G) / T) on plain values.
std::vector<double> gumbel_softmax_values(std::span<const double> logits,
                                          std::span<const double> gumbel, double temperature);

/// Differentiable in `logits`; the noise is a constant.
Tensor gumbel_softmax(const Tensor& logits, std::span<const double> gumbel, double temperature);

/// Draws fresh noise for every unit independently and stores the samples in
/// `arch.last_sample`.
void sample_arch(ArchState& arch, Rng& rng);

/// Noise-free one-hot lambda on the argmax candidate (evaluation mode).
void argmax_arch(ArchState& arch);

/// sum_i lambda_i * candidate_i(input)
Tensor mix_layer(const Tensor& input, std::span<const std::function<Tensor(const Tensor&)>> candidates,
                 const Tensor& lambda);

/// Mixed-precision plan for `model` from the current samples in `arch`.
NetworkPlan mixed_plan(const Model& model, const ArchState& arch, SearchGranularity g);

/// sum_u sum_i lambda_i^u * b_i * n_u + overhead (bits).
Tensor expected_size_bits(std::span<const Tensor> lambdas, const SizeModel& size);

struct BitAssignment {
  std::vector<int> unit_bits;
  double average_bits = 0.0;
};

/// Parameter-weighted average bit-width over search units.
double average_bits(std::span<const int> unit_bits, std::span<const std::size_t> unit_params);

/// argmax over logits per unit, ties resolved toward the lower bit-width.
BitAssignment finalize_bitwidths(const ArchState& arch, std::span<const std::size_t> unit_params);

/// Exponential anneal from t_start at step 0 to t_end at the last step.
double temperature_at(std::size_t step, std::size_t total_steps, double t_start, double t_end);

/// Human-readable bit-width report: per-unit bits, alpha distribution, average.
std::string bitwidth_report(const ArchState& arch, const BitAssignment& bits);

}  // namespace mxq
