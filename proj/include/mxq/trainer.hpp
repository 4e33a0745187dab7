#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mxq/dataset.hpp"
#include "mxq/losses.hpp"
#include "mxq/model.hpp"
#include "mxq/optimizer.hpp"
#include "mxq/supernet.hpp"

namespace mxq {

enum class Pass2Init { StartingPoint, Pass1Weights };

struct TrainConfig {
  std::size_t steps = 3000;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.10;
  AdamWConfig adamw;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  double temperature_start = 1.0;
  double temperature_end = 0.03;
  /// KL-regularized objective with fp teacher and uniform students; when
  /// off, Pass 1 minimizes L_mp + eta * C_size only.
  bool kl_regularization = true;
  /// Forward fp, mp and one uniformly drawn student per step instead of all.
  bool subnet_sampling = true;
  Pass2Init pass2_init = Pass2Init::Pass1Weights;
  LossCoefficients coeffs;
  std::vector<int> candidate_bits = {2, 4, 8};
  SearchGranularity granularity = SearchGranularity::PerLayer;
  double arch_lr_scale = 1.0;
  double scale_lr_scale = 1.0;
  double grad_clip = 5.0;
  /// C_size is divided by this before entering the loss (megabits).
  double size_unit_bits = 1e6;
  bool size_counts_overhead = true;
  bool size_counts_scales = true;
  bool strict_coefficients = false;

  void validate() const;
};

/// Optimizer and schedule state; together with the parameters it fully
/// determines the rest of a run.
struct TrainState {
  std::size_t step = 0;
  std::size_t optimizer_steps = 0;
  std::vector<std::vector<double>> first_moments;
  std::vector<std::vector<double>> second_moments;
  double temperature = 1.0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
};

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  double temperature = 0.0;
  double loss = 0.0;
  std::optional<double> ctc_fp, ctc_mp;
  std::map<int, double> ctc_student;
  std::optional<double> kl_mp;
  std::map<int, double> kl_student;
  std::optional<double> size_mbits;
  std::optional<double> expected_avg_bits;
  double grad_norm = 0.0;
  std::optional<int> sampled_bits;
};

inline constexpr const char* kMetricsSchemaVersion = "mxq-metrics-v1";

/// Fixed column order for the per-step metrics CSV.
std::vector<std::string> metrics_columns(const std::vector<int>& candidate_bits);
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows,
                       const std::vector<int>& candidate_bits);

struct PassResult {
  std::vector<MetricsRow> metrics;
  TrainState state;
  double wall_seconds = 0.0;
  /// Pass 1 only, once the step budget is used up.
  std::optional<BitAssignment> bits;
};

struct RunOptions {
  const TrainState* resume = nullptr;
  /// Stop before this step (exclusive); defaults to the configured budget.
  std::size_t stop_at = std::numeric_limits<std::size_t>::max();
  std::function<void(const MetricsRow&)> on_step;
};

/// Raised when a step produces a non-finite loss or gradient. Parameters are
/// left at their values from the last good step.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Joint mixed-precision search and quantized training.
PassResult run_pass1(Model& model, ArchState& arch, const TrainConfig& cfg, const Dataset& data,
                     const RunOptions& opts = {});

/// Fine-tuning with frozen per-unit bit-widths.
PassResult run_pass2(Model& model, const BitAssignment& frozen, const TrainConfig& cfg,
                     const Dataset& data, const RunOptions& opts = {});

/// Uniform-precision QAT; bits == 32 trains the unquantized model.
PassResult run_uniform_baseline(Model& model, int bits, const TrainConfig& cfg,
                                const Dataset& data, const RunOptions& opts = {});

/// Initial weights for Pass 2 according to cfg.pass2_init.
Model pass2_initial_model(const Model& starting_point, const Model& pass1_model, Pass2Init init);

/// Arch state for Pass 1 over the model's search units.
ArchState make_arch_state(const Model& model, const TrainConfig& cfg);

/// Batch indices for a step; a pure function of (seed, step).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step,
                                       std::size_t batch_size, std::size_t dataset_size);

}  // namespace mxq
