#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mxq/compression.hpp"
#include "mxq/config.hpp"
#include "mxq/metrics.hpp"

namespace mxq {

inline constexpr const char* kSummarySchemaVersion = "mxq-summary-v1";

/// One trained system, comparable across modes.
struct SummaryRow {
  std::string system;
  std::string mode;
  double bits = kFullPrecisionBits;  // encoder average
  int cnn_bits = kFullPrecisionBits;
  double comp_ratio = 1.0;
  double train_time_s = 0.0;
  double dev_loss = 0.0;
  double dev_token_error = 0.0;
  double test_loss = 0.0;
  double test_token_error = 0.0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::string unit_bits;  // space separated
};

std::vector<std::string> summary_columns();
bool is_timing_column(const std::string& column);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::string& path);

struct Datasets {
  Dataset train, dev, test;
};
Datasets make_datasets(const RunConfig& cfg);

/// Loads cfg.starting_point or pretrains a full-precision model; the
/// pretraining time is written to *seconds when given.
Model make_starting_point(const RunConfig& cfg, const Dataset& train, double* seconds = nullptr);

/// delta[u][i]: loss increase when only unit u is quantized at
/// candidate_bits[i], measured with the weights of the uniform candidate_bits[i] model.
std::vector<std::vector<double>> measure_sensitivity(const std::map<int, Model>& uniform_models,
                                                     const std::vector<int>& candidate_bits,
                                                     SearchGranularity g, const Dataset& data);

/// Cheapest bit-width per unit whose loss increase is at most a threshold,
/// with the smallest threshold whose average bit-width meets the target.
BitAssignment assign_by_threshold(const std::vector<std::vector<double>>& delta,
                                  const std::vector<int>& candidate_bits,
                                  const std::vector<std::size_t>& unit_params,
                                  double target_average_bits);

struct ExperimentResult {
  std::vector<SummaryRow> rows;
  std::optional<BitAssignment> bits;
  /// Training wall time of the mode's final system, including the runs it depends on.
  double train_seconds = 0.0;
  double pretrain_seconds = 0.0;
};

/// Trains the configured mode and writes metrics, checkpoints, reports,
/// the summary CSV and the archived config under cfg.out_dir.
ExperimentResult run_experiment(const RunConfig& cfg);
ExperimentResult run_experiment(const std::string& config_path);

/// Side-by-side view of summary rows with raw deltas against the first file.
std::string compare_summaries(const std::vector<std::pair<std::string, std::vector<SummaryRow>>>& runs);

}  // namespace mxq
