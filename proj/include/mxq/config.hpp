#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mxq/dataset.hpp"
#include "mxq/model.hpp"
#include "mxq/trainer.hpp"

namespace mxq {

enum class QuantMode { FullPrecision, Uniform, MixedSearch, TwoStageBaseline };

std::string mode_name(QuantMode m);

struct RunConfig {
  std::string name = "run";
  QuantMode mode = QuantMode::MixedSearch;
  /// Uniform mode only.
  int bits = 8;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/run";

  ModelConfig model;
  DataSpec data;
  std::size_t dev_utterances = 64;
  std::size_t test_utterances = 64;
  std::uint64_t dev_seed = 3;
  std::uint64_t test_seed = 4;

  /// Training checkpoint used as the common starting point; when empty the
  /// starting point is a full-precision model trained for pretrain_steps.
  std::string starting_point;
  std::size_t pretrain_steps = 0;
  double pretrain_learning_rate = 2e-3;

  TrainConfig train;
  bool run_pass2 = true;
  std::size_t pass2_steps = 0;  // 0: same as train.steps

  /// Two-stage baseline: target for the encoder average bit-width.
  double target_average_bits = 4.6;
  std::size_t sensitivity_utterances = 64;

  /// Original document, archived beside the outputs.
  std::string source_text;
};

/// Parses and validates; every schema violation is reported in one error.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
/// Effective configuration as JSON (after command-line overrides).
std::string to_json(const RunConfig& cfg);
/// Description of every accepted key with its type and default.
std::string config_schema();

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

}  // namespace mxq
