#pragma once

#include <span>
#include <string>
#include <vector>

#include "mxq/model.hpp"
#include "mxq/supernet.hpp"

namespace mxq {

/// Parameters of one group stored at one bit-width.
struct GroupBits {
  std::string name;
  std::size_t params = 0;
  int bits = kFullPrecisionBits;
  bool encoder = false;
  /// Weight matrices (as opposed to biases and norms).
  bool weights = false;
};

/// sum(params * 32) / sum(params * bits). Throws for bits outside {2..8, 32}.
double compression_ratio(std::span<const GroupBits> groups);

/// Ratio for a model whose quantized fraction f sits at `encoder_bits`
/// (possibly fractional) and the rest at `rest_bits`.
double compression_ratio(double f, double encoder_bits, double rest_bits = kFullPrecisionBits);

/// One decimal, as printed in result tables.
double round_ratio(double ratio);

struct CompressionReport {
  std::vector<GroupBits> groups;
  double quantized_fraction = 0.0;
  /// Over encoder weight matrices only.
  double average_encoder_bits = 0.0;
  double total_fp_bits = 0.0;
  /// Includes scale_bits.
  double total_compressed_bits = 0.0;
  /// 32 bits per stored scale when scales are counted.
  double scale_bits = 0.0;
  double ratio = 1.0;
  bool scales_counted = true;
  std::vector<int> unit_bits;
  std::vector<std::string> unit_names;
  std::string arch_text;

  std::string text() const;
  std::string json() const;
};

/// Report for the network `plan` builds from `model`; `arch`, when given,
/// adds the alpha distribution.
CompressionReport emit_report(const Model& model, const NetworkPlan& plan,
                              const ArchState* arch = nullptr, bool count_scales = true);

}  // namespace mxq
