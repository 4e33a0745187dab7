#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mxq/model.hpp"
#include "mxq/supernet.hpp"
#include "mxq/trainer.hpp"

namespace mxq {

/// Bumped whenever the byte layout changes, including the packing bit order.
inline constexpr std::uint32_t kPackedFormatVersion = 1;
inline constexpr std::uint32_t kTrainingFormatVersion = 1;

struct PackedTensor {
  std::string name;
  Shape shape;
  int bits = kFullPrecisionBits;  // 2..8 or 32
  float scale = 0.0f;             // not stored for 32 bits
  /// ceil(numel * bits / 8) bytes; float32 little-endian for 32 bits.
  std::vector<std::uint8_t> payload;
};

/// Layout, all integers little-endian:
///   "MXQ1" u32 version u64 config_hash u32 count
///   per tensor: u32 name_len name u32 rank u64 dims[rank] u8 bits
///               [f32 scale if bits != 32] u64 payload_len payload
struct PackedCheckpoint {
  std::uint32_t version = kPackedFormatVersion;
  std::uint64_t config_hash = 0;
  std::vector<PackedTensor> tensors;
};

std::vector<std::uint8_t> serialize(const PackedCheckpoint& ckpt);
/// Strict parse; rejects bad magic, versions, lengths and trailing bytes.
PackedCheckpoint parse_packed(std::span<const std::uint8_t> bytes);

/// Bit-width of every non-scale parameter under `plan`; only quantizable
/// weight matrices get less than 32 bits.
std::map<std::string, int> tensor_bits(const Model& model, const NetworkPlan& plan);

/// Integer codes and scales of the weights as `plan` quantizes them.
/// Mixed units cannot be packed.
PackedCheckpoint pack_model(const Model& model, const NetworkPlan& plan);

/// Real values stored in a record: q * scale, or the float32 values.
std::vector<double> reconstruct(const PackedTensor& t);

/// Fixed-bit plan matching the records' bit-widths; per-layer when every
/// layer is uniform, per-module otherwise.
NetworkPlan plan_from_packed(const Model& model, const PackedCheckpoint& ckpt);

/// Overwrites every non-scale parameter of `model` with reconstructed values
/// and sets the stored scale of each quantized record.
void load_packed(Model& model, const PackedCheckpoint& ckpt);

/// Everything needed to continue a pass bit-identically.
struct TrainingCheckpoint {
  std::uint64_t config_hash = 0;
  std::string phase;
  std::vector<int> scale_bits;
  std::vector<std::string> param_names;
  std::vector<std::vector<double>> param_values;
  std::vector<int> candidate_bits;
  std::vector<std::string> unit_names;
  std::vector<std::vector<double>> arch_logits;
  TrainState state;
};

TrainingCheckpoint capture(const Model& model, const ArchState* arch, const TrainState& state,
                           const std::string& phase);
/// Copies parameters (creating scales as needed) and arch logits back.
void restore(const TrainingCheckpoint& ckpt, Model& model, ArchState* arch);

std::vector<std::uint8_t> serialize(const TrainingCheckpoint& ckpt);
TrainingCheckpoint parse_training(std::span<const std::uint8_t> bytes);

/// Writes to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::string& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace mxq
