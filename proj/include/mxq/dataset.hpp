#pragma once

#include <cstdint>
#include <vector>

#include "mxq/losses.hpp"
#include "mxq/tensor.hpp"

namespace mxq {

/// Synthetic CTC task: every target token is rendered as a block of 2-4
/// frames of that token's class embedding plus Gaussian noise.
struct DataSpec {
  std::size_t num_utterances = 256;
  std::size_t min_target_len = 3;
  std::size_t max_target_len = 6;
  int vocab_size_with_blank = 9;
  int input_dim = 16;
  int min_frames_per_token = 2;
  int max_frames_per_token = 4;
  double noise = 0.5;
  /// Seeds the class embeddings; train and dev sets must share it.
  std::uint64_t task_seed = 1;
  /// Seeds the utterances.
  std::uint64_t seed = 2;

  void validate() const;
};

struct Utterance {
  Tensor features;  // [T x input_dim]
  LabelSequence target;
};

using Dataset = std::vector<Utterance>;

/// Row v-1 is the embedding of token v.
std::vector<std::vector<double>> class_embeddings(const DataSpec& spec);

/// Deterministic in (task_seed, seed, index). Adjacent target tokens differ.
Utterance generate_utterance(const DataSpec& spec, std::size_t index);
Dataset generate_dataset(const DataSpec& spec);

}  // namespace mxq
