#include "mxq/dataset.hpp"

#include <cmath>
#include <string>

#include "mxq/rng.hpp"

namespace mxq {

void DataSpec::validate() const {
  std::string problems;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) problems += (problems.empty() ? "" : "; ") + msg;
  };
  need(vocab_size_with_blank >= 2, "vocab_size_with_blank must be at least 2");
  need(num_utterances > 0, "num_utterances must be positive");
  need(min_target_len >= 1 && min_target_len <= max_target_len,
       "target length range must satisfy 1 <= min <= max");
  need(input_dim > 0, "input_dim must be positive");
  need(min_frames_per_token >= 2 && min_frames_per_token <= max_frames_per_token,
       "frames per token must satisfy 2 <= min <= max");
  need(noise >= 0.0, "noise must be non-negative");
  if (!problems.empty()) throw Error("data spec: " + problems);
}

std::vector<std::vector<double>> class_embeddings(const DataSpec& spec) {
  Rng rng(derive_seed(spec.task_seed, {0x656d62ULL}));
  const auto tokens = static_cast<std::size_t>(spec.vocab_size_with_blank - 1);
  std::vector<std::vector<double>> emb(tokens, std::vector<double>(spec.input_dim));
  for (auto& row : emb) {
    double norm = 0.0;
    for (double& v : row) {
      v = rng.normal();
      norm += v * v;
    }
    // Unit-variance entries on average: ||e|| = sqrt(dim).
    const double f = std::sqrt(static_cast<double>(spec.input_dim) / norm);
    for (double& v : row) v *= f;
  }
  return emb;
}

Utterance generate_utterance(const DataSpec& spec, std::size_t index) {
  spec.validate();
  const auto emb = class_embeddings(spec);
  Rng rng(derive_seed(spec.seed, {0x757474ULL, index}));
  const std::size_t len =
      spec.min_target_len + rng.below(spec.max_target_len - spec.min_target_len + 1);
  const auto tokens = static_cast<std::uint64_t>(spec.vocab_size_with_blank - 1);

  Utterance u;
  for (std::size_t i = 0; i < len; ++i) {
    int tok;
    do {
      tok = 1 + static_cast<int>(rng.below(tokens));
    } while (tokens > 1 && !u.target.empty() && tok == u.target.back());
    u.target.push_back(tok);
  }
  std::vector<double> frames;
  std::size_t T = 0;
  const auto span = static_cast<std::uint64_t>(spec.max_frames_per_token - spec.min_frames_per_token + 1);
  for (int tok : u.target) {
    const std::size_t n = static_cast<std::size_t>(spec.min_frames_per_token) + rng.below(span);
    for (std::size_t f = 0; f < n; ++f) {
      for (double e : emb[static_cast<std::size_t>(tok - 1)]) frames.push_back(e + spec.noise * rng.normal());
      ++T;
    }
  }
  u.features = Tensor({T, static_cast<std::size_t>(spec.input_dim)}, std::move(frames));
  return u;
}

Dataset generate_dataset(const DataSpec& spec) {
  spec.validate();
  Dataset d;
  d.reserve(spec.num_utterances);
  for (std::size_t i = 0; i < spec.num_utterances; ++i) d.push_back(generate_utterance(spec, i));
  return d;
}

}  // namespace mxq
