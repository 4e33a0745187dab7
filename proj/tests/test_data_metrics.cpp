#include <gtest/gtest.h>

#include <cmath>

#include "mxq/dataset.hpp"
#include "mxq/metrics.hpp"
#include "mxq/rng.hpp"

using namespace mxq;

namespace {

Tensor argmax_rows(const std::vector<int>& argmax, std::size_t V) {
  std::vector<double> v(argmax.size() * V, std::log(0.1 / (V - 1)));
  for (std::size_t t = 0; t < argmax.size(); ++t) v[t * V + argmax[t]] = std::log(0.9);
  return Tensor({argmax.size(), V}, v);
}

}  // namespace

TEST(GreedyDecode, Examples) {
  EXPECT_EQ(greedy_decode(argmax_rows({1, 1, 0, 2, 2}, 3)), (LabelSequence{1, 2}));
  EXPECT_TRUE(greedy_decode(argmax_rows({0, 0, 0}, 3)).empty());
  EXPECT_EQ(greedy_decode(argmax_rows({1, 0, 1}, 3)), (LabelSequence{1, 1}));
}

TEST(TokenError, Examples) {
  const LabelSequence r{1, 2, 3};
  EXPECT_EQ(token_error_rate(r, r), 0.0);
  EXPECT_DOUBLE_EQ(token_error_rate(LabelSequence{1, 3}, r), 1.0 / 3.0);
  EXPECT_EQ(token_error_rate(LabelSequence{2}, LabelSequence{1}), 1.0);
  EXPECT_DOUBLE_EQ(corpus_token_error_rate({{1, 3}, {2}}, {{1, 2, 3}, {1}}), 2.0 / 4.0);
}

TEST(TokenError, EditDistanceIsAMetric) {
  Rng rng(5);
  auto random_seq = [&] {
    LabelSequence s(rng.below(6));
    for (int& x : s) x = 1 + static_cast<int>(rng.below(3));
    return s;
  };
  for (int i = 0; i < 500; ++i) {
    const LabelSequence a = random_seq(), b = random_seq(), c = random_seq();
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_EQ(edit_distance(a, b) == 0, a == b);
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
  }
}

TEST(Dataset, NoiselessFramesAreSeparable) {
  DataSpec spec;
  spec.noise = 0.0;
  spec.num_utterances = 20;
  const auto emb = class_embeddings(spec);
  for (const Utterance& u : generate_dataset(spec)) {
    const std::size_t T = u.features.dim(0), D = u.features.dim(1);
    std::vector<int> frame_class;
    for (std::size_t t = 0; t < T; ++t) {
      int best = -1;
      double best_d = INFINITY;
      for (std::size_t k = 0; k < emb.size(); ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < D; ++j) d += std::pow(u.features.at(t * D + j) - emb[k][j], 2);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(k) + 1;
        }
      }
      ASSERT_EQ(best_d, 0.0);
      frame_class.push_back(best);
    }
    LabelSequence blocks;
    for (std::size_t t = 0; t < T; ++t)
      if (t == 0 || frame_class[t] != frame_class[t - 1]) blocks.push_back(frame_class[t]);
    EXPECT_EQ(blocks, u.target);
  }
}

TEST(Dataset, LengthBoundsAndDeterminism) {
  DataSpec spec;
  spec.num_utterances = 50;
  const Dataset a = generate_dataset(spec), b = generate_dataset(spec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t L = a[i].target.size(), T = a[i].features.dim(0);
    EXPECT_GE(L, spec.min_target_len);
    EXPECT_LE(L, spec.max_target_len);
    EXPECT_GE(T, 2 * L);
    EXPECT_LE(T, 4 * L);
    for (std::size_t j = 1; j < L; ++j) EXPECT_NE(a[i].target[j], a[i].target[j - 1]);
    EXPECT_EQ(a[i].target, b[i].target);
    EXPECT_TRUE(std::equal(a[i].features.data().begin(), a[i].features.data().end(),
                           b[i].features.data().begin()));
  }
  DataSpec other = spec;
  other.seed = 99;
  EXPECT_EQ(class_embeddings(other), class_embeddings(spec));
}

TEST(Dataset, RejectsBadSpecs) {
  DataSpec spec;
  spec.vocab_size_with_blank = 1;
  EXPECT_THROW(spec.validate(), Error);
  spec = DataSpec{};
  spec.min_target_len = 5;
  spec.max_target_len = 4;
  EXPECT_THROW(spec.validate(), Error);
  spec = DataSpec{};
  spec.noise = -1.0;
  EXPECT_THROW(spec.validate(), Error);
}
