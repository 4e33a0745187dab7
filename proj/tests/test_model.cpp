#include <gtest/gtest.h>

#include <set>

#include "mxq/model.hpp"
#include "test_util.hpp"

using namespace mxq;
namespace tu = mxq::testing;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.num_layers = 2;
  c.d_model = 16;
  c.num_heads = 2;
  c.d_ffn = 32;
  c.vocab_size_with_blank = 5;
  c.input_feature_dim = 6;
  return c;
}

Tensor features(std::size_t T, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return tu::random_tensor({T, dim}, rng, -1, 1, false);
}

}  // namespace

TEST(Model, SixEncoderWeightsPerLayer) {
  const Model m(small(), 1);
  EXPECT_EQ(m.encoder_weights().size(), 2u * Model::kWeightsPerLayer);
  const auto per_layer = m.search_units(SearchGranularity::PerLayer);
  ASSERT_EQ(per_layer.size(), 2u);
  EXPECT_EQ(per_layer[0].weights.size(), 6u);
  const auto per_module = m.search_units(SearchGranularity::PerModule);
  ASSERT_EQ(per_module.size(), 4u);
  EXPECT_EQ(per_module[0].weights.size(), 4u);
  EXPECT_EQ(per_module[1].weights.size(), 2u);
}

TEST(Model, EncoderFractionIsDefinition) {
  const Model m(small(), 1);
  EXPECT_DOUBLE_EQ(m.encoder_fraction(),
                   double(m.encoder_parameters()) / double(m.total_parameters()));
  std::size_t total = 0;
  for (const auto& p : m.named_parameters()) total += p.tensor.numel();
  EXPECT_EQ(total, m.total_parameters());
}

TEST(Model, SameSeedSameWeights) {
  const Model a(small(), 42), b(small(), 42), c(small(), 43);
  const auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                           pb[i].tensor.data().begin()));
    any_diff = any_diff || !std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                                       pc[i].tensor.data().begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, PosteriorRowsAreNormalized) {
  const Model m(small(), 3);
  const Tensor lp = m.forward(features(7, 6, 1));
  ASSERT_EQ(lp.shape(), (Shape{7, 5}));
  for (std::size_t t = 0; t < 7; ++t) {
    double s = 0.0;
    for (std::size_t v = 0; v < 5; ++v) s += std::exp(lp.at(t * 5 + v));
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Model, ZeroHeadGivesUniformPosteriors) {
  Model m(small(), 3);
  for (double& w : m.head_weight().master.mutable_data()) w = 0.0;
  for (auto& p : m.named_parameters())
    if (p.name == "head.bias")
      for (double& b : p.tensor.mutable_data()) b = 0.0;
  const Tensor lp = m.forward(features(4, 6, 2));
  for (double v : lp.data()) EXPECT_NEAR(std::exp(v), 1.0 / 5.0, 1e-12);
}

TEST(Model, SingleFrameInput) {
  const Model m(small(), 3);
  EXPECT_EQ(m.forward(features(1, 6, 3)).shape(), (Shape{1, 5}));
  EXPECT_THROW(m.forward(features(3, 5, 3)), ShapeError);
}

TEST(Model, UtterancesAreIndependent) {
  const Model m(small(), 5);
  const Tensor a = features(5, 6, 11), b = features(3, 6, 12);
  const Tensor la = m.forward(a), lb = m.forward(b);
  EXPECT_EQ(m.forward(b).data()[0], lb.data()[0]);
  EXPECT_EQ(m.forward(a).data()[4], la.data()[4]);
}

TEST(Model, GroupsPartitionEveryTensorOnce) {
  ModelConfig cfg = small();
  cfg.quantize_frontend = true;
  Model m(cfg, 1);
  m.ensure_scales({2, 4, 8});
  std::multiset<std::string> seen;
  for (const auto& g : m.groups())
    for (const auto& n : g.tensor_names) seen.insert(n);
  const auto params = m.named_parameters();
  EXPECT_EQ(seen.size(), params.size());
  std::size_t weights = 0;
  for (const auto& p : params) {
    EXPECT_EQ(seen.count(p.name), 1u) << p.name;
    if (p.kind != ParamKind::Scale) weights += p.tensor.numel();
  }
  // scales are trainable but stay out of the parameter counts
  std::size_t count = 0;
  for (const auto& g : m.groups()) {
    count += g.parameter_count;
    if (g.encoder) {
      EXPECT_TRUE(g.quantizable);
    }
  }
  EXPECT_EQ(count, weights);
  EXPECT_EQ(count, m.total_parameters());
}

TEST(Model, FrontendQuantizableOnlyInEightBitMode) {
  for (bool q : {false, true}) {
    ModelConfig cfg = small();
    cfg.quantize_frontend = q;
    const Model m(cfg, 1);
    for (const auto& g : m.groups())
      if (g.name == "frontend" || g.name == "head") {
        EXPECT_EQ(g.quantizable, q) << g.name;
      }
  }
}

TEST(Model, EnsureScalesCoversFrontendInEightBitMode) {
  ModelConfig cfg = small();
  cfg.quantize_frontend = true;
  Model m(cfg, 1);
  m.ensure_scales({2});
  EXPECT_TRUE(m.frontend_weight().scales.count(8));
  EXPECT_TRUE(m.head_weight().scales.count(8));
  EXPECT_TRUE(m.encoder_weights()[0].scales.count(2));
  EXPECT_FALSE(m.encoder_weights()[0].scales.count(8));
}

TEST(Model, UniformPlanQuantizesEveryEncoderWeight) {
  Model m(small(), 1);
  m.ensure_scales({4});
  const NetworkWeights w = m.materialize(m.uniform_plan(4));
  ASSERT_EQ(w.encoder.size(), m.encoder_weights().size());
  for (std::size_t i = 0; i < w.encoder.size(); ++i) {
    const auto& qw = m.encoder_weights()[i];
    const auto ref = fake_quantize_values(qw.master.data(), qw.scale(4).item(), IntGrid::make(4));
    for (std::size_t j = 0; j < ref.size(); ++j) ASSERT_EQ(w.encoder[i].at(j), ref[j]);
  }
}

TEST(Model, MixedPlanWithOneHotEqualsFixed) {
  Model m(small(), 1);
  m.ensure_scales({2, 4, 8});
  const Tensor x = features(5, 6, 4);
  NetworkPlan mixed = m.full_precision_plan();
  for (auto& u : mixed.units) u = UnitPrecision::mixed(Tensor({3}, {0.0, 1.0, 0.0}), {2, 4, 8});
  const Tensor a = m.forward(x, m.materialize(mixed));
  const Tensor b = m.forward(x, m.materialize(m.uniform_plan(4)));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(Model, CloneIsDeep) {
  Model a(small(), 1);
  Model b = a.clone();
  b.encoder_weights()[0].master.mutable_data()[0] += 1.0;
  EXPECT_NE(a.encoder_weights()[0].master.at(0), b.encoder_weights()[0].master.at(0));
  a.copy_from(b);
  EXPECT_EQ(a.encoder_weights()[0].master.at(0), b.encoder_weights()[0].master.at(0));
}

TEST(Model, GradientThroughForward) {
  ModelConfig cfg = small();
  cfg.num_layers = 1;
  cfg.d_model = 4;
  cfg.d_ffn = 6;
  Model m(cfg, 9);
  const Tensor x = features(3, 6, 5);
  std::vector<Tensor> params;
  for (const auto& p : m.named_parameters()) params.push_back(p.tensor);
  EXPECT_LE(tu::gradient_error([&](auto&) { return tu::probe(m.forward(x)); }, params), 1e-4);
}

TEST(ModelConfig, HashTracksArchitecture) {
  ModelConfig a = small(), b = small();
  EXPECT_EQ(a.hash(), b.hash());
  b.d_ffn = 64;
  EXPECT_NE(a.hash(), b.hash());
  ModelConfig bad = small();
  bad.num_heads = 3;
  EXPECT_THROW(bad.validate(), Error);
}
