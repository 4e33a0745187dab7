#include <gtest/gtest.h>

#include <cmath>

#include "mxq/quantizer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mxq;
using mxq::testing::brute_force_quantize;

TEST(IntGrid, Ranges) {
  const IntGrid g2 = IntGrid::make(2);
  EXPECT_EQ(g2.q_min, -2);
  EXPECT_EQ(g2.q_max, 1);
  const IntGrid g8 = IntGrid::make(8);
  EXPECT_EQ(g8.q_min, -128);
  EXPECT_EQ(g8.q_max, 127);
  const IntGrid s4 = IntGrid::make(4, GridKind::Symmetric);
  EXPECT_EQ(s4.q_min, -7);
  EXPECT_EQ(s4.q_max, 7);
  EXPECT_THROW(IntGrid::make(1), Error);
  EXPECT_THROW(IntGrid::make(9), Error);
}

TEST(FakeQuantize, Example) {
  const auto out = fake_quantize_values(std::vector<double>{0.3, -0.7}, 0.25, IntGrid::make(2));
  EXPECT_EQ(out[0], 0.25);
  EXPECT_EQ(out[1], -0.5);
}

TEST(FakeQuantize, ZeroAndGridPointsAreFixed) {
  for (int b = 2; b <= 8; ++b) {
    const IntGrid g = IntGrid::make(b);
    for (double s : {0.01, 0.3, 2.0}) {
      EXPECT_EQ(fake_quantize_values(std::vector<double>{0.0}, s, g)[0], 0.0);
      for (int q = g.q_min; q <= g.q_max; ++q) {
        const double w = q * s;
        EXPECT_EQ(fake_quantize_values(std::vector<double>{w}, s, g)[0], w);
      }
    }
  }
}

TEST(FakeQuantize, RejectsNonPositiveScale) {
  EXPECT_THROW(fake_quantize_values(std::vector<double>{1.0}, 0.0, IntGrid::make(4)), Error);
  Tensor w({1}, {1.0}, true);
  EXPECT_THROW(fake_quantize(w, Tensor::scalar(-1.0, true), IntGrid::make(4)), Error);
}

TEST(FakeQuantize, ExhaustiveSmallGridsWithExactTies) {
  // Power-of-two scales make every half-step tie exactly representable.
  for (int b : {2, 3, 4}) {
    for (GridKind kind : {GridKind::TwosComplement, GridKind::Symmetric}) {
      const IntGrid g = IntGrid::make(b, kind);
      for (double s : {0.125, 0.25, 0.5, 1.0, 2.0}) {
        for (int k = -4 * (1 << b); k <= 4 * (1 << b); ++k) {
          const double w = k * s / 8.0;
          const double got = fake_quantize_values(std::vector<double>{w}, s, g)[0];
          EXPECT_EQ(got, brute_force_quantize(w, s, g)) << "b=" << b << " s=" << s << " w=" << w;
        }
      }
    }
  }
}

TEST(FakeQuantize, ExhaustiveRandomScales) {
  Rng rng(17);
  for (int b : {2, 3, 4}) {
    const IntGrid g = IntGrid::make(b);
    for (double s : {0.07, 0.3, 0.9}) {
      for (int i = 0; i < 2000; ++i) {
        const double w = rng.uniform(-(1 << b) * s, (1 << b) * s);
        const double got = fake_quantize_values(std::vector<double>{w}, s, g)[0];
        EXPECT_DOUBLE_EQ(got, brute_force_quantize(w, s, g));
      }
    }
  }
}

TEST(FakeQuantize, ErrorBoundAndMonotonicity) {
  Rng rng(21);
  for (int b = 2; b <= 8; ++b) {
    const IntGrid g = IntGrid::make(b);
    const double s = 0.37;
    std::vector<double> w(3000);
    for (double& x : w) x = rng.uniform((g.q_min + 0.5) * s, (g.q_max - 0.5) * s);
    std::sort(w.begin(), w.end());
    const auto q = fake_quantize_values(w, s, g);
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_LE(std::abs(q[i] - w[i]), s / 2 + 1e-12);
      if (i) {
        EXPECT_LE(q[i - 1], q[i]);
      }
    }
  }
}

TEST(Ste, PassThroughAndClampExamples) {
  const IntGrid g = IntGrid::make(2);
  const double s = 0.25;
  const auto in = ste_backward(std::vector<double>{1.0}, std::vector<double>{1.2 * s}, s, IntGrid::make(4));
  EXPECT_EQ(in.grad_w[0], 1.0);
  const auto lo = ste_backward(std::vector<double>{1.0}, std::vector<double>{-2.8 * s}, s, g);
  EXPECT_EQ(lo.grad_w[0], 0.0);
  EXPECT_EQ(lo.grad_scale_raw, -2.0);
}

TEST(Ste, OnGridScaleGradientVanishes) {
  const IntGrid g = IntGrid::make(4);
  std::vector<double> w, up;
  for (int q = g.q_min + 1; q < g.q_max; ++q) {
    w.push_back(q * 0.5);
    up.push_back(1.0);
  }
  EXPECT_EQ(ste_backward(up, w, 0.5, g).grad_scale_raw, 0.0);
}

TEST(Ste, MasksOnBoundaryStraddlingInputs) {
  for (int b : {2, 3, 4}) {
    const IntGrid g = IntGrid::make(b);
    const double s = 0.5;
    std::vector<double> v;
    for (double edge : {double(g.q_min), double(g.q_max)}) {
      for (double d : {-0.75, -0.5, -0.25, -1e-9, 0.0, 1e-9, 0.25, 0.5, 0.75}) v.push_back(edge + d);
    }
    std::vector<double> w, up;
    for (double x : v) {
      w.push_back(x * s);
      up.push_back(1.0);
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto r = ste_backward(std::vector<double>{up[i]}, std::vector<double>{w[i]}, s, g);
      const double u = w[i] / s;
      const bool inside = u > g.q_min && u < g.q_max;
      EXPECT_EQ(r.grad_w[0], inside ? 1.0 : 0.0) << "b=" << b << " v=" << u;
      const double expected =
          inside ? round_half_away(u) - u : (u <= g.q_min ? double(g.q_min) : double(g.q_max));
      EXPECT_EQ(r.grad_scale_raw, expected) << "b=" << b << " v=" << u;
    }
  }
}

TEST(Ste, ScaleGradientNormalization) {
  const IntGrid g = IntGrid::make(4);
  Rng rng(4);
  std::vector<double> w(10), up(10);
  for (auto& x : w) x = rng.uniform(-3, 3);
  for (auto& x : up) x = rng.uniform(-1, 1);
  const auto r = ste_backward(up, w, 0.4, g);
  EXPECT_DOUBLE_EQ(r.grad_scale, r.grad_scale_raw / std::sqrt(10.0 * g.q_max));
}

TEST(Ste, TensorOperatorRoutesGradients) {
  const IntGrid g = IntGrid::make(3);
  Tensor w({4}, {0.1, -0.9, 0.55, 2.0}, true);
  Tensor s = Tensor::scalar(0.25, true);
  Tensor up({4}, {1.0, 2.0, -1.0, 3.0});
  ops::reduce_sum(ops::mul(fake_quantize(w, s, g), up)).backward();
  const auto ref = ste_backward(up.data(), w.data(), 0.25, g);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(w.grad()[i], ref.grad_w[i]);
  EXPECT_EQ(s.grad()[0], ref.grad_scale);
  EXPECT_TRUE(fake_quantize(w, s, g).node()->custom_gradient);
}

TEST(InitScale, Examples) {
  EXPECT_EQ(init_scale(std::vector<double>{0, 0, 0}, IntGrid::make(4)), 1e-8);
  EXPECT_NEAR(init_scale(std::vector<double>{1, -1, 1, -1}, IntGrid::make(8)), 0.17748, 1e-5);
  const std::vector<double> w{0.3, -1.1, 0.25};
  const std::vector<double> w3{0.9, -3.3, 0.75};
  EXPECT_NEAR(init_scale(w3, IntGrid::make(4)), 3 * init_scale(w, IntGrid::make(4)), 1e-15);
}

TEST(SnapScale, IsFloatExact) {
  for (double s : {0.1, 1.0 / 3.0, 1e-8, 12.345}) {
    const double t = snap_scale(s);
    EXPECT_EQ(static_cast<double>(static_cast<float>(t)), t);
    EXPECT_NEAR(t, s, s * 1e-7);
  }
}
