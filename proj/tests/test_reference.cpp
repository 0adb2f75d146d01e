#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace dcnv4;

namespace {

DcnConfig config(int k, int groups, bool softmax = false) {
  DcnConfig cfg;
  cfg.kernel_size = k;
  cfg.groups = groups;
  cfg.softmax_weights = softmax;
  return cfg;
}

struct SeededCase {
  TensorNHWC x;
  OffsetField off;
  WeightField w;
};

SeededCase golden_case() {
  return {testutil::golden("dcn_x"), OffsetField(testutil::golden("dcn_offset"), 2, 9),
          WeightField(testutil::golden("dcn_weight"), 2, 9)};
}

}  // namespace

TEST(SoftmaxK, EqualLogitsAreUniform) {
  const auto w = WeightField::create({1, 2, 2, 1}, 1, 9, fill::Constant{0.3f});
  const auto p = softmax_k(w);
  for (float v : p.values()) EXPECT_FLOAT_EQ(v, 1.0f / 9.0f);
}

TEST(SoftmaxK, LargeLogitDoesNotOverflow) {
  auto w = WeightField::create({1, 1, 1, 1}, 1, 9, fill::Zeros{});
  w.values()[0] = 1000.0f;
  const auto p = softmax_k(w);
  EXPECT_FLOAT_EQ(p.values()[0], 1.0f);
  for (int k = 1; k < 9; ++k) EXPECT_EQ(p.values()[k], 0.0f);
}

TEST(SoftmaxK, KnownValues) {
  const WeightField w(TensorNHWC::from_values({1, 1, 1, 3}, {1.0f, 2.0f, 3.0f}), 1, 3);
  const auto sm = softmax_k(w);
  const auto p = sm.values();
  EXPECT_NEAR(p[0], 0.09003057, 1e-7);
  EXPECT_NEAR(p[1], 0.24472847, 1e-7);
  EXPECT_NEAR(p[2], 0.66524096, 1e-7);
}

TEST(SoftmaxK, RowsSumToOneWithinUnitInterval) {
  const auto w = WeightField::create({2, 5, 5, 1}, 4, 9, fill::SeededUniform{3, -20.0f, 20.0f});
  const auto sm = softmax_k(w);
  const auto p = sm.values();
  for (std::size_t start = 0; start < p.size(); start += 9) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 9; ++k) {
      EXPECT_GE(p[start + k], 0.0f);
      EXPECT_LE(p[start + k], 1.0f);
      sum += p[start + k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Bilinear, IntegerLocationIsExactGridValue) {
  const auto x = testutil::uniform({1, 3, 4, 2}, 1);
  EXPECT_EQ(bilinear_sample(x, 0, 1, {1.0f, 2.0f}), x.at(0, 1, 2, 1));
}

TEST(Bilinear, CenterOfFourCorners) {
  const auto x = TensorNHWC::from_values({1, 2, 2, 1}, {1, 2, 3, 4});
  EXPECT_EQ(bilinear_sample(x, 0, 0, {0.5f, 0.5f}), 2.5f);
}

TEST(Bilinear, FarOutsideIsZero) {
  const auto x = testutil::uniform({1, 4, 4, 1}, 1);
  EXPECT_EQ(bilinear_sample(x, 0, 0, {-5.0f, -5.0f}), 0.0f);
}

TEST(Bilinear, PartialOverlapUsesZeroPadding) {
  const auto x = TensorNHWC::from_values({1, 2, 2, 1}, {1, 2, 3, 4});
  // Half a pixel above the top row: only the two bottom corners contribute.
  EXPECT_EQ(bilinear_sample(x, 0, 0, {-0.5f, 0.0f}), 0.5f);
}

TEST(Bilinear, NaNPropagates) {
  const auto x = testutil::uniform({1, 4, 4, 1}, 1);
  EXPECT_TRUE(std::isnan(bilinear_sample(x, 0, 0, {NAN, 1.0f})));
}

TEST(Bilinear, GroupedChannelAddressing) {
  const auto x = testutil::uniform({1, 3, 3, 8}, 4);
  EXPECT_EQ(bilinear_sample(x, 0, 1, 2, 4, {1.25f, 0.5f}), bilinear_sample(x, 0, 6, {1.25f, 0.5f}));
  EXPECT_THROW(bilinear_sample(x, 0, 1, 4, 4, {0, 0}), DimensionError);
}

TEST(DcnForwardRef, PointwiseIdentity) {
  const auto x = testutil::uniform({2, 5, 6, 8}, 1);
  const auto cfg = config(1, 2);
  const auto off = OffsetField::create(x.shape(), 2, 1, fill::Zeros{});
  const auto w = WeightField::create(x.shape(), 2, 1, fill::Constant{1.0f});
  EXPECT_EQ(dcn_forward_ref(x, off, w, cfg), x);
}

TEST(DcnForwardRef, ZeroInputGivesZeroOutput) {
  const Shape s{1, 6, 6, 8};
  const auto x = create(s, ElementType::fp32, fill::Zeros{});
  const auto off = OffsetField::create(s, 2, 9, fill::SeededUniform{1, -4.0f, 4.0f});
  const auto w = WeightField::create(s, 2, 9, fill::SeededUniform{2, -3.0f, 3.0f});
  for (bool softmax : {false, true}) {
    const auto y = dcn_forward_ref(x, off, w, config(3, 2, softmax));
    for (float v : y.f32()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(DcnForwardRef, GoldenSoftmaxOff) {
  const auto c = golden_case();
  const auto y = dcn_forward_ref(c.x, c.off, c.w, config(3, 2, false));
  const auto expected = testutil::golden("dcn_out_softmax_off");
  EXPECT_LE(testutil::max_abs_diff(y, expected), 1e-5);
}

TEST(DcnForwardRef, GoldenSoftmaxOn) {
  const auto c = golden_case();
  const auto y = dcn_forward_ref(c.x, c.off, c.w, config(3, 2, true));
  const auto expected = testutil::golden("dcn_out_softmax_on");
  EXPECT_LE(testutil::max_abs_diff(y, expected), 1e-6);
}

TEST(DcnForwardRef, GoldenInputsMatchLibraryGenerator) {
  EXPECT_EQ(testutil::golden("dcn_x"), testutil::uniform({1, 4, 4, 16}, 7));
  EXPECT_EQ(testutil::golden("dcn_offset"), testutil::uniform({1, 4, 4, 36}, 8, -2.0f, 2.0f));
  EXPECT_EQ(testutil::golden("dcn_weight"), testutil::uniform({1, 4, 4, 18}, 9));
}

TEST(DcnForwardRef, ShapeMismatchNamesAxis) {
  const auto x = testutil::uniform({1, 4, 4, 8}, 1);
  const auto cfg = config(3, 2);
  const auto w = WeightField::create(x.shape(), 2, 9, fill::Zeros{});
  const auto bad_h = OffsetField::create({1, 5, 4, 8}, 2, 9, fill::Zeros{});
  try {
    dcn_forward_ref(x, bad_h, w, cfg);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "H");
  }
  const auto bad_n = WeightField::create({2, 4, 4, 8}, 2, 9, fill::Zeros{});
  const auto off = OffsetField::create(x.shape(), 2, 9, fill::Zeros{});
  try {
    dcn_forward_ref(x, off, bad_n, cfg);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "N");
  }
  EXPECT_THROW(dcn_forward_ref(x, off, w, config(3, 3)), DimensionError);
  EXPECT_THROW(OffsetField(testutil::uniform({1, 4, 4, 17}, 1), 2, 9), DimensionError);
}

TEST(DcnForwardRef, RejectsEvenKernel) {
  const auto x = testutil::uniform({1, 4, 4, 8}, 1);
  const auto off = OffsetField::create(x.shape(), 1, 4, fill::Zeros{});
  const auto w = WeightField::create(x.shape(), 1, 4, fill::Zeros{});
  EXPECT_THROW(dcn_forward_ref(x, off, w, config(2, 1)), ConfigError);
}

TEST(DcnForwardRef, LinearInInput) {
  const Shape s{1, 7, 7, 8};
  const auto x = testutil::uniform(s, 1);
  const auto z = testutil::uniform(s, 2);
  const auto off = OffsetField::create(s, 2, 9, fill::SeededUniform{3, -2.0f, 2.0f});
  const auto w = WeightField::create(s, 2, 9, fill::SeededUniform{4, -1.0f, 1.0f});
  const float alpha = 0.75f, beta = -1.25f;
  for (bool softmax : {false, true}) {
    const auto cfg = config(3, 2, softmax);
    auto mix = x.to_float_vector();
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * mix[i] + beta * z.value(i);
    const auto lhs = dcn_forward_ref(TensorNHWC::from_values(s, mix), off, w, cfg);
    const auto fx = dcn_forward_ref(x, off, w, cfg);
    const auto fz = dcn_forward_ref(z, off, w, cfg);
    auto rhs = fx.to_float_vector();
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = alpha * rhs[i] + beta * fz.value(i);
    EXPECT_LE(normwise_relative_error(lhs, TensorNHWC::from_values(s, rhs)), 1e-5);
  }
}

TEST(DcnForwardRef, LinearInWeightsWithoutSoftmax) {
  const Shape s{2, 5, 6, 12};
  const auto x = testutil::uniform(s, 1);
  const auto off = OffsetField::create(s, 3, 9, fill::SeededUniform{3, -2.0f, 2.0f});
  const auto m1 = WeightField::create(s, 3, 9, fill::SeededUniform{5, -1.0f, 1.0f});
  const auto m2 = WeightField::create(s, 3, 9, fill::SeededUniform{6, -1.0f, 1.0f});
  const auto cfg = config(3, 3);
  auto mix = m1;
  for (std::size_t i = 0; i < mix.values().size(); ++i) mix.values()[i] = 2.0f * m1.values()[i] - 0.5f * m2.values()[i];
  const auto lhs = dcn_forward_ref(x, off, mix, cfg);
  const auto f1 = dcn_forward_ref(x, off, m1, cfg);
  const auto f2 = dcn_forward_ref(x, off, m2, cfg);
  auto rhs = f1.to_float_vector();
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = 2.0f * rhs[i] - 0.5f * f2.value(i);
  EXPECT_LE(normwise_relative_error(lhs, TensorNHWC::from_values(s, rhs)), 1e-5);
}

TEST(DcnForwardRef, TranslationEquivarianceWithZeroOffsets) {
  const int k = 3;
  const Shape s{1, 10, 10, 4};
  const auto x = testutil::uniform(s, 1);
  auto shifted = create(s, ElementType::fp32, fill::Zeros{});
  for (std::int64_t h = 0; h < s.h; ++h)
    for (std::int64_t w = 1; w < s.w; ++w)
      for (std::int64_t c = 0; c < s.c; ++c) shifted.f32()[s.index(0, h, w, c)] = x.at(0, h, w - 1, c);
  const auto off = OffsetField::create(s, 1, 9, fill::Zeros{});
  const auto m = WeightField::create(s, 1, 9, fill::Constant{0.0f});
  auto w = m;
  // Location-independent weights so that shifting the input shifts the output.
  const auto taps = seeded_uniform_values(9, 7, -1.0, 1.0);
  for (std::size_t loc = 0; loc < s.locations(); ++loc)
    for (int kk = 0; kk < 9; ++kk) w.values()[w.index(loc, 0, kk)] = taps[kk];
  const auto y = dcn_forward_ref(x, off, w, config(k, 1));
  const auto ys = dcn_forward_ref(shifted, off, w, config(k, 1));
  const int margin = k - 1;
  for (std::int64_t h = margin; h < s.h - margin; ++h)
    for (std::int64_t ww = margin + 1; ww < s.w - margin; ++ww)
      for (std::int64_t c = 0; c < s.c; ++c) EXPECT_EQ(ys.at(0, h, ww, c), y.at(0, h, ww - 1, c));
}

TEST(DcnForwardRef, ZeroOffsetsEqualWindowSum) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 1 + 2 * static_cast<int>(rng() % 3);
    const int G = 1 + static_cast<int>(rng() % 3);
    const Shape s{1 + static_cast<std::int64_t>(rng() % 2), 1 + static_cast<std::int64_t>(rng() % 7),
                  1 + static_cast<std::int64_t>(rng() % 7), G * (1 + static_cast<std::int64_t>(rng() % 4))};
    const int K = k * k;
    const auto x = testutil::uniform(s, rng());
    const auto off = OffsetField::create(s, G, K, fill::Zeros{});
    const auto w = WeightField::create(s, G, K, fill::SeededUniform{rng(), -1.0f, 1.0f});
    const auto y = dcn_forward_ref(x, off, w, config(k, G));
    const std::int64_t D = s.c / G;
    const int pad = (k - 1) / 2;
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t h = 0; h < s.h; ++h)
        for (std::int64_t ww = 0; ww < s.w; ++ww)
          for (std::int64_t c = 0; c < s.c; ++c) {
            const int g = static_cast<int>(c / D);
            const std::size_t loc = static_cast<std::size_t>((n * s.h + h) * s.w + ww);
            double acc = 0.0;
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j) {
                const auto hh = h + i - pad;
                const auto wj = ww + j - pad;
                if (hh < 0 || hh >= s.h || wj < 0 || wj >= s.w) continue;
                acc += double{w.values()[w.index(loc, g, i * k + j)]} * x.at(n, hh, wj, c);
              }
            ASSERT_NEAR(y.at(n, h, ww, c), acc, 1e-5);
          }
  }
}

TEST(DcnForwardRef, SoftmaxOutputsAreConvexCombinations) {
  const Shape s{1, 6, 6, 8};
  const auto x = testutil::uniform(s, 21);
  const auto off = OffsetField::create(s, 2, 9, fill::SeededUniform{22, -3.0f, 3.0f});
  const auto w = WeightField::create(s, 2, 9, fill::SeededUniform{23, -4.0f, 4.0f});
  const auto y = dcn_forward_ref(x, off, w, config(3, 2, true));
  for (std::int64_t h = 0; h < s.h; ++h)
    for (std::int64_t ww = 0; ww < s.w; ++ww)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const int g = static_cast<int>(c / 4);
        const std::size_t loc = static_cast<std::size_t>(h * s.w + ww);
        float lo = INFINITY, hi = -INFINITY, mag = 0.0f;
        for (int k = 0; k < 9; ++k) {
          const float py = static_cast<float>(h + k / 3 - 1) + off.values()[off.index(loc, g, k, 0)];
          const float px = static_cast<float>(ww + k % 3 - 1) + off.values()[off.index(loc, g, k, 1)];
          const float v = bilinear_sample(x, 0, c, {py, px});
          lo = std::min(lo, v);
          hi = std::max(hi, v);
          mag = std::max(mag, std::abs(v));
        }
        const double slack = convexity_slack(mag, 9);
        EXPECT_GE(y.at(0, h, ww, c), lo - slack);
        EXPECT_LE(y.at(0, h, ww, c), hi + slack);
      }
}

TEST(DcnForwardRef, OffsetScaleScalesDisplacement) {
  const Shape s{1, 6, 6, 4};
  const auto x = testutil::uniform(s, 1);
  const auto off = OffsetField::create(s, 1, 9, fill::SeededUniform{2, -1.0f, 1.0f});
  auto doubled = off;
  for (auto& v : doubled.values()) v *= 0.5f;
  const auto w = WeightField::create(s, 1, 9, fill::SeededUniform{3, -1.0f, 1.0f});
  auto cfg = config(3, 1);
  cfg.offset_scale = 2.0f;
  EXPECT_EQ(dcn_forward_ref(x, doubled, w, cfg), dcn_forward_ref(x, off, w, config(3, 1)));
}

TEST(DcnForwardRef, HalfStorageInputIsWidened) {
  const auto c = golden_case();
  const auto x16 = cast(c.x, ElementType::fp16);
  const auto y16 = dcn_forward_ref(x16, c.off, c.w, config(3, 2));
  const auto y = dcn_forward_ref(cast(x16, ElementType::fp32), c.off, c.w, config(3, 2));
  EXPECT_EQ(y16, y);
}

TEST(DcnBackwardRef, ZeroUpstreamGivesZeroGradients) {
  const auto c = golden_case();
  const auto g = dcn_backward_ref(c.x, c.off, c.w, config(3, 2, true),
                                  create(c.x.shape(), ElementType::fp32, fill::Zeros{}));
  for (float v : g.grad_x.f32()) EXPECT_EQ(v, 0.0f);
  for (float v : g.grad_offset.values()) EXPECT_EQ(v, 0.0f);
  for (float v : g.grad_weight.values()) EXPECT_EQ(v, 0.0f);
}

TEST(DcnBackwardRef, IdentityPassesGradientThrough) {
  const auto x = testutil::uniform({1, 4, 5, 6}, 1);
  const auto gy = testutil::uniform(x.shape(), 2);
  const auto off = OffsetField::create(x.shape(), 3, 1, fill::Zeros{});
  const auto w = WeightField::create(x.shape(), 3, 1, fill::Constant{1.0f});
  const auto g = dcn_backward_ref(x, off, w, config(1, 3), gy);
  EXPECT_EQ(g.grad_x, gy);
  // dL/dm = gy * x summed over the group's channels
  for (std::size_t loc = 0; loc < x.shape().locations(); ++loc)
    for (int grp = 0; grp < 3; ++grp) {
      float expected = 0.0f;
      for (int c = 0; c < 2; ++c) expected += gy.value(loc * 6 + grp * 2 + c) * x.value(loc * 6 + grp * 2 + c);
      EXPECT_FLOAT_EQ(g.grad_weight.values()[g.grad_weight.index(loc, grp, 0)], expected);
    }
}

TEST(DcnBackwardRef, AdjointIdentity) {
  // <f(x), gy> == <x, grad_x> since the op is linear in x.
  const auto c = golden_case();
  const auto gy = testutil::uniform(c.x.shape(), 99);
  for (bool softmax : {false, true}) {
    const auto cfg = config(3, 2, softmax);
    const auto y = dcn_forward_ref(c.x, c.off, c.w, cfg);
    const auto g = dcn_backward_ref(c.x, c.off, c.w, cfg, gy);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      lhs += double{y.value(i)} * gy.value(i);
      rhs += double{c.x.value(i)} * g.grad_x.value(i);
    }
    EXPECT_NEAR(lhs, rhs, 1e-4 * (1.0 + std::abs(lhs)));
  }
}

TEST(DcnBackwardRef, GradientShapeMismatch) {
  const auto c = golden_case();
  EXPECT_THROW(dcn_backward_ref(c.x, c.off, c.w, config(3, 2), testutil::uniform({1, 4, 4, 8}, 1)),
               DimensionError);
}
