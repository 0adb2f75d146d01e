#include <gtest/gtest.h>

#include <cstring>

#include "test_util.hpp"

using namespace dcnv4;

TEST(Tensor, ZeroFill) {
  const auto t = create({1, 2, 2, 1}, ElementType::fp32, fill::Zeros{});
  ASSERT_EQ(t.numel(), 4u);
  for (float v : t.f32()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, ConstantFill) {
  const auto t = create({1, 1, 1, 3}, ElementType::fp32, fill::Constant{2.5f});
  EXPECT_EQ(t.to_float_vector(), (std::vector<float>{2.5f, 2.5f, 2.5f}));
}

TEST(Tensor, SeededUniformFrozenFirstElement) {
  const auto t = create({1, 4, 4, 8}, ElementType::fp32, fill::SeededUniform{42, -1.0f, 1.0f});
  const float first = t.f32()[0];
  std::uint32_t bits = 0;
  std::memcpy(&bits, &first, sizeof bits);
  EXPECT_EQ(bits, 0x3f02a3beu);
  EXPECT_FLOAT_EQ(first, 0.5103110074996948f);
}

TEST(Tensor, SeededUniformMatchesOracleFixture) {
  const auto t = create({1, 4, 4, 8}, ElementType::fp32, fill::SeededUniform{42, -1.0f, 1.0f});
  EXPECT_EQ(encode_fixture(t), encode_fixture(testutil::golden("create_seed42")));
}

TEST(Tensor, SeededUniformStaysInRange) {
  const auto v = seeded_uniform_values(100000, 3, -2.0, 5.0);
  for (float e : v) {
    EXPECT_GE(e, -2.0f);
    EXPECT_LT(e, 5.0f);
  }
}

TEST(Tensor, SeededUniformIndependentOfWorkerCount) {
  const Shape s{2, 8, 8, 16};
  setenv("DCN_THREADS", "1", 1);
  const auto a = create(s, ElementType::fp32, fill::SeededUniform{9, -1.0f, 1.0f});
  setenv("DCN_THREADS", "4", 1);
  const auto b = create(s, ElementType::fp32, fill::SeededUniform{9, -1.0f, 1.0f});
  unsetenv("DCN_THREADS");
  EXPECT_EQ(a, b);
}

TEST(Tensor, InvalidShapesThrow) {
  EXPECT_THROW(create({0, 1, 1, 1}, ElementType::fp32, fill::Zeros{}), InvalidShapeError);
  EXPECT_THROW(create({1, -2, 1, 1}, ElementType::fp32, fill::Zeros{}), InvalidShapeError);
  EXPECT_THROW(TensorNHWC({1, 1, 1, 0}, ElementType::fp16), InvalidShapeError);
}

TEST(Tensor, FlatIndexExhaustiveScan) {
  for (std::int64_t N = 1; N <= 2; ++N) {
    for (std::int64_t H = 1; H <= 4; ++H) {
      for (std::int64_t W = 1; W <= 4; ++W) {
        for (std::int64_t C = 1; C <= 8; ++C) {
          const Shape s{N, H, W, C};
          std::vector<float> v(s.numel());
          for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
          const auto t = TensorNHWC::from_values(s, v);
          std::size_t expected = 0;
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t h = 0; h < H; ++h)
              for (std::int64_t w = 0; w < W; ++w)
                for (std::int64_t c = 0; c < C; ++c) {
                  ASSERT_EQ(s.index(n, h, w, c), static_cast<std::size_t>(((n * H + h) * W + w) * C + c));
                  ASSERT_EQ(t.at(n, h, w, c), static_cast<float>(expected++));
                }
        }
      }
    }
  }
}

TEST(Tensor, DtypeAccessorsAreChecked) {
  TensorNHWC t({1, 1, 1, 2}, ElementType::fp16);
  EXPECT_THROW(t.f32(), ConfigError);
  EXPECT_NO_THROW(t.f16());
}

TEST(Cast, OneIsHalf3C00) {
  const auto t = cast(TensorNHWC::from_values({1, 1, 1, 1}, {1.0f}), ElementType::fp16);
  EXPECT_EQ(t.f16()[0], 0x3C00);
}

TEST(Cast, PointOneRoundTrip) {
  const auto t = cast(cast(TensorNHWC::from_values({1, 1, 1, 1}, {0.1f}), ElementType::fp16), ElementType::fp32);
  EXPECT_EQ(t.f32()[0], 0.0999755859375f);
}

TEST(Cast, RepresentableValuesRoundTripExactly) {
  // Every finite fp16 value widened to fp32 casts back to the same bits.
  std::vector<std::uint16_t> bits;
  for (std::uint32_t b = 0; b < 0x10000; ++b) {
    if ((b & 0x7C00) != 0x7C00) bits.push_back(static_cast<std::uint16_t>(b));
  }
  const Shape s{1, 1, 1, static_cast<std::int64_t>(bits.size())};
  const auto h = TensorNHWC::from_half_bits(s, bits);
  const auto f = cast(h, ElementType::fp32);
  EXPECT_EQ(cast(f, ElementType::fp16), h);
}

TEST(Cast, RoundsToNearestEvenAndSaturates) {
  EXPECT_EQ(float_to_half(1.0f + 0x1p-11f), 0x3C00);  // tie goes to even
  EXPECT_EQ(float_to_half(1.0f + 3 * 0x1p-11f), 0x3C02);
  EXPECT_EQ(float_to_half(65504.0f), 0x7BFF);
  EXPECT_EQ(float_to_half(1e6f), 0x7C00);
  EXPECT_EQ(float_to_half(-1e6f), 0xFC00);
  EXPECT_EQ(float_to_half(0x1p-24f), 0x0001);  // smallest subnormal
  EXPECT_EQ(half_to_float(0x0001), 0x1p-24f);
  EXPECT_TRUE(std::isnan(half_to_float(float_to_half(NAN))));
}

TEST(Cast, FiniteInputsNeverBecomeNaN) {
  const auto x = testutil::uniform({1, 16, 16, 16}, 5, -70000.0f, 70000.0f);
  const auto back = cast(cast(x, ElementType::fp16), ElementType::fp32);
  for (float v : back.f32()) EXPECT_FALSE(std::isnan(v));
}
