#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace dcnv4;

namespace {

DcnInputs seeded_inputs(Shape s, int G, int k, std::uint64_t seed) { return make_dcn_inputs(s, G, k, seed); }

}  // namespace

TEST(DcnForwardOpt, MatchesReferenceOnGoldenCase) {
  const auto x = testutil::golden("dcn_x");
  const OffsetField off(testutil::golden("dcn_offset"), 2, 9);
  const WeightField w(testutil::golden("dcn_weight"), 2, 9);
  DcnConfig cfg;
  cfg.groups = 2;
  const auto y = dcn_forward_opt(x, off, w, cfg);
  EXPECT_LE(normwise_relative_error(y, dcn_forward_ref(x, off, w, cfg)), 1e-5);
  EXPECT_LE(testutil::max_abs_diff(y, testutil::golden("dcn_out_softmax_off")), 1e-5);
}

TEST(DcnForwardOpt, PointwiseIdentityIsExact) {
  const auto x = testutil::uniform({2, 5, 7, 32}, 1);
  DcnConfig cfg;
  cfg.kernel_size = 1;
  cfg.groups = 2;
  const auto off = OffsetField::create(x.shape(), 2, 1, fill::Zeros{});
  const auto w = WeightField::create(x.shape(), 2, 1, fill::Constant{1.0f});
  for (Stage st : {Stage::baseline, Stage::workload_elim, Stage::coeff_reuse, Stage::vector_lanes}) {
    EXPECT_EQ(dcn_forward_opt(x, off, w, cfg, KernelPlan::for_stage(st)), x) << to_string(st);
  }
  const auto x16 = cast(x, ElementType::fp16);
  EXPECT_EQ(dcn_forward_opt(x16, off, w, cfg, KernelPlan::for_stage(Stage::fp16)), x16);
}

TEST(DcnForwardOpt, HalfStorageWithinTolerance) {
  const auto in = seeded_inputs({1, 12, 12, 64}, 4, 3, 3);
  const auto ref = dcn_forward_ref(in.x, in.offset, in.weight, in.config);
  const auto y = dcn_forward_opt(cast(in.x, ElementType::fp16), in.offset, in.weight, in.config,
                                 KernelPlan::for_stage(Stage::fp16));
  EXPECT_EQ(y.dtype(), ElementType::fp16);
  EXPECT_LE(normwise_relative_error(y, ref), kEquivalenceTolF16);
}

TEST(DcnForwardOpt, AllFp32StagesAreBitwiseIdentical) {
  const auto in = seeded_inputs({2, 9, 11, 64}, 2, 3, 4);
  const auto base = dcn_forward_opt(in.x, in.offset, in.weight, in.config, KernelPlan::for_stage(Stage::baseline));
  for (Stage st : {Stage::workload_elim, Stage::coeff_reuse, Stage::vector_lanes}) {
    for (int dp : {4, 8, 16, 32}) {
      auto plan = KernelPlan::for_stage(st, dp);
      EXPECT_EQ(dcn_forward_opt(in.x, in.offset, in.weight, in.config, plan), base)
          << to_string(st) << " d'=" << dp;
    }
  }
}

TEST(DcnForwardOpt, OutputIndependentOfWorkerCount) {
  const auto in = seeded_inputs({2, 16, 16, 32}, 2, 5, 5);
  setenv("DCN_THREADS", "1", 1);
  const auto a = dcn_forward_opt(in.x, in.offset, in.weight, in.config);
  setenv("DCN_THREADS", "4", 1);
  const auto b = dcn_forward_opt(in.x, in.offset, in.weight, in.config);
  setenv("DCN_THREADS", "7", 1);
  const auto c = dcn_forward_opt(in.x, in.offset, in.weight, in.config);
  unsetenv("DCN_THREADS");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(DcnForwardOpt, CountersAreIndependentOfBlockWidth) {
  const Shape s{2, 7, 9, 64};
  const int G = 4;
  const int k = 3;
  const auto in = seeded_inputs(s, G, k, 6);
  const auto expected_sets = static_cast<std::uint64_t>(s.n * s.h * s.w * G * k * k);
  for (int dp : {8, 16}) {
    for (Stage st : {Stage::coeff_reuse, Stage::vector_lanes}) {
      KernelCounters counters;
      dcn_forward_opt(in.x, in.offset, in.weight, in.config, KernelPlan::for_stage(st, dp), &counters);
      EXPECT_EQ(counters.offset_reads, expected_sets * 3);
      EXPECT_EQ(counters.coefficient_computations, expected_sets);
    }
    KernelCounters counters;
    dcn_forward_opt(cast(in.x, ElementType::fp16), in.offset, in.weight, in.config,
                    KernelPlan::for_stage(Stage::fp16, dp), &counters);
    EXPECT_EQ(counters.offset_reads, expected_sets * 3);
    EXPECT_EQ(counters.coefficient_computations, expected_sets);
  }
}

TEST(DcnForwardOpt, EarlierStagesScaleCountsWithChannels) {
  const Shape s{1, 4, 4, 32};
  const auto in = seeded_inputs(s, 2, 3, 7);
  const auto sets = static_cast<std::uint64_t>(s.h * s.w * 2 * 9);
  KernelCounters base;
  dcn_forward_opt(in.x, in.offset, in.weight, in.config, KernelPlan::for_stage(Stage::baseline), &base);
  EXPECT_EQ(base.offset_reads, sets * 16 * 3);
  EXPECT_EQ(base.coefficient_computations, sets * 16);
  KernelCounters elim;
  dcn_forward_opt(in.x, in.offset, in.weight, in.config, KernelPlan::for_stage(Stage::workload_elim, 8), &elim);
  EXPECT_EQ(elim.offset_reads, sets * 2 * 3);
  EXPECT_EQ(elim.coefficient_computations, sets * 16);
}

TEST(DcnForwardOpt, SoftmaxIsUnsupported) {
  auto in = seeded_inputs({1, 4, 4, 8}, 1, 3, 1);
  in.config.softmax_weights = true;
  EXPECT_THROW(dcn_forward_opt(in.x, in.offset, in.weight, in.config), UnsupportedConfigurationError);
}

TEST(DcnForwardOpt, PlanValidation) {
  const auto in = seeded_inputs({1, 4, 4, 24}, 1, 3, 1);
  KernelPlan plan;
  plan.d_prime = 16;  // 24 % 16 != 0
  EXPECT_THROW(dcn_forward_opt(in.x, in.offset, in.weight, in.config, plan), PlanError);
  plan.d_prime = 3;  // lanes need 16-byte multiples
  EXPECT_THROW(dcn_forward_opt(in.x, in.offset, in.weight, in.config, plan), PlanError);
  plan = KernelPlan::for_stage(Stage::fp16);
  EXPECT_THROW(dcn_forward_opt(in.x, in.offset, in.weight, in.config, plan), PlanError);  // x is fp32
  plan = KernelPlan::for_stage(Stage::vector_lanes);
  EXPECT_THROW(dcn_forward_opt(cast(in.x, ElementType::fp16), in.offset, in.weight, in.config, plan), PlanError);
  plan = KernelPlan::for_stage(Stage::baseline);
  plan.use_vector_lanes = true;
  EXPECT_THROW(plan.validate(24), PlanError);
  EXPECT_NO_THROW(KernelPlan::for_stage(Stage::vector_lanes, 8).validate(24));
}

TEST(DcnForwardOpt, OddGroupWidthsFallBackToNarrowSteps) {
  const auto in = seeded_inputs({1, 6, 6, 36}, 3, 3, 8);  // D = 12
  const auto ref = dcn_forward_ref(in.x, in.offset, in.weight, in.config);
  EXPECT_EQ(dcn_forward_opt(in.x, in.offset, in.weight, in.config, KernelPlan::for_stage(Stage::vector_lanes, 4)),
            ref);
}

TEST(DcnForwardOpt, FaultHookChangesOutput) {
  const auto in = seeded_inputs({1, 4, 4, 16}, 2, 3, 1);
  KernelPlan plan;
  plan.inject_fault = true;
  EXPECT_GT(normwise_relative_error(dcn_forward_opt(in.x, in.offset, in.weight, in.config, plan),
                                    dcn_forward_ref(in.x, in.offset, in.weight, in.config)),
            kEquivalenceTolF32);
}

TEST(Stage, NamesRoundTrip) {
  for (Stage s : kAllStages) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_EQ(parse_stage("fp16"), Stage::fp16);
  EXPECT_THROW(parse_stage("turbo"), ConfigError);
}

TEST(RunStage, Fp32StagesShareChecksum) {
  DcnConfig cfg;
  cfg.groups = 2;
  const Shape s{1, 8, 8, 64};
  const auto base = run_stage(Stage::baseline, s, cfg);
  for (Stage st : {Stage::workload_elim, Stage::coeff_reuse, Stage::vector_lanes}) {
    const auto r = run_stage(st, s, cfg);
    EXPECT_EQ(r.checksum, base.checksum) << to_string(st);
    EXPECT_EQ(r.stage, to_string(st));
    EXPECT_LE(r.p10_us, r.median_us);
    EXPECT_LE(r.median_us, r.p90_us);
  }
  const auto half = run_stage(Stage::fp16, s, cfg);
  EXPECT_EQ(half.dtype, ElementType::fp16);
  EXPECT_NEAR(half.checksum, base.checksum, 1e-2 * (1.0 + std::abs(base.checksum)));
}
