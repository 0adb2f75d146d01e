// Builds a small deformable aggregation problem, runs the reference and the
// optimized kernel, and pushes the same input through a full v4 module.

#include <cstdio>

#include "dcnv4/dcnv4.hpp"

int main() {
  using namespace dcnv4;

  const Shape shape{1, 16, 16, 64};
  DcnConfig cfg;
  cfg.kernel_size = 3;
  cfg.groups = 4;

  const auto x = create(shape, ElementType::fp32, fill::SeededUniform{1, -1.0f, 1.0f});
  const auto offsets = OffsetField::create(shape, cfg.groups, cfg.points(), fill::SeededUniform{2, -1.5f, 1.5f});
  const auto weights = WeightField::create(shape, cfg.groups, cfg.points(), fill::SeededUniform{3, -1.0f, 1.0f});

  const auto ref = dcn_forward_ref(x, offsets, weights, cfg);

  KernelCounters counters;
  const auto opt = dcn_forward_opt(x, offsets, weights, cfg, KernelPlan{}, &counters);
  std::printf("reference vs optimized: max rel err %.3g\n", normwise_relative_error(opt, ref));
  std::printf("offset reads %llu, coefficient sets %llu\n",
              static_cast<unsigned long long>(counters.offset_reads),
              static_cast<unsigned long long>(counters.coefficient_computations));

  KernelPlan half = KernelPlan::for_stage(Stage::fp16);
  const auto y16 = dcn_forward_opt(cast(x, ElementType::fp16), offsets, weights, cfg, half);
  std::printf("fp16 storage: max rel err %.3g\n", normwise_relative_error(y16, ref));

  ModuleConfig mc;
  mc.channels = shape.c;
  mc.groups = cfg.groups;
  mc.variant.style = ModuleStyle::v4;
  const auto params = ModuleParams::initialize(mc, 7);
  const auto y = module_forward(x, params, mc.variant);
  std::printf("v4 module: %s -> %s, %lld parameters\n", x.shape().to_string().c_str(), y.shape().to_string().c_str(),
              static_cast<long long>(param_count(mc.channels, mc.groups, mc.points(), mc.variant)));

  const auto r = roofline(56, 56, 128, 8, 9);
  std::printf("roofline 56x56x128, G=8: intensity %.2f .. %.2f\n", r.intensity_worst, r.intensity_ideal);
  return 0;
}
