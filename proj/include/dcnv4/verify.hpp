#pragma once

// Randomized verification suites: optimized-vs-reference equivalence,
// analytic-vs-finite-difference gradients, softmax-free attention
// degeneration and softmax convexity. Every case is generated from a seed
// derived from the run seed, so reports are reproducible and a failure can
// be replayed from the printed case seed.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dcnv4/baselines.hpp"
#include "dcnv4/bench.hpp"
#include "dcnv4/gradcheck.hpp"
#include "dcnv4/optimized.hpp"
#include "dcnv4/reference.hpp"

namespace dcnv4 {

inline constexpr double kEquivalenceTolF32 = 1e-5;
inline constexpr double kEquivalenceTolF16 = 2e-2;
inline constexpr double kGradientTol = 1e-3;
inline constexpr double kGradientStep = 1e-3;
inline constexpr double kDegenerationTol = 1e-5;
inline constexpr double kSoftmaxDiscrepancyFloor = 0.1;

struct VerifyOptions {
  std::uint64_t seed = 7;
  int cases = 1000;               // equivalence cases
  int gradient_instances = 20;    // per softmax mode
  int attention_instances = 100;
  int convexity_probes = 10000;   // per operator
  bool inject_fault = false;      // corrupt the optimized kernel
};

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  std::vector<std::pair<std::string, double>> metrics;
  bool passed = true;
  std::optional<std::uint64_t> failing_seed;

  double metric(std::string_view key) const {
    for (const auto& [k, v] : metrics) {
      if (k == key) return v;
    }
    return std::nan("");
  }
};

struct VerifyReport {
  std::vector<SuiteResult> suites;

  bool passed() const {
    return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; });
  }

  std::optional<std::uint64_t> first_failing_seed() const {
    for (const auto& s : suites) {
      if (!s.passed && s.failing_seed) return s.failing_seed;
    }
    return std::nullopt;
  }

  std::string render() const {
    std::ostringstream os;
    os << std::scientific << std::setprecision(6);
    for (const auto& s : suites) {
      os << "suite " << s.name << " cases=" << s.cases;
      for (const auto& [k, v] : s.metrics) os << ' ' << k << '=' << v;
      os << ' ' << (s.passed ? "PASS" : "FAIL");
      if (!s.passed && s.failing_seed) os << " first_failing_seed=" << *s.failing_seed;
      os << '\n';
    }
    os << "overall " << (passed() ? "PASS" : "FAIL") << '\n';
    return os.str();
  }
};

// splitmix64 step; maps (run seed, suite, index) to a case seed.
inline std::uint64_t case_seed(std::uint64_t run_seed, std::uint64_t suite, std::uint64_t index) {
  std::uint64_t z = run_seed * 0x9E3779B97F4A7C15ull + suite * 0xBF58476D1CE4E5B9ull + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// max |a - r| / max |r| (absolute when the reference is all zeros).
inline double normwise_relative_error(const TensorNHWC& actual, const TensorNHWC& reference) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < reference.numel(); ++i) {
    const double r = reference.value(i);
    const double a = actual.value(i);
    if (std::isnan(a) != std::isnan(r)) return INFINITY;
    diff = std::max(diff, std::abs(a - r));
    scale = std::max(scale, std::abs(r));
  }
  return scale > 0.0 ? diff / scale : diff;
}

struct EquivalenceCase {
  std::uint64_t seed = 0;
  DcnInputs inputs;
  int d_prime_f32 = 8;
  int d_prime_f16 = 8;
};

// Shapes up to (2, 32, 32, 64), G in {1, 2, 4}, k in {1, 3, 5}.
inline EquivalenceCase make_equivalence_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pick = [&](std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  const int kernels[] = {1, 3, 5};
  const int groups_choice[] = {1, 2, 4};
  const int k = kernels[pick(0, 2)];
  const int G = groups_choice[pick(0, 2)];
  const std::int64_t max_dim_exp = G == 4 ? 1 : 2;  // D in {8, 16, 32} with G*D <= 64
  const std::int64_t D = std::int64_t{8} << pick(0, max_dim_exp);
  const Shape shape{pick(1, 2), pick(1, 32), pick(1, 32), G * D};

  EquivalenceCase c;
  c.seed = seed;
  c.inputs = make_dcn_inputs(shape, G, k, rng());
  if (pick(0, 3) == 0) c.inputs.config.offset_scale = 0.5f;
  const int f32_choices[] = {4, 8, 16};
  c.d_prime_f32 = f32_choices[pick(0, D >= 16 ? 2 : 1)];
  c.d_prime_f16 = D >= 16 && pick(0, 1) ? 16 : 8;
  return c;
}

inline SuiteResult run_equivalence_suite(const VerifyOptions& opt) {
  SuiteResult r;
  r.name = "equivalence";
  double worst32 = 0.0;
  double worst16 = 0.0;
  for (int i = 0; i < opt.cases; ++i) {
    const auto c = make_equivalence_case(case_seed(opt.seed, 1, static_cast<std::uint64_t>(i)));
    const auto& in = c.inputs;
    const auto ref = dcn_forward_ref(in.x, in.offset, in.weight, in.config);

    KernelPlan p32 = KernelPlan::for_stage(Stage::vector_lanes, c.d_prime_f32);
    p32.inject_fault = opt.inject_fault;
    const double e32 = normwise_relative_error(dcn_forward_opt(in.x, in.offset, in.weight, in.config, p32), ref);

    KernelPlan p16 = KernelPlan::for_stage(Stage::fp16, c.d_prime_f16);
    p16.inject_fault = opt.inject_fault;
    const auto x16 = cast(in.x, ElementType::fp16);
    const double e16 = normwise_relative_error(dcn_forward_opt(x16, in.offset, in.weight, in.config, p16), ref);

    worst32 = std::max(worst32, e32);
    worst16 = std::max(worst16, e16);
    ++r.cases;
    if ((e32 > kEquivalenceTolF32 || e16 > kEquivalenceTolF16) && r.passed) {
      r.passed = false;
      r.failing_seed = c.seed;
    }
  }
  r.metrics = {{"max_rel_err_f32", worst32}, {"max_rel_err_f16", worst16},
               {"tol_f32", kEquivalenceTolF32}, {"tol_f16", kEquivalenceTolF16}};
  return r;
}

// One (1, 5, 5, 8), G = 2, k = 3 problem in double precision.
inline DcnProblem<double> make_gradient_problem(std::uint64_t seed, bool softmax) {
  const auto in = make_dcn_inputs({1, 5, 5, 8}, 2, 3, seed, softmax);
  return DcnProblem<double>::from_tensors(in.x, in.offset, in.weight, in.config);
}

inline SuiteResult run_gradient_suite(const VerifyOptions& opt) {
  SuiteResult r;
  r.name = "gradcheck";
  double worst[3] = {0, 0, 0};
  double richardson = 0.0;
  double skipped = 0.0;
  for (bool softmax : {false, true}) {
    for (int i = 0; i < opt.gradient_instances; ++i) {
      const auto seed = case_seed(opt.seed, softmax ? 3 : 2, static_cast<std::uint64_t>(i));
      const auto cmp = compare_with_finite_differences(make_gradient_problem(seed, softmax), kGradientStep);
      bool ok = true;
      for (std::size_t j = 0; j < cmp.size(); ++j) {
        worst[j] = std::max(worst[j], cmp[j].max_relative_error);
        richardson = std::max(richardson, cmp[j].richardson_gap);
        skipped += static_cast<double>(cmp[j].skipped);
        ok = ok && cmp[j].max_relative_error <= kGradientTol;
      }
      ++r.cases;
      if (!ok && r.passed) {
        r.passed = false;
        r.failing_seed = seed;
      }
    }
  }
  r.metrics = {{"max_rel_err_grad_x", worst[0]}, {"max_rel_err_grad_off", worst[1]},
               {"max_rel_err_grad_w", worst[2]}, {"richardson_gap", richardson},
               {"skipped_offsets", skipped},      {"tol", kGradientTol}};
  return r;
}

inline AttentionInputs make_attention_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto tokens = static_cast<std::int64_t>(1 + rng() % 64);
  const auto d = static_cast<std::int64_t>(1 + rng() % 32);
  return AttentionInputs::seeded(tokens, d, rng());
}

inline SuiteResult run_degeneration_suite(const VerifyOptions& opt) {
  SuiteResult r;
  r.name = "degeneration";
  double worst = 0.0;
  double softmax_gap = 0.0;
  for (int i = 0; i < opt.attention_instances; ++i) {
    const auto seed = case_seed(opt.seed, 4, static_cast<std::uint64_t>(i));
    const auto in = make_attention_case(seed);
    const double rel = reordering_discrepancy(in, false).relative();
    softmax_gap = std::max(softmax_gap, reordering_discrepancy(in, true).max_abs);
    worst = std::max(worst, rel);
    ++r.cases;
    if (rel > kDegenerationTol && r.passed) {
      r.passed = false;
      r.failing_seed = seed;
    }
  }
  if (softmax_gap <= kSoftmaxDiscrepancyFloor) r.passed = false;
  r.metrics = {{"max_rel_discrepancy", worst}, {"tol", kDegenerationTol},
               {"max_softmax_discrepancy", softmax_gap}, {"softmax_floor", kSoftmaxDiscrepancyFloor}};
  return r;
}

// Rounding slack for a convex combination of K values of magnitude <= m.
inline double convexity_slack(double magnitude, int terms) {
  return 4.0 * terms * FLT_EPSILON * std::max(magnitude, 1e-30);
}

inline SuiteResult run_convexity_suite(const VerifyOptions& opt) {
  SuiteResult r;
  r.name = "convexity";
  constexpr int kProbesPerInstance = 100;
  std::size_t dcn_violations = 0;
  std::size_t dw_violations = 0;
  std::size_t dcn_probes = 0;
  std::size_t dw_probes = 0;
  const int instances = (opt.convexity_probes + kProbesPerInstance - 1) / kProbesPerInstance;

  for (int i = 0; i < instances; ++i) {
    const auto seed = case_seed(opt.seed, 5, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(seed);
    bool instance_ok = true;

    // Softmax-weighted deformable aggregation.
    {
      auto in = make_dcn_inputs({1, 6, 6, 8}, 2, 3, rng(), true);
      in.weight = WeightField::create(in.x.shape(), 2, 9, fill::SeededUniform{rng(), -3.0f, 3.0f});
      const auto y = dcn_forward_ref(in.x, in.offset, in.weight, in.config);
      const std::int64_t D = 4;
      for (int p = 0; p < kProbesPerInstance && dcn_probes < static_cast<std::size_t>(opt.convexity_probes); ++p) {
        const auto h = static_cast<std::int64_t>(rng() % 6);
        const auto w = static_cast<std::int64_t>(rng() % 6);
        const auto ch = static_cast<std::int64_t>(rng() % 8);
        const int g = static_cast<int>(ch / D);
        const std::size_t loc = static_cast<std::size_t>(h * 6 + w);
        double lo = INFINITY, hi = -INFINITY, mag = 0.0;
        for (int k = 0; k < 9; ++k) {
          const auto off = in.offset.values();
          const float py = static_cast<float>(h + k / 3 - 1) + off[in.offset.index(loc, g, k, 0)];
          const float px = static_cast<float>(w + k % 3 - 1) + off[in.offset.index(loc, g, k, 1)];
          const double s = bilinear_sample(in.x, 0, ch, {py, px});
          lo = std::min(lo, s);
          hi = std::max(hi, s);
          mag = std::max(mag, std::abs(s));
        }
        const double v = y.at(0, h, w, ch);
        const double slack = convexity_slack(mag, 9);
        ++dcn_probes;
        if (v < lo - slack || v > hi + slack) {
          ++dcn_violations;
          instance_ok = false;
        }
      }
    }

    // Softmax-normalized depthwise convolution, interior points.
    {
      const Shape s{1, 8, 8, 16};
      const auto x = create(s, ElementType::fp32, fill::SeededUniform{rng(), -1.0f, 1.0f});
      const DwKernel kern{create({1, 3, 3, 16}, ElementType::fp32, fill::SeededUniform{rng(), -3.0f, 3.0f}), true};
      const auto y = dwconv_forward(x, kern);
      for (int p = 0; p < kProbesPerInstance && dw_probes < static_cast<std::size_t>(opt.convexity_probes); ++p) {
        const auto h = static_cast<std::int64_t>(1 + rng() % 6);
        const auto w = static_cast<std::int64_t>(1 + rng() % 6);
        const auto c = static_cast<std::int64_t>(rng() % 16);
        double lo = INFINITY, hi = -INFINITY, mag = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double v = x.at(0, h + dy, w + dx, c);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            mag = std::max(mag, std::abs(v));
          }
        }
        const double v = y.at(0, h, w, c);
        const double slack = convexity_slack(mag, 9);
        ++dw_probes;
        if (v < lo - slack || v > hi + slack) {
          ++dw_violations;
          instance_ok = false;
        }
      }
    }
    ++r.cases;
    if (!instance_ok && r.passed) {
      r.passed = false;
      r.failing_seed = seed;
    }
  }
  r.metrics = {{"dcn_probes", static_cast<double>(dcn_probes)},
               {"dcn_violations", static_cast<double>(dcn_violations)},
               {"dwconv_probes", static_cast<double>(dw_probes)},
               {"dwconv_violations", static_cast<double>(dw_violations)}};
  return r;
}

inline VerifyReport run_verify(const VerifyOptions& opt) {
  VerifyReport report;
  report.suites.push_back(run_equivalence_suite(opt));
  report.suites.push_back(run_gradient_suite(opt));
  report.suites.push_back(run_degeneration_suite(opt));
  report.suites.push_back(run_convexity_suite(opt));
  return report;
}

}  // namespace dcnv4
