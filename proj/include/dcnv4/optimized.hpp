#pragma once

// Fast forward for the softmax-free aggregation, organised as a ladder of
// optimization stages:
//
//   baseline        one work item per (location, group, channel); offsets and
//                   weights are re-read and bilinear coefficients recomputed
//                   for every channel.
//   +workload-elim  one work item per (location, group, D'-channel block);
//                   offsets/weights read once per block, coefficients still
//                   per channel.
//   +coeff-reuse    offsets/weights read and the 4 coefficients computed once
//                   per (location, group, point), reused across all D channels
//                   with one scalar load per channel.
//   +vector-lanes   as above, with contiguous D'-wide lane loads and stores.
//   +fp16           as above, on fp16 storage widened to fp32 per lane.
//
// Every output element is produced by exactly one work item and accumulated
// in point order k = 0..K-1, so the fp32 stages agree bit for bit and results
// do not depend on the worker count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#if defined(__F16C__) && defined(__AVX__)
#include <immintrin.h>
#define DCNV4_HAVE_F16C 1
#endif

#include "dcnv4/error.hpp"
#include "dcnv4/half.hpp"
#include "dcnv4/parallel.hpp"
#include "dcnv4/reference.hpp"
#include "dcnv4/tensor.hpp"

#if defined(__clang__)
#define DCNV4_SCALAR_FN
#define DCNV4_SCALAR_LOOP _Pragma("clang loop vectorize(disable) interleave(disable)")
#elif defined(__GNUC__)
#define DCNV4_SCALAR_FN __attribute__((optimize("no-tree-vectorize")))
#define DCNV4_SCALAR_LOOP
#else
#define DCNV4_SCALAR_FN
#define DCNV4_SCALAR_LOOP
#endif

namespace dcnv4 {

enum class Stage : std::uint8_t { baseline, workload_elim, coeff_reuse, vector_lanes, fp16 };

inline constexpr std::array<Stage, 5> kAllStages = {Stage::baseline, Stage::workload_elim,
                                                    Stage::coeff_reuse, Stage::vector_lanes, Stage::fp16};

constexpr std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::baseline: return "baseline";
    case Stage::workload_elim: return "+workload-elim";
    case Stage::coeff_reuse: return "+coeff-reuse";
    case Stage::vector_lanes: return "+vector-lanes";
    case Stage::fp16: return "+fp16";
  }
  return "?";
}

inline Stage parse_stage(std::string_view text) {
  for (Stage s : kAllStages) {
    const auto name = to_string(s);
    if (text == name || text == name.substr(name.front() == '+' ? 1 : 0)) return s;
  }
  throw ConfigError("unknown stage '" + std::string(text) + "'");
}

struct KernelPlan {
  int d_prime = 8;
  bool use_vector_lanes = true;
  bool reuse_coefficients = true;
  ElementType dtype = ElementType::fp32;
  Stage stage = Stage::vector_lanes;
  // Test hook: corrupts the center-point coefficient of group 0 so
  // verification can be shown to catch a broken kernel.
  bool inject_fault = false;

  // The plan that enables exactly the optimizations at and below `s`.
  static KernelPlan for_stage(Stage s, int d_prime = 8) {
    KernelPlan p;
    p.stage = s;
    p.d_prime = d_prime;
    p.reuse_coefficients = s >= Stage::coeff_reuse;
    p.use_vector_lanes = s >= Stage::vector_lanes;
    p.dtype = s == Stage::fp16 ? ElementType::fp16 : ElementType::fp32;
    return p;
  }

  void validate(std::int64_t group_dim) const {
    if (d_prime < 1) throw PlanError("d_prime must be >= 1, got " + std::to_string(d_prime));
    if (group_dim % d_prime != 0) {
      throw PlanError("d_prime " + std::to_string(d_prime) + " does not divide the group dim " +
                      std::to_string(group_dim));
    }
    if (use_vector_lanes && (static_cast<std::size_t>(d_prime) * bytes_per_element(dtype)) % 16 != 0) {
      throw PlanError("vector lanes need d_prime * element bytes to be a multiple of 16 (d_prime " +
                      std::to_string(d_prime) + ", " + std::string(to_string(dtype)) + ")");
    }
    if (reuse_coefficients != (stage >= Stage::coeff_reuse) ||
        use_vector_lanes != (stage >= Stage::vector_lanes)) {
      throw PlanError("plan flags do not match stage " + std::string(to_string(stage)));
    }
    if (stage == Stage::fp16 && dtype != ElementType::fp16) {
      throw PlanError("stage +fp16 requires fp16 storage");
    }
  }
};

// Exact operation counts, collected only when a counter object is supplied.
struct KernelCounters {
  std::uint64_t offset_reads = 0;              // offset + weight elements loaded
  std::uint64_t coefficient_computations = 0;  // 4-coefficient sets computed
};

namespace detail {

inline float load_element(const float* p) noexcept { return *p; }
inline float load_element(const std::uint16_t* p) noexcept {
#ifdef DCNV4_HAVE_F16C
  return _cvtsh_ss(*p);
#else
  return half_to_float(*p);
#endif
}

inline void store_element(float* p, float v) noexcept { *p = v; }
inline void store_element(std::uint16_t* p, float v) noexcept { *p = float_to_half(v); }

// Bilinear footprint of one sample point: the 4 corner pixel offsets (flat
// index of channel 0, or -1 outside the image) and their coefficients.
struct Footprint {
  enum Kind : std::uint8_t { outside, inside, not_a_number };
  Kind kind = outside;
  std::int64_t corner[4] = {-1, -1, -1, -1};
  float coeff[4] = {0, 0, 0, 0};
};

inline Footprint locate(float py, float px, const Shape& s, std::int64_t n) noexcept {
  Footprint fp;
  if (std::isnan(py) || std::isnan(px)) {
    fp.kind = Footprint::not_a_number;
    return fp;
  }
  if (!(py > -1.0f && py < static_cast<float>(s.h) && px > -1.0f && px < static_cast<float>(s.w))) {
    return fp;
  }
  fp.kind = Footprint::inside;
  const auto y0 = static_cast<std::int64_t>(std::floor(py));
  const auto x0 = static_cast<std::int64_t>(std::floor(px));
  const float ly = py - static_cast<float>(y0);
  const float lx = px - static_cast<float>(x0);
  const float hy = 1.0f - ly;
  const float hx = 1.0f - lx;
  fp.coeff[0] = hy * hx;
  fp.coeff[1] = hy * lx;
  fp.coeff[2] = ly * hx;
  fp.coeff[3] = ly * lx;
  const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
  for (int q = 0; q < 4; ++q) {
    if (ys[q] >= 0 && ys[q] < s.h && xs[q] >= 0 && xs[q] < s.w) {
      fp.corner[q] = static_cast<std::int64_t>(s.index(n, ys[q], xs[q], 0));
    }
  }
  return fp;
}

struct LocalCounts {
  std::uint64_t offset_reads = 0;
  std::uint64_t coefficient_computations = 0;
};

struct Problem {
  Shape s;
  int ks = 3;
  int K = 9;
  int G = 1;
  int pad = 1;
  std::int64_t D = 1;
  int d_prime = 8;
  float scale = 1.0f;
  const float* off = nullptr;
  const float* wts = nullptr;
  bool inject_fault = false;

  float row(std::int64_t h, int k) const noexcept { return static_cast<float>(h + k / ks - pad); }
  float col(std::int64_t w, int k) const noexcept { return static_cast<float>(w + k % ks - pad); }
  float weight(std::size_t loc, int g, int k) const noexcept {
    float m = wts[(loc * G + g) * K + k];
    if (inject_fault && g == 0 && k == K / 2) m = -m - 1.0f;
    return m;
  }
};

template <bool Count, class Storage>
void baseline_kernel(const Problem& p, const Storage* x, Storage* y, std::size_t begin, std::size_t end,
                     LocalCounts& counts) {
  const Shape& s = p.s;
  for (std::size_t loc = begin; loc < end; ++loc) {
    const auto n = static_cast<std::int64_t>(loc / static_cast<std::size_t>(s.h * s.w));
    const auto h = static_cast<std::int64_t>((loc / static_cast<std::size_t>(s.w)) % static_cast<std::size_t>(s.h));
    const auto w = static_cast<std::int64_t>(loc % static_cast<std::size_t>(s.w));
    for (int g = 0; g < p.G; ++g) {
      for (std::int64_t c = 0; c < p.D; ++c) {
        const std::int64_t ch = g * p.D + c;
        float acc = 0.0f;
        for (int k = 0; k < p.K; ++k) {
          const std::size_t at = (loc * p.G + g) * p.K + k;
          const float dy = p.off[2 * at];
          const float dx = p.off[2 * at + 1];
          const float m = p.weight(loc, g, k);
          const Footprint fp = locate(p.row(h, k) + p.scale * dy, p.col(w, k) + p.scale * dx, s, n);
          if constexpr (Count) {
            counts.offset_reads += 3;
            counts.coefficient_computations += 1;
          }
          if (fp.kind == Footprint::outside) continue;
          if (fp.kind == Footprint::not_a_number) {
            acc += m * std::numeric_limits<float>::quiet_NaN();
            continue;
          }
          float v[4];
          for (int q = 0; q < 4; ++q) v[q] = fp.corner[q] >= 0 ? load_element(x + fp.corner[q] + ch) : 0.0f;
          acc += m * (fp.coeff[0] * v[0] + fp.coeff[1] * v[1] + fp.coeff[2] * v[2] + fp.coeff[3] * v[3]);
        }
        store_element(y + loc * static_cast<std::size_t>(s.c) + ch, acc);
      }
    }
  }
}

template <bool Count, class Storage>
void workload_elim_kernel(const Problem& p, const Storage* x, Storage* y, std::size_t begin,
                          std::size_t end, LocalCounts& counts) {
  const Shape& s = p.s;
  std::vector<float> acc(static_cast<std::size_t>(p.d_prime));
  for (std::size_t loc = begin; loc < end; ++loc) {
    const auto n = static_cast<std::int64_t>(loc / static_cast<std::size_t>(s.h * s.w));
    const auto h = static_cast<std::int64_t>((loc / static_cast<std::size_t>(s.w)) % static_cast<std::size_t>(s.h));
    const auto w = static_cast<std::int64_t>(loc % static_cast<std::size_t>(s.w));
    for (int g = 0; g < p.G; ++g) {
      for (std::int64_t block = 0; block < p.D; block += p.d_prime) {
        std::fill(acc.begin(), acc.end(), 0.0f);
        for (int k = 0; k < p.K; ++k) {
          const std::size_t at = (loc * p.G + g) * p.K + k;
          const float dy = p.off[2 * at];
          const float dx = p.off[2 * at + 1];
          const float m = p.weight(loc, g, k);
          const float py = p.row(h, k) + p.scale * dy;
          const float px = p.col(w, k) + p.scale * dx;
          if constexpr (Count) counts.offset_reads += 3;
          for (int c = 0; c < p.d_prime; ++c) {
            const std::int64_t ch = g * p.D + block + c;
            const Footprint fp = locate(py, px, s, n);
            if constexpr (Count) counts.coefficient_computations += 1;
            if (fp.kind == Footprint::outside) continue;
            if (fp.kind == Footprint::not_a_number) {
              acc[c] += m * std::numeric_limits<float>::quiet_NaN();
              continue;
            }
            float v[4];
            for (int q = 0; q < 4; ++q) v[q] = fp.corner[q] >= 0 ? load_element(x + fp.corner[q] + ch) : 0.0f;
            acc[c] += m * (fp.coeff[0] * v[0] + fp.coeff[1] * v[1] + fp.coeff[2] * v[2] + fp.coeff[3] * v[3]);
          }
        }
        for (int c = 0; c < p.d_prime; ++c) {
          store_element(y + loc * static_cast<std::size_t>(s.c) + g * p.D + block + c, acc[c]);
        }
      }
    }
  }
}

// One scalar load per channel per corner.
template <class Storage>
DCNV4_SCALAR_FN void sweep_scalar(float* __restrict acc, const Storage* const corner[4], const float coeff[4],
                                  float m, std::int64_t count) {
  DCNV4_SCALAR_LOOP
  for (std::int64_t c = 0; c < count; ++c) {
    acc[c] += m * (coeff[0] * load_element(corner[0] + c) + coeff[1] * load_element(corner[1] + c) +
                   coeff[2] * load_element(corner[2] + c) + coeff[3] * load_element(corner[3] + c));
  }
}

template <int Lanes>
inline void lanes_fp32(float* __restrict acc, const float* const corner[4], const float coeff[4], float m) {
  const float* __restrict a = corner[0];
  const float* __restrict b = corner[1];
  const float* __restrict c = corner[2];
  const float* __restrict d = corner[3];
  for (int l = 0; l < Lanes; ++l) {
    acc[l] += m * (coeff[0] * a[l] + coeff[1] * b[l] + coeff[2] * c[l] + coeff[3] * d[l]);
  }
}

template <int Lanes>
inline void lanes_fp16(float* __restrict acc, const std::uint16_t* const corner[4], const float coeff[4],
                       float m) {
#ifdef DCNV4_HAVE_F16C
  static_assert(Lanes % 8 == 0);
  const __m256 vm = _mm256_set1_ps(m);
  const __m256 c0 = _mm256_set1_ps(coeff[0]);
  const __m256 c1 = _mm256_set1_ps(coeff[1]);
  const __m256 c2 = _mm256_set1_ps(coeff[2]);
  const __m256 c3 = _mm256_set1_ps(coeff[3]);
  for (int l = 0; l < Lanes; l += 8) {
    const auto load = [&](int q) {
      return _mm256_cvtph_ps(_mm_loadu_si128(reinterpret_cast<const __m128i*>(corner[q] + l)));
    };
    __m256 sum = _mm256_mul_ps(c0, load(0));
    sum = _mm256_add_ps(sum, _mm256_mul_ps(c1, load(1)));
    sum = _mm256_add_ps(sum, _mm256_mul_ps(c2, load(2)));
    sum = _mm256_add_ps(sum, _mm256_mul_ps(c3, load(3)));
    _mm256_storeu_ps(acc + l, _mm256_add_ps(_mm256_loadu_ps(acc + l), _mm256_mul_ps(vm, sum)));
  }
#else
  float wide[4][Lanes];
  for (int q = 0; q < 4; ++q) {
    for (int l = 0; l < Lanes; ++l) wide[q][l] = half_to_float(corner[q][l]);
  }
  const float* rows[4] = {wide[0], wide[1], wide[2], wide[3]};
  lanes_fp32<Lanes>(acc, rows, coeff, m);
#endif
}

template <int Lanes, class Storage>
inline void sweep_lanes(float* acc, const Storage* const corner[4], const float coeff[4], float m,
                        std::int64_t count) {
  for (std::int64_t b = 0; b < count; b += Lanes) {
    const Storage* shifted[4] = {corner[0] + b, corner[1] + b, corner[2] + b, corner[3] + b};
    if constexpr (std::is_same_v<Storage, float>) {
      lanes_fp32<Lanes>(acc + b, shifted, coeff, m);
    } else {
      lanes_fp16<Lanes>(acc + b, shifted, coeff, m);
    }
  }
}

inline void store_lanes(float* dst, const float* acc, std::int64_t count) {
  std::copy(acc, acc + count, dst);
}

inline void store_lanes(std::uint16_t* dst, const float* acc, std::int64_t count) {
  std::int64_t c = 0;
#ifdef DCNV4_HAVE_F16C
  for (; c + 8 <= count; c += 8) {
    const __m128i packed = _mm256_cvtps_ph(_mm256_loadu_ps(acc + c), _MM_FROUND_TO_NEAREST_INT);
    _mm_storeu_si128(reinterpret_cast<__m128i*>(dst + c), packed);
  }
#endif
  for (; c < count; ++c) dst[c] = float_to_half(acc[c]);
}

// Shared skeleton of the coefficient-reusing stages: one pass over the K
// points per (location, group), sweeping all D channels for each point.
template <bool Count, bool Vector, int Lanes, class Storage>
void reuse_kernel(const Problem& p, const Storage* x, Storage* y, std::size_t begin, std::size_t end,
                  LocalCounts& counts) {
  const Shape& s = p.s;
  std::vector<float> acc(static_cast<std::size_t>(p.D));
  // Stand-in for corners outside the image; every channel reads 0.
  const std::vector<Storage> zeros(static_cast<std::size_t>(p.D), Storage{0});
  for (std::size_t loc = begin; loc < end; ++loc) {
    const auto n = static_cast<std::int64_t>(loc / static_cast<std::size_t>(s.h * s.w));
    const auto h = static_cast<std::int64_t>((loc / static_cast<std::size_t>(s.w)) % static_cast<std::size_t>(s.h));
    const auto w = static_cast<std::int64_t>(loc % static_cast<std::size_t>(s.w));
    for (int g = 0; g < p.G; ++g) {
      std::fill(acc.begin(), acc.end(), 0.0f);
      const std::int64_t ch0 = g * p.D;
      for (int k = 0; k < p.K; ++k) {
        const std::size_t at = (loc * p.G + g) * p.K + k;
        const float dy = p.off[2 * at];
        const float dx = p.off[2 * at + 1];
        const float m = p.weight(loc, g, k);
        const Footprint fp = locate(p.row(h, k) + p.scale * dy, p.col(w, k) + p.scale * dx, s, n);
        if constexpr (Count) {
          counts.offset_reads += 3;
          counts.coefficient_computations += 1;
        }
        if (fp.kind == Footprint::outside) continue;
        if (fp.kind == Footprint::not_a_number) {
          for (auto& a : acc) a += m * std::numeric_limits<float>::quiet_NaN();
          continue;
        }
        const Storage* corner[4];
        for (int q = 0; q < 4; ++q) corner[q] = fp.corner[q] >= 0 ? x + fp.corner[q] + ch0 : zeros.data();
        if constexpr (Vector) {
          if constexpr (Lanes > 0) {
            sweep_lanes<Lanes>(acc.data(), corner, fp.coeff, m, p.D);
          } else if constexpr (std::is_same_v<Storage, float>) {
            sweep_lanes<4>(acc.data(), corner, fp.coeff, m, p.D);
          } else {
            sweep_lanes<8>(acc.data(), corner, fp.coeff, m, p.D);
          }
        } else {
          sweep_scalar(acc.data(), corner, fp.coeff, m, p.D);
        }
      }
      store_lanes(y + loc * static_cast<std::size_t>(s.c) + ch0, acc.data(), p.D);
    }
  }
}

template <bool Count, class Storage>
void run_plan(const Problem& p, const KernelPlan& plan, const Storage* x, Storage* y, std::size_t begin,
              std::size_t end, LocalCounts& counts) {
  if (plan.stage == Stage::baseline) return baseline_kernel<Count>(p, x, y, begin, end, counts);
  if (plan.stage == Stage::workload_elim) return workload_elim_kernel<Count>(p, x, y, begin, end, counts);
  if (plan.stage == Stage::coeff_reuse) return reuse_kernel<Count, false, 0>(p, x, y, begin, end, counts);
  // Fixed lane widths compile to straight vector code; any other valid D'
  // runs in 4- (fp32) or 8-lane (fp16) steps.
  switch (plan.d_prime) {
    case 8: return reuse_kernel<Count, true, 8>(p, x, y, begin, end, counts);
    case 16: return reuse_kernel<Count, true, 16>(p, x, y, begin, end, counts);
    case 32: return reuse_kernel<Count, true, 32>(p, x, y, begin, end, counts);
    default: return reuse_kernel<Count, true, 0>(p, x, y, begin, end, counts);
  }
}

}  // namespace detail

// Writes into a preallocated output of the input's shape and dtype.
inline void dcn_forward_opt_into(const TensorNHWC& x, const OffsetField& off, const WeightField& w,
                                 const DcnConfig& cfg, const KernelPlan& plan, TensorNHWC& out,
                                 KernelCounters* counters = nullptr) {
  if (cfg.softmax_weights) {
    throw UnsupportedConfigurationError(
        "the optimized kernel implements unbounded (softmax-free) weights only; use dcn_forward_ref "
        "for softmax-normalized aggregation");
  }
  detail::check_operands(x, off, w, cfg);
  const std::int64_t D = cfg.group_dim(x.shape().c);
  plan.validate(D);
  if (x.dtype() != plan.dtype) {
    throw PlanError("input is " + std::string(to_string(x.dtype())) + " but the plan expects " +
                    std::string(to_string(plan.dtype)));
  }
  if (out.shape() != x.shape() || out.dtype() != x.dtype()) {
    throw DimensionError("output", "output buffer must match the input shape and dtype");
  }

  detail::Problem p;
  p.s = x.shape();
  p.ks = cfg.kernel_size;
  p.K = cfg.points();
  p.G = cfg.groups;
  p.pad = cfg.pad();
  p.D = D;
  p.d_prime = plan.d_prime;
  p.scale = cfg.offset_scale;
  p.off = off.values().data();
  p.wts = w.values().data();
  p.inject_fault = plan.inject_fault;

  std::mutex merge;
  const auto body = [&](std::size_t begin, std::size_t end) {
    detail::LocalCounts local;
    const auto dispatch = [&](auto count_tag) {
      constexpr bool kCount = decltype(count_tag)::value;
      if (x.dtype() == ElementType::fp32) {
        detail::run_plan<kCount>(p, plan, x.f32().data(), out.f32().data(), begin, end, local);
      } else {
        detail::run_plan<kCount>(p, plan, x.f16().data(), out.f16().data(), begin, end, local);
      }
    };
    if (counters) {
      dispatch(std::true_type{});
      std::lock_guard lock(merge);
      counters->offset_reads += local.offset_reads;
      counters->coefficient_computations += local.coefficient_computations;
    } else {
      dispatch(std::false_type{});
    }
  };
  parallel_for(x.shape().locations(), body);
}

inline TensorNHWC dcn_forward_opt(const TensorNHWC& x, const OffsetField& off, const WeightField& w,
                                  const DcnConfig& cfg, const KernelPlan& plan = {},
                                  KernelCounters* counters = nullptr) {
  x.shape().validate();
  TensorNHWC out(x.shape(), x.dtype());
  dcn_forward_opt_into(x, off, w, cfg, plan, out, counters);
  return out;
}

}  // namespace dcnv4
