#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcnv4/baselines.hpp"
#include "dcnv4/error.hpp"
#include "dcnv4/module.hpp"
#include "dcnv4/optimized.hpp"
#include "dcnv4/reference.hpp"
#include "dcnv4/tensor.hpp"

namespace dcnv4 {

struct TimingProtocol {
  int warmup = 3;
  int reps = 10;

  void validate() const {
    if (warmup < 3) throw ConfigError("warmup must be >= 3, got " + std::to_string(warmup));
    if (reps < 10) throw ConfigError("reps must be >= 10, got " + std::to_string(reps));
  }
};

struct TimingStats {
  double median_us = 0.0;
  double p10_us = 0.0;
  double p90_us = 0.0;
};

// Linear-interpolated quantile of sorted samples.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline TimingStats summarize(std::vector<double> samples_us) {
  std::sort(samples_us.begin(), samples_us.end());
  return {quantile(samples_us, 0.5), quantile(samples_us, 0.1), quantile(samples_us, 0.9)};
}

// Runs `fn` warmup times untimed, then reps times each bracketed by the
// steady clock.
template <class Fn>
TimingStats time_kernel(Fn&& fn, const TimingProtocol& protocol) {
  protocol.validate();
  for (int i = 0; i < protocol.warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(protocol.reps));
  for (int i = 0; i < protocol.reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return summarize(std::move(samples));
}

struct BenchRecord {
  std::string op;
  Shape shape;
  int groups = 1;
  ElementType dtype = ElementType::fp32;
  std::string stage;  // empty when not applicable
  int reps = 0;
  int warmup = 0;
  double median_us = 0.0;
  double p10_us = 0.0;
  double p90_us = 0.0;
  double checksum = 0.0;  // fp32 sum of the output
  bool anomaly = false;   // p90 > 10x median

  friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

// Columns: op,n,h,w,c,groups,dtype,stage,reps,median_us,p10_us,p90_us,checksum,flag
inline constexpr std::string_view kCsvHeader =
    "op,n,h,w,c,groups,dtype,stage,reps,median_us,p10_us,p90_us,checksum,flag";

inline std::string to_csv_row(const BenchRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << r.op << ',' << r.shape.n << ',' << r.shape.h << ',' << r.shape.w << ',' << r.shape.c << ',' << r.groups
     << ',' << to_string(r.dtype) << ',' << r.stage << ',' << r.reps << ',' << r.median_us << ',' << r.p10_us
     << ',' << r.p90_us << ',' << r.checksum << ',' << (r.anomaly ? "timing-anomaly" : "");
  return os.str();
}

inline std::string to_csv(const std::vector<BenchRecord>& records) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : records) out += to_csv_row(r) + '\n';
  return out;
}

// Parses text produced by to_csv. The warmup count is not part of the schema
// and comes back as 0.
inline std::vector<BenchRecord> parse_csv(std::string_view text) {
  std::vector<BenchRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ConfigError("CSV header mismatch");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 14) throw ConfigError("CSV row has " + std::to_string(f.size()) + " fields: " + line);
    BenchRecord r;
    r.op = f[0];
    r.shape = {std::stoll(f[1]), std::stoll(f[2]), std::stoll(f[3]), std::stoll(f[4])};
    r.groups = std::stoi(f[5]);
    r.dtype = parse_element_type(f[6]);
    r.stage = f[7];
    r.reps = std::stoi(f[8]);
    r.median_us = std::stod(f[9]);
    r.p10_us = std::stod(f[10]);
    r.p90_us = std::stod(f[11]);
    r.checksum = std::stod(f[12]);
    r.anomaly = f[13] == "timing-anomaly";
    out.push_back(std::move(r));
  }
  return out;
}

// Standard and high-resolution benchmark inputs.
struct ShapeGrid {
  std::string name;
  std::vector<Shape> shapes;

  static ShapeGrid standard() {
    return {"standard", {{64, 56, 56, 128}, {64, 28, 28, 256}, {64, 14, 14, 512}, {64, 7, 7, 1024}, {64, 14, 14, 768}}};
  }
  static ShapeGrid highres() {
    return {"highres", {{1, 200, 320, 128}, {1, 100, 160, 256}, {1, 50, 80, 512}, {1, 25, 40, 1024}, {1, 64, 64, 768}}};
  }
  static ShapeGrid by_name(std::string_view name) {
    if (name == "standard") return standard();
    if (name == "highres") return highres();
    throw ConfigError("unknown grid '" + std::string(name) + "'");
  }
};

inline constexpr std::int64_t kDefaultGroupDim = 32;
inline constexpr std::int64_t kMaxAttentionTokens = 4096;

inline double checksum(const TensorNHWC& t) {
  float sum = 0.0f;
  for (std::size_t i = 0; i < t.numel(); ++i) sum += t.value(i);
  return sum;
}

inline constexpr std::array<std::string_view, 6> kBenchOps = {"dcn-ref",      "dcn-opt", "dcnv3-module",
                                                             "dcnv4-module", "dwconv",  "attention"};

struct BenchCell {
  std::string op;
  Shape shape;
  int groups = 0;  // 0: C / 32
  int kernel_size = 3;
  ElementType dtype = ElementType::fp32;
  std::optional<Stage> stage;  // dcn-opt only; default follows dtype
  int d_prime = 8;
  std::uint64_t seed = 0;
  TimingProtocol protocol{};

  int resolved_groups() const {
    return groups > 0 ? groups : static_cast<int>(std::max<std::int64_t>(1, shape.c / kDefaultGroupDim));
  }
};

struct DcnInputs {
  TensorNHWC x;
  OffsetField offset;
  WeightField weight;
  DcnConfig config;
};

// Seeded benchmark operands: x in [-1, 1), offsets in [-2, 2), weights in [-1, 1).
inline DcnInputs make_dcn_inputs(const Shape& shape, int groups, int kernel_size, std::uint64_t seed,
                                 bool softmax = false) {
  DcnConfig cfg;
  cfg.kernel_size = kernel_size;
  cfg.groups = groups;
  cfg.softmax_weights = softmax;
  cfg.validate(shape.c);
  return {create(shape, ElementType::fp32, fill::SeededUniform{seed, -1.0f, 1.0f}),
          OffsetField::create(shape, groups, cfg.points(), fill::SeededUniform{seed + 1, -2.0f, 2.0f}),
          WeightField::create(shape, groups, cfg.points(), fill::SeededUniform{seed + 2, -1.0f, 1.0f}), cfg};
}

inline BenchRecord finish_record(const BenchCell& cell, const TimingStats& t, double sum, std::string stage) {
  BenchRecord r;
  r.op = cell.op;
  r.shape = cell.shape;
  r.groups = cell.resolved_groups();
  r.dtype = cell.dtype;
  r.stage = std::move(stage);
  r.reps = cell.protocol.reps;
  r.warmup = cell.protocol.warmup;
  r.median_us = t.median_us;
  r.p10_us = t.p10_us;
  r.p90_us = t.p90_us;
  r.checksum = sum;
  r.anomaly = t.p90_us > 10.0 * t.median_us;
  return r;
}

inline bool is_bench_op(std::string_view op) {
  return std::find(kBenchOps.begin(), kBenchOps.end(), op) != kBenchOps.end();
}

// Times one (operator, shape, dtype) cell. Returns nothing for cells the
// operator cannot run (dense attention beyond kMaxAttentionTokens tokens).
inline std::optional<BenchRecord> run_bench_cell(const BenchCell& cell) {
  if (!is_bench_op(cell.op)) throw ConfigError("unknown operator '" + cell.op + "'");
  cell.protocol.validate();
  const int G = cell.resolved_groups();
  const Shape& s = cell.shape;

  if (cell.op == "dcn-ref" || cell.op == "dcn-opt") {
    auto in = make_dcn_inputs(s, G, cell.kernel_size, cell.seed);
    const TensorNHWC x = cast(in.x, cell.dtype);
    if (cell.op == "dcn-ref") {
      TensorNHWC y;
      const auto t = time_kernel([&] { y = dcn_forward_ref(x, in.offset, in.weight, in.config); }, cell.protocol);
      return finish_record(cell, t, checksum(y), "");
    }
    const Stage stage = cell.stage.value_or(cell.dtype == ElementType::fp16 ? Stage::fp16 : Stage::vector_lanes);
    KernelPlan plan = KernelPlan::for_stage(stage, cell.d_prime);
    plan.dtype = cell.dtype;
    TensorNHWC y(s, cell.dtype);
    const auto t = time_kernel([&] { dcn_forward_opt_into(x, in.offset, in.weight, in.config, plan, y); },
                               cell.protocol);
    return finish_record(cell, t, checksum(y), std::string(to_string(stage)));
  }

  if (cell.op == "dcnv3-module" || cell.op == "dcnv4-module") {
    ModuleConfig mc;
    mc.channels = s.c;
    mc.groups = G;
    mc.kernel_size = cell.kernel_size;
    mc.variant.style = cell.op == "dcnv3-module" ? ModuleStyle::v3 : ModuleStyle::v4;
    const auto params = ModuleParams::seeded(mc, cell.seed + 10);
    const auto x = create(s, ElementType::fp32, fill::SeededUniform{cell.seed, -1.0f, 1.0f});
    KernelPlan plan = KernelPlan::for_stage(cell.dtype == ElementType::fp16 ? Stage::fp16 : Stage::vector_lanes,
                                            cell.d_prime);
    TensorNHWC y;
    const auto t = time_kernel([&] { y = module_forward(x, params, mc.variant, plan); }, cell.protocol);
    return finish_record(cell, t, checksum(y), "");
  }

  if (cell.op == "dwconv") {
    const auto x = create(s, ElementType::fp32, fill::SeededUniform{cell.seed, -1.0f, 1.0f});
    const DwKernel kern{create({1, cell.kernel_size, cell.kernel_size, s.c}, ElementType::fp32,
                               fill::SeededUniform{cell.seed + 1, -1.0f, 1.0f}),
                        false};
    TensorNHWC y;
    const auto t = time_kernel([&] { y = dwconv_forward(x, kern); }, cell.protocol);
    return finish_record(cell, t, checksum(y), "");
  }

  // attention: one window of H*W tokens per image, width C.
  const std::int64_t tokens = s.h * s.w;
  if (tokens > kMaxAttentionTokens) return std::nullopt;
  std::vector<AttentionInputs> windows;
  for (std::int64_t n = 0; n < s.n; ++n) windows.push_back(AttentionInputs::seeded(tokens, s.c, cell.seed + 3 * n));
  double sum = 0.0;
  const auto t = time_kernel(
      [&] {
        sum = 0.0;
        for (const auto& win : windows) {
          const auto out = attention_forward(win, true);
          for (float v : out.data) sum += v;
        }
      },
      cell.protocol);
  return finish_record(cell, t, sum, "");
}

// Times the core kernel at one ladder stage on seeded inputs.
inline BenchRecord run_stage(Stage stage, const Shape& shape, const DcnConfig& cfg, const TimingProtocol& protocol = {},
                             std::uint64_t seed = 0, int d_prime = 8) {
  BenchCell cell;
  cell.op = "dcn-opt";
  cell.shape = shape;
  cell.groups = cfg.groups;
  cell.kernel_size = cfg.kernel_size;
  cell.dtype = stage == Stage::fp16 ? ElementType::fp16 : ElementType::fp32;
  cell.stage = stage;
  cell.d_prime = d_prime;
  cell.seed = seed;
  cell.protocol = protocol;
  return *run_bench_cell(cell);
}

}  // namespace dcnv4
