#pragma once

// The module around the core aggregation:
//
//   value  = input_proj(x)                      (1x1, skipped by v4-lightweight)
//   branch = offsets and weights computed from x
//            v3: dw kxk -> LN -> GELU -> linear C->2GK (offsets), linear C->GK (logits, softmaxed by the core)
//            v4: dw kxk (optional) -> one fused linear C->3GK, split [2GK offsets | GK weights]
//   y      = output_proj(aggregate(value, offsets, weights))
//
// The v3 core runs the reference kernel with softmax; v4 runs the optimized
// kernel with unbounded weights.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcnv4/baselines.hpp"
#include "dcnv4/error.hpp"
#include "dcnv4/fixture.hpp"
#include "dcnv4/optimized.hpp"
#include "dcnv4/parallel.hpp"
#include "dcnv4/reference.hpp"
#include "dcnv4/tensor.hpp"

namespace dcnv4 {

enum class ModuleStyle { v3, v4, v4_lightweight };

constexpr std::string_view to_string(ModuleStyle s) noexcept {
  switch (s) {
    case ModuleStyle::v3: return "v3";
    case ModuleStyle::v4: return "v4";
    case ModuleStyle::v4_lightweight: return "v4-lightweight";
  }
  return "?";
}

inline ModuleStyle parse_module_style(std::string_view text) {
  for (auto s : {ModuleStyle::v3, ModuleStyle::v4, ModuleStyle::v4_lightweight}) {
    if (text == to_string(s)) return s;
  }
  throw ConfigError("unknown module style '" + std::string(text) + "'");
}

struct ModuleVariant {
  ModuleStyle style = ModuleStyle::v4;
  bool use_dw_conv = true;

  bool has_projections() const noexcept { return style != ModuleStyle::v4_lightweight; }
  bool fused_branch() const noexcept { return style != ModuleStyle::v3; }

  friend bool operator==(const ModuleVariant&, const ModuleVariant&) = default;
};

struct ModuleConfig {
  std::int64_t channels = 32;
  int groups = 1;
  int kernel_size = 3;
  ModuleVariant variant{};

  int points() const noexcept { return kernel_size * kernel_size; }

  DcnConfig core() const {
    DcnConfig cfg;
    cfg.kernel_size = kernel_size;
    cfg.groups = groups;
    cfg.softmax_weights = variant.style == ModuleStyle::v3;
    return cfg;
  }

  void validate() const {
    if (channels < 1) throw ConfigError("module needs at least one channel");
    core().validate(channels);
    if (variant.style == ModuleStyle::v3 && !variant.use_dw_conv) {
      throw ConfigError("the v3 branch always starts with a depthwise conv");
    }
  }
};

struct ParamSpec {
  enum class Kind { linear_weight, bias, depthwise, norm_scale, norm_shift };
  std::string name;
  Shape shape;
  Kind kind;
};

// Every parameter tensor of a module, in canonical order.
inline std::vector<ParamSpec> param_specs(const ModuleConfig& cfg) {
  using K = ParamSpec::Kind;
  const std::int64_t C = cfg.channels;
  const std::int64_t GK = std::int64_t{cfg.groups} * cfg.points();
  std::vector<ParamSpec> specs;
  if (cfg.variant.has_projections()) {
    specs.push_back({"input_proj.weight", {1, 1, C, C}, K::linear_weight});
    specs.push_back({"input_proj.bias", {1, 1, 1, C}, K::bias});
  }
  if (cfg.variant.use_dw_conv) {
    specs.push_back({"dw_conv.weight", {1, cfg.kernel_size, cfg.kernel_size, C}, K::depthwise});
  }
  if (cfg.variant.style == ModuleStyle::v3) {
    specs.push_back({"ln.scale", {1, 1, 1, C}, K::norm_scale});
    specs.push_back({"ln.shift", {1, 1, 1, C}, K::norm_shift});
    specs.push_back({"offset_linear.weight", {1, 1, 2 * GK, C}, K::linear_weight});
    specs.push_back({"offset_linear.bias", {1, 1, 1, 2 * GK}, K::bias});
    specs.push_back({"weight_linear.weight", {1, 1, GK, C}, K::linear_weight});
    specs.push_back({"weight_linear.bias", {1, 1, 1, GK}, K::bias});
  } else {
    specs.push_back({"fused_linear.weight", {1, 1, 3 * GK, C}, K::linear_weight});
    specs.push_back({"fused_linear.bias", {1, 1, 1, 3 * GK}, K::bias});
  }
  if (cfg.variant.has_projections()) {
    specs.push_back({"output_proj.weight", {1, 1, C, C}, K::linear_weight});
    specs.push_back({"output_proj.bias", {1, 1, 1, C}, K::bias});
  }
  return specs;
}

// Closed-form parameter count for C channels, G groups and K points.
inline std::int64_t param_count(std::int64_t C, std::int64_t G, std::int64_t K, const ModuleVariant& variant) {
  std::int64_t total = 0;
  if (variant.has_projections()) total += 2 * (C * C + C);
  if (variant.use_dw_conv) total += K * C;
  // offsets (2GK) and weights (GK) from C inputs, with biases
  total += 3 * G * K * C + 3 * G * K;
  if (variant.style == ModuleStyle::v3) total += 2 * C;
  return total;
}

// Primitive layers of the offset/weight branch.
inline int primitive_layer_count(const ModuleVariant& variant) {
  if (variant.style == ModuleStyle::v3) return 6;  // dw, LN, GELU, linear, linear, softmax
  return variant.use_dw_conv ? 2 : 1;             // (dw,) fused linear
}

// Branch primitives plus the input/output projections.
inline int module_layer_count(const ModuleVariant& variant) {
  return primitive_layer_count(variant) + (variant.has_projections() ? 2 : 0);
}

class ModuleParams {
 public:
  ModuleParams() = default;

  // Zero-filled tensors for every parameter of `cfg`.
  static ModuleParams zeros(const ModuleConfig& cfg) {
    cfg.validate();
    ModuleParams p;
    p.config_ = cfg;
    for (const auto& spec : param_specs(cfg)) p.tensors_.emplace_back(spec.name, TensorNHWC(spec.shape, ElementType::fp32));
    return p;
  }

  // Training-style init: He-uniform projections and depthwise taps, zero
  // biases, unit LN, and a zero final branch linear so offsets start on the
  // regular grid.
  static ModuleParams initialize(const ModuleConfig& cfg, std::uint64_t seed) {
    ModuleParams p = zeros(cfg);
    const auto specs = param_specs(cfg);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& spec = specs[i];
      auto& t = p.tensors_[i].second;
      const bool projection = spec.name.starts_with("input_proj") || spec.name.starts_with("output_proj");
      if (spec.kind == ParamSpec::Kind::linear_weight && projection) {
        const double bound = std::sqrt(6.0 / static_cast<double>(cfg.channels));
        t = TensorNHWC::from_values(spec.shape, seeded_uniform_values(spec.shape.numel(), seed + i, -bound, bound));
      } else if (spec.kind == ParamSpec::Kind::depthwise) {
        const double bound = std::sqrt(6.0 / static_cast<double>(cfg.points()));
        t = TensorNHWC::from_values(spec.shape, seeded_uniform_values(spec.shape.numel(), seed + i, -bound, bound));
      } else if (spec.kind == ParamSpec::Kind::norm_scale) {
        t = create(spec.shape, ElementType::fp32, fill::Constant{1.0f});
      }
    }
    return p;
  }

  // Every tensor drawn from seeded_uniform with seed base_seed + i (i = the
  // canonical index): linear weights in +-1/sqrt(C), depthwise taps in +-1/k,
  // biases and LN shift in +-0.1, LN scale in [0.5, 1.5).
  static ModuleParams seeded(const ModuleConfig& cfg, std::uint64_t base_seed) {
    ModuleParams p = zeros(cfg);
    const auto specs = param_specs(cfg);
    const double lin = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
    const double dw = 1.0 / static_cast<double>(cfg.kernel_size);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      double lo = -0.1;
      double hi = 0.1;
      switch (specs[i].kind) {
        case ParamSpec::Kind::linear_weight: lo = -lin; hi = lin; break;
        case ParamSpec::Kind::depthwise: lo = -dw; hi = dw; break;
        case ParamSpec::Kind::norm_scale: lo = 0.5; hi = 1.5; break;
        default: break;
      }
      p.tensors_[i].second = TensorNHWC::from_values(
          specs[i].shape, seeded_uniform_values(specs[i].shape.numel(), base_seed + i, lo, hi));
    }
    return p;
  }

  const ModuleConfig& config() const noexcept { return config_; }
  const std::vector<std::pair<std::string, TensorNHWC>>& tensors() const noexcept { return tensors_; }

  bool has(std::string_view name) const noexcept {
    for (const auto& [n, t] : tensors_) {
      if (n == name) return true;
    }
    return false;
  }

  const TensorNHWC& get(std::string_view name) const {
    for (const auto& [n, t] : tensors_) {
      if (n == name) return t;
    }
    throw ConfigError("module has no parameter '" + std::string(name) + "'");
  }

  // Replaces a parameter; the shape must match.
  void set(std::string_view name, TensorNHWC value) {
    for (auto& [n, t] : tensors_) {
      if (n != name) continue;
      if (value.shape() != t.shape() || value.dtype() != ElementType::fp32) {
        throw DimensionError(std::string(name), "expected fp32 " + t.shape().to_string() + ", got " +
                                                    value.shape().to_string());
      }
      t = std::move(value);
      return;
    }
    throw ConfigError("module has no parameter '" + std::string(name) + "'");
  }

  std::int64_t element_count() const noexcept {
    std::int64_t total = 0;
    for (const auto& [n, t] : tensors_) total += static_cast<std::int64_t>(t.numel());
    return total;
  }

 private:
  ModuleConfig config_{};
  std::vector<std::pair<std::string, TensorNHWC>> tensors_;
};

// y[o] = b[o] + sum_i x[i] * W[o][i] per location; weight is (1, 1, out, in).
inline TensorNHWC linear_forward(const TensorNHWC& x, const TensorNHWC& weight, const TensorNHWC& bias) {
  const Shape& s = x.shape();
  const std::int64_t out_ch = weight.shape().h == 1 ? weight.shape().w : 0;
  if (weight.shape().n != 1 || weight.shape().h != 1 || weight.shape().c != s.c) {
    throw DimensionError("C", "linear weight " + weight.shape().to_string() + " does not take " +
                                  std::to_string(s.c) + " inputs");
  }
  if (bias.numel() != static_cast<std::size_t>(out_ch)) throw DimensionError("bias", "bias length must equal outputs");
  const auto in = x.to_float_vector();
  const auto W = weight.f32();
  const auto b = bias.f32();
  const Shape out_shape{s.n, s.h, s.w, out_ch};
  std::vector<float> out(out_shape.numel());
  parallel_for(s.locations(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t loc = begin; loc < end; ++loc) {
      const float* src = in.data() + loc * static_cast<std::size_t>(s.c);
      float* dst = out.data() + loc * static_cast<std::size_t>(out_ch);
      for (std::int64_t o = 0; o < out_ch; ++o) {
        const float* row = W.data() + o * s.c;
        float acc = b[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < s.c; ++i) acc += src[i] * row[i];
        dst[o] = acc;
      }
    }
  });
  return TensorNHWC::from_values(out_shape, std::move(out));
}

// Normalizes over channels at every location; per-channel affine.
inline TensorNHWC layer_norm_forward(const TensorNHWC& x, const TensorNHWC& scale, const TensorNHWC& shift,
                                     float eps = 1e-6f) {
  const Shape& s = x.shape();
  auto v = x.to_float_vector();
  const auto g = scale.f32();
  const auto b = shift.f32();
  const auto C = static_cast<std::size_t>(s.c);
  for (std::size_t loc = 0; loc < s.locations(); ++loc) {
    float* row = v.data() + loc * C;
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += row[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(C);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<float>((row[c] - mean) * inv * g[c] + b[c]);
  }
  return TensorNHWC::from_values(s, std::move(v));
}

// Exact erf formulation.
inline TensorNHWC gelu_forward(const TensorNHWC& x) {
  auto v = x.to_float_vector();
  for (auto& e : v) e = static_cast<float>(0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0))));
  return TensorNHWC::from_values(x.shape(), std::move(v));
}

struct BranchOutput {
  OffsetField offsets;
  WeightField weights;
};

namespace detail {

inline void check_variant(const ModuleParams& params, const ModuleVariant& variant) {
  if (!(params.config().variant == variant)) {
    throw ConfigError("parameters were built for variant " + std::string(to_string(params.config().variant.style)) +
                      (params.config().variant.use_dw_conv ? "" : " (no dw)") + ", called with " +
                      std::string(to_string(variant.style)) + (variant.use_dw_conv ? "" : " (no dw)"));
  }
}

// Splits channels [0, first) and [first, C) at every location.
inline std::pair<TensorNHWC, TensorNHWC> split_channels(const TensorNHWC& t, std::int64_t first) {
  const Shape& s = t.shape();
  const auto src = t.f32();
  const Shape a_shape{s.n, s.h, s.w, first};
  const Shape b_shape{s.n, s.h, s.w, s.c - first};
  std::vector<float> a, b;
  a.reserve(a_shape.numel());
  b.reserve(b_shape.numel());
  for (std::size_t loc = 0; loc < s.locations(); ++loc) {
    const auto row = src.subspan(loc * static_cast<std::size_t>(s.c), static_cast<std::size_t>(s.c));
    a.insert(a.end(), row.begin(), row.begin() + first);
    b.insert(b.end(), row.begin() + first, row.end());
  }
  return {TensorNHWC::from_values(a_shape, std::move(a)), TensorNHWC::from_values(b_shape, std::move(b))};
}

}  // namespace detail

// v3 returns softmax-ready logits; v4 returns final unbounded weights.
inline BranchOutput branch_forward(const TensorNHWC& x, const ModuleParams& params, const ModuleVariant& variant) {
  detail::check_variant(params, variant);
  const ModuleConfig& cfg = params.config();
  if (x.shape().c != cfg.channels) {
    throw DimensionError("C", "module expects " + std::to_string(cfg.channels) + " channels");
  }
  const std::int64_t GK = std::int64_t{cfg.groups} * cfg.points();
  TensorNHWC t = cast(x, ElementType::fp32);
  if (variant.use_dw_conv) t = dwconv_forward(t, DwKernel{params.get("dw_conv.weight"), false});

  if (variant.style == ModuleStyle::v3) {
    t = gelu_forward(layer_norm_forward(t, params.get("ln.scale"), params.get("ln.shift")));
    auto off = linear_forward(t, params.get("offset_linear.weight"), params.get("offset_linear.bias"));
    auto logits = linear_forward(t, params.get("weight_linear.weight"), params.get("weight_linear.bias"));
    return {OffsetField(std::move(off), cfg.groups, cfg.points()),
            WeightField(std::move(logits), cfg.groups, cfg.points())};
  }
  const auto fused = linear_forward(t, params.get("fused_linear.weight"), params.get("fused_linear.bias"));
  auto [off, wts] = detail::split_channels(fused, 2 * GK);
  return {OffsetField(std::move(off), cfg.groups, cfg.points()), WeightField(std::move(wts), cfg.groups, cfg.points())};
}

// The fused v4 branch evaluated as two separate linears (offset rows, then
// weight rows) over the same depthwise features.
inline BranchOutput branch_forward_unfused(const TensorNHWC& x, const ModuleParams& params,
                                           const ModuleVariant& variant) {
  detail::check_variant(params, variant);
  if (!variant.fused_branch()) throw ConfigError("only fused variants have an unfused form");
  const ModuleConfig& cfg = params.config();
  const std::int64_t GK = std::int64_t{cfg.groups} * cfg.points();
  const std::int64_t C = cfg.channels;
  TensorNHWC t = cast(x, ElementType::fp32);
  if (variant.use_dw_conv) t = dwconv_forward(t, DwKernel{params.get("dw_conv.weight"), false});
  const auto W = params.get("fused_linear.weight").f32();
  const auto B = params.get("fused_linear.bias").f32();
  const auto rows = [&](std::int64_t from, std::int64_t count) {
    const auto w0 = W.begin() + from * C;
    return linear_forward(t, TensorNHWC::from_values({1, 1, count, C}, std::vector<float>(w0, w0 + count * C)),
                          TensorNHWC::from_values({1, 1, 1, count}, std::vector<float>(B.begin() + from,
                                                                                       B.begin() + from + count)));
  };
  return {OffsetField(rows(0, 2 * GK), cfg.groups, cfg.points()),
          WeightField(rows(2 * GK, GK), cfg.groups, cfg.points())};
}

inline TensorNHWC module_forward(const TensorNHWC& x, const ModuleParams& params, const ModuleVariant& variant,
                                 const KernelPlan& plan = {}) {
  detail::check_variant(params, variant);
  const ModuleConfig& cfg = params.config();
  const TensorNHWC input = cast(x, ElementType::fp32);
  TensorNHWC value = variant.has_projections()
                         ? linear_forward(input, params.get("input_proj.weight"), params.get("input_proj.bias"))
                         : input;
  const auto branch = branch_forward(input, params, variant);

  TensorNHWC core;
  if (variant.style == ModuleStyle::v3) {
    core = dcn_forward_ref(value, branch.offsets, branch.weights, cfg.core());
  } else {
    core = cast(dcn_forward_opt(cast(value, plan.dtype), branch.offsets, branch.weights, cfg.core(), plan),
                ElementType::fp32);
  }
  if (!variant.has_projections()) return core;
  return linear_forward(core, params.get("output_proj.weight"), params.get("output_proj.bias"));
}

// One <name>.dcnt per tensor plus manifest.txt naming the variant and config.
inline void save_module_params(const ModuleParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& cfg = params.config();
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw Error("cannot write manifest in '" + dir.string() + "'");
  manifest << "dcn-module 1\n"
           << "style " << to_string(cfg.variant.style) << '\n'
           << "use_dw_conv " << (cfg.variant.use_dw_conv ? 1 : 0) << '\n'
           << "channels " << cfg.channels << '\n'
           << "groups " << cfg.groups << '\n'
           << "kernel_size " << cfg.kernel_size << '\n';
  for (const auto& [name, t] : params.tensors()) {
    const std::string file = name + ".dcnt";
    write_fixture(t, dir / file);
    manifest << "tensor " << name << ' ' << file << '\n';
  }
}

inline ModuleParams load_module_params(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw Error("no manifest.txt in '" + dir.string() + "'");
  std::string line;
  if (!std::getline(manifest, line) || line != "dcn-module 1") throw ConfigError("unrecognized module manifest header");

  ModuleConfig cfg;
  std::vector<std::pair<std::string, std::string>> files;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "style") {
      std::string v;
      fields >> v;
      cfg.variant.style = parse_module_style(v);
    } else if (key == "use_dw_conv") {
      int v = 1;
      fields >> v;
      cfg.variant.use_dw_conv = v != 0;
    } else if (key == "channels") {
      fields >> cfg.channels;
    } else if (key == "groups") {
      fields >> cfg.groups;
    } else if (key == "kernel_size") {
      fields >> cfg.kernel_size;
    } else if (key == "tensor") {
      std::string name, file;
      fields >> name >> file;
      files.emplace_back(name, file);
    } else {
      throw ConfigError("unknown manifest key '" + key + "'");
    }
  }
  ModuleParams params = ModuleParams::zeros(cfg);
  const auto specs = param_specs(cfg);
  if (files.size() != specs.size()) {
    throw ConfigError("manifest lists " + std::to_string(files.size()) + " tensors, variant needs " +
                      std::to_string(specs.size()));
  }
  for (const auto& [name, file] : files) params.set(name, read_fixture(dir / file));
  return params;
}

}  // namespace dcnv4
