#pragma once

// Scalar reference for the deformable aggregation
//
//   y[n, p0, g*D + c] = sum_k m'[g, k] * bilinear(x[n, :, :, g*D + c], p0 + p_k + s * dp[g, k])
//
// where p_k runs over a k x k grid centred on p0, s is offset_scale and m' is
// either the raw weight (unbounded) or its softmax over the K grid points.
// Everything here is single-threaded and written for clarity, not speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dcnv4/error.hpp"
#include "dcnv4/tensor.hpp"

namespace dcnv4 {

struct DcnConfig {
  int kernel_size = 3;
  int groups = 1;
  bool softmax_weights = false;
  float offset_scale = 1.0f;

  constexpr int points() const noexcept { return kernel_size * kernel_size; }
  constexpr int pad() const noexcept { return (kernel_size - 1) / 2; }
  constexpr std::int64_t group_dim(std::int64_t channels) const noexcept { return channels / groups; }

  void validate(std::int64_t channels) const {
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw ConfigError("kernel_size must be a positive odd number, got " + std::to_string(kernel_size));
    }
    if (groups < 1) throw ConfigError("groups must be >= 1, got " + std::to_string(groups));
    if (channels % groups != 0) {
      throw DimensionError("C", "channels " + std::to_string(channels) + " not divisible by groups " +
                                    std::to_string(groups));
    }
    if (!std::isfinite(offset_scale)) throw ConfigError("offset_scale must be finite");
  }
};

// Per-location, per-(group, point) table stored channel-last with C = G*K*Width.
// Width is 2 for offsets (dy, dx) and 1 for aggregation weights.
template <int Width>
class PointField {
 public:
  PointField() = default;

  PointField(TensorNHWC data, int groups, int points)
      : data_(std::move(data)), groups_(groups), points_(points) {
    if (data_.dtype() != ElementType::fp32) throw ConfigError("point fields are fp32 only");
    const std::int64_t expected = std::int64_t{groups} * points * Width;
    if (data_.shape().c != expected) {
      throw DimensionError("C", "field has " + std::to_string(data_.shape().c) +
                                    " channels, expected G*K*" + std::to_string(Width) + " = " +
                                    std::to_string(expected));
    }
  }

  // `spatial` supplies N, H, W; its channel count is ignored.
  static PointField create(Shape spatial, int groups, int points, const FillSpec& spec) {
    spatial.c = std::int64_t{groups} * points * Width;
    return PointField(dcnv4::create(spatial, ElementType::fp32, spec), groups, points);
  }

  const TensorNHWC& tensor() const noexcept { return data_; }
  TensorNHWC& tensor() noexcept { return data_; }
  std::span<const float> values() const { return data_.f32(); }
  std::span<float> values() { return data_.f32(); }
  int groups() const noexcept { return groups_; }
  int points() const noexcept { return points_; }
  const Shape& shape() const noexcept { return data_.shape(); }

  // Flat index of component `comp` for (location, g, k).
  std::size_t index(std::size_t location, int g, int k, int comp = 0) const noexcept {
    return ((location * static_cast<std::size_t>(groups_) + g) * points_ + k) * Width + comp;
  }

 private:
  TensorNHWC data_;
  int groups_ = 0;
  int points_ = 0;
};

using OffsetField = PointField<2>;  // (dy, dx) in pixels, unbounded
using WeightField = PointField<1>;  // raw logits or final unbounded weights

struct SamplePoint {
  float y = 0.0f;
  float x = 0.0f;
};

namespace detail {

template <class Real>
void softmax_inplace(std::span<Real> v) {
  if (v.empty()) return;
  const Real top = *std::max_element(v.begin(), v.end());
  Real sum = 0;
  for (auto& e : v) {
    e = std::exp(e - top);
    sum += e;
  }
  for (auto& e : v) e /= sum;
}

// Zero-padded bilinear interpolation of one channel plane.
template <class Real>
Real bilinear(std::span<const Real> x, const Shape& s, std::int64_t n, std::int64_t ch, Real py, Real px) {
  if (std::isnan(py) || std::isnan(px)) return std::numeric_limits<Real>::quiet_NaN();
  if (!(py > Real(-1) && py < Real(s.h) && px > Real(-1) && px < Real(s.w))) return Real(0);
  const auto y0 = static_cast<std::int64_t>(std::floor(py));
  const auto x0 = static_cast<std::int64_t>(std::floor(px));
  const Real ly = py - Real(y0);
  const Real lx = px - Real(x0);
  const Real hy = Real(1) - ly;
  const Real hx = Real(1) - lx;
  const auto fetch = [&](std::int64_t yy, std::int64_t xx) -> Real {
    if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) return Real(0);
    return x[s.index(n, yy, xx, ch)];
  };
  const Real v1 = fetch(y0, x0);
  const Real v2 = fetch(y0, x0 + 1);
  const Real v3 = fetch(y0 + 1, x0);
  const Real v4 = fetch(y0 + 1, x0 + 1);
  return hy * hx * v1 + hy * lx * v2 + ly * hx * v3 + ly * lx * v4;
}

inline void check_operands(const Shape& x, const Shape& off, const Shape& w, const DcnConfig& cfg) {
  x.validate();
  cfg.validate(x.c);
  const auto same_spatial = [&](const Shape& other, const char* name) {
    if (other.n != x.n) throw DimensionError("N", std::string(name) + " batch differs from input");
    if (other.h != x.h) throw DimensionError("H", std::string(name) + " height differs from input");
    if (other.w != x.w) throw DimensionError("W", std::string(name) + " width differs from input");
  };
  same_spatial(off, "offset field");
  same_spatial(w, "weight field");
  const std::int64_t gk = std::int64_t{cfg.groups} * cfg.points();
  if (off.c != 2 * gk) {
    throw DimensionError("C", "offset field has " + std::to_string(off.c) + " channels, expected 2*G*K = " +
                                  std::to_string(2 * gk));
  }
  if (w.c != gk) {
    throw DimensionError("C", "weight field has " + std::to_string(w.c) + " channels, expected G*K = " +
                                  std::to_string(gk));
  }
}

template <int Width>
void check_field_layout(const PointField<Width>& f, const DcnConfig& cfg, const char* name) {
  if (f.groups() != cfg.groups || f.points() != cfg.points()) {
    throw DimensionError("G", std::string(name) + " is laid out for G=" + std::to_string(f.groups()) +
                                  ", K=" + std::to_string(f.points()) + " but the config has G=" +
                                  std::to_string(cfg.groups) + ", K=" + std::to_string(cfg.points()));
  }
}

inline void check_operands(const TensorNHWC& x, const OffsetField& off, const WeightField& w,
                           const DcnConfig& cfg) {
  check_operands(x.shape(), off.shape(), w.shape(), cfg);
  check_field_layout(off, cfg, "offset field");
  check_field_layout(w, cfg, "weight field");
}

}  // namespace detail

// Flat-array form of one forward/backward problem. Used directly by the
// gradient checker in double precision.
template <class Real>
struct DcnProblem {
  Shape shape;  // of x and y
  DcnConfig config;
  std::vector<Real> x;
  std::vector<Real> offset;  // (N, H, W, G, K, 2)
  std::vector<Real> weight;  // (N, H, W, G, K)

  static DcnProblem from_tensors(const TensorNHWC& x, const OffsetField& off, const WeightField& w,
                                 const DcnConfig& cfg) {
    detail::check_operands(x, off, w, cfg);
    DcnProblem p;
    p.shape = x.shape();
    p.config = cfg;
    const auto widen = [](const TensorNHWC& t) {
      std::vector<Real> out(t.numel());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(t.value(i));
      return out;
    };
    p.x = widen(x);
    p.offset = widen(off.tensor());
    p.weight = widen(w.tensor());
    return p;
  }
};

template <class Real>
struct DcnGradientArrays {
  std::vector<Real> x;
  std::vector<Real> offset;
  std::vector<Real> weight;
};

namespace detail {

template <class Real>
std::vector<Real> forward_ref(const Shape& s, const DcnConfig& cfg, std::span<const Real> x,
                              std::span<const Real> off, std::span<const Real> wts) {
  const int ks = cfg.kernel_size;
  const int K = cfg.points();
  const int G = cfg.groups;
  const int pad = cfg.pad();
  const std::int64_t D = cfg.group_dim(s.c);
  const Real scale = static_cast<Real>(cfg.offset_scale);

  std::vector<Real> out(s.numel(), Real(0));
  std::vector<Real> m(static_cast<std::size_t>(K));
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t h = 0; h < s.h; ++h) {
      for (std::int64_t w = 0; w < s.w; ++w) {
        const auto loc = static_cast<std::size_t>((n * s.h + h) * s.w + w);
        for (int g = 0; g < G; ++g) {
          const std::size_t base = (loc * G + g) * K;
          for (int k = 0; k < K; ++k) m[k] = wts[base + k];
          if (cfg.softmax_weights) softmax_inplace<Real>(m);
          for (std::int64_t c = 0; c < D; ++c) {
            const std::int64_t ch = g * D + c;
            Real acc = 0;
            for (int k = 0; k < K; ++k) {
              const int i = k / ks;
              const int j = k % ks;
              const Real py = Real(h + i - pad) + scale * off[(base + k) * 2 + 0];
              const Real px = Real(w + j - pad) + scale * off[(base + k) * 2 + 1];
              acc += m[k] * bilinear<Real>(x, s, n, ch, py, px);
            }
            out[loc * static_cast<std::size_t>(s.c) + ch] = acc;
          }
        }
      }
    }
  }
  return out;
}

// Chain rule through the bilinear kernel. The spatial derivative of the
// zero-padded hat function is taken as 0 exactly at integer coordinates.
template <class Real>
DcnGradientArrays<Real> backward_ref(const Shape& s, const DcnConfig& cfg, std::span<const Real> x,
                                     std::span<const Real> off, std::span<const Real> wts,
                                     std::span<const Real> grad_y) {
  if (grad_y.size() != s.numel()) throw DimensionError("grad_y", "gradient must match the output shape");
  const int ks = cfg.kernel_size;
  const int K = cfg.points();
  const int G = cfg.groups;
  const int pad = cfg.pad();
  const std::int64_t D = cfg.group_dim(s.c);
  const Real scale = static_cast<Real>(cfg.offset_scale);

  DcnGradientArrays<Real> grads{std::vector<Real>(x.size(), Real(0)),
                                std::vector<Real>(off.size(), Real(0)),
                                std::vector<Real>(wts.size(), Real(0))};
  std::vector<Real> p(static_cast<std::size_t>(K));
  std::vector<Real> gm(static_cast<std::size_t>(K));

  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t h = 0; h < s.h; ++h) {
      for (std::int64_t w = 0; w < s.w; ++w) {
        const auto loc = static_cast<std::size_t>((n * s.h + h) * s.w + w);
        for (int g = 0; g < G; ++g) {
          const std::size_t base = (loc * G + g) * K;
          for (int k = 0; k < K; ++k) p[k] = wts[base + k];
          if (cfg.softmax_weights) softmax_inplace<Real>(p);
          std::fill(gm.begin(), gm.end(), Real(0));

          for (int k = 0; k < K; ++k) {
            const int i = k / ks;
            const int j = k % ks;
            const Real py = Real(h + i - pad) + scale * off[(base + k) * 2 + 0];
            const Real px = Real(w + j - pad) + scale * off[(base + k) * 2 + 1];
            if (std::isnan(py) || std::isnan(px)) {
              const Real nan = std::numeric_limits<Real>::quiet_NaN();
              gm[k] = nan;
              grads.offset[(base + k) * 2 + 0] = nan;
              grads.offset[(base + k) * 2 + 1] = nan;
              continue;
            }
            if (!(py > Real(-1) && py < Real(s.h) && px > Real(-1) && px < Real(s.w))) continue;

            const auto y0 = static_cast<std::int64_t>(std::floor(py));
            const auto x0 = static_cast<std::int64_t>(std::floor(px));
            const Real ly = py - Real(y0);
            const Real lx = px - Real(x0);
            const Real hy = Real(1) - ly;
            const Real hx = Real(1) - lx;
            const bool y_kink = ly == Real(0);
            const bool x_kink = lx == Real(0);
            const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
            const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const Real coeff[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
            bool inside[4];
            for (int q = 0; q < 4; ++q) inside[q] = ys[q] >= 0 && ys[q] < s.h && xs[q] >= 0 && xs[q] < s.w;

            Real g_dy = 0;
            Real g_dx = 0;
            for (std::int64_t c = 0; c < D; ++c) {
              const std::int64_t ch = g * D + c;
              const Real gy = grad_y[loc * static_cast<std::size_t>(s.c) + ch];
              Real v[4];
              for (int q = 0; q < 4; ++q) v[q] = inside[q] ? x[s.index(n, ys[q], xs[q], ch)] : Real(0);
              const Real sample = coeff[0] * v[0] + coeff[1] * v[1] + coeff[2] * v[2] + coeff[3] * v[3];
              gm[k] += gy * sample;
              for (int q = 0; q < 4; ++q) {
                if (inside[q]) grads.x[s.index(n, ys[q], xs[q], ch)] += p[k] * coeff[q] * gy;
              }
              if (!y_kink) g_dy += gy * (hx * (v[2] - v[0]) + lx * (v[3] - v[1]));
              if (!x_kink) g_dx += gy * (hy * (v[1] - v[0]) + ly * (v[3] - v[2]));
            }
            grads.offset[(base + k) * 2 + 0] = p[k] * g_dy * scale;
            grads.offset[(base + k) * 2 + 1] = p[k] * g_dx * scale;
          }

          if (cfg.softmax_weights) {
            Real dot = 0;
            for (int k = 0; k < K; ++k) dot += p[k] * gm[k];
            for (int k = 0; k < K; ++k) grads.weight[base + k] = p[k] * (gm[k] - dot);
          } else {
            for (int k = 0; k < K; ++k) grads.weight[base + k] = gm[k];
          }
        }
      }
    }
  }
  return grads;
}

}  // namespace detail

// Softmax over the K points of every (n, h, w, g) slice, max-shifted.
inline WeightField softmax_k(const WeightField& w) {
  WeightField out = w;
  auto values = out.values();
  const auto K = static_cast<std::size_t>(w.points());
  for (std::size_t start = 0; start < values.size(); start += K) {
    detail::softmax_inplace<float>(values.subspan(start, K));
  }
  return out;
}

// Zero-padded bilinear sample of channel `channel`. NaN coordinates give NaN.
inline float bilinear_sample(const TensorNHWC& x, std::int64_t n, std::int64_t channel, SamplePoint p) {
  const Shape& s = x.shape();
  if (n < 0 || n >= s.n) throw DimensionError("N", "batch index out of range");
  if (channel < 0 || channel >= s.c) throw DimensionError("C", "channel index out of range");
  if (x.dtype() == ElementType::fp32) return detail::bilinear<float>(x.f32(), s, n, channel, p.y, p.x);
  const auto widened = x.to_float_vector();
  return detail::bilinear<float>(widened, s, n, channel, p.y, p.x);
}

inline float bilinear_sample(const TensorNHWC& x, std::int64_t n, int g, std::int64_t c_in_group,
                             std::int64_t group_dim, SamplePoint p) {
  if (c_in_group < 0 || c_in_group >= group_dim) throw DimensionError("C", "channel index outside its group");
  return bilinear_sample(x, n, g * group_dim + c_in_group, p);
}

template <class Real>
std::vector<Real> dcn_forward_ref(const DcnProblem<Real>& p) {
  return detail::forward_ref<Real>(p.shape, p.config, p.x, p.offset, p.weight);
}

template <class Real>
DcnGradientArrays<Real> dcn_backward_ref(const DcnProblem<Real>& p, std::span<const Real> grad_y) {
  return detail::backward_ref<Real>(p.shape, p.config, p.x, p.offset, p.weight, grad_y);
}

inline TensorNHWC dcn_forward_ref(const TensorNHWC& x, const OffsetField& off, const WeightField& w,
                                  const DcnConfig& cfg) {
  detail::check_operands(x, off, w, cfg);
  std::vector<float> out;
  if (x.dtype() == ElementType::fp32) {
    out = detail::forward_ref<float>(x.shape(), cfg, x.f32(), off.values(), w.values());
  } else {
    const auto widened = x.to_float_vector();
    out = detail::forward_ref<float>(x.shape(), cfg, widened, off.values(), w.values());
  }
  return TensorNHWC::from_values(x.shape(), std::move(out));
}

struct DcnGradients {
  TensorNHWC grad_x;
  OffsetField grad_offset;
  WeightField grad_weight;
};

inline DcnGradients dcn_backward_ref(const TensorNHWC& x, const OffsetField& off, const WeightField& w,
                                     const DcnConfig& cfg, const TensorNHWC& grad_y) {
  detail::check_operands(x, off, w, cfg);
  if (grad_y.shape() != x.shape()) {
    throw DimensionError("grad_y", "shape " + grad_y.shape().to_string() + " differs from output " +
                                       x.shape().to_string());
  }
  const auto xs = x.to_float_vector();
  const auto gy = grad_y.to_float_vector();
  auto g = detail::backward_ref<float>(x.shape(), cfg, xs, off.values(), w.values(), gy);
  return DcnGradients{
      TensorNHWC::from_values(x.shape(), std::move(g.x)),
      OffsetField(TensorNHWC::from_values(off.shape(), std::move(g.offset)), off.groups(), off.points()),
      WeightField(TensorNHWC::from_values(w.shape(), std::move(g.weight)), w.groups(), w.points())};
}

}  // namespace dcnv4
