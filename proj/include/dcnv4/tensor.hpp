#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "dcnv4/error.hpp"
#include "dcnv4/half.hpp"

namespace dcnv4 {

// Storage format of tensor elements. fp16 is storage-only.
enum class ElementType : std::uint8_t { fp32 = 0, fp16 = 1 };

constexpr std::size_t bytes_per_element(ElementType type) noexcept {
  return type == ElementType::fp16 ? 2 : 4;
}

constexpr std::string_view to_string(ElementType type) noexcept {
  return type == ElementType::fp16 ? "f16" : "f32";
}

inline ElementType parse_element_type(std::string_view text) {
  if (text == "f32" || text == "fp32") return ElementType::fp32;
  if (text == "f16" || text == "fp16") return ElementType::fp16;
  throw ConfigError("unknown element type '" + std::string(text) + "'");
}

// (N, H, W, C) with channel-last strides: C = 1, W = C, H = W*C, N = H*W*C.
struct Shape {
  std::int64_t n = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;
  std::int64_t c = 1;

  constexpr std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n * h * w * c);
  }
  constexpr std::size_t locations() const noexcept {
    return static_cast<std::size_t>(n * h * w);
  }
  constexpr std::size_t index(std::int64_t in, std::int64_t ih, std::int64_t iw,
                              std::int64_t ic) const noexcept {
    return static_cast<std::size_t>(((in * h + ih) * w + iw) * c + ic);
  }

  void validate() const {
    if (n < 1 || h < 1 || w < 1 || c < 1) {
      throw InvalidShapeError("invalid shape " + to_string() + ": every dimension must be >= 1");
    }
  }

  std::string to_string() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
           std::to_string(c) + ")";
  }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

namespace fill {
struct Zeros {};
struct Constant {
  float value = 0.0f;
};
// Reproducible uniform values in [lo, hi): one mt19937_64 draw per element in
// flat index order, top 24 bits mapped to [0, 1).
struct SeededUniform {
  std::uint64_t seed = 0;
  float lo = 0.0f;
  float hi = 1.0f;
};
}  // namespace fill

using FillSpec = std::variant<fill::Zeros, fill::Constant, fill::SeededUniform>;

inline std::vector<float> seeded_uniform_values(std::size_t count, std::uint64_t seed, double lo,
                                                double hi) {
  std::mt19937_64 gen(seed);
  std::vector<float> out(count);
  const double low = lo;
  const double span = hi - lo;
  for (auto& v : out) {
    const double u = static_cast<double>(gen() >> 40) * (1.0 / 16777216.0);
    v = static_cast<float>(low + span * u);
  }
  return out;
}

// Dense channel-last tensor. Exactly one of the two backing stores is in use,
// selected by dtype().
class TensorNHWC {
 public:
  TensorNHWC() = default;

  TensorNHWC(Shape shape, ElementType dtype) : shape_(shape), dtype_(dtype) {
    shape_.validate();
    if (dtype_ == ElementType::fp32) {
      f32_.assign(shape_.numel(), 0.0f);
    } else {
      f16_.assign(shape_.numel(), std::uint16_t{0});
    }
  }

  static TensorNHWC from_values(Shape shape, std::vector<float> values) {
    shape.validate();
    if (values.size() != shape.numel()) {
      throw DimensionError("data", "expected " + std::to_string(shape.numel()) +
                                       " values, got " + std::to_string(values.size()));
    }
    TensorNHWC t;
    t.shape_ = shape;
    t.dtype_ = ElementType::fp32;
    t.f32_ = std::move(values);
    return t;
  }

  static TensorNHWC from_half_bits(Shape shape, std::vector<std::uint16_t> bits) {
    shape.validate();
    if (bits.size() != shape.numel()) {
      throw DimensionError("data", "expected " + std::to_string(shape.numel()) +
                                       " values, got " + std::to_string(bits.size()));
    }
    TensorNHWC t;
    t.shape_ = shape;
    t.dtype_ = ElementType::fp16;
    t.f16_ = std::move(bits);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  ElementType dtype() const noexcept { return dtype_; }
  std::size_t numel() const noexcept { return shape_.numel(); }
  bool empty() const noexcept { return f32_.empty() && f16_.empty(); }

  // Widened element read, valid for both storage formats.
  float value(std::size_t flat) const noexcept {
    return dtype_ == ElementType::fp32 ? f32_[flat] : half_to_float(f16_[flat]);
  }
  float at(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const noexcept {
    return value(shape_.index(n, h, w, c));
  }

  std::span<const float> f32() const {
    require(ElementType::fp32);
    return f32_;
  }
  std::span<float> f32() {
    require(ElementType::fp32);
    return f32_;
  }
  std::span<const std::uint16_t> f16() const {
    require(ElementType::fp16);
    return f16_;
  }
  std::span<std::uint16_t> f16() {
    require(ElementType::fp16);
    return f16_;
  }

  // All elements widened to fp32, in flat order.
  std::vector<float> to_float_vector() const {
    if (dtype_ == ElementType::fp32) return f32_;
    std::vector<float> out(f16_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = half_to_float(f16_[i]);
    return out;
  }

  friend bool operator==(const TensorNHWC&, const TensorNHWC&) = default;

 private:
  void require(ElementType expected) const {
    if (dtype_ != expected) {
      throw ConfigError("tensor holds " + std::string(to_string(dtype_)) + " data, accessed as " +
                        std::string(to_string(expected)));
    }
  }

  Shape shape_{};
  ElementType dtype_ = ElementType::fp32;
  std::vector<float> f32_;
  std::vector<std::uint16_t> f16_;
};

// fp32 -> fp16 rounds to nearest even; fp16 -> fp32 is exact.
inline TensorNHWC cast(const TensorNHWC& t, ElementType target) {
  if (t.dtype() == target) return t;
  if (target == ElementType::fp32) return TensorNHWC::from_values(t.shape(), t.to_float_vector());
  const auto src = t.f32();
  std::vector<std::uint16_t> bits(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) bits[i] = float_to_half(src[i]);
  return TensorNHWC::from_half_bits(t.shape(), std::move(bits));
}

inline TensorNHWC create(Shape shape, ElementType dtype, const FillSpec& spec) {
  shape.validate();
  std::vector<float> values = std::visit(
      [&](const auto& f) -> std::vector<float> {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, fill::Zeros>) {
          return std::vector<float>(shape.numel(), 0.0f);
        } else if constexpr (std::is_same_v<F, fill::Constant>) {
          return std::vector<float>(shape.numel(), f.value);
        } else {
          return seeded_uniform_values(shape.numel(), f.seed, f.lo, f.hi);
        }
      },
      spec);
  auto t = TensorNHWC::from_values(shape, std::move(values));
  return dtype == ElementType::fp32 ? t : cast(t, dtype);
}

}  // namespace dcnv4
