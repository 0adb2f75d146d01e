#pragma once

// Comparison operators: depthwise k x k convolution (optionally with its taps
// softmax-normalized over the window) and dense single-window attention.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dcnv4/error.hpp"
#include "dcnv4/parallel.hpp"
#include "dcnv4/reference.hpp"
#include "dcnv4/tensor.hpp"

namespace dcnv4 {

// Per-channel k x k taps stored as a (1, k, k, C) tensor.
struct DwKernel {
  TensorNHWC taps;
  bool softmax_normalized = false;

  int kernel_size() const noexcept { return static_cast<int>(taps.shape().h); }
  std::int64_t channels() const noexcept { return taps.shape().c; }

  void validate() const {
    const Shape& s = taps.shape();
    if (s.n != 1 || s.h != s.w) throw DimensionError("taps", "taps must have shape (1, k, k, C)");
    if (s.h % 2 == 0) throw ConfigError("depthwise kernel size must be odd, got " + std::to_string(s.h));
  }

  // Taps as used by the convolution: raw, or softmaxed over the k*k window of
  // each channel.
  std::vector<float> effective_taps() const {
    std::vector<float> t = taps.to_float_vector();
    if (!softmax_normalized) return t;
    const auto C = static_cast<std::size_t>(channels());
    const auto window = static_cast<std::size_t>(kernel_size() * kernel_size());
    std::vector<float> column(window);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < window; ++i) column[i] = t[i * C + c];
      detail::softmax_inplace<float>(column);
      for (std::size_t i = 0; i < window; ++i) t[i * C + c] = column[i];
    }
    return t;
  }
};

// Stride 1, same padding with zeros at the borders.
inline TensorNHWC dwconv_forward(const TensorNHWC& x, const DwKernel& kern) {
  kern.validate();
  const Shape& s = x.shape();
  if (kern.channels() != s.c) {
    throw DimensionError("C", "kernel has " + std::to_string(kern.channels()) + " channels, input has " +
                                  std::to_string(s.c));
  }
  const int ks = kern.kernel_size();
  const int pad = (ks - 1) / 2;
  const auto taps = kern.effective_taps();
  const auto in = x.to_float_vector();
  std::vector<float> out(s.numel(), 0.0f);
  parallel_for(s.locations(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t loc = begin; loc < end; ++loc) {
      const auto n = static_cast<std::int64_t>(loc / static_cast<std::size_t>(s.h * s.w));
      const auto h = static_cast<std::int64_t>((loc / static_cast<std::size_t>(s.w)) % static_cast<std::size_t>(s.h));
      const auto w = static_cast<std::int64_t>(loc % static_cast<std::size_t>(s.w));
      float* dst = out.data() + loc * static_cast<std::size_t>(s.c);
      for (int i = 0; i < ks; ++i) {
        const std::int64_t yy = h + i - pad;
        if (yy < 0 || yy >= s.h) continue;
        for (int j = 0; j < ks; ++j) {
          const std::int64_t xx = w + j - pad;
          if (xx < 0 || xx >= s.w) continue;
          const float* src = in.data() + s.index(n, yy, xx, 0);
          const float* tap = taps.data() + static_cast<std::size_t>(i * ks + j) * static_cast<std::size_t>(s.c);
          for (std::int64_t c = 0; c < s.c; ++c) dst[c] += tap[c] * src[c];
        }
      }
    }
  });
  return TensorNHWC::from_values(s, std::move(out));
}

// Row-major dense matrix.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0f) {}
  Matrix(std::int64_t r, std::int64_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(r * c)) throw DimensionError("data", "matrix size mismatch");
  }

  float& operator()(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
  float operator()(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }
};

// Q, K, V of one attention window, each (tokens, d).
struct AttentionInputs {
  Matrix q;
  Matrix k;
  Matrix v;

  std::int64_t tokens() const noexcept { return q.rows; }
  std::int64_t dim() const noexcept { return q.cols; }
  double scale() const noexcept { return 1.0 / std::sqrt(static_cast<double>(q.cols)); }

  void validate() const {
    if (q.rows < 1 || q.cols < 1) throw InvalidShapeError("attention needs at least one token and d >= 1");
    for (const Matrix* m : {&k, &v}) {
      if (m->rows != q.rows) throw DimensionError("tokens", "Q, K and V must have the same token count");
      if (m->cols != q.cols) throw DimensionError("d", "Q, K and V must have the same width");
    }
  }

  static AttentionInputs seeded(std::int64_t tokens, std::int64_t d, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(tokens * d);
    return {Matrix(tokens, d, seeded_uniform_values(n, seed, -1.0f, 1.0f)),
            Matrix(tokens, d, seeded_uniform_values(n, seed + 1, -1.0f, 1.0f)),
            Matrix(tokens, d, seeded_uniform_values(n, seed + 2, -1.0f, 1.0f))};
  }
};

namespace detail {

// (Q K^T) * scale, accumulated in double.
inline std::vector<double> attention_scores(const AttentionInputs& in) {
  const auto N = in.tokens();
  const auto d = in.dim();
  std::vector<double> scores(static_cast<std::size_t>(N * N));
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::int64_t t = 0; t < d; ++t) s += static_cast<double>(in.q(i, t)) * in.k(j, t);
      scores[static_cast<std::size_t>(i * N + j)] = s * in.scale();
    }
  }
  return scores;
}

}  // namespace detail

// softmax(Q K^T / sqrt(d)) V, or without softmax (Q K^T / sqrt(d)) V in that
// order of evaluation.
inline Matrix attention_forward(const AttentionInputs& in, bool use_softmax) {
  in.validate();
  const auto N = in.tokens();
  const auto d = in.dim();
  auto scores = detail::attention_scores(in);
  if (use_softmax) {
    for (std::int64_t i = 0; i < N; ++i) {
      detail::softmax_inplace<double>(std::span<double>(scores).subspan(static_cast<std::size_t>(i * N),
                                                                         static_cast<std::size_t>(N)));
    }
  }
  Matrix out(N, d);
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t t = 0; t < d; ++t) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < N; ++j) acc += scores[static_cast<std::size_t>(i * N + j)] * in.v(j, t);
      out(i, t) = static_cast<float>(acc);
    }
  }
  return out;
}

// The shared map M = K^T V / sqrt(d), d x d.
inline Matrix shared_linear_map(const AttentionInputs& in) {
  in.validate();
  const auto N = in.tokens();
  const auto d = in.dim();
  Matrix m(d, d);
  for (std::int64_t a = 0; a < d; ++a) {
    for (std::int64_t b = 0; b < d; ++b) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < N; ++j) acc += static_cast<double>(in.k(j, a)) * in.v(j, b);
      m(a, b) = static_cast<float>(acc * in.scale());
    }
  }
  return m;
}

// Q * M, the reordered evaluation of softmax-free attention.
inline Matrix reordered_attention(const AttentionInputs& in) {
  const Matrix m = shared_linear_map(in);
  const auto N = in.tokens();
  const auto d = in.dim();
  Matrix out(N, d);
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t b = 0; b < d; ++b) {
      double acc = 0.0;
      for (std::int64_t a = 0; a < d; ++a) acc += static_cast<double>(in.q(i, a)) * m(a, b);
      out(i, b) = static_cast<float>(acc);
    }
  }
  return out;
}

struct ReorderingDiscrepancy {
  double max_abs = 0.0;    // max |direct - reordered|
  double magnitude = 0.0;  // max |direct|
  double relative() const noexcept { return max_abs / (1.0 + magnitude); }
};

// Compares attention evaluated directly against the reordered Q (K^T V)
// form. Without softmax the two agree to rounding; with softmax they do not.
inline ReorderingDiscrepancy reordering_discrepancy(const AttentionInputs& in, bool use_softmax) {
  const Matrix direct = attention_forward(in, use_softmax);
  const Matrix reordered = reordered_attention(in);
  ReorderingDiscrepancy out;
  for (std::size_t i = 0; i < direct.data.size(); ++i) {
    out.max_abs = std::max(out.max_abs, std::abs(static_cast<double>(direct.data[i]) - reordered.data[i]));
    out.magnitude = std::max(out.magnitude, std::abs(static_cast<double>(direct.data[i])));
  }
  return out;
}

// max |(Q K^T / sqrt(d)) V - Q (K^T V / sqrt(d))| for softmax-free attention.
inline float degeneration_check(const AttentionInputs& in) {
  return static_cast<float>(reordering_discrepancy(in, false).max_abs);
}

}  // namespace dcnv4
