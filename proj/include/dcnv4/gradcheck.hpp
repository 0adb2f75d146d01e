#pragma once

// Central finite differences over the reference forward, used as the oracle
// for the analytic backward. Runs in double precision so that the difference
// quotient is not swamped by fp32 rounding of the objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string_view>
#include <vector>

#include "dcnv4/reference.hpp"

namespace dcnv4 {

enum class GradInput { x, offset, weight };

constexpr std::string_view to_string(GradInput which) noexcept {
  switch (which) {
    case GradInput::x: return "grad_x";
    case GradInput::offset: return "grad_off";
    case GradInput::weight: return "grad_w";
  }
  return "?";
}

using ScalarObjective = std::function<double(const DcnProblem<double>&)>;

struct FiniteDiffResult {
  std::vector<double> gradient;      // same layout as the probed input
  std::vector<std::size_t> skipped;  // flat indices left at 0 by the kink rule
};

namespace detail {

inline std::vector<double>& probed(DcnProblem<double>& p, GradInput which) {
  switch (which) {
    case GradInput::x: return p.x;
    case GradInput::offset: return p.offset;
    case GradInput::weight: return p.weight;
  }
  return p.x;
}

// Sampling coordinate controlled by offset entry `flat`.
inline double sample_coordinate(const DcnProblem<double>& p, std::size_t flat) {
  const auto& cfg = p.config;
  const std::size_t K = static_cast<std::size_t>(cfg.points());
  const std::size_t G = static_cast<std::size_t>(cfg.groups);
  const std::size_t comp = flat % 2;
  const std::size_t k = (flat / 2) % K;
  const std::size_t loc = flat / 2 / K / G;
  const auto hw = static_cast<std::size_t>(p.shape.h * p.shape.w);
  const auto h = static_cast<std::int64_t>((loc % hw) / static_cast<std::size_t>(p.shape.w));
  const auto w = static_cast<std::int64_t>(loc % static_cast<std::size_t>(p.shape.w));
  const auto grid = static_cast<std::int64_t>(comp == 0 ? k / cfg.kernel_size : k % cfg.kernel_size);
  const double base = static_cast<double>((comp == 0 ? h : w) + grid - cfg.pad());
  return base + static_cast<double>(cfg.offset_scale) * p.offset[flat];
}

}  // namespace detail

// (f(theta + h e_i) - f(theta - h e_i)) / 2h for every coordinate of the chosen
// input. Offset coordinates whose sample point lies within 2h (in pixels) of an
// integer straddle a kink of the bilinear hat function and are skipped.
inline FiniteDiffResult finite_diff_grad(const ScalarObjective& f, const DcnProblem<double>& at,
                                         GradInput which, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  DcnProblem<double> probe = at;
  auto& theta = detail::probed(probe, which);
  FiniteDiffResult result;
  result.gradient.assign(theta.size(), 0.0);
  const double kink_radius = 2.0 * h * std::abs(static_cast<double>(at.config.offset_scale));

  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (which == GradInput::offset) {
      const double coord = detail::sample_coordinate(at, i);
      if (std::abs(coord - std::round(coord)) < kink_radius) {
        result.skipped.push_back(i);
        continue;
      }
    }
    const double saved = theta[i];
    theta[i] = saved + h;
    const double plus = f(probe);
    theta[i] = saved - h;
    const double minus = f(probe);
    theta[i] = saved;
    result.gradient[i] = (plus - minus) / (2.0 * h);
  }
  return result;
}

// f = 1/2 ||y||^2; its output gradient is y itself.
inline double half_squared_norm(const DcnProblem<double>& p) {
  const auto y = dcn_forward_ref(p);
  return 0.5 * std::inner_product(y.begin(), y.end(), y.begin(), 0.0);
}

inline double output_sum(const DcnProblem<double>& p) {
  const auto y = dcn_forward_ref(p);
  return std::accumulate(y.begin(), y.end(), 0.0);
}

// Relative error with an absolute floor so that entries where both sides are
// (numerically) zero do not blow up.
inline double gradient_relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

struct GradientComparison {
  GradInput input = GradInput::x;
  double max_relative_error = 0.0;
  double richardson_gap = 0.0;  // max relative gap between steps h and h/2
  std::size_t compared = 0;
  std::size_t skipped = 0;
};

// Analytic backward of 1/2 ||y||^2 against finite differences at steps h and
// h/2, for all three inputs.
inline std::vector<GradientComparison> compare_with_finite_differences(const DcnProblem<double>& p,
                                                                       double h) {
  const auto y = dcn_forward_ref(p);
  const auto analytic = dcn_backward_ref(p, std::span<const double>(y));
  std::vector<GradientComparison> out;
  for (GradInput which : {GradInput::x, GradInput::offset, GradInput::weight}) {
    const auto coarse = finite_diff_grad(half_squared_norm, p, which, h);
    const auto fine = finite_diff_grad(half_squared_norm, p, which, h / 2);
    const auto& a = which == GradInput::x ? analytic.x
                    : which == GradInput::offset ? analytic.offset
                                                 : analytic.weight;
    GradientComparison cmp;
    cmp.input = which;
    cmp.skipped = coarse.skipped.size();
    std::vector<bool> skip(a.size(), false);
    for (auto i : coarse.skipped) skip[i] = true;
    for (auto i : fine.skipped) skip[i] = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (skip[i]) continue;
      ++cmp.compared;
      cmp.max_relative_error =
          std::max(cmp.max_relative_error, gradient_relative_error(a[i], coarse.gradient[i]));
      cmp.richardson_gap =
          std::max(cmp.richardson_gap, gradient_relative_error(coarse.gradient[i], fine.gradient[i]));
    }
    out.push_back(cmp);
  }
  return out;
}

}  // namespace dcnv4
