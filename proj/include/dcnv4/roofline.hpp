#pragma once

// Analytic cost model of one deformable aggregation over an (H, W, C) map
// with G groups and K sampling points:
//
//   flops     = 4 K H W C                  (one bilinear sample-and-accumulate = 4 ops)
//   mac_ideal = 2 H W C + 3 K H W G        (read x + write y, plus 2K offsets and K weights per group)
//   mac_worst = (4K + 3K + 1) H W C        (no cache: 4K corner reads, 3K offset/weight reads, 1 write)
//
// MAC is counted in elements; byte counts scale by the element size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dcnv4/error.hpp"
#include "dcnv4/tensor.hpp"

namespace dcnv4 {

struct RooflineReport {
  std::int64_t flops = 0;
  std::int64_t mac_ideal_elems = 0;
  std::int64_t mac_worst_elems = 0;
  double intensity_ideal = 0.0;
  double intensity_worst = 0.0;
  std::int64_t mac_ideal_bytes = 0;
  std::int64_t mac_worst_bytes = 0;
  std::int64_t group_dim_assumed = 16;
};

struct RooflineShape {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t c = 0;
  std::int64_t groups = 0;
  std::int64_t points = 9;
};

inline RooflineReport roofline(std::int64_t H, std::int64_t W, std::int64_t C, std::int64_t G, std::int64_t K,
                               ElementType dtype = ElementType::fp32) {
  if (H < 1 || W < 1 || C < 1) throw ConfigError("roofline needs H, W, C >= 1");
  if (G < 1 || C % G != 0) throw ConfigError("roofline needs C divisible by G >= 1");
  if (K < 1) throw ConfigError("roofline needs K >= 1");
  const std::int64_t hwc = H * W * C;
  RooflineReport r;
  r.flops = 4 * K * hwc;
  r.mac_ideal_elems = 2 * hwc + 3 * K * H * W * G;
  r.mac_worst_elems = (4 * K + 3 * K + 1) * hwc;
  r.intensity_ideal = static_cast<double>(r.flops) / static_cast<double>(r.mac_ideal_elems);
  r.intensity_worst = static_cast<double>(r.flops) / static_cast<double>(r.mac_worst_elems);
  const auto bytes = static_cast<std::int64_t>(bytes_per_element(dtype));
  r.mac_ideal_bytes = r.mac_ideal_elems * bytes;
  r.mac_worst_bytes = r.mac_worst_elems * bytes;
  return r;
}

inline RooflineReport roofline(const RooflineShape& s, ElementType dtype = ElementType::fp32) {
  return roofline(s.h, s.w, s.c, s.groups, s.points, dtype);
}

// Group count under the fixed group dim the analysis assumes (C / 16).
inline std::int64_t assumed_groups(std::int64_t channels) {
  return std::max<std::int64_t>(1, channels / 16);
}

enum class TableFormat { text, csv };

inline std::string intensity_table(const std::vector<RooflineShape>& shapes, TableFormat format = TableFormat::text) {
  if (shapes.empty()) return {};
  std::ostringstream os;
  if (format == TableFormat::csv) {
    os << "h,w,c,groups,points,flops,mac_ideal,mac_worst,intensity_ideal,intensity_worst\n";
    for (const auto& s : shapes) {
      const auto r = roofline(s);
      os << s.h << ',' << s.w << ',' << s.c << ',' << s.groups << ',' << s.points << ',' << r.flops << ','
         << r.mac_ideal_elems << ',' << r.mac_worst_elems << ',' << std::setprecision(6) << r.intensity_ideal
         << ',' << r.intensity_worst << '\n';
    }
    return os.str();
  }
  os << std::left << std::setw(16) << "shape" << std::right << std::setw(6) << "G" << std::setw(4) << "K"
     << std::setw(14) << "flops" << std::setw(14) << "mac_ideal" << std::setw(14) << "mac_worst"
     << std::setw(10) << "ai_ideal" << std::setw(10) << "ai_worst" << '\n';
  for (const auto& s : shapes) {
    const auto r = roofline(s);
    std::ostringstream shape;
    shape << s.h << 'x' << s.w << 'x' << s.c;
    os << std::left << std::setw(16) << shape.str() << std::right << std::setw(6) << s.groups << std::setw(4)
       << s.points << std::setw(14) << r.flops << std::setw(14) << r.mac_ideal_elems << std::setw(14)
       << r.mac_worst_elems << std::fixed << std::setprecision(3) << std::setw(10) << r.intensity_ideal
       << std::setw(10) << r.intensity_worst << std::defaultfloat << '\n';
  }
  return os.str();
}

}  // namespace dcnv4
