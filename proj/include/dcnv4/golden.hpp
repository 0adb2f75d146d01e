#pragma once

// The golden fixture set, regenerated from fixed seeds with the reference
// operators. tests/golden holds the same files produced by an independent
// float64 implementation (tests/oracle/scalar_oracle.py).

#include <string>
#include <utility>
#include <vector>

#include "dcnv4/baselines.hpp"
#include "dcnv4/module.hpp"
#include "dcnv4/reference.hpp"

namespace dcnv4 {

using NamedTensor = std::pair<std::string, TensorNHWC>;

inline std::vector<NamedTensor> golden_fixture_set() {
  std::vector<NamedTensor> out;
  const auto uniform = [](Shape s, std::uint64_t seed, float lo, float hi) {
    return create(s, ElementType::fp32, fill::SeededUniform{seed, lo, hi});
  };

  out.emplace_back("create_seed42", uniform({1, 4, 4, 8}, 42, -1.0f, 1.0f));

  // Core op: x (1,4,4,16), G = 2, k = 3.
  {
    const Shape s{1, 4, 4, 16};
    const int G = 2;
    const int K = 9;
    const auto x = uniform(s, 7, -1.0f, 1.0f);
    const OffsetField off(uniform({1, 4, 4, G * K * 2}, 8, -2.0f, 2.0f), G, K);
    const WeightField w(uniform({1, 4, 4, G * K}, 9, -1.0f, 1.0f), G, K);
    DcnConfig cfg;
    cfg.groups = G;
    out.emplace_back("dcn_x", x);
    out.emplace_back("dcn_offset", off.tensor());
    out.emplace_back("dcn_weight", w.tensor());
    out.emplace_back("dcn_out_softmax_off", dcn_forward_ref(x, off, w, cfg));
    cfg.softmax_weights = true;
    out.emplace_back("dcn_out_softmax_on", dcn_forward_ref(x, off, w, cfg));
  }

  // Module: x (1,8,8,32), G = 2, k = 3, parameters from base seed 100.
  {
    const auto x = uniform({1, 8, 8, 32}, 11, -1.0f, 1.0f);
    out.emplace_back("module_x", x);
    for (auto style : {ModuleStyle::v3, ModuleStyle::v4, ModuleStyle::v4_lightweight}) {
      ModuleConfig cfg;
      cfg.channels = 32;
      cfg.groups = 2;
      cfg.variant.style = style;
      const auto params = ModuleParams::seeded(cfg, 100);
      std::string tag(to_string(style));
      for (auto& ch : tag) {
        if (ch == '-') ch = '_';
      }
      const auto branch = branch_forward(x, params, cfg.variant);
      out.emplace_back("branch_" + tag + "_offset", branch.offsets.tensor());
      out.emplace_back("branch_" + tag + "_weight", branch.weights.tensor());
      out.emplace_back("module_" + tag + "_out", module_forward(x, params, cfg.variant));
    }
  }

  // Softmax attention: 6 tokens, d = 4, Q/K/V seeds 21/22/23.
  {
    const auto att = attention_forward(AttentionInputs::seeded(6, 4, 21), true);
    out.emplace_back("attention_out", TensorNHWC::from_values({1, 1, 6, 4}, att.data));
  }
  return out;
}

}  // namespace dcnv4
