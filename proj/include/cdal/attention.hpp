#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdal/ce_conv.hpp"
#include "cdal/rng.hpp"
#include "cdal/tensor.hpp"

namespace cdal {

// M non-negative H x W attention maps with provenance. Factual maps are meant
// to capture model-specific artifacts, counterfactual maps source-bias
// content.
struct AttentionSet {
  enum class Kind { kFactual, kCounterfactual };
  enum class Provenance { kOriginal, kAugmented };

  Tensor maps;  // [M, H, W], every entry >= 0
  Kind kind = Kind::kFactual;
  Provenance provenance = Provenance::kOriginal;

  int map_count() const { return maps.dim(0); }
};

// Two-stage extraction path: a 1x1 CE convolution produces cross-channel
// features, a depthwise-separable CE convolution (depthwise 3x3 then
// pointwise 1x1) produces channel-specific ones, and the two halves are
// concatenated under a softplus so maps stay positive everywhere. The
// factual and counterfactual branches are two instances of this class with
// disjoint parameters.
class AttentionBranch {
 public:
  // produces m_maps maps (m_maps even) from c_in input channels
  static AttentionBranch make(int c_in, int m_maps, int n_experts, std::uint64_t seed);

  AttentionSet extract(const Tensor& x, AttentionSet::Kind kind,
                       AttentionSet::Provenance provenance) const;

  int map_count() const { return 2 * half_; }
  void collect_params(const std::string& prefix, std::vector<Param>& out);
  long long param_count() const;

  CEConvLayer ce_1x1;   // standard mode, c_in -> m/2, kernel 1x1
  CEConvLayer ce_dw;    // depthwise over m/2 channels, 3x3
  Tensor pointwise_w;   // [m/2, m/2, 1, 1]
  Tensor pointwise_b;   // [m/2]

 private:
  int half_ = 0;
};

enum class StaticCounterfactualKind { kRandom, kUniform, kReversed, kShuffle };

StaticCounterfactualKind parse_static_kind(const std::string& name);

// Table 5(d)-style static interventions: the returned maps are plain data
// (no gradient path) and replace the learned counterfactual branch.
//   random:   i.i.d. uniform(0,1) entries
//   uniform:  every entry 1/(H*W)
//   reversed: per map, max(F_i) - F_i
//   shuffle:  per map, spatial positions permuted by a seeded permutation
AttentionSet static_counterfactual(StaticCounterfactualKind kind, const AttentionSet& f,
                                   Rng& rng);

// Eq.-(3)-style pooling: h[c] = (1/HW) sum_{h,w} x[c,h,w] * a[h,w].
Tensor attention_pool(const Tensor& x, const Tensor& a);

}  // namespace cdal
