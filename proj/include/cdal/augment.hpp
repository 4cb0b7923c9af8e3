#pragma once

#include <optional>

#include "cdal/attention.hpp"
#include "cdal/rng.hpp"
#include "cdal/tensor.hpp"

namespace cdal {

// Standard augmentation chain, applied in the fixed order noise -> blur ->
// scale. A disabled stage consumes no random draws, so the all-disabled
// config is a bit-identical identity.
struct AugChainConfig {
  double noise_sigma = 0.05;  // std of additive Gaussian noise
  int blur_passes = 1;        // iterated 3x3 box blur, border-corrected
  double scale_lo = 0.9;      // global multiplicative jitter bounds
  double scale_hi = 1.1;

  void validate() const;
  bool disabled() const {
    return noise_sigma == 0.0 && blur_passes == 0 && scale_lo == 1.0 && scale_hi == 1.0;
  }
};

// Data transformation detached from any tape: the result never carries
// gradient even when x does.
Tensor standard_aug(const Tensor& x, const AugChainConfig& cfg, Rng& rng);

// Draws a map index with probability proportional to the L1 channel energy
// of the factual maps. Throws NumericError when the total energy is zero.
int sample_index(const AttentionSet& f, Rng& rng);

// Per-map channel energies normalized to a distribution.
std::vector<double> energy_weights(const AttentionSet& f);

// x * f_s + x_aug * cbar, where cbar is the channel mean of the
// counterfactual maps rescaled to [0,1] by its max (all zeros if the max is
// zero). Spatial maps broadcast over channels.
Tensor selective_augment(const Tensor& x, const Tensor& x_aug, const Tensor& f_s,
                         const AttentionSet& c);

// Where the counterfactual attention of a forward pass comes from: the
// learned branch, or a static intervention whose random draws are fixed per
// pass so original and augmented features see the same intervention.
class CounterfactualSource {
 public:
  virtual ~CounterfactualSource() = default;
  virtual AttentionSet derive(const Tensor& feature, const AttentionSet& factual) = 0;
};

class LearnedCounterfactual final : public CounterfactualSource {
 public:
  explicit LearnedCounterfactual(const AttentionBranch& branch) : branch_(&branch) {}
  AttentionSet derive(const Tensor& feature, const AttentionSet& factual) override;

 private:
  const AttentionBranch* branch_;
};

class StaticCounterfactual final : public CounterfactualSource {
 public:
  StaticCounterfactual(StaticCounterfactualKind kind, Rng rng)
      : kind_(kind), rng_(rng) {}
  AttentionSet derive(const Tensor& feature, const AttentionSet& factual) override;

 private:
  StaticCounterfactualKind kind_;
  Rng rng_;
  std::optional<AttentionSet> fixed_;           // random kind: one draw per pass
  std::vector<std::vector<int>> permutations_;  // shuffle kind: one set per pass
};

struct AugmentPass {
  Tensor x_aug;        // the selectively augmented feature (on tape when x is)
  AttentionSet f_aug;  // re-extracted factual attention
  AttentionSet c_aug;  // re-derived counterfactual attention
  int s = -1;          // sampled factual map index
};

// Pins the stop-gradient quantities of a pass so a finite-difference harness
// can evaluate the exact function the tape differentiates.
struct FrozenAugDraw {
  Tensor x_std;
  int s = 0;
};

// standard_aug -> sample_index -> selective_augment, then re-extraction of
// both attention sets from the augmented feature. Gradients flow through the
// extraction and the f_s / cbar factors, never through the detached
// augmented data.
AugmentPass augment_pass(const Tensor& x, const AttentionSet& f, const AttentionSet& c,
                         const AttentionBranch& factual_branch, CounterfactualSource& cf,
                         const AugChainConfig& cfg, Rng& rng,
                         const FrozenAugDraw* frozen = nullptr);

}  // namespace cdal
