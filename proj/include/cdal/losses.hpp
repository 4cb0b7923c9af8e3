#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdal/attention.hpp"
#include "cdal/tensor.hpp"

namespace cdal {

// Linear classifier over pooled attention-weighted features. One shared
// instance maps both factual and counterfactual features to predictions.
struct ClassifierHead {
  Tensor w;  // [K, C]
  Tensor b;  // [K]

  static ClassifierHead make(int channels, int classes, std::uint64_t seed);
  int classes() const { return w.dim(0); }
  void collect_params(const std::string& prefix, std::vector<Param>& out);
  long long param_count() const { return w.size() + b.size(); }
};

struct LossWeights {
  double eta1 = 1.0;  // l_causal
  double eta2 = 0.5;  // l_decor
  double eta3 = 0.5;  // l_aug

  void validate() const;
};

// logits = linear(gap(sum_i x * a_i)), the attention-weighted pooled
// classifier.
Tensor predict(const ClassifierHead& head, const Tensor& x, const AttentionSet& a);

// Y_effect = Y_f - Y_c at logit level.
Tensor causal_effect(const Tensor& y_f, const Tensor& y_c);

// cross-entropy of softmax(y_effect) against the one-hot label
Tensor l_causal(const Tensor& y_effect, int label);

// negative entropy of softmax(y_c); minimizing this maximizes counterfactual
// entropy. Range [-ln K, 0].
Tensor l_decor(const Tensor& y_c);

// (1/M) sum_{i != s} mean_abs(x*f_i - x_aug*f_aug_i)
Tensor l_aug(const Tensor& x, const Tensor& x_aug, const AttentionSet& f,
             const AttentionSet& f_aug, int s);

// supervised cross-entropy on the plain pooled classifier; stands in for the
// baseline objective
Tensor l_original(const ClassifierHead& head_base, const Tensor& x, int label);

struct LossParts {
  Tensor causal;
  Tensor decor;
  Tensor aug;
  Tensor original;
};

Tensor l_total(const LossParts& parts, const LossWeights& w);

// plain cross-entropy over logits, shared by the loss terms
Tensor cross_entropy(const Tensor& logits, int label);

}  // namespace cdal
