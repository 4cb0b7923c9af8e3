#include "cdal/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "cdal/errors.hpp"
#include "cdal/init.hpp"

namespace cdal {

ClassifierHead ClassifierHead::make(int channels, int classes, std::uint64_t seed) {
  ClassifierHead head;
  head.w = he_normal({classes, channels}, channels, Rng::derive(seed, "w"));
  head.b = Tensor::zeros({classes});
  return head;
}

void ClassifierHead::collect_params(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".w", &w});
  out.push_back({prefix + ".b", &b});
}

void LossWeights::validate() const {
  if (!(eta1 >= 0.0) || !(eta2 >= 0.0) || !(eta3 >= 0.0))
    throw ConfigError("loss weights must be finite and >= 0");
}

Tensor predict(const ClassifierHead& head, const Tensor& x, const AttentionSet& a) {
  if (x.rank() != 3) throw std::invalid_argument("predict: x must be [C,H,W]");
  if (a.maps.dim(1) != x.dim(1) || a.maps.dim(2) != x.dim(2))
    throw std::invalid_argument("predict: attention spatial shape mismatch");
  Tensor weighted = spatial_mul(x, channel_slice(a.maps, 0));
  for (int m = 1; m < a.map_count(); ++m)
    weighted = add(weighted, spatial_mul(x, channel_slice(a.maps, m)));
  return linear(gap(weighted), head.w, head.b);
}

Tensor causal_effect(const Tensor& y_f, const Tensor& y_c) { return sub(y_f, y_c); }

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw std::invalid_argument("cross_entropy: logits must be rank-1");
  if (label < 0 || label >= logits.dim(0))
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                            " out of [0," + std::to_string(logits.dim(0)) + ")");
  return scale(pick(log_softmax(logits), label), -1.0);
}

Tensor l_causal(const Tensor& y_effect, int label) { return cross_entropy(y_effect, label); }

Tensor l_decor(const Tensor& y_c) {
  // sum p log p = -H(p)
  return sum(elem_mul(softmax(y_c), log_softmax(y_c)));
}

Tensor l_aug(const Tensor& x, const Tensor& x_aug, const AttentionSet& f,
             const AttentionSet& f_aug, int s) {
  const int M = f.map_count();
  if (f_aug.map_count() != M)
    throw std::invalid_argument("l_aug: attention set sizes differ");
  if (s < 0 || s >= M)
    throw std::out_of_range("l_aug: s " + std::to_string(s) + " out of [0," +
                            std::to_string(M) + ")");
  Tensor acc = Tensor::scalar(0.0);
  for (int i = 0; i < M; ++i) {
    if (i == s) continue;
    const Tensor diff = sub(spatial_mul(x, channel_slice(f.maps, i)),
                            spatial_mul(x_aug, channel_slice(f_aug.maps, i)));
    acc = add(acc, mean_abs(diff));
  }
  return scale(acc, 1.0 / M);
}

Tensor l_original(const ClassifierHead& head_base, const Tensor& x, int label) {
  return cross_entropy(linear(gap(x), head_base.w, head_base.b), label);
}

Tensor l_total(const LossParts& parts, const LossWeights& w) {
  w.validate();
  return add(add(add(scale(parts.causal, w.eta1), scale(parts.decor, w.eta2)),
                 scale(parts.aug, w.eta3)),
             parts.original);
}

}  // namespace cdal
