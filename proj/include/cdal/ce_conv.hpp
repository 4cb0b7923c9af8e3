#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdal/tensor.hpp"

namespace cdal {

// Named handle to a parameter tensor, used for lifting onto tapes and for
// optimizer bookkeeping.
struct Param {
  std::string name;
  Tensor* tensor;
};

// Causal Expert convolution: a dynamic convolution whose kernel is an
// input-conditioned mixture of expert kernels,
//   W' = sum_i alpha_i W_i,  alpha = sigmoid(mlp(gap(x))).
// Mixture weights are sigmoid-gated and need not sum to one.
class CEConvLayer {
 public:
  enum class Mode { kStandard, kDepthwise };

  // standard mode: experts [c_out, c_in, k, k]
  static CEConvLayer make_standard(int c_in, int c_out, int kernel, int n_experts,
                                   std::uint64_t seed);
  // depthwise mode: experts [channels, k, k]
  static CEConvLayer make_depthwise(int channels, int kernel, int n_experts,
                                    std::uint64_t seed);

  // alpha in (0,1)^{n_experts}
  Tensor gate(const Tensor& x) const;
  // gate before the sigmoid, exposed for layer-algebra tests
  Tensor gate_logits(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;

  // the alpha-weighted expert mixture for a fixed gate output
  Tensor mix_experts(const Tensor& alpha) const;

  int n_experts() const { return static_cast<int>(experts_.size()); }
  Mode mode() const { return mode_; }
  const std::vector<Tensor>& experts() const { return experts_; }

  void collect_params(const std::string& prefix, std::vector<Param>& out);
  long long param_count() const;

  // gate MLP parameters, exposed for tests that drive the final bias
  Tensor gate_w1, gate_b1, gate_w2, gate_b2;

 private:
  CEConvLayer() = default;
  Mode mode_ = Mode::kStandard;
  int c_in_ = 0;
  std::vector<Tensor> experts_;
};

// Reduction ratio of the gate MLP hidden layer (squeeze-excite convention).
inline constexpr int kGateReduction = 4;

}  // namespace cdal
