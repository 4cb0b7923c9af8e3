#include "cdal/ce_conv.hpp"

#include <algorithm>
#include <stdexcept>

#include "cdal/init.hpp"

namespace cdal {

namespace {

void init_gate(CEConvLayer* layer, int c_in, int n_experts, std::uint64_t seed) {
  const int hidden = std::max(1, c_in / kGateReduction);
  layer->gate_w1 = he_normal({hidden, c_in}, c_in, Rng::derive(seed, "gate_w1"));
  layer->gate_b1 = Tensor::zeros({hidden});
  layer->gate_w2 = he_normal({n_experts, hidden}, hidden, Rng::derive(seed, "gate_w2"));
  layer->gate_b2 = Tensor::zeros({n_experts});
}

}  // namespace

CEConvLayer CEConvLayer::make_standard(int c_in, int c_out, int kernel, int n_experts,
                                       std::uint64_t seed) {
  if (n_experts < 1) throw std::invalid_argument("CEConvLayer: n_experts must be >= 1");
  CEConvLayer layer;
  layer.mode_ = Mode::kStandard;
  layer.c_in_ = c_in;
  const int fan_in = c_in * kernel * kernel;
  for (int i = 0; i < n_experts; ++i) {
    layer.experts_.push_back(he_normal({c_out, c_in, kernel, kernel}, fan_in,
                                       Rng::derive(seed, "expert", static_cast<std::uint64_t>(i))));
  }
  init_gate(&layer, c_in, n_experts, seed);
  return layer;
}

CEConvLayer CEConvLayer::make_depthwise(int channels, int kernel, int n_experts,
                                        std::uint64_t seed) {
  if (n_experts < 1) throw std::invalid_argument("CEConvLayer: n_experts must be >= 1");
  CEConvLayer layer;
  layer.mode_ = Mode::kDepthwise;
  layer.c_in_ = channels;
  const int fan_in = kernel * kernel;
  for (int i = 0; i < n_experts; ++i) {
    layer.experts_.push_back(he_normal({channels, kernel, kernel}, fan_in,
                                       Rng::derive(seed, "expert", static_cast<std::uint64_t>(i))));
  }
  init_gate(&layer, channels, n_experts, seed);
  return layer;
}

Tensor CEConvLayer::gate_logits(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(0) != c_in_)
    throw std::invalid_argument("CEConvLayer::gate: expected " + std::to_string(c_in_) +
                                " input channels, got " + shape_str(x.shape()));
  return linear(relu(linear(gap(x), gate_w1, gate_b1)), gate_w2, gate_b2);
}

Tensor CEConvLayer::gate(const Tensor& x) const { return sigmoid(gate_logits(x)); }

Tensor CEConvLayer::mix_experts(const Tensor& alpha) const {
  Tensor mixed = mul_by_scalar(experts_[0], pick(alpha, 0));
  for (int i = 1; i < n_experts(); ++i)
    mixed = add(mixed, mul_by_scalar(experts_[static_cast<std::size_t>(i)], pick(alpha, i)));
  return mixed;
}

Tensor CEConvLayer::forward(const Tensor& x) const {
  const Tensor mixed = mix_experts(gate(x));
  return mode_ == Mode::kStandard ? conv2d(x, mixed) : depthwise_conv2d(x, mixed);
}

void CEConvLayer::collect_params(const std::string& prefix, std::vector<Param>& out) {
  for (std::size_t i = 0; i < experts_.size(); ++i)
    out.push_back({prefix + ".expert" + std::to_string(i), &experts_[i]});
  out.push_back({prefix + ".gate_w1", &gate_w1});
  out.push_back({prefix + ".gate_b1", &gate_b1});
  out.push_back({prefix + ".gate_w2", &gate_w2});
  out.push_back({prefix + ".gate_b2", &gate_b2});
}

long long CEConvLayer::param_count() const {
  long long n = 0;
  for (const Tensor& e : experts_) n += e.size();
  return n + gate_w1.size() + gate_b1.size() + gate_w2.size() + gate_b2.size();
}

}  // namespace cdal
