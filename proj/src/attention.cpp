#include "cdal/attention.hpp"

#include <algorithm>
#include <stdexcept>

#include "cdal/errors.hpp"
#include "cdal/init.hpp"

namespace cdal {

AttentionBranch AttentionBranch::make(int c_in, int m_maps, int n_experts,
                                      std::uint64_t seed) {
  if (m_maps < 2 || m_maps % 2 != 0)
    throw std::invalid_argument("AttentionBranch: map count must be even and >= 2");
  AttentionBranch b;
  b.half_ = m_maps / 2;
  b.ce_1x1 = CEConvLayer::make_standard(c_in, b.half_, 1, n_experts,
                                        Rng::derive(seed, "ce_1x1"));
  b.ce_dw = CEConvLayer::make_depthwise(b.half_, 3, n_experts, Rng::derive(seed, "ce_dw"));
  b.pointwise_w =
      he_normal({b.half_, b.half_, 1, 1}, b.half_, Rng::derive(seed, "pointwise"));
  b.pointwise_b = Tensor::zeros({b.half_});
  return b;
}

AttentionSet AttentionBranch::extract(const Tensor& x, AttentionSet::Kind kind,
                                      AttentionSet::Provenance provenance) const {
  const Tensor cross = ce_1x1.forward(x);
  const Tensor depth =
      add_channel_bias(conv2d(ce_dw.forward(cross), pointwise_w), pointwise_b);
  AttentionSet set;
  set.maps = softplus(concat_channels(cross, depth));
  set.kind = kind;
  set.provenance = provenance;
  return set;
}

void AttentionBranch::collect_params(const std::string& prefix, std::vector<Param>& out) {
  ce_1x1.collect_params(prefix + ".ce_1x1", out);
  ce_dw.collect_params(prefix + ".ce_dw", out);
  out.push_back({prefix + ".pointwise_w", &pointwise_w});
  out.push_back({prefix + ".pointwise_b", &pointwise_b});
}

long long AttentionBranch::param_count() const {
  return ce_1x1.param_count() + ce_dw.param_count() + pointwise_w.size() +
         pointwise_b.size();
}

StaticCounterfactualKind parse_static_kind(const std::string& name) {
  if (name == "random") return StaticCounterfactualKind::kRandom;
  if (name == "uniform") return StaticCounterfactualKind::kUniform;
  if (name == "reversed") return StaticCounterfactualKind::kReversed;
  if (name == "shuffle") return StaticCounterfactualKind::kShuffle;
  throw ConfigError("unknown counterfactual kind: " + name);
}

AttentionSet static_counterfactual(StaticCounterfactualKind kind, const AttentionSet& f,
                                   Rng& rng) {
  if (f.kind != AttentionSet::Kind::kFactual)
    throw std::invalid_argument("static_counterfactual: input must be a factual set");
  const int M = f.maps.dim(0), H = f.maps.dim(1), W = f.maps.dim(2);
  const int plane = H * W;
  Tensor maps = Tensor::zeros({M, H, W});
  const std::vector<double>& src = f.maps.data();

  switch (kind) {
    case StaticCounterfactualKind::kRandom:
      for (double& v : maps.values()) v = rng.uniform();
      break;
    case StaticCounterfactualKind::kUniform:
      std::fill(maps.values().begin(), maps.values().end(), 1.0 / plane);
      break;
    case StaticCounterfactualKind::kReversed:
      for (int m = 0; m < M; ++m) {
        double mx = src[static_cast<std::size_t>(m * plane)];
        for (int i = 1; i < plane; ++i)
          mx = std::max(mx, src[static_cast<std::size_t>(m * plane + i)]);
        for (int i = 0; i < plane; ++i)
          maps.values()[static_cast<std::size_t>(m * plane + i)] =
              mx - src[static_cast<std::size_t>(m * plane + i)];
      }
      break;
    case StaticCounterfactualKind::kShuffle:
      for (int m = 0; m < M; ++m) {
        std::vector<int> perm(static_cast<std::size_t>(plane));
        for (int i = 0; i < plane; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = plane - 1; i > 0; --i)
          std::swap(perm[static_cast<std::size_t>(i)],
                    perm[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
        for (int i = 0; i < plane; ++i)
          maps.values()[static_cast<std::size_t>(m * plane + i)] =
              src[static_cast<std::size_t>(m * plane + perm[static_cast<std::size_t>(i)])];
      }
      break;
  }

  AttentionSet out;
  out.maps = std::move(maps);
  out.kind = AttentionSet::Kind::kCounterfactual;
  out.provenance = f.provenance;
  return out;
}

Tensor attention_pool(const Tensor& x, const Tensor& a) {
  return gap(spatial_mul(x, a));
}

}  // namespace cdal
