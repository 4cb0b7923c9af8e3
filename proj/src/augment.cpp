#include "cdal/augment.hpp"

#include <algorithm>
#include <stdexcept>

#include "cdal/errors.hpp"

namespace cdal {

void AugChainConfig::validate() const {
  if (noise_sigma < 0.0) throw ConfigError("aug.noise_sigma must be >= 0");
  if (blur_passes < 0) throw ConfigError("aug.blur_passes must be >= 0");
  if (!(scale_lo > 0.0) || scale_lo > scale_hi)
    throw ConfigError("aug scale range must satisfy 0 < lo <= hi");
}

namespace {

// 3x3 box blur normalized by the in-bounds tap count, so constants stay
// constant at the borders
void box_blur_inplace(std::vector<double>& data, int C, int H, int W) {
  std::vector<double> src(data);
  for (int c = 0; c < C; ++c) {
    const double* sp = src.data() + c * H * W;
    double* dp = data.data() + c * H * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        double acc = 0.0;
        int count = 0;
        for (int dh = -1; dh <= 1; ++dh)
          for (int dw = -1; dw <= 1; ++dw) {
            const int hh = h + dh, ww = w + dw;
            if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
            acc += sp[hh * W + ww];
            ++count;
          }
        dp[h * W + w] = acc / count;
      }
  }
}

}  // namespace

Tensor standard_aug(const Tensor& x, const AugChainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (x.rank() != 3) throw std::invalid_argument("standard_aug: x must be [C,H,W]");
  Tensor out = x.detached();
  auto& d = out.values();
  if (cfg.noise_sigma > 0.0)
    for (double& v : d) v += cfg.noise_sigma * rng.normal();
  for (int p = 0; p < cfg.blur_passes; ++p)
    box_blur_inplace(d, x.dim(0), x.dim(1), x.dim(2));
  if (cfg.scale_lo != 1.0 || cfg.scale_hi != 1.0) {
    const double s =
        cfg.scale_lo == cfg.scale_hi ? cfg.scale_lo : rng.uniform(cfg.scale_lo, cfg.scale_hi);
    for (double& v : d) v *= s;
  }
  return out;
}

std::vector<double> energy_weights(const AttentionSet& f) {
  const int M = f.maps.dim(0);
  const int plane = f.maps.dim(1) * f.maps.dim(2);
  std::vector<double> w(static_cast<std::size_t>(M), 0.0);
  const auto& d = f.maps.data();
  double total = 0.0;
  for (int m = 0; m < M; ++m) {
    double acc = 0.0;
    for (int i = 0; i < plane; ++i) acc += d[static_cast<std::size_t>(m * plane + i)];
    w[static_cast<std::size_t>(m)] = acc;
    total += acc;
  }
  if (!(total > 0.0))
    throw NumericError("sample_index: attention energy distribution is degenerate");
  for (double& v : w) v /= total;
  return w;
}

int sample_index(const AttentionSet& f, Rng& rng) {
  if (f.kind != AttentionSet::Kind::kFactual)
    throw std::invalid_argument("sample_index: input must be a factual set");
  const std::vector<double> w = energy_weights(f);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    cum += w[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

Tensor selective_augment(const Tensor& x, const Tensor& x_aug, const Tensor& f_s,
                         const AttentionSet& c) {
  if (x.shape() != x_aug.shape())
    throw std::invalid_argument("selective_augment: x and x_aug shapes differ");
  if (c.kind != AttentionSet::Kind::kCounterfactual)
    throw std::invalid_argument("selective_augment: c must be a counterfactual set");
  const Tensor cmean = channel_mean(c.maps);
  double mx = 0.0;
  for (const double v : cmean.data()) mx = std::max(mx, v);
  Tensor factual_part = spatial_mul(x, f_s);
  if (mx == 0.0) return factual_part;  // cbar is identically zero
  const Tensor cbar = div_by_scalar(cmean, vmax(cmean));
  return add(factual_part, spatial_mul(x_aug, cbar));
}

AttentionSet LearnedCounterfactual::derive(const Tensor& feature,
                                           const AttentionSet& factual) {
  const auto provenance = factual.provenance;
  return branch_->extract(feature, AttentionSet::Kind::kCounterfactual, provenance);
}

AttentionSet StaticCounterfactual::derive(const Tensor& feature,
                                          const AttentionSet& factual) {
  (void)feature;
  AttentionSet detached_factual = factual;
  detached_factual.maps = factual.maps.detached();

  switch (kind_) {
    case StaticCounterfactualKind::kRandom: {
      // one draw per forward pass, reused for original and augmented features
      if (!fixed_) fixed_ = static_counterfactual(kind_, detached_factual, rng_);
      AttentionSet out = *fixed_;
      out.provenance = factual.provenance;
      return out;
    }
    case StaticCounterfactualKind::kShuffle: {
      const int M = detached_factual.maps.dim(0);
      const int plane = detached_factual.maps.dim(1) * detached_factual.maps.dim(2);
      if (permutations_.empty()) {
        permutations_.resize(static_cast<std::size_t>(M));
        for (int m = 0; m < M; ++m) {
          auto& perm = permutations_[static_cast<std::size_t>(m)];
          perm.resize(static_cast<std::size_t>(plane));
          for (int i = 0; i < plane; ++i) perm[static_cast<std::size_t>(i)] = i;
          for (int i = plane - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng_.uniform_int(i + 1))]);
        }
      }
      Tensor maps = Tensor::zeros(detached_factual.maps.shape());
      const auto& src = detached_factual.maps.data();
      for (int m = 0; m < M; ++m) {
        const auto& perm = permutations_[static_cast<std::size_t>(m)];
        for (int i = 0; i < plane; ++i)
          maps.values()[static_cast<std::size_t>(m * plane + i)] =
              src[static_cast<std::size_t>(m * plane + perm[static_cast<std::size_t>(i)])];
      }
      AttentionSet out;
      out.maps = std::move(maps);
      out.kind = AttentionSet::Kind::kCounterfactual;
      out.provenance = factual.provenance;
      return out;
    }
    default:
      return static_counterfactual(kind_, detached_factual, rng_);
  }
}

AugmentPass augment_pass(const Tensor& x, const AttentionSet& f, const AttentionSet& c,
                         const AttentionBranch& factual_branch, CounterfactualSource& cf,
                         const AugChainConfig& cfg, Rng& rng, const FrozenAugDraw* frozen) {
  AugmentPass pass;
  const Tensor x_std = frozen ? frozen->x_std : standard_aug(x, cfg, rng);
  pass.s = frozen ? frozen->s : sample_index(f, rng);
  const Tensor f_s = channel_slice(f.maps, pass.s);
  pass.x_aug = selective_augment(x, x_std, f_s, c);
  pass.f_aug = factual_branch.extract(pass.x_aug, AttentionSet::Kind::kFactual,
                                      AttentionSet::Provenance::kAugmented);
  pass.c_aug = cf.derive(pass.x_aug, pass.f_aug);
  pass.c_aug.provenance = AttentionSet::Provenance::kAugmented;
  return pass;
}

}  // namespace cdal
