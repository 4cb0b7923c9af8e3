#pragma once

// Test-only reference implementations, written as direct transcriptions of
// the defining formulas. They stay independent of the library's execution
// strategy so they can serve as oracles.

#include <cmath>
#include <vector>

#include "cdal/rng.hpp"
#include "cdal/tensor.hpp"

namespace oracle {

// direct nested-loop cross-correlation with zero same-padding, stride 1
inline cdal::Tensor conv2d_naive(const cdal::Tensor& x, const cdal::Tensor& w) {
  const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Co = w.dim(0), kH = w.dim(2), kW = w.dim(3);
  cdal::Tensor out = cdal::Tensor::zeros({Co, H, W});
  for (int co = 0; co < Co; ++co)
    for (int h = 0; h < H; ++h)
      for (int ww = 0; ww < W; ++ww) {
        double acc = 0.0;
        for (int ci = 0; ci < Ci; ++ci)
          for (int u = 0; u < kH; ++u)
            for (int v = 0; v < kW; ++v) {
              const int hi = h + u - kH / 2;
              const int wi = ww + v - kW / 2;
              if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
              acc += x.at({ci, hi, wi}) * w.at({co, ci, u, v});
            }
        out.values()[static_cast<std::size_t>((co * H + h) * W + ww)] = acc;
      }
  return out;
}

inline cdal::Tensor depthwise_naive(const cdal::Tensor& x, const cdal::Tensor& w) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int kH = w.dim(1), kW = w.dim(2);
  cdal::Tensor out = cdal::Tensor::zeros({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int ww = 0; ww < W; ++ww) {
        double acc = 0.0;
        for (int u = 0; u < kH; ++u)
          for (int v = 0; v < kW; ++v) {
            const int hi = h + u - kH / 2;
            const int wi = ww + v - kW / 2;
            if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
            acc += x.at({c, hi, wi}) * w.at({c, u, v});
          }
        out.values()[static_cast<std::size_t>((c * H + h) * W + ww)] = acc;
      }
  return out;
}

inline cdal::Tensor random_tensor(std::vector<int> shape, cdal::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  cdal::Tensor t = cdal::Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const cdal::Tensor& a, const cdal::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace oracle
