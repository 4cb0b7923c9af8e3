#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cdal/rng.hpp"
#include "cdal/tensor.hpp"

namespace cdal {

// He-style initialization: N(0, sqrt(2/fan_in)), one seeded stream per tensor.
inline Tensor he_normal(std::vector<int> shape, int fan_in, std::uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

}  // namespace cdal
