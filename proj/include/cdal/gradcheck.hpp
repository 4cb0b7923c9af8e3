#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cdal/tensor.hpp"

namespace cdal {

// Builds a scalar loss on the given tape. The builder reads whichever value
// tensors the harness has lifted as leaves for the analytic pass.
using LossBuilder = std::function<Tensor(Tape&)>;

// Central finite differences against the tape gradient, taken jointly over
// every coordinate of the tensors in `wrt`. The builder is re-invoked per
// perturbed point, so any randomness inside it must be seeded per call.
// Returns the worst relative error with denominator max(|analytic|,
// |numeric|, 1e-8).
double finite_diff_check(const LossBuilder& build, const std::vector<Tensor*>& wrt,
                         double eps = 1e-5);

// Single-input form: f maps a leaf tensor to a scalar loss.
double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor x,
                         double eps = 1e-5);

// One entry per registered differentiable op; run() performs the
// finite-difference sweep over a fixed set of seeded random small shapes.
struct OpCheck {
  std::string name;
  std::function<double()> run;  // returns max relative error
};

const std::vector<OpCheck>& registered_op_checks();

}  // namespace cdal
